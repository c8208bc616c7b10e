//! End-to-end chain smoke tests: determinism, invariants, retention
//! arithmetic, and both sampler modes on small simulated data.

use dpcount::distributions::OutcomeFamily;
use dpcount::priors::build_base_prior;
use dpcount::sampler::{check_invariants, run_chain, ChainConfig, ChainModel, SamplerMode};
use dpcount::simgen::generate_sim_dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn small_dataset(n: usize, seed: u64) -> dpcount::data::Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    generate_sim_dataset(n, &mut rng)
}

#[test]
fn truncated_chain_runs_and_is_deterministic() {
    let ds = small_dataset(60, 11);
    let prior = build_base_prior(&ds, OutcomeFamily::Poisson).unwrap();
    let model = ChainModel::new(&ds, prior, SamplerMode::Truncated { t: 8 }).unwrap();
    let cfg = ChainConfig {
        iterations: 60,
        burnin: 20,
        thin: 2,
        seed: 7,
    };
    let out1 = run_chain(&model, &cfg, None).unwrap();
    let out2 = run_chain(&model, &cfg, None).unwrap();
    assert_eq!(out1.store.draws.len(), cfg.retained() as usize);
    assert_eq!(out1.store, out2.store, "same seed must give identical draws");
    check_invariants(&out1.final_state, &model).unwrap();
}

#[test]
fn slice_chain_runs_with_invariants() {
    let ds = small_dataset(50, 3);
    let prior = build_base_prior(&ds, OutcomeFamily::NegativeBinomial).unwrap();
    let model = ChainModel::new(
        &ds,
        prior,
        SamplerMode::Slice {
            max_components: 200,
        },
    )
    .unwrap();
    let cfg = ChainConfig {
        iterations: 60,
        burnin: 30,
        thin: 3,
        seed: 9,
    };
    let out = run_chain(&model, &cfg, None).unwrap();
    assert!(!out.store.draws.is_empty());
    check_invariants(&out.final_state, &model).unwrap();
}

#[test]
fn zero_iterations_give_empty_store() {
    let ds = small_dataset(30, 5);
    let prior = build_base_prior(&ds, OutcomeFamily::Poisson).unwrap();
    let model = ChainModel::new(&ds, prior, SamplerMode::Truncated { t: 4 }).unwrap();
    let cfg = ChainConfig {
        iterations: 0,
        burnin: 0,
        thin: 1,
        seed: 1,
    };
    let out = run_chain(&model, &cfg, None).unwrap();
    assert!(out.store.draws.is_empty());
}

#[test]
fn retention_arithmetic_matches_schedule() {
    let cfg = ChainConfig {
        iterations: 40_000,
        burnin: 20_000,
        thin: 5,
        seed: 0,
    };
    assert_eq!(cfg.retained(), 4000);
}
