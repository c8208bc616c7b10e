//! Chain driver: initialization, the sweep loop, draw recording, and the
//! state invariant suite.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::cutpoints::{binary_interval, interval_of};
use crate::distributions::{OutcomeFamily, XiParams};
use crate::error::{Error, Result};
use crate::inference::{conditional_pmf_draw, ConditionalPmfDraw, CovariateGrid, MixtureSnapshot};
use crate::sampler::state::{
    AdaptiveTuning, ChainModel, Cluster, MixtureState, SamplerMode,
};
use crate::sampler::steps;
use crate::store::{ClusterRecord, DrawRecord, SampleStore, StoreMeta};

/// Iteration schedule and seed for one chain.
#[derive(Clone, Copy, Debug)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.iterations > 0 && self.burnin >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below iterations {}",
                self.burnin, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> u64 {
        if self.iterations == 0 {
            0
        } else {
            (self.iterations - self.burnin).div_ceil(self.thin)
        }
    }
}

/// Chain products: the sample store, optional grid pmf draws, and the final
/// state (used by the invariant suite and tests).
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub store: SampleStore,
    pub grid_draws: Option<Vec<ConditionalPmfDraw>>,
    pub warnings: Vec<String>,
    pub final_state: MixtureState,
}

/// Quantile-bin the responses into `groups` contiguous rank groups.
fn quantile_bin_allocations(y: &[u32], groups: usize) -> Vec<usize> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| y[i]);
    let mut delta = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        delta[i] = rank * groups / n;
    }
    delta
}

/// Outcome parameters guaranteed to give every member a usable interval.
fn feasible_xi<R: Rng + ?Sized>(
    model: &ChainModel,
    members: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let family = model.layout.family;
    let check = |xi: &[f64]| -> bool {
        members.iter().all(|&i| {
            XiParams::new(family, xi, model.data.offsets[i])
                .ok()
                .and_then(|p| interval_of(family, model.data.y[i] as i64, &p).ok())
                .is_some_and(|iv| !iv.is_empty())
        })
    };
    for _ in 0..200 {
        let xi = model.prior.xi_prior.sample(family, rng);
        if check(&xi) {
            return Ok(xi);
        }
    }
    // Moment-matched fallback.
    let mean_rate = members
        .iter()
        .map(|&i| model.data.y[i] as f64 / model.data.offsets[i])
        .sum::<f64>()
        / members.len().max(1) as f64;
    let xi = match family {
        OutcomeFamily::Poisson => vec![mean_rate.max(1e-3)],
        OutcomeFamily::NegativeBinomial => vec![mean_rate.max(1e-3), 1.0],
        OutcomeFamily::GeneralizedPoisson => vec![mean_rate.max(1e-3), 1.0],
        OutcomeFamily::Binomial => vec![mean_rate.clamp(1e-3, 1.0 - 1e-3)],
        OutcomeFamily::BetaBinomial => {
            let p = mean_rate.clamp(1e-3, 1.0 - 1e-3);
            vec![2.0 * p, 2.0 * (1.0 - p)]
        }
    };
    if check(&xi) {
        Ok(xi)
    } else {
        Err(Error::Numerical(
            "could not find feasible initial outcome parameters".into(),
        ))
    }
}

/// Interior point of an interval for latent initialization.
fn interval_midpoint(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 0.5,
        (false, true) => hi - 0.5,
        (false, false) => 0.0,
    }
}

/// Build the initial state: quantile-binned allocations, prior atoms with
/// feasible outcome parameters, interval-interior latents, then one forced
/// imputation / mean / outcome-parameter refresh.
pub fn init_state<R: Rng + ?Sized>(model: &ChainModel, rng: &mut R) -> Result<MixtureState> {
    let n = model.data.n;
    let t0 = match model.mode {
        SamplerMode::Truncated { t } => t,
        SamplerMode::Slice { .. } => 10,
    };
    if t0 == 0 {
        return Err(Error::Config("truncation level must be >= 1".into()));
    }
    let groups = t0.min(10).max(1);
    let delta = quantile_bin_allocations(&model.data.y, groups);

    let mut clusters = Vec::with_capacity(t0);
    for h in 0..t0 {
        let draw = crate::priors::sample_prior_atom(rng, &model.prior)?;
        let members: Vec<usize> = (0..n).filter(|&i| delta[i] == h).collect();
        let mut cluster = Cluster::new(draw.atom, draw.d_latent);
        if !members.is_empty() {
            let xi = feasible_xi(model, &members, rng)?;
            cluster.set_xi(xi);
        }
        clusters.push(cluster);
    }

    let p_b = model.data.p_binary;
    let mut state = MixtureState {
        clusters,
        v: vec![0.5; t0],
        pi: Vec::new(),
        delta,
        y_latent: vec![0.0; n],
        xb_latent: vec![0.0; n * p_b],
        u: Vec::new(),
        alpha: 1.0,
        tuning: AdaptiveTuning::initial(model.layout.q()),
        warnings: Vec::new(),
    };
    state.recompute_weights();

    // Interval-interior latent starting points.
    for i in 0..n {
        let h = state.delta[i];
        let iv = state.clusters[h].interval(model.data.y[i], model.data.offsets[i])?;
        state.y_latent[i] = interval_midpoint(iv.lo, iv.hi);
        for b in 0..p_b {
            let iv = binary_interval(model.data.xb_row(i)[b]);
            state.xb_latent[i * p_b + b] = interval_midpoint(iv.lo, iv.hi)
                + 0.1 * rng.sample::<f64, _>(StandardNormal);
            if !iv.contains(state.xb_latent[i * p_b + b]) {
                state.xb_latent[i * p_b + b] = interval_midpoint(iv.lo, iv.hi);
            }
        }
    }

    steps::update_sticks(&mut state, rng)?;
    steps::impute_latents(&mut state, model, rng)?;
    steps::update_means(&mut state, model, rng)?;
    steps::update_xi_mh(&mut state, model, rng)?;
    Ok(state)
}

/// Snapshot the current mixture (weights + atoms) for pmf evaluation.
pub fn snapshot(state: &MixtureState) -> MixtureSnapshot {
    MixtureSnapshot {
        weights: state.pi.clone(),
        atoms: state.clusters.iter().map(|c| c.atom.clone()).collect(),
    }
}

fn record_draw(state: &MixtureState, model: &ChainModel, sweep: u64) -> DrawRecord {
    let counts = state.counts();
    let ld = model.layout.latent_dim();
    let clusters = state
        .clusters
        .iter()
        .enumerate()
        .map(|(h, c)| ClusterRecord {
            count: counts[h] as u32,
            weight: state.pi[h],
            xi: c.atom.xi().to_vec(),
            mu_star: c.atom.mu_star().iter().cloned().collect(),
            sigma_star: c.atom.sigma_star().iter().cloned().collect::<Vec<_>>(),
            d_latent: (0..ld).map(|j| c.d_latent[j]).collect(),
        })
        .collect();
    DrawRecord {
        sweep,
        alpha: state.alpha,
        clusters,
    }
}

/// Run one chain: init, sweep loop in the fixed step order, burn-in/thin
/// filtering, and optional online conditional-pmf evaluation.
pub fn run_chain(
    model: &ChainModel,
    config: &ChainConfig,
    grid: Option<&CovariateGrid>,
) -> Result<RunOutput> {
    use rand::SeedableRng;
    config.validate()?;
    if let Some(g) = grid {
        g.validate()?;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut state = init_state(model, &mut rng)?;

    let mut draws = Vec::with_capacity(config.retained() as usize);
    let mut grid_draws = grid.map(|_| Vec::with_capacity(config.retained() as usize));

    for sweep in 0..config.iterations {
        steps::sweep(&mut state, model, &mut rng, sweep).map_err(|e| e.at_sweep(sweep))?;
        debug_assert!(
            check_invariants(&state, model).is_ok(),
            "invariant violated at sweep {sweep}: {:?}",
            check_invariants(&state, model)
        );
        if sweep >= config.burnin && (sweep - config.burnin) % config.thin == 0 {
            draws.push(record_draw(&state, model, sweep));
            if let (Some(out), Some(g)) = (grid_draws.as_mut(), grid) {
                let snap = snapshot(&state);
                out.push(conditional_pmf_draw(&snap, g, sweep).map_err(|e| e.at_sweep(sweep))?);
            }
        }
    }

    let (mode_name, truncation) = match model.mode {
        SamplerMode::Truncated { t } => ("truncated".to_string(), t as u32),
        SamplerMode::Slice { max_components } => ("slice".to_string(), max_components as u32),
    };
    let store = SampleStore {
        meta: StoreMeta {
            family: model.layout.family,
            p_binary: model.layout.p_binary,
            p_continuous: model.layout.p_continuous,
            n_observations: model.data.n as u64,
            mode: mode_name,
            truncation,
            iterations: config.iterations,
            burnin: config.burnin,
            thin: config.thin,
            seed: config.seed,
        },
        draws,
    };
    Ok(RunOutput {
        store,
        grid_draws,
        warnings: state.warnings.clone(),
        final_state: state,
    })
}

/// State invariant suite: stick identity, weight bounds, latent-interval
/// containment, and slice-variable consistency.
pub fn check_invariants(state: &MixtureState, model: &ChainModel) -> Result<()> {
    if state.stick_identity_gap() > 1e-12 {
        return Err(Error::Numerical(format!(
            "stick identity gap {}",
            state.stick_identity_gap()
        )));
    }
    let total: f64 = state.pi.iter().sum();
    if !(total <= 1.0 + 1e-12) || state.pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Numerical("mixture weights out of range".into()));
    }
    if !(state.alpha > 0.0) {
        return Err(Error::Numerical("alpha must be positive".into()));
    }
    let family = model.layout.family;
    let p_b = model.data.p_binary;
    for i in 0..model.data.n {
        let h = state.delta[i];
        if h >= state.t() {
            return Err(Error::Numerical(format!("allocation {h} out of range")));
        }
        let params = state.clusters[h].atom.params(model.data.offsets[i])?;
        let iv = interval_of(family, model.data.y[i] as i64, &params)?;
        if !iv.contains(state.y_latent[i]) {
            return Err(Error::Numerical(format!(
                "response latent of observation {i} outside its interval"
            )));
        }
        for b in 0..p_b {
            let iv = binary_interval(model.data.xb_row(i)[b]);
            if !iv.contains(state.xb_latent[i * p_b + b]) {
                return Err(Error::Numerical(format!(
                    "binary latent ({i},{b}) on the wrong side of zero"
                )));
            }
        }
    }
    Ok(())
}
