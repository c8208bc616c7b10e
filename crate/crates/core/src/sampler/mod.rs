//! Blocked Gibbs / slice MCMC engine with adaptive Metropolis-Hastings
//! moves for the covariance and outcome parameters.

pub mod chain;
pub mod state;
pub mod steps;

pub use chain::{check_invariants, init_state, run_chain, snapshot, ChainConfig, RunOutput};
pub use state::{
    AcceptCounter, AdaptiveTuning, ChainModel, Cluster, MixtureState, PreparedData, SamplerMode,
    ADAPT_BATCH,
};
pub use steps::{
    adapt_tuning, impute_latents, label_switch_moves, sweep, update_allocations, update_alpha,
    update_cov_mh, update_means, update_sticks, update_xi_mh,
};
