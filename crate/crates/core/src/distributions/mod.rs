//! Probability primitives: outcome families, scalar normal utilities, and
//! dense matrix-variate operations.

pub mod families;
pub mod matrix;
pub mod normal;

pub use families::{
    family_mean_var, gp_support_bound, gp_truncation, outcome_cdf, outcome_cdf_pair,
    outcome_ln_pmf, outcome_pmf, support_ceiling, GpTruncation, OutcomeFamily, PmfWalker,
    XiParams, GP_XI2_FLOOR,
};
pub use matrix::{
    gauss_legendre, ln_multigamma, mvn_condition, mvn_ln_pdf, mvn_ln_pdf_chol, mvn_rect_prob,
    sample_wishart, wishart_ln_pdf, SpdMatrix, GL_NODES,
};
pub use normal::{
    ln_normal_interval_prob, ln_std_normal_cdf, ln_std_normal_pdf, ln_std_normal_sf,
    sample_truncated_normal, std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf,
    QUANTILE_CLAMP,
};
