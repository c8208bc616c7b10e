//! Base-measure construction: data-driven mean prior, outcome-parameter
//! priors, and the Wishart-derived prior on the expanded covariance pair
//! `(D_h, Sigma*_h)` obtained from `E_h = D_h^{1/2} Sigma*_h D_h^{1/2}`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::distributions::{
    sample_wishart, std_normal_quantile, OutcomeFamily, SpdMatrix, GP_XI2_FLOOR,
};
use crate::error::{Error, Result};
use crate::kernel::{KernelAtom, VariableLayout};

/// Hyperparameters of the outcome-parameter priors. Defaults follow the
/// reference configuration: Gamma(1, 0.1) (shape, rate) for positive
/// parameters, Beta(1, 1) for the binomial success probability, and
/// N(1, 1) truncated above 0.05 for the generalized-Poisson dispersion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiPrior {
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub gp_xi2_mean: f64,
    pub gp_xi2_sd: f64,
}

impl Default for XiPrior {
    fn default() -> Self {
        XiPrior {
            gamma_shape: 1.0,
            gamma_rate: 0.1,
            beta_a: 1.0,
            beta_b: 1.0,
            gp_xi2_mean: 1.0,
            gp_xi2_sd: 1.0,
        }
    }
}

impl XiPrior {
    /// Log prior density of an outcome parameter vector (truncation
    /// normalizer of the GP dispersion omitted; it cancels in ratios).
    pub fn ln_density(&self, family: OutcomeFamily, xi: &[f64]) -> f64 {
        let ln_gamma_pdf = |x: f64| {
            if x <= 0.0 {
                return f64::NEG_INFINITY;
            }
            self.gamma_shape * self.gamma_rate.ln() - ln_gamma(self.gamma_shape)
                + (self.gamma_shape - 1.0) * x.ln()
                - self.gamma_rate * x
        };
        match family {
            OutcomeFamily::Poisson => ln_gamma_pdf(xi[0]),
            OutcomeFamily::NegativeBinomial | OutcomeFamily::BetaBinomial => {
                ln_gamma_pdf(xi[0]) + ln_gamma_pdf(xi[1])
            }
            OutcomeFamily::GeneralizedPoisson => {
                if xi[1] <= GP_XI2_FLOOR {
                    return f64::NEG_INFINITY;
                }
                let z = (xi[1] - self.gp_xi2_mean) / self.gp_xi2_sd;
                ln_gamma_pdf(xi[0]) - 0.5 * z * z - self.gp_xi2_sd.ln()
            }
            OutcomeFamily::Binomial => {
                if !(0.0..1.0).contains(&xi[0]) {
                    return f64::NEG_INFINITY;
                }
                (self.beta_a - 1.0) * xi[0].ln() + (self.beta_b - 1.0) * (1.0 - xi[0]).ln()
            }
        }
    }

    /// Draw outcome parameters from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, family: OutcomeFamily, rng: &mut R) -> Vec<f64> {
        let gamma = Gamma::new(self.gamma_shape, 1.0 / self.gamma_rate).expect("valid gamma");
        match family {
            OutcomeFamily::Poisson => vec![gamma.sample(rng)],
            OutcomeFamily::NegativeBinomial | OutcomeFamily::BetaBinomial => {
                vec![gamma.sample(rng), gamma.sample(rng)]
            }
            OutcomeFamily::GeneralizedPoisson => {
                let normal = Normal::new(self.gp_xi2_mean, self.gp_xi2_sd).expect("valid normal");
                // Rejection against the 0.05 floor; acceptance ~0.83.
                let xi2 = loop {
                    let v = normal.sample(rng);
                    if v > GP_XI2_FLOOR {
                        break v;
                    }
                };
                vec![gamma.sample(rng), xi2]
            }
            OutcomeFamily::Binomial => {
                let beta = Beta::new(self.beta_a, self.beta_b).expect("valid beta");
                vec![beta.sample(rng)]
            }
        }
    }
}

/// The full base measure `P_0` plus the concentration-parameter prior.
#[derive(Clone, Debug)]
pub struct BasePrior {
    pub layout: VariableLayout,
    /// Prior mean of the free means (binary latents then continuous).
    pub d: DVector<f64>,
    /// Diagonal of the prior covariance of the free means.
    pub d_diag: DVector<f64>,
    /// Wishart degrees of freedom, `q + 2`.
    pub eta: f64,
    /// Wishart scale matrix.
    pub h_wishart: SpdMatrix,
    pub xi_prior: XiPrior,
    /// Gamma prior (shape, rate) on the DP concentration.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
}

/// Default Gamma prior on the concentration parameter.
pub const ALPHA_PRIOR_DEFAULT: (f64, f64) = (2.0, 4.0);

/// Prior variance assigned to binary-latent means.
pub const BINARY_MEAN_VAR: f64 = 5.0;

/// Build the data-driven base prior for a dataset and outcome family.
pub fn build_base_prior(dataset: &Dataset, family: OutcomeFamily) -> Result<BasePrior> {
    dataset.validate()?;
    let layout = VariableLayout::new(family, dataset.p_binary(), dataset.p_continuous());
    let n = dataset.n() as f64;
    let mut d = Vec::with_capacity(layout.free_dim());
    let mut d_diag = Vec::with_capacity(layout.free_dim());

    for (j, col) in dataset.x_binary.iter().enumerate() {
        let p_star = col.iter().map(|&v| v as f64).sum::<f64>() / n;
        if p_star == 0.0 || p_star == 1.0 {
            return Err(Error::Degenerate(format!(
                "binary covariate '{}' is constant",
                dataset.names.binary.get(j).map(String::as_str).unwrap_or("?")
            )));
        }
        // -Phi^-1(1 - p*): prior proportion equal to the sample proportion.
        d.push(-std_normal_quantile(1.0 - p_star)?);
        d_diag.push(BINARY_MEAN_VAR);
    }

    let mut cont_scale = Vec::with_capacity(dataset.p_continuous());
    for (j, col) in dataset.x_continuous.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n;
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        if range <= 0.0 {
            return Err(Error::Degenerate(format!(
                "continuous covariate '{}' has zero range",
                dataset
                    .names
                    .continuous
                    .get(j)
                    .map(String::as_str)
                    .unwrap_or("?")
            )));
        }
        d.push(mean);
        let scale = range * range / 8.0;
        d_diag.push(scale);
        cont_scale.push(scale);
    }

    let q = layout.q();
    let mut h = DMatrix::zeros(q, q);
    for j in 0..layout.latent_dim() {
        h[(j, j)] = 1.0;
    }
    for (j, &s) in cont_scale.iter().enumerate() {
        let c = layout.continuous_coord(j);
        h[(c, c)] = s;
    }

    Ok(BasePrior {
        layout,
        d: DVector::from_vec(d),
        d_diag: DVector::from_vec(d_diag),
        eta: q as f64 + 2.0,
        h_wishart: SpdMatrix::new(h)?,
        xi_prior: XiPrior::default(),
        alpha_shape: ALPHA_PRIOR_DEFAULT.0,
        alpha_rate: ALPHA_PRIOR_DEFAULT.1,
    })
}

/// Decompose an unrestricted SPD matrix `E` into the expansion parameters
/// `D_h` (latent-position variances) and the restricted `Sigma*`.
pub fn decompose_cov(e: &DMatrix<f64>, layout: &VariableLayout) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = layout.q();
    if e.nrows() != q || e.ncols() != q {
        return Err(Error::Layout("covariance dimension mismatch".into()));
    }
    let ld = layout.latent_dim();
    let mut d_latent = DVector::zeros(ld);
    let mut scale = DVector::from_element(q, 1.0);
    for j in 0..ld {
        let v = e[(j, j)];
        if !(v > 0.0) {
            return Err(Error::Matrix(format!("nonpositive latent variance {v}")));
        }
        d_latent[j] = v;
        scale[j] = v.sqrt();
    }
    let mut sigma = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            sigma[(i, j)] = e[(i, j)] / (scale[i] * scale[j]);
        }
    }
    for j in 0..ld {
        sigma[(j, j)] = 1.0;
    }
    Ok((d_latent, sigma))
}

/// Recompose `E = D^{1/2} Sigma* D^{1/2}` from the expansion parameters.
pub fn recompose_cov(
    d_latent: &DVector<f64>,
    sigma_star: &DMatrix<f64>,
    layout: &VariableLayout,
) -> DMatrix<f64> {
    let q = layout.q();
    let mut scale = DVector::from_element(q, 1.0);
    for j in 0..layout.latent_dim() {
        scale[j] = d_latent[j].sqrt();
    }
    let mut e = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            e[(i, j)] = sigma_star[(i, j)] * scale[i] * scale[j];
        }
    }
    e
}

/// Unnormalized log prior of `(D_h, Sigma*_h)`:
/// `(eta-q-1)/2 log|E| - tr(H^-1 E)/2 + (q-1)/2 log|D|`.
pub fn log_prior_cov(
    d_latent: &DVector<f64>,
    sigma_star: &DMatrix<f64>,
    base: &BasePrior,
) -> Result<f64> {
    let layout = &base.layout;
    let q = layout.q() as f64;
    if d_latent.len() != layout.latent_dim() {
        return Err(Error::Layout("expansion parameter length mismatch".into()));
    }
    for j in 0..layout.latent_dim() {
        if !(d_latent[j] > 0.0) {
            return Err(Error::Matrix("nonpositive expansion variance".into()));
        }
        if (sigma_star[(j, j)] - 1.0).abs() > 1e-10 {
            return Err(Error::Matrix("latent diagonal of Sigma* must be 1".into()));
        }
    }
    let chol_sigma = Cholesky::new(sigma_star.clone())
        .ok_or_else(|| Error::Matrix("Sigma* not positive definite".into()))?;
    let ln_det_sigma = 2.0 * chol_sigma.l_dirty().diagonal().map(f64::ln).sum();
    let ln_det_d: f64 = d_latent.iter().map(|&v| v.ln()).sum();
    let e = recompose_cov(d_latent, sigma_star, layout);
    let h_chol = base.h_wishart.cholesky();
    let tr = h_chol.solve(&e).trace();
    let ln_det_e = ln_det_d + ln_det_sigma;
    Ok(0.5 * (base.eta - q - 1.0) * ln_det_e - 0.5 * tr + 0.5 * (q - 1.0) * ln_det_d)
}

/// A prior draw of a mixture component, together with its covariance
/// expansion parameters.
#[derive(Clone, Debug)]
pub struct PriorAtomDraw {
    pub atom: KernelAtom,
    pub d_latent: DVector<f64>,
}

/// Sample a full atom from the base measure.
pub fn sample_prior_atom<R: Rng + ?Sized>(rng: &mut R, base: &BasePrior) -> Result<PriorAtomDraw> {
    let layout = base.layout;
    let xi = base.xi_prior.sample(layout.family, rng);
    let mut mu_star = DVector::zeros(layout.q());
    for j in 0..layout.free_dim() {
        let normal = Normal::new(base.d[j], base.d_diag[j].sqrt())
            .map_err(|e| Error::ParamDomain(format!("mean prior: {e}")))?;
        mu_star[1 + j] = normal.sample(rng);
    }
    let e = sample_wishart(rng, base.eta, &base.h_wishart)?;
    let (d_latent, sigma_star) = decompose_cov(&e, &layout)?;
    let atom = KernelAtom::new(layout, xi, mu_star, sigma_star)?;
    Ok(PriorAtomDraw { atom, d_latent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        Dataset {
            y: vec![1, 2, 3, 4],
            offsets: vec![1.0; 4],
            x_binary: vec![vec![0, 1, 1, 0]],
            x_continuous: vec![vec![0.0, 4.0, 2.0, 2.0]],
            names: crate::data::DataSchema {
                response: "y".into(),
                offset: None,
                binary: vec!["b".into()],
                continuous: vec!["x".into()],
            },
        }
    }

    #[test]
    fn base_prior_follows_data_summaries() {
        let ds = toy_dataset();
        let base = build_base_prior(&ds, OutcomeFamily::Poisson).unwrap();
        // Binary p* = 0.5 -> prior mean 0; variance constant 5.
        assert!(base.d[0].abs() < 1e-12);
        assert_eq!(base.d_diag[0], 5.0);
        // Continuous range 4 -> D entry and Wishart scale entry 16/8 = 2.
        assert!((base.d[1] - 2.0).abs() < 1e-12);
        assert!((base.d_diag[1] - 2.0).abs() < 1e-12);
        let h = base.h_wishart.as_matrix();
        assert!((h[(2, 2)] - 2.0).abs() < 1e-12);
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(1, 1)], 1.0);
        // eta = q + 2 = 5.
        assert_eq!(base.eta, 5.0);
    }

    #[test]
    fn degenerate_columns_are_rejected() {
        let mut ds = toy_dataset();
        ds.x_binary[0] = vec![1, 1, 1, 1];
        assert!(build_base_prior(&ds, OutcomeFamily::Poisson).is_err());
        let mut ds = toy_dataset();
        ds.x_continuous[0] = vec![2.0; 4];
        assert!(build_base_prior(&ds, OutcomeFamily::Poisson).is_err());
    }

    #[test]
    fn binary_prior_mean_hits_unit_quantile() {
        // p* = 0.8413447 -> d entry ~ 1.0 (frozen from the quantile oracle).
        let mut ds = toy_dataset();
        let n = 10_000usize;
        let ones = (0.841_344_746_068_543 * n as f64).round() as usize;
        ds.y = vec![1; n];
        ds.offsets = vec![1.0; n];
        ds.x_binary = vec![(0..n).map(|i| u8::from(i < ones)).collect()];
        ds.x_continuous = vec![(0..n).map(|i| i as f64 / n as f64).collect()];
        let base = build_base_prior(&ds, OutcomeFamily::Poisson).unwrap();
        assert!((base.d[0] - 1.0).abs() < 1e-3, "d = {}", base.d[0]);
    }

    #[test]
    fn decompose_identity_is_fixed_point() {
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 1, 1);
        let e = DMatrix::identity(3, 3);
        let (d, s) = decompose_cov(&e, &layout).unwrap();
        assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!((s - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn decompose_extracts_latent_diagonal() {
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 1, 0);
        let e = DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 9.0]);
        let (d, s) = decompose_cov(&e, &layout).unwrap();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[1], 9.0);
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 1)], 1.0);
        assert!((s[(0, 1)] - 1.2 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn log_prior_cov_reduces_to_wishart_kernel_at_unit_d() {
        let ds = toy_dataset();
        let base = build_base_prior(&ds, OutcomeFamily::Poisson).unwrap();
        let q = base.layout.q();
        let sigma = {
            let mut m = DMatrix::identity(q, q);
            m[(0, 1)] = 0.3;
            m[(1, 0)] = 0.3;
            m[(2, 2)] = 1.7;
            m
        };
        let d = DVector::from_element(base.layout.latent_dim(), 1.0);
        let got = log_prior_cov(&d, &sigma, &base).unwrap();
        // With D = I the Jacobian term vanishes and E = Sigma*.
        let chol = Cholesky::new(sigma.clone()).unwrap();
        let ln_det = 2.0 * chol.l().diagonal().map(f64::ln).sum();
        let tr = base.h_wishart.cholesky().solve(&sigma).trace();
        let expect = 0.5 * (base.eta - q as f64 - 1.0) * ln_det - 0.5 * tr;
        assert!((got - expect).abs() < 1e-12);
    }
}
