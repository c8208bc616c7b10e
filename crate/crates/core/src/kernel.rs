//! Mixture-component kernel: a restricted multivariate Gaussian over the
//! response latent, binary latents and observed continuous covariates,
//! integrated over the latent rectangles of the observed discrete values.
//!
//! Coordinate order is fixed as `[response latent, binary latents.., continuous..]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cutpoints::{binary_interval, interval_of, LatentInterval};
use crate::distributions::normal::{ln_normal_interval_prob, std_normal_pdf};
use crate::distributions::{mvn_ln_pdf_chol, OutcomeFamily, XiParams};
use crate::error::{Error, Result};

/// Variable roles of a model instance; immutable once built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableLayout {
    pub family: OutcomeFamily,
    pub p_binary: usize,
    pub p_continuous: usize,
}

impl VariableLayout {
    pub fn new(family: OutcomeFamily, p_binary: usize, p_continuous: usize) -> Self {
        VariableLayout {
            family,
            p_binary,
            p_continuous,
        }
    }

    /// Full Gaussian dimension `q = 1 + p_binary + p_continuous`.
    pub fn q(&self) -> usize {
        1 + self.p_binary + self.p_continuous
    }

    /// Number of thresholded (latent) coordinates.
    pub fn latent_dim(&self) -> usize {
        1 + self.p_binary
    }

    /// Number of free mean entries (all but the response latent).
    pub fn free_dim(&self) -> usize {
        self.p_binary + self.p_continuous
    }

    pub fn binary_coord(&self, m: usize) -> usize {
        1 + m
    }

    pub fn continuous_coord(&self, j: usize) -> usize {
        1 + self.p_binary + j
    }
}

/// One mixture component: outcome parameters, restricted mean, and
/// restricted covariance with cached factorizations.
#[derive(Clone, Debug)]
pub struct KernelAtom {
    layout: VariableLayout,
    xi: Vec<f64>,
    mu_star: DVector<f64>,
    sigma_star: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    /// Cholesky of the continuous block (empty when `p_continuous = 0`).
    chol_cc: Option<Cholesky<f64, Dyn>>,
    /// Regression of latent block on continuous block.
    b_dc: DMatrix<f64>,
    /// Conditional covariance of the latent block given the continuous one.
    sigma_d_given_c: DMatrix<f64>,
}

impl KernelAtom {
    pub fn new(
        layout: VariableLayout,
        xi: Vec<f64>,
        mu_star: DVector<f64>,
        sigma_star: DMatrix<f64>,
    ) -> Result<Self> {
        let q = layout.q();
        if xi.len() != layout.family.xi_dim() {
            return Err(Error::Layout(format!(
                "xi has {} entries, family needs {}",
                xi.len(),
                layout.family.xi_dim()
            )));
        }
        if mu_star.len() != q || sigma_star.nrows() != q || sigma_star.ncols() != q {
            return Err(Error::Layout("atom dimension mismatch".into()));
        }
        if mu_star[0] != 0.0 {
            return Err(Error::Layout(
                "response-latent mean must be exactly zero".into(),
            ));
        }
        let mut sigma_star = sigma_star;
        for j in 0..layout.latent_dim() {
            if (sigma_star[(j, j)] - 1.0).abs() > 1e-8 {
                return Err(Error::Matrix(format!(
                    "latent diagonal entry {j} = {} must be 1",
                    sigma_star[(j, j)]
                )));
            }
            sigma_star[(j, j)] = 1.0;
        }
        let mut atom = KernelAtom {
            layout,
            xi,
            mu_star,
            sigma_star: sigma_star.clone(),
            chol: Cholesky::new(DMatrix::identity(q, q)).unwrap(),
            precision: DMatrix::identity(q, q),
            chol_cc: None,
            b_dc: DMatrix::zeros(0, 0),
            sigma_d_given_c: DMatrix::zeros(0, 0),
        };
        atom.refresh(sigma_star)?;
        Ok(atom)
    }

    /// Replace the covariance and refresh every cached factor.
    fn refresh(&mut self, sigma_star: DMatrix<f64>) -> Result<f64> {
        let chol = Cholesky::new(sigma_star.clone())
            .ok_or_else(|| Error::Matrix("sigma_star not positive definite".into()))?;
        let precision = chol.inverse();
        let ld = self.layout.latent_dim();
        let pc = self.layout.p_continuous;
        let (chol_cc, b_dc, sigma_dc) = if pc > 0 {
            let scc = sigma_star.view((ld, ld), (pc, pc)).into_owned();
            let sdc = sigma_star.view((0, ld), (ld, pc)).into_owned();
            let ccc = Cholesky::new(scc)
                .ok_or_else(|| Error::Matrix("continuous block not positive definite".into()))?;
            let b = ccc.solve(&sdc.transpose()).transpose();
            let sdd = sigma_star.view((0, 0), (ld, ld)).into_owned();
            let cond = &sdd - &b * sdc.transpose();
            let cond = (&cond + cond.transpose()) * 0.5;
            (Some(ccc), b, cond)
        } else {
            (
                None,
                DMatrix::zeros(ld, 0),
                sigma_star.view((0, 0), (ld, ld)).into_owned(),
            )
        };
        self.sigma_star = sigma_star;
        self.chol = chol;
        self.precision = precision;
        self.chol_cc = chol_cc;
        self.b_dc = b_dc;
        self.sigma_d_given_c = sigma_dc;
        Ok(0.0)
    }

    pub fn layout(&self) -> VariableLayout {
        self.layout
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn set_xi(&mut self, xi: Vec<f64>) {
        debug_assert_eq!(xi.len(), self.layout.family.xi_dim());
        self.xi = xi;
    }

    pub fn mu_star(&self) -> &DVector<f64> {
        &self.mu_star
    }

    /// Free mean entries (everything but the response latent).
    pub fn mu_free(&self) -> DVector<f64> {
        self.mu_star.rows(1, self.layout.free_dim()).into_owned()
    }

    pub fn set_mu_free(&mut self, mu: &DVector<f64>) {
        debug_assert_eq!(mu.len(), self.layout.free_dim());
        for (j, &v) in mu.iter().enumerate() {
            self.mu_star[1 + j] = v;
        }
    }

    pub fn sigma_star(&self) -> &DMatrix<f64> {
        &self.sigma_star
    }

    pub fn set_sigma_star(&mut self, sigma_star: DMatrix<f64>) -> Result<()> {
        self.refresh(sigma_star)?;
        Ok(())
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Outcome parameters bound to a per-observation offset.
    pub fn params(&self, offset: f64) -> Result<XiParams> {
        XiParams::new(self.layout.family, &self.xi, offset)
    }

    /// Mean and variance of coordinate `j` given all other coordinates at
    /// `values` (its own entry is ignored), from the precision matrix.
    pub fn coord_conditional(&self, j: usize, values: &[f64]) -> (f64, f64) {
        let lam = &self.precision;
        let var = 1.0 / lam[(j, j)];
        let mut acc = 0.0;
        for k in 0..values.len() {
            if k != j {
                acc += lam[(j, k)] * (values[k] - self.mu_star[k]);
            }
        }
        (self.mu_star[j] - var * acc, var)
    }

    /// Conditional mean and variance of the response latent given every
    /// other coordinate: `rest[k]` holds the value of coordinate `k + 1`.
    pub fn response_given_rest(&self, rest: &[f64]) -> (f64, f64) {
        let lam = &self.precision;
        let var = 1.0 / lam[(0, 0)];
        let mut acc = 0.0;
        for (k, &v) in rest.iter().enumerate() {
            acc += lam[(0, k + 1)] * (v - self.mu_star[k + 1]);
        }
        (-var * acc, var)
    }

    /// Conditional mean and variance of the response latent given only the
    /// continuous covariates (no binary coordinates in the layout, or the
    /// binary latents integrated out is not intended here - this is the
    /// `p_binary = 0` fast path).
    pub fn response_given_continuous(&self, x_c: &[f64]) -> (f64, f64) {
        let ld = self.layout.latent_dim();
        let mut m = self.mu_star[0];
        for c in 0..self.layout.p_continuous {
            m += self.b_dc[(0, c)] * (x_c[c] - self.mu_star[ld + c]);
        }
        (m, self.sigma_d_given_c[(0, 0)])
    }

    /// Log Gaussian density of the observed continuous covariates.
    pub fn continuous_ln_pdf(&self, x_c: &[f64]) -> f64 {
        let pc = self.layout.p_continuous;
        if pc == 0 {
            return 0.0;
        }
        let ld = self.layout.latent_dim();
        let mu_c = self.mu_star.rows(ld, pc).into_owned();
        let x = DVector::from_column_slice(x_c);
        mvn_ln_pdf_chol(&x, &mu_c, self.chol_cc.as_ref().expect("p_c > 0"))
    }

    /// Mean and covariance of the latent block given the continuous values.
    pub fn latent_given_continuous(&self, x_c: &[f64]) -> (DVector<f64>, &DMatrix<f64>) {
        let ld = self.layout.latent_dim();
        let pc = self.layout.p_continuous;
        let mut mean = self.mu_star.rows(0, ld).into_owned();
        if pc > 0 {
            for j in 0..ld {
                let mut acc = 0.0;
                for c in 0..pc {
                    acc += self.b_dc[(j, c)] * (x_c[c] - self.mu_star[ld + c]);
                }
                mean[j] += acc;
            }
        }
        (mean, &self.sigma_d_given_c)
    }
}

/// Mean and variance `(m*, v*)` of the response latent conditional on the
/// covariate coordinates taking the given values.
pub fn response_conditional_moments(atom: &KernelAtom, covariates: &[f64]) -> Result<(f64, f64)> {
    if covariates.len() != atom.layout().q() - 1 {
        return Err(Error::Layout(format!(
            "expected {} covariate values, got {}",
            atom.layout().q() - 1,
            covariates.len()
        )));
    }
    let (m, v) = atom.response_given_rest(covariates);
    if !(v > 0.0) {
        return Err(Error::Numerical(format!(
            "nonpositive conditional variance {v}"
        )));
    }
    Ok((m, v))
}

/// One quadrature node over the binary latent coordinates: its weight and
/// the implied conditional mean / sd of the response latent.
#[derive(Clone, Copy, Debug)]
pub struct LatentNode {
    pub weight: f64,
    pub resp_mean: f64,
    pub resp_sd: f64,
}

/// Quadrature decomposition of the latent block given continuous values:
/// binary coordinates are integrated over their Eq.-3 half-lines first,
/// leaving a response-latent normal per node.
#[derive(Clone, Debug)]
pub struct ResponseMix {
    pub nodes: Vec<LatentNode>,
}

impl ResponseMix {
    /// Probability of the binary rectangle (response integrated out).
    pub fn covariate_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Probability of the response interval jointly with the binary rectangle.
    pub fn interval_mass(&self, iv: &LatentInterval) -> f64 {
        if iv.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in &self.nodes {
            let a = (iv.lo - n.resp_mean) / n.resp_sd;
            let b = (iv.hi - n.resp_mean) / n.resp_sd;
            total += n.weight * ln_normal_interval_prob(a, b).exp();
        }
        total
    }
}

const RANGE_SD: f64 = 8.5;

/// Build the quadrature mix for one observation's binary values at `x_c`.
pub fn response_mix(atom: &KernelAtom, x_binary: &[u8], x_c: &[f64]) -> Result<ResponseMix> {
    let layout = atom.layout();
    if x_binary.len() != layout.p_binary || x_c.len() != layout.p_continuous {
        return Err(Error::Layout("observation does not match layout".into()));
    }
    let (mean, cov) = atom.latent_given_continuous(x_c);
    let mut nodes = Vec::new();
    if layout.p_binary == 0 {
        let v = cov[(0, 0)];
        if !(v > 0.0) {
            return Err(Error::Numerical("response conditional variance <= 0".into()));
        }
        nodes.push(LatentNode {
            weight: 1.0,
            resp_mean: mean[0],
            resp_sd: v.sqrt(),
        });
        return Ok(ResponseMix { nodes });
    }
    // Order coordinates binaries-first, response last, then condition one
    // binary at a time on Gauss-Legendre nodes over its half-line.
    let ld = layout.latent_dim();
    let perm: Vec<usize> = (1..ld).chain(std::iter::once(0)).collect();
    let pmean = DVector::from_iterator(ld, perm.iter().map(|&i| mean[i]));
    let mut pcov = DMatrix::zeros(ld, ld);
    for (a, &i) in perm.iter().enumerate() {
        for (b, &j) in perm.iter().enumerate() {
            pcov[(a, b)] = cov[(i, j)];
        }
    }
    let intervals: Vec<LatentInterval> = x_binary.iter().map(|&v| binary_interval(v)).collect();
    descend_binary(&pmean, &pcov, &intervals, 1.0, &mut nodes)?;
    Ok(ResponseMix { nodes })
}

fn descend_binary(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    intervals: &[LatentInterval],
    weight: f64,
    out: &mut Vec<LatentNode>,
) -> Result<()> {
    if intervals.is_empty() {
        let v = cov[(0, 0)];
        if !(v > 0.0) {
            return Err(Error::Numerical("response conditional variance <= 0".into()));
        }
        if weight > 0.0 {
            out.push(LatentNode {
                weight,
                resp_mean: mean[0],
                resp_sd: v.sqrt(),
            });
        }
        return Ok(());
    }
    let sd = cov[(0, 0)].max(f64::MIN_POSITIVE).sqrt();
    let lo = intervals[0].lo.max(mean[0] - RANGE_SD * sd);
    let hi = intervals[0].hi.min(mean[0] + RANGE_SD * sd);
    if lo >= hi {
        return Ok(()); // negligible mass down this branch
    }
    let (gl_nodes, gl_weights) = gl_cached();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let q = mean.len();
    for (&t, &w) in gl_nodes.iter().zip(gl_weights) {
        let x = mid + half * t;
        let dens = std_normal_pdf((x - mean[0]) / sd) / sd;
        if dens == 0.0 {
            continue;
        }
        let v0 = cov[(0, 0)];
        let mut cmean = DVector::zeros(q - 1);
        let mut ccov = DMatrix::zeros(q - 1, q - 1);
        for i in 1..q {
            cmean[i - 1] = mean[i] + cov[(i, 0)] / v0 * (x - mean[0]);
            for j in 1..q {
                ccov[(i - 1, j - 1)] = cov[(i, j)] - cov[(i, 0)] * cov[(j, 0)] / v0;
            }
        }
        descend_binary(&cmean, &ccov, &intervals[1..], weight * w * half * dens, out)?;
    }
    Ok(())
}

fn gl_cached() -> (&'static [f64], &'static [f64]) {
    use std::sync::OnceLock;
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = CACHE.get_or_init(|| crate::distributions::gauss_legendre(crate::distributions::GL_NODES));
    (n, w)
}

/// Kernel density of one mixed observation under an atom.
pub fn kernel_density(
    atom: &KernelAtom,
    y: u32,
    x_binary: &[u8],
    x_c: &[f64],
    offset: f64,
) -> Result<f64> {
    let layout = atom.layout();
    let params = atom.params(offset)?;
    let iv = interval_of(layout.family, y as i64, &params)?;
    let mix = response_mix(atom, x_binary, x_c)?;
    Ok(atom.continuous_ln_pdf(x_c).exp() * mix.interval_mass(&iv))
}

/// Marginal kernel of the covariates only (response integrated out).
pub fn covariate_kernel(atom: &KernelAtom, x_binary: &[u8], x_c: &[f64]) -> Result<f64> {
    let mix = response_mix(atom, x_binary, x_c)?;
    Ok(atom.continuous_ln_pdf(x_c).exp() * mix.covariate_mass())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutpoints::cutpoint;
    use crate::distributions::std_normal_cdf;

    fn product_atom(rho: f64) -> KernelAtom {
        // One continuous covariate, count response.
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 0, 1);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 2.0]);
        KernelAtom::new(
            layout,
            vec![3.0],
            DVector::from_vec(vec![0.0, 1.5]),
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn rejects_nonzero_response_mean() {
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 0, 1);
        let sigma = DMatrix::identity(2, 2);
        let r = KernelAtom::new(layout, vec![3.0], DVector::from_vec(vec![0.1, 0.0]), sigma);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_nonunit_latent_diagonal() {
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 0, 1);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 1.0]);
        let r = KernelAtom::new(layout, vec![3.0], DVector::zeros(2), sigma);
        assert!(r.is_err());
    }

    #[test]
    fn conditional_moments_match_formula() {
        // Unit variances, correlation rho: v* = 1 - rho^2.
        let rho = 0.6;
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 0, 1);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let atom = KernelAtom::new(layout, vec![3.0], DVector::zeros(2), sigma).unwrap();
        let (m, v) = response_conditional_moments(&atom, &[0.8]).unwrap();
        assert!((v - (1.0 - rho * rho)).abs() < 1e-12);
        assert!((m - rho * 0.8).abs() < 1e-12);
    }

    #[test]
    fn independence_gives_unit_variance() {
        let atom = product_atom(0.0);
        let (m, v) = response_conditional_moments(&atom, &[4.0]).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn single_continuous_kernel_matches_closed_form() {
        let atom = product_atom(0.7);
        let x = 2.1;
        let offset = 1.3;
        let y = 4u32;
        let params = atom.params(offset).unwrap();
        let (m, v) = response_conditional_moments(&atom, &[x]).unwrap();
        let c_hi = cutpoint(OutcomeFamily::Poisson, y as i64, &params);
        let c_lo = cutpoint(OutcomeFamily::Poisson, y as i64 - 1, &params);
        let phi_term =
            std_normal_cdf((c_hi - m) / v.sqrt()) - std_normal_cdf((c_lo - m) / v.sqrt());
        let gauss = atom.continuous_ln_pdf(&[x]).exp();
        let expect = gauss * phi_term;
        let got = kernel_density(&atom, y, &[], &[x], offset).unwrap();
        assert!(
            (got - expect).abs() < 1e-12 * expect.max(1e-300),
            "{got} vs {expect}"
        );
    }

    #[test]
    fn product_kernel_factorizes() {
        // nu = 0: kernel = rectangle probability x Gaussian density.
        let atom = product_atom(0.0);
        let offset = 2.0;
        let params = atom.params(offset).unwrap();
        for y in [0u32, 2, 7] {
            let iv = interval_of(OutcomeFamily::Poisson, y as i64, &params).unwrap();
            let rect = std_normal_cdf(iv.hi) - std_normal_cdf(iv.lo);
            let gauss = atom.continuous_ln_pdf(&[0.3]).exp();
            let got = kernel_density(&atom, y, &[], &[0.3], offset).unwrap();
            assert!((got - rect * gauss).abs() < 1e-12, "y = {y}");
        }
    }

    #[test]
    fn covariate_kernel_reduces_to_gaussian_without_binaries() {
        let atom = product_atom(0.4);
        let got = covariate_kernel(&atom, &[], &[1.1]).unwrap();
        let expect = atom.continuous_ln_pdf(&[1.1]).exp();
        assert!((got - expect).abs() < 1e-12);
    }

    fn binary_atom(rho: f64, mu_b: f64) -> KernelAtom {
        // One binary covariate, one continuous covariate.
        let layout = VariableLayout::new(OutcomeFamily::Poisson, 1, 1);
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 1.5],
        );
        KernelAtom::new(
            layout,
            vec![2.0],
            DVector::from_vec(vec![0.0, mu_b, -0.4]),
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn binary_covariate_kernel_matches_probit_mass() {
        // nu = 0 between binary latent and the rest: mass = Phi(+-mu).
        let mu_b = 0.9;
        let atom = binary_atom(0.0, mu_b);
        let g = atom.continuous_ln_pdf(&[0.2]).exp();
        let k1 = covariate_kernel(&atom, &[1], &[0.2]).unwrap();
        let k0 = covariate_kernel(&atom, &[0], &[0.2]).unwrap();
        assert!((k1 - g * std_normal_cdf(mu_b)).abs() < 1e-9, "{k1}");
        assert!((k0 - g * std_normal_cdf(-mu_b)).abs() < 1e-9, "{k0}");
    }

    #[test]
    fn binary_levels_sum_to_continuous_marginal() {
        let atom = binary_atom(0.5, 0.3);
        let g = atom.continuous_ln_pdf(&[0.7]).exp();
        let total = covariate_kernel(&atom, &[0], &[0.7]).unwrap()
            + covariate_kernel(&atom, &[1], &[0.7]).unwrap();
        assert!((total - g).abs() < 1e-10, "{total} vs {g}");
    }

    #[test]
    fn kernel_sums_over_response_to_covariate_kernel() {
        let atom = binary_atom(0.45, -0.2);
        let offset = 1.0;
        let cov = covariate_kernel(&atom, &[1], &[0.5]).unwrap();
        let mut total = 0.0;
        for y in 0..200u32 {
            total += kernel_density(&atom, y, &[1], &[0.5], offset).unwrap();
        }
        assert!(
            ((total - cov) / cov).abs() < 1e-8,
            "sum {total} vs covariate kernel {cov}"
        );
    }
}
