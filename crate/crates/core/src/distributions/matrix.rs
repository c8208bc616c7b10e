//! Dense symmetric-positive-definite utilities: validation, Gaussian
//! conditioning, rectangle probabilities, and Wishart sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::distributions::normal::{ln_normal_interval_prob, std_normal_pdf};
use crate::error::{Error, Result};

/// Symmetric positive definite matrix, validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry (to 1e-12 relative) and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Matrix(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.diagonal().amax().max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Matrix(format!(
                        "asymmetry at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        if Cholesky::new(m.clone()).is_none() {
            return Err(Error::Matrix("matrix is not positive definite".into()));
        }
        Ok(SpdMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.0.clone()).expect("validated SPD")
    }
}

/// Condition a multivariate normal on a subset of coordinates.
///
/// Returns the conditional mean and covariance of the remaining coordinates
/// given `x[given_idx] = given_vals`.
pub fn mvn_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    given_idx: &[usize],
    given_vals: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = mean.len();
    if cov.nrows() != q || cov.ncols() != q {
        return Err(Error::Matrix("covariance dimension mismatch".into()));
    }
    if given_idx.len() != given_vals.len() {
        return Err(Error::Layout("index/value length mismatch".into()));
    }
    if given_idx.is_empty() || given_idx.len() >= q {
        return Err(Error::Layout(
            "conditioning set must be a proper nonempty subset".into(),
        ));
    }
    let mut is_given = vec![false; q];
    for &i in given_idx {
        if i >= q || is_given[i] {
            return Err(Error::Layout(format!("bad conditioning index {i}")));
        }
        is_given[i] = true;
    }
    let free: Vec<usize> = (0..q).filter(|&i| !is_given[i]).collect();

    let sigma_bb = cov.select_rows(given_idx).select_columns(given_idx);
    let sigma_ab = cov.select_rows(&free).select_columns(given_idx);
    let sigma_aa = cov.select_rows(&free).select_columns(&free);

    check_condition_number(&sigma_bb)?;
    let chol = Cholesky::new(sigma_bb)
        .ok_or_else(|| Error::Singular("conditioning block not positive definite".into()))?;

    let resid = DVector::from_iterator(
        given_idx.len(),
        given_idx
            .iter()
            .zip(given_vals)
            .map(|(&i, &v)| v - mean[i]),
    );
    let mu_a = DVector::from_iterator(free.len(), free.iter().map(|&i| mean[i]));
    let cond_mean = &mu_a + &sigma_ab * chol.solve(&resid);
    let cond_cov = &sigma_aa - &sigma_ab * chol.solve(&sigma_ab.transpose());
    // Symmetrize against rounding.
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    Ok((cond_mean, cond_cov))
}

fn check_condition_number(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 1 {
        if m[(0, 0)] <= 0.0 {
            return Err(Error::Singular("nonpositive variance".into()));
        }
        return Ok(());
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max / min > 1e12 {
        return Err(Error::Singular(format!(
            "condition number {:.3e} exceeds 1e12",
            max / min.max(f64::MIN_POSITIVE)
        )));
    }
    Ok(())
}

/// Number of Gauss-Legendre nodes per coordinate in rectangle integrals.
pub const GL_NODES: usize = 32;

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * x * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            let dp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
            let dx = p0 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
                break;
            }
        }
    }
    (nodes, weights)
}

/// Effective finite integration range for a normal coordinate.
const RANGE_SD: f64 = 8.5;

/// Probability that a multivariate normal falls in the axis-aligned
/// rectangle `(lo, hi)` (componentwise, open; infinities allowed).
///
/// Dimension 0 returns 1 and dimension 1 is the exact cdf difference.
/// Higher dimensions integrate one coordinate at a time with Gauss-Legendre
/// quadrature, conditioning the remainder on each node.
pub fn mvn_rect_prob(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
) -> Result<f64> {
    let q = mean.len();
    if lo.len() != q || hi.len() != q || cov.nrows() != q || cov.ncols() != q {
        return Err(Error::Layout("rectangle dimension mismatch".into()));
    }
    for i in 0..q {
        if !(lo[i] < hi[i]) {
            return Err(Error::Interval {
                lo: lo[i],
                hi: hi[i],
            });
        }
    }
    if q == 0 {
        return Ok(1.0);
    }
    Ok(rect_prob_recursive(mean.clone(), cov.clone(), lo, hi).clamp(0.0, 1.0))
}

fn rect_prob_recursive(mean: DVector<f64>, cov: DMatrix<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let q = mean.len();
    if q == 1 {
        let sd = cov[(0, 0)].max(0.0).sqrt();
        if sd == 0.0 {
            return if lo[0] < mean[0] && mean[0] < hi[0] {
                1.0
            } else {
                0.0
            };
        }
        let a = (lo[0] - mean[0]) / sd;
        let b = (hi[0] - mean[0]) / sd;
        return ln_normal_interval_prob(a, b).exp();
    }
    let sd = cov[(0, 0)].max(f64::MIN_POSITIVE).sqrt();
    let l = lo[0].max(mean[0] - RANGE_SD * sd);
    let h = hi[0].min(mean[0] + RANGE_SD * sd);
    if l >= h {
        // The rectangle misses effectively all mass in this coordinate.
        return 0.0;
    }
    let (nodes, weights) = gl_cached();
    let half = 0.5 * (h - l);
    let mid = 0.5 * (h + l);
    let mut total = 0.0;
    for (&t, &w) in nodes.iter().zip(weights) {
        let x = mid + half * t;
        let dens = std_normal_pdf((x - mean[0]) / sd) / sd;
        if dens == 0.0 {
            continue;
        }
        let (cmean, ccov) = condition_on_first(&mean, &cov, x);
        total += w * dens * rect_prob_recursive(cmean, ccov, &lo[1..], &hi[1..]);
    }
    total * half
}

fn condition_on_first(mean: &DVector<f64>, cov: &DMatrix<f64>, x: f64) -> (DVector<f64>, DMatrix<f64>) {
    let q = mean.len();
    let v = cov[(0, 0)];
    let mut cmean = DVector::zeros(q - 1);
    let mut ccov = DMatrix::zeros(q - 1, q - 1);
    for i in 1..q {
        cmean[i - 1] = mean[i] + cov[(i, 0)] / v * (x - mean[0]);
        for j in 1..q {
            ccov[(i - 1, j - 1)] = cov[(i, j)] - cov[(i, 0)] * cov[(j, 0)] / v;
        }
    }
    (cmean, ccov)
}

fn gl_cached() -> (&'static [f64], &'static [f64]) {
    use std::sync::OnceLock;
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = CACHE.get_or_init(|| gauss_legendre(GL_NODES));
    (n, w)
}

/// Draw from a Wishart distribution with `df` degrees of freedom and the
/// given scale, by the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    scale: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    let q = scale.dim();
    if df <= q as f64 - 1.0 {
        return Err(Error::ParamDomain(format!(
            "Wishart df {df} must exceed q - 1 = {}",
            q - 1
        )));
    }
    let l = scale.cholesky().l();
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::ParamDomain(format!("chi-squared df: {e}")))?;
        a[(i, i)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    // Symmetrize exactly.
    let w = (&w + w.transpose()) * 0.5;
    Ok(w)
}

/// Log density of the Wishart distribution (full normalizing constant).
pub fn wishart_ln_pdf(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let q = x.nrows() as f64;
    let chol_x = Cholesky::new(x.clone())
        .ok_or_else(|| Error::Matrix("Wishart argument not SPD".into()))?;
    let chol_s = Cholesky::new(scale.clone())
        .ok_or_else(|| Error::Matrix("Wishart scale not SPD".into()))?;
    let ln_det_x = 2.0 * chol_x.l().diagonal().map(f64::ln).sum();
    let ln_det_s = 2.0 * chol_s.l().diagonal().map(f64::ln).sum();
    let tr = chol_s.solve(x).trace();
    Ok(0.5 * (df - q - 1.0) * ln_det_x
        - 0.5 * tr
        - 0.5 * df * q * std::f64::consts::LN_2
        - 0.5 * df * ln_det_s
        - ln_multigamma(q as usize, 0.5 * df))
}

/// Multivariate log-gamma function.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let mut s = 0.25 * (p * (p - 1)) as f64 * std::f64::consts::PI.ln();
    for j in 0..p {
        s += ln_gamma(a - 0.5 * j as f64);
    }
    s
}

/// Log density of a multivariate normal.
pub fn mvn_ln_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Matrix("covariance not SPD".into()))?;
    Ok(mvn_ln_pdf_chol(x, mean, &chol))
}

/// Log density using a pre-computed Cholesky factor.
pub fn mvn_ln_pdf_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let q = x.len() as f64;
    let ln_det = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
    let resid = x - mean;
    let half = chol.l_dirty().solve_lower_triangular(&resid).unwrap();
    -0.5 * (q * (2.0 * std::f64::consts::PI).ln() + ln_det + half.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_rejects_asymmetry_and_indefiniteness() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SpdMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(SpdMatrix::new(m).is_ok());
    }

    #[test]
    fn condition_diagonal_is_identity_operation() {
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        let (m, c) = mvn_condition(&mean, &cov, &[2], &[9.0]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-14);
        assert!((m[1] + 2.0).abs() < 1e-14);
        assert!((c[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((c[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(c[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn bivariate_conditional_variance() {
        for rho in [-0.8, 0.0, 0.3, 0.95] {
            let mean = DVector::zeros(2);
            let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            let (_, c) = mvn_condition(&mean, &cov, &[1], &[0.7]).unwrap();
            assert!((c[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-14);
        }
    }

    #[test]
    fn rect_prob_full_support_and_orthant() {
        let mean = DVector::zeros(1);
        let cov = DMatrix::identity(1, 1);
        let p = mvn_rect_prob(&mean, &cov, &[f64::NEG_INFINITY], &[f64::INFINITY]).unwrap();
        assert!((p - 1.0).abs() < 1e-14);

        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let p = mvn_rect_prob(&mean, &cov, &[0.0, 0.0], &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert!((p - 0.25).abs() < 1e-6, "orthant prob {p}");
    }

    #[test]
    fn rect_prob_rejects_bad_interval() {
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        assert!(mvn_rect_prob(&mean, &cov, &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (n, w) = gauss_legendre(32);
        // x^4 on [-1,1] integrates to 2/5.
        let s: f64 = n.iter().zip(&w).map(|(&x, &wi)| wi * x.powi(4)).sum();
        assert!((s - 0.4).abs() < 1e-13);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn wishart_df_domain() {
        use rand::SeedableRng;
        let scale = SpdMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        assert!(sample_wishart(&mut rng, 1.9, &scale).is_err());
        assert!(sample_wishart(&mut rng, 5.0, &scale).is_ok());
    }
}
