//! The five discrete outcome families: Poisson, negative binomial,
//! generalized Poisson, binomial, and beta-binomial, each with an offset
//! (exposure multiplier for count families, trial count for binomial ones).

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Outcome family selecting the cdf that defines the latent cut-points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeFamily {
    Poisson,
    NegativeBinomial,
    GeneralizedPoisson,
    Binomial,
    BetaBinomial,
}

impl OutcomeFamily {
    /// Number of free pmf parameters.
    pub fn xi_dim(self) -> usize {
        match self {
            OutcomeFamily::Poisson | OutcomeFamily::Binomial => 1,
            _ => 2,
        }
    }

    /// Whether the offset is a trial count (must be a positive integer).
    pub fn offset_is_trials(self) -> bool {
        matches!(self, OutcomeFamily::Binomial | OutcomeFamily::BetaBinomial)
    }

    pub fn name(self) -> &'static str {
        match self {
            OutcomeFamily::Poisson => "poisson",
            OutcomeFamily::NegativeBinomial => "negative-binomial",
            OutcomeFamily::GeneralizedPoisson => "generalized-poisson",
            OutcomeFamily::Binomial => "binomial",
            OutcomeFamily::BetaBinomial => "beta-binomial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" | "p" => Ok(OutcomeFamily::Poisson),
            "negative-binomial" | "negbinomial" | "nb" => Ok(OutcomeFamily::NegativeBinomial),
            "generalized-poisson" | "genpoisson" | "gp" => Ok(OutcomeFamily::GeneralizedPoisson),
            "binomial" | "b" => Ok(OutcomeFamily::Binomial),
            "beta-binomial" | "betabinomial" | "bb" => Ok(OutcomeFamily::BetaBinomial),
            other => Err(Error::Config(format!("unknown outcome family '{other}'"))),
        }
    }
}

/// Lower truncation of the generalized-Poisson dispersion parameter.
pub const GP_XI2_FLOOR: f64 = 0.05;

/// Validated pmf parameters together with the per-observation offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiParams {
    xi: [f64; 2],
    dim: usize,
    offset: f64,
}

impl XiParams {
    pub fn new(family: OutcomeFamily, xi: &[f64], offset: f64) -> Result<Self> {
        if xi.len() != family.xi_dim() {
            return Err(Error::ParamDomain(format!(
                "{} expects {} parameter(s), got {}",
                family.name(),
                family.xi_dim(),
                xi.len()
            )));
        }
        for (j, &x) in xi.iter().enumerate() {
            if !x.is_finite() || x <= 0.0 {
                return Err(Error::ParamDomain(format!(
                    "xi[{j}] = {x} must be finite and > 0"
                )));
            }
        }
        if !offset.is_finite() || offset <= 0.0 {
            return Err(Error::ParamDomain(format!("offset {offset} must be > 0")));
        }
        if family.offset_is_trials() && (offset.fract() != 0.0 || offset < 1.0) {
            return Err(Error::ParamDomain(format!(
                "{} offset {offset} must be a positive integer trial count",
                family.name()
            )));
        }
        if family == OutcomeFamily::Binomial && xi[0] >= 1.0 {
            return Err(Error::ParamDomain(format!(
                "binomial success probability {} must be < 1",
                xi[0]
            )));
        }
        if family == OutcomeFamily::GeneralizedPoisson && xi[1] <= GP_XI2_FLOOR {
            return Err(Error::ParamDomain(format!(
                "generalized-Poisson xi2 = {} must exceed {GP_XI2_FLOOR}",
                xi[1]
            )));
        }
        let mut arr = [0.0; 2];
        arr[..xi.len()].copy_from_slice(xi);
        Ok(XiParams {
            xi: arr,
            dim: xi.len(),
            offset,
        })
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi[..self.dim]
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Same parameters with a different offset.
    pub fn with_offset(&self, family: OutcomeFamily, offset: f64) -> Result<Self> {
        XiParams::new(family, self.xi(), offset)
    }
}

/// Support truncation data for an under-dispersed generalized Poisson.
#[derive(Clone, Copy, Debug)]
pub struct GpTruncation {
    /// Largest supported count `m`.
    pub bound: u64,
    /// Log of the raw-pmf sum over `0..=m`, used to renormalize.
    pub ln_norm: f64,
}

/// Truncation bound and normalizer for the generalized Poisson; `None` when
/// `xi2 >= 1` (full support, already normalized).
pub fn gp_truncation(params: &XiParams) -> Option<GpTruncation> {
    let xi2 = params.xi()[1];
    if xi2 >= 1.0 {
        return None;
    }
    let a = params.offset() * params.xi()[0];
    let m = gp_bound(a, xi2);
    Some(GpTruncation {
        bound: m,
        ln_norm: gp_ln_norm(a, xi2, m),
    })
}

/// Support bound of the generalized Poisson without the normalizer walk;
/// `None` when the support is infinite.
pub fn gp_support_bound(params: &XiParams) -> Option<u64> {
    let xi2 = params.xi()[1];
    if xi2 >= 1.0 {
        return None;
    }
    Some(gp_bound(params.offset() * params.xi()[0], xi2))
}

/// Largest integer m with `a + (xi2 - 1) m > 0`, with a relative tolerance
/// so an exact-integer ratio is not kept alive by rounding noise.
fn gp_bound(a: f64, xi2: f64) -> u64 {
    let mut m = (a / (1.0 - xi2) - 1e-9).floor();
    while m > 0.0 && a + (xi2 - 1.0) * m <= 1e-12 * a {
        m -= 1.0;
    }
    m.max(0.0) as u64
}

/// Log of the raw-term sum over the support. The mass concentrates within
/// a few `xi2 sqrt(a)` of `a`, so the walk stops once the remaining terms
/// are below resolution; the omitted tail is ~1e-16 relative.
fn gp_ln_norm(a: f64, xi2: f64, m: u64) -> f64 {
    let stop = gp_norm_stop(a, xi2).min(m);
    let mut lgacc = 0.0; // ln z!
    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(stop as usize + 1);
    for z in 0..=stop {
        if z > 0 {
            lgacc += (z as f64).ln();
        }
        let t = a + (xi2 - 1.0) * z as f64;
        let ln_term = if t <= 0.0 {
            f64::NEG_INFINITY
        } else {
            a.ln() + (z as f64 - 1.0) * t.ln() - z as f64 * xi2.ln() - t / xi2 - lgacc
        };
        terms.push(ln_term);
        max = max.max(ln_term);
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

fn gp_norm_stop(a: f64, xi2: f64) -> u64 {
    // 12 sds past the mean leaves a relative tail ~e^-72, far below the
    // resolution of the linear-domain sum.
    (a + 12.0 * xi2.max(1.0) * a.sqrt() + 30.0).ceil() as u64
}

/// Unnormalized generalized-Poisson log pmf term with `a = H * xi1`.
#[inline]
fn gp_ln_raw_pmf(z: f64, a: f64, xi2: f64) -> f64 {
    let t = a + (xi2 - 1.0) * z;
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a.ln() + (z - 1.0) * t.ln() - z * xi2.ln() - t / xi2 - ln_gamma(z + 1.0)
}

/// Incremental pmf/cdf evaluator: walks the support once, emitting each
/// probability from a cheap log-term recurrence. This is the hot path for
/// cut-point construction, where cdf values are needed at increasing `z`.
#[derive(Clone, Debug)]
pub struct PmfWalker {
    family: OutcomeFamily,
    /// Next z to emit.
    z: u64,
    /// Cumulative probability through `z - 1`.
    cum: f64,
    /// Accumulated log factors (family-specific recurrence state).
    acc: f64,
    /// First term's log probability contributions independent of z.
    c0: f64,
    /// Per-step slope in z applied outside `acc`.
    slope: f64,
    /// GP-specific pieces.
    gp: Option<(f64, f64, f64)>, // (a, xi2, ln_norm)
    /// Inclusive support bound, if finite.
    bound: Option<u64>,
    /// Family constants for the recurrences.
    k1: f64,
    k2: f64,
}

impl PmfWalker {
    pub fn new(family: OutcomeFamily, params: &XiParams) -> Self {
        let h = params.offset();
        let xi = params.xi();
        let (c0, slope, gp, bound, k1, k2) = match family {
            OutcomeFamily::Poisson => {
                let lambda = h * xi[0];
                (-lambda, lambda.ln(), None, None, 0.0, 0.0)
            }
            OutcomeFamily::NegativeBinomial => {
                let mu = h * xi[0];
                let r = xi[1];
                (
                    r * (r / (r + mu)).ln(),
                    (mu / (r + mu)).ln(),
                    None,
                    None,
                    r,
                    0.0,
                )
            }
            OutcomeFamily::GeneralizedPoisson => {
                let a = h * xi[0];
                let xi2 = xi[1];
                let (bound, ln_norm) = if xi2 < 1.0 {
                    let m = gp_bound(a, xi2);
                    (Some(m), gp_ln_norm(a, xi2, m))
                } else {
                    (None, 0.0)
                };
                (0.0, 0.0, Some((a, xi2, ln_norm)), bound, 0.0, 0.0)
            }
            OutcomeFamily::Binomial => {
                let n = h;
                let p = xi[0];
                (
                    n * (1.0 - p).ln(),
                    (p / (1.0 - p)).ln(),
                    None,
                    Some(n as u64),
                    n,
                    0.0,
                )
            }
            OutcomeFamily::BetaBinomial => {
                let n = h;
                (
                    ln_beta(xi[0], n + xi[1]) - ln_beta(xi[0], xi[1]),
                    0.0,
                    None,
                    Some(n as u64),
                    xi[0],
                    xi[1],
                )
            }
        };
        PmfWalker {
            family,
            z: 0,
            cum: 0.0,
            acc: 0.0,
            c0,
            slope,
            gp,
            bound,
            k1,
            k2,
        }
    }

    /// Support bound, if finite.
    pub fn bound(&self) -> Option<u64> {
        self.bound
    }

    /// Probability mass at the current `z`, advancing the walk.
    pub fn next_pmf(&mut self) -> f64 {
        let z = self.z;
        if let Some(b) = self.bound {
            if z > b {
                self.z += 1;
                return 0.0;
            }
        }
        let zf = z as f64;
        let ln_p = if let Some((a, xi2, ln_norm)) = self.gp {
            if z > 0 {
                self.acc += zf.ln(); // ln z!
            }
            let t = a + (xi2 - 1.0) * zf;
            if t <= 0.0 {
                f64::NEG_INFINITY
            } else {
                a.ln() + (zf - 1.0) * t.ln() - zf * xi2.ln() - t / xi2 - self.acc - ln_norm
            }
        } else {
            if z > 0 {
                // One multiplicative step of the pmf ratio.
                self.acc += match self.family {
                    OutcomeFamily::Poisson => -zf.ln(),
                    OutcomeFamily::NegativeBinomial => (zf - 1.0 + self.k1).ln() - zf.ln(),
                    OutcomeFamily::Binomial => (self.k1 - zf + 1.0).ln() - zf.ln(),
                    OutcomeFamily::BetaBinomial => {
                        // n = offset is captured via the bound.
                        let n = self.bound.unwrap() as f64;
                        (n - zf + 1.0).ln() - zf.ln() + (zf - 1.0 + self.k1).ln()
                            - (n - zf + self.k2).ln()
                    }
                    OutcomeFamily::GeneralizedPoisson => unreachable!(),
                };
            }
            self.c0 + self.acc + zf * self.slope
        };
        self.z += 1;
        let p = ln_p.exp();
        self.cum = (self.cum + p).min(1.0);
        p
    }

    /// Cdf through `z`, advancing the walk as needed. Queries must not go
    /// backwards.
    pub fn cdf_through(&mut self, z: i64) -> f64 {
        if z < 0 {
            return 0.0;
        }
        debug_assert!(self.z <= z as u64 + 1, "walker went backwards");
        while self.z <= z as u64 {
            self.next_pmf();
        }
        if let Some(b) = self.bound {
            if z as u64 >= b {
                return 1.0;
            }
        }
        self.cum
    }
}

/// Log pmf at `z`; `-inf` outside the support.
pub fn outcome_ln_pmf(family: OutcomeFamily, z: i64, params: &XiParams) -> f64 {
    if z < 0 {
        return f64::NEG_INFINITY;
    }
    let zf = z as f64;
    let h = params.offset();
    let xi = params.xi();
    match family {
        OutcomeFamily::Poisson => {
            let lambda = h * xi[0];
            zf * lambda.ln() - lambda - ln_gamma(zf + 1.0)
        }
        OutcomeFamily::NegativeBinomial => {
            // Mean h*xi1, dispersion (size) xi2.
            let mu = h * xi[0];
            let r = xi[1];
            ln_gamma(zf + r) - ln_gamma(r) - ln_gamma(zf + 1.0) + r * (r / (r + mu)).ln()
                + zf * (mu / (r + mu)).ln()
        }
        OutcomeFamily::GeneralizedPoisson => {
            let a = h * xi[0];
            let xi2 = xi[1];
            match gp_truncation(params) {
                Some(t) if (z as u64) > t.bound => f64::NEG_INFINITY,
                Some(t) => gp_ln_raw_pmf(zf, a, xi2) - t.ln_norm,
                None => gp_ln_raw_pmf(zf, a, xi2),
            }
        }
        OutcomeFamily::Binomial => {
            let n = h;
            if zf > n {
                return f64::NEG_INFINITY;
            }
            let p = xi[0];
            ln_choose(n, zf) + zf * p.ln() + (n - zf) * (1.0 - p).ln()
        }
        OutcomeFamily::BetaBinomial => {
            let n = h;
            if zf > n {
                return f64::NEG_INFINITY;
            }
            ln_choose(n, zf) + ln_beta(zf + xi[0], n - zf + xi[1]) - ln_beta(xi[0], xi[1])
        }
    }
}

#[inline]
fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Probability mass at `z` (0 outside the support).
pub fn outcome_pmf(family: OutcomeFamily, z: i64, params: &XiParams) -> f64 {
    outcome_ln_pmf(family, z, params).exp()
}

/// Cdf at `z`; `z = -1` gives 0.
pub fn outcome_cdf(family: OutcomeFamily, z: i64, params: &XiParams) -> f64 {
    if z < 0 {
        return 0.0;
    }
    let zf = z as f64;
    let h = params.offset();
    let xi = params.xi();
    match family {
        OutcomeFamily::Poisson => gamma_ur(zf + 1.0, h * xi[0]),
        OutcomeFamily::NegativeBinomial => {
            let mu = h * xi[0];
            let r = xi[1];
            beta_reg(r, zf + 1.0, r / (r + mu))
        }
        OutcomeFamily::GeneralizedPoisson => {
            let mut walker = PmfWalker::new(family, params);
            walker.cdf_through(z)
        }
        OutcomeFamily::Binomial => {
            let n = h;
            if zf >= n {
                1.0
            } else {
                beta_reg(n - zf, zf + 1.0, 1.0 - xi[0])
            }
        }
        OutcomeFamily::BetaBinomial => {
            let n = h;
            if zf >= n {
                return 1.0;
            }
            let mut walker = PmfWalker::new(family, params);
            walker.cdf_through(z)
        }
    }
}

/// Both `cdf(z - 1)` and `cdf(z)` from a single support walk.
pub fn outcome_cdf_pair(family: OutcomeFamily, z: i64, params: &XiParams) -> (f64, f64) {
    match family {
        OutcomeFamily::GeneralizedPoisson | OutcomeFamily::BetaBinomial => {
            let mut walker = PmfWalker::new(family, params);
            let lo = walker.cdf_through(z - 1);
            let hi = walker.cdf_through(z);
            (lo, hi)
        }
        _ => (
            outcome_cdf(family, z - 1, params),
            outcome_cdf(family, z, params),
        ),
    }
}

/// Untruncated mean and variance of the family.
pub fn family_mean_var(family: OutcomeFamily, params: &XiParams) -> (f64, f64) {
    let h = params.offset();
    let xi = params.xi();
    match family {
        OutcomeFamily::Poisson => (h * xi[0], h * xi[0]),
        OutcomeFamily::NegativeBinomial => {
            let mu = h * xi[0];
            (mu, mu * (1.0 + mu / xi[1]))
        }
        OutcomeFamily::GeneralizedPoisson => {
            let a = h * xi[0];
            (a, xi[1] * xi[1] * a)
        }
        OutcomeFamily::Binomial => {
            let p = xi[0];
            (h * p, h * p * (1.0 - p))
        }
        OutcomeFamily::BetaBinomial => {
            let (a, b) = (xi[0], xi[1]);
            let s = a + b;
            let mean = h * a / s;
            let var = h * a * b * (s + h) / (s * s * (s + 1.0));
            (mean, var)
        }
    }
}

/// Largest count worth evaluating: the smallest `z` with
/// `cdf(z) > 1 - 1e-10`, capped at `10 * (mean + 10 * sd)`, exact for
/// finite-support families.
pub fn support_ceiling(family: OutcomeFamily, params: &XiParams) -> u64 {
    match family {
        OutcomeFamily::Binomial | OutcomeFamily::BetaBinomial => params.offset() as u64,
        OutcomeFamily::GeneralizedPoisson => {
            if let Some(t) = gp_truncation(params) {
                return t.bound;
            }
            ceiling_by_cdf(family, params)
        }
        _ => ceiling_by_cdf(family, params),
    }
}

fn ceiling_by_cdf(family: OutcomeFamily, params: &XiParams) -> u64 {
    let (mean, var) = family_mean_var(family, params);
    let cap = (10.0 * (mean + 10.0 * var.sqrt())).ceil().max(8.0) as u64;
    // Exponential then binary search on the closed-form cdf.
    let target = 1.0 - 1e-10;
    let mut hi = (mean + 10.0 * var.sqrt()).ceil().max(4.0) as u64;
    while outcome_cdf(family, hi as i64, params) <= target {
        if hi >= cap {
            return cap;
        }
        hi = (hi * 2).min(cap);
    }
    let mut lo = 0u64;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if outcome_cdf(family, mid as i64, params) > target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(family: OutcomeFamily, xi: &[f64], h: f64) -> XiParams {
        XiParams::new(family, xi, h).unwrap()
    }

    #[test]
    fn xi_validation() {
        assert!(XiParams::new(OutcomeFamily::Poisson, &[0.0], 1.0).is_err());
        assert!(XiParams::new(OutcomeFamily::Poisson, &[1.0, 2.0], 1.0).is_err());
        assert!(XiParams::new(OutcomeFamily::Binomial, &[1.2], 5.0).is_err());
        assert!(XiParams::new(OutcomeFamily::Binomial, &[0.4], 5.5).is_err());
        assert!(XiParams::new(OutcomeFamily::GeneralizedPoisson, &[2.0, 0.04], 1.0).is_err());
        assert!(XiParams::new(OutcomeFamily::Poisson, &[2.0], -1.0).is_err());
    }

    #[test]
    fn poisson_cdf_partial_sum_value() {
        // Frozen from the summation oracle: sum_{k<=3} e^-2 2^k/k!.
        let p = params(OutcomeFamily::Poisson, &[2.0], 1.0);
        assert!((outcome_cdf(OutcomeFamily::Poisson, 3, &p) - 0.857_123_460_498_547).abs() < 1e-12);
    }

    #[test]
    fn gp_equals_poisson_at_unit_dispersion() {
        for lam in [0.5, 3.0, 20.0] {
            let gp = params(OutcomeFamily::GeneralizedPoisson, &[lam, 1.0], 1.0);
            let po = params(OutcomeFamily::Poisson, &[lam], 1.0);
            for z in 0..=50 {
                let d = (outcome_pmf(OutcomeFamily::GeneralizedPoisson, z, &gp)
                    - outcome_pmf(OutcomeFamily::Poisson, z, &po))
                .abs();
                assert!(d < 1e-12, "lam={lam} z={z} diff={d}");
            }
        }
    }

    #[test]
    fn gp_underdispersed_renormalizes() {
        let p = params(OutcomeFamily::GeneralizedPoisson, &[6.0, 0.8], 1.0);
        let t = gp_truncation(&p).expect("truncated");
        let total: f64 = (0..=t.bound)
            .map(|z| outcome_pmf(OutcomeFamily::GeneralizedPoisson, z as i64, &p))
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "sum = {total}");
        assert_eq!(
            outcome_cdf(OutcomeFamily::GeneralizedPoisson, t.bound as i64, &p),
            1.0
        );
        // Beyond the bound the pmf is zero.
        assert_eq!(
            outcome_pmf(OutcomeFamily::GeneralizedPoisson, t.bound as i64 + 1, &p),
            0.0
        );
    }

    #[test]
    fn gp_truncation_bound_strict_positivity() {
        // a / (1 - xi2) integral: bound must step down by one.
        let p = params(OutcomeFamily::GeneralizedPoisson, &[6.0, 0.8], 1.0);
        // 6 / 0.2 = 30, and 6 + (0.8-1)*30 = 0, so m = 29.
        assert_eq!(gp_truncation(&p).unwrap().bound, 29);
    }

    #[test]
    fn gp_mean_matches_xi1_overdispersed() {
        let p = params(OutcomeFamily::GeneralizedPoisson, &[4.0, 1.5], 1.0);
        let zmax = support_ceiling(OutcomeFamily::GeneralizedPoisson, &p);
        let mean: f64 = (0..=zmax)
            .map(|z| z as f64 * outcome_pmf(OutcomeFamily::GeneralizedPoisson, z as i64, &p))
            .sum();
        assert!((mean - 4.0).abs() < 1e-6, "mean = {mean}");
        let var: f64 = (0..=zmax)
            .map(|z| {
                let d = z as f64 - 4.0;
                d * d * outcome_pmf(OutcomeFamily::GeneralizedPoisson, z as i64, &p)
            })
            .sum();
        assert!((var - 1.5 * 1.5 * 4.0).abs() < 1e-6, "var = {var}");
    }

    #[test]
    fn offset_enters_gp_multiplicatively() {
        let with_offset = params(OutcomeFamily::GeneralizedPoisson, &[2.0, 1.3], 3.0);
        let folded = params(OutcomeFamily::GeneralizedPoisson, &[6.0, 1.3], 1.0);
        for z in 0..40 {
            let a = outcome_pmf(OutcomeFamily::GeneralizedPoisson, z, &with_offset);
            let b = outcome_pmf(OutcomeFamily::GeneralizedPoisson, z, &folded);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cdf_at_minus_one_is_zero() {
        let p = params(OutcomeFamily::NegativeBinomial, &[2.0, 1.5], 1.0);
        assert_eq!(outcome_cdf(OutcomeFamily::NegativeBinomial, -1, &p), 0.0);
    }

    #[test]
    fn binomial_support_is_trial_count() {
        let p = params(OutcomeFamily::Binomial, &[0.3], 4.0);
        assert_eq!(outcome_pmf(OutcomeFamily::Binomial, 5, &p), 0.0);
        assert_eq!(outcome_cdf(OutcomeFamily::Binomial, 4, &p), 1.0);
        let total: f64 = (0..=4)
            .map(|z| outcome_pmf(OutcomeFamily::Binomial, z, &p))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
