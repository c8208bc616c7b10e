//! Cut-points mapping discrete observations to latent-Gaussian intervals:
//! `c_q = Phi^-1(F(q))` with `c_{-1} = -inf`, plus the zero-threshold rule
//! for binary variables.

use std::collections::HashMap;

use crate::distributions::families::PmfWalker;
use crate::distributions::{
    outcome_cdf, outcome_cdf_pair, outcome_ln_pmf, std_normal_quantile, support_ceiling,
    OutcomeFamily, XiParams, QUANTILE_CLAMP,
};
use crate::error::{Error, Result};

/// Latent interval `(lo, hi)` for an observed discrete value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentInterval {
    pub lo: f64,
    pub hi: f64,
}

impl LatentInterval {
    /// Numerically empty interval: both cut-points collapsed in a tail.
    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
}

/// Largest finite cut-point: the quantile at the clamp boundary.
pub fn quantile_ceiling() -> f64 {
    use std::sync::OnceLock;
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| std_normal_quantile(1.0 - QUANTILE_CLAMP).expect("in range"))
}

/// Cut-point `c_q`. Returns `-inf` at `q = -1`, `+inf` where the cdf has
/// reached 1, and a clamped finite quantile otherwise. The clamp keeps deep
/// tails finite instead of overflowing the inversion.
pub fn cutpoint(family: OutcomeFamily, q: i64, params: &XiParams) -> f64 {
    if q < 0 {
        return f64::NEG_INFINITY;
    }
    let p = outcome_cdf(family, q, params);
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p = p.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    std_normal_quantile(p).expect("cdf value within [0,1]")
}

/// Quantile of a cdf value under the cut-point conventions.
fn cut_from_cdf(p: f64) -> f64 {
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p = p.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    std_normal_quantile(p).expect("cdf value within [0,1]")
}

/// Latent interval `(c_{z-1}, c_z)` for an in-support observed value.
///
/// When the cdf saturates below `z` (both cut-points would sit at `+inf`),
/// the lower bound falls back to the largest finite quantile so the
/// observation contributes an upper-tail probability instead of a NaN.
pub fn interval_of(family: OutcomeFamily, z: i64, params: &XiParams) -> Result<LatentInterval> {
    if z < 0 || !in_support(family, z, params) {
        return Err(Error::Support {
            value: z,
            detail: format!("outside {} support", family.name()),
        });
    }
    let (p_lo, p_hi) = outcome_cdf_pair(family, z, params);
    let lo_raw = if z == 0 {
        f64::NEG_INFINITY
    } else {
        cut_from_cdf(p_lo)
    };
    let hi = cut_from_cdf(p_hi);
    let lo = if lo_raw == f64::INFINITY {
        quantile_ceiling()
    } else {
        lo_raw
    };
    Ok(LatentInterval { lo, hi })
}

/// Cheap in-support check without evaluating the full pmf.
fn in_support(family: OutcomeFamily, z: i64, params: &XiParams) -> bool {
    if z < 0 {
        return false;
    }
    match family {
        OutcomeFamily::Binomial | OutcomeFamily::BetaBinomial => z as f64 <= params.offset(),
        OutcomeFamily::GeneralizedPoisson => {
            crate::distributions::families::gp_support_bound(params)
                .map(|b| z as u64 <= b)
                .unwrap_or(true)
        }
        _ => outcome_ln_pmf(family, z, params) > f64::NEG_INFINITY,
    }
}

/// Eq.-3 interval for a binary variable: `(-inf, 0)` for 0, `(0, inf)` for 1.
pub fn binary_interval(value: u8) -> LatentInterval {
    if value == 0 {
        LatentInterval {
            lo: f64::NEG_INFINITY,
            hi: 0.0,
        }
    } else {
        LatentInterval {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }
}

/// Per-cluster interval cache keyed by (offset bits, observed value).
///
/// Valid only while the owning cluster's outcome parameters are unchanged;
/// the sampler clears it on every accepted parameter move.
#[derive(Clone, Debug, Default)]
pub struct CutpointCache {
    map: HashMap<(u64, u32), LatentInterval>,
}

impl CutpointCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn interval(
        &mut self,
        family: OutcomeFamily,
        z: u32,
        params: &XiParams,
    ) -> Result<LatentInterval> {
        let key = (params.offset().to_bits(), z);
        if let Some(iv) = self.map.get(&key) {
            return Ok(*iv);
        }
        let iv = interval_of(family, z as i64, params)?;
        self.map.insert(key, iv);
        Ok(iv)
    }
}

/// All response cut-points `c_{-1}..c_{z_max}` for one parameter setting,
/// used by grid evaluation. Index `i` holds `c_{i-1}`.
pub fn cutpoint_vector(family: OutcomeFamily, z_max: u64, params: &XiParams) -> Vec<f64> {
    let z_max = z_max.min(support_ceiling(family, params));
    let mut stream = CutpointStream::new(family, params);
    let mut cuts = Vec::with_capacity(z_max as usize + 2);
    cuts.push(f64::NEG_INFINITY);
    for z in 0..=z_max as i64 {
        cuts.push(stream.cut(z));
    }
    cuts
}

/// Streaming cut-point evaluator for nondecreasing queries: one support
/// walk serves an entire pmf-vector evaluation of a summation family,
/// while closed-form cdfs are called directly.
#[derive(Clone, Debug)]
pub struct CutpointStream {
    family: OutcomeFamily,
    params: XiParams,
    walker: Option<PmfWalker>,
}

impl CutpointStream {
    pub fn new(family: OutcomeFamily, params: &XiParams) -> Self {
        let walker = matches!(
            family,
            OutcomeFamily::GeneralizedPoisson | OutcomeFamily::BetaBinomial
        )
        .then(|| PmfWalker::new(family, params));
        CutpointStream {
            family,
            params: *params,
            walker,
        }
    }

    /// Cut-point `c_q`; queries must be nondecreasing.
    pub fn cut(&mut self, q: i64) -> f64 {
        if q < 0 {
            return f64::NEG_INFINITY;
        }
        let p = match &mut self.walker {
            Some(w) => w.cdf_through(q),
            None => outcome_cdf(self.family, q, &self.params),
        };
        cut_from_cdf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_at_minus_one_is_neg_infinity() {
        let p = XiParams::new(OutcomeFamily::Poisson, &[2.0], 1.0).unwrap();
        assert_eq!(cutpoint(OutcomeFamily::Poisson, -1, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_rate_two_cut_at_one() {
        // Phi^-1(e^-2 * 3) frozen from the composed oracle.
        let p = XiParams::new(OutcomeFamily::Poisson, &[2.0], 1.0).unwrap();
        let c = cutpoint(OutcomeFamily::Poisson, 1, &p);
        assert!((c - (-0.237_831_611_723_27)).abs() < 1e-4, "c = {c}");
    }

    #[test]
    fn gp_truncation_bound_maps_to_infinity() {
        let p = XiParams::new(OutcomeFamily::GeneralizedPoisson, &[6.0, 0.8], 1.0).unwrap();
        let m = crate::distributions::gp_truncation(&p).unwrap().bound;
        assert_eq!(
            cutpoint(OutcomeFamily::GeneralizedPoisson, m as i64, &p),
            f64::INFINITY
        );
    }

    #[test]
    fn binary_intervals_split_at_zero() {
        assert_eq!(binary_interval(0).hi, 0.0);
        assert_eq!(binary_interval(0).lo, f64::NEG_INFINITY);
        assert_eq!(binary_interval(1).lo, 0.0);
        assert_eq!(binary_interval(1).hi, f64::INFINITY);
    }

    #[test]
    fn count_zero_interval() {
        let lam: f64 = 1.7;
        let p = XiParams::new(OutcomeFamily::Poisson, &[lam], 1.0).unwrap();
        let iv = interval_of(OutcomeFamily::Poisson, 0, &p).unwrap();
        assert_eq!(iv.lo, f64::NEG_INFINITY);
        let expect = std_normal_quantile((-lam).exp()).unwrap();
        assert!((iv.hi - expect).abs() < 1e-12);
    }

    #[test]
    fn out_of_support_is_error() {
        let p = XiParams::new(OutcomeFamily::Binomial, &[0.5], 4.0).unwrap();
        assert!(interval_of(OutcomeFamily::Binomial, 5, &p).is_err());
        assert!(interval_of(OutcomeFamily::Binomial, -1, &p).is_err());
        assert!(interval_of(OutcomeFamily::Binomial, 4, &p).is_ok());
    }

    #[test]
    fn monotone_cutpoints() {
        let p = XiParams::new(OutcomeFamily::NegativeBinomial, &[3.0, 1.2], 2.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for q in -1..80 {
            let c = cutpoint(OutcomeFamily::NegativeBinomial, q, &p);
            assert!(c >= prev, "cutpoint decreased at q={q}");
            prev = c;
        }
    }

    #[test]
    fn cache_hits_reuse_values() {
        let p = XiParams::new(OutcomeFamily::Poisson, &[2.0], 1.5).unwrap();
        let mut cache = CutpointCache::new();
        let a = cache.interval(OutcomeFamily::Poisson, 3, &p).unwrap();
        let b = cache.interval(OutcomeFamily::Poisson, 3, &p).unwrap();
        assert_eq!(a, b);
    }
}
