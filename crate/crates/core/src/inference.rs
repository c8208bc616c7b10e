//! Posterior conditional-pmf machinery: per-draw conditional pmfs on
//! covariate grids, their functionals, Monte Carlo averaging, and the
//! total-squared-error summaries used in simulation comparisons.

use serde::{Deserialize, Serialize};

use crate::cutpoints::CutpointStream;
use crate::distributions::normal::std_normal_cdf;
use crate::error::{Error, Result};
use crate::kernel::{response_mix, KernelAtom};

/// One covariate point at which conditional pmfs are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x_binary: Vec<u8>,
    pub x_continuous: Vec<f64>,
}

/// Response-ceiling policy: extend the pmf until the cumulative mass target
/// is reached, hard-capped to bound grid work.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct YCeilingPolicy {
    pub mass: f64,
    pub cap: u64,
}

impl Default for YCeilingPolicy {
    fn default() -> Self {
        YCeilingPolicy {
            mass: 1.0 - 1e-8,
            cap: 5000,
        }
    }
}

/// Evaluation grid: covariate points plus the shared evaluation offset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateGrid {
    pub points: Vec<GridPoint>,
    pub offset: f64,
    pub ceiling: YCeilingPolicy,
}

impl CovariateGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("covariate grid is empty".into()));
        }
        if !(self.offset > 0.0) {
            return Err(Error::Config(format!(
                "grid offset {} must be > 0",
                self.offset
            )));
        }
        Ok(())
    }
}

/// A frozen posterior mixture: weights and atoms of one retained draw.
#[derive(Clone, Debug)]
pub struct MixtureSnapshot {
    pub weights: Vec<f64>,
    pub atoms: Vec<KernelAtom>,
}

/// One posterior draw of conditional pmfs over the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalPmfDraw {
    pub sweep: u64,
    /// Per grid point: probabilities over `y = 0..len-1`.
    pub pmfs: Vec<Vec<f64>>,
    /// Per grid point: whether the ceiling cap bound before the mass target.
    pub flagged: Vec<bool>,
}

/// Conditional pmf `f(y | x)` under one mixture draw.
///
/// Clusters are weighted by `pi_h N(x_c) P(binary rectangle | x_c)` in the
/// log domain; the vector extends until the cumulative-mass target or cap.
/// If every cluster weight underflows the result is a flagged uniform.
pub fn conditional_pmf(
    snapshot: &MixtureSnapshot,
    point: &GridPoint,
    offset: f64,
    policy: YCeilingPolicy,
) -> Result<(Vec<f64>, bool)> {
    let t = snapshot.atoms.len();
    if t == 0 || snapshot.weights.len() != t {
        return Err(Error::Layout(
            "empty or inconsistent mixture snapshot".into(),
        ));
    }
    let layout = snapshot.atoms[0].layout();
    if point.x_binary.len() != layout.p_binary || point.x_continuous.len() != layout.p_continuous
    {
        return Err(Error::Layout("grid point does not match layout".into()));
    }
    let family = layout.family;

    struct Active {
        ln_w: f64,
        /// (normalized node weight, response mean, response sd)
        nodes: Vec<(f64, f64, f64)>,
        cuts: CutpointStream,
        prev_cdf: Vec<f64>,
    }
    let mut active = Vec::new();
    let mut max_ln = f64::NEG_INFINITY;
    for h in 0..t {
        let atom = &snapshot.atoms[h];
        let pi = snapshot.weights[h];
        if pi <= 0.0 {
            continue;
        }
        let ln_cont = atom.continuous_ln_pdf(&point.x_continuous);
        let (nodes, bin_mass) = if layout.p_binary == 0 {
            let (m, v) = atom.response_given_continuous(&point.x_continuous);
            (vec![(1.0, m, v.sqrt())], 1.0)
        } else {
            let mix = response_mix(atom, &point.x_binary, &point.x_continuous)?;
            let mass = mix.covariate_mass();
            (
                mix.nodes
                    .iter()
                    .map(|n| (n.weight, n.resp_mean, n.resp_sd))
                    .collect(),
                mass,
            )
        };
        if bin_mass <= 0.0 || !ln_cont.is_finite() {
            continue;
        }
        let ln_w = pi.ln() + ln_cont + bin_mass.ln();
        max_ln = max_ln.max(ln_w);
        let params = atom.params(offset)?;
        active.push(Active {
            ln_w,
            nodes: nodes
                .into_iter()
                .map(|(w, m, sd)| (w / bin_mass, m, sd))
                .collect(),
            cuts: CutpointStream::new(family, &params),
            prev_cdf: Vec::new(),
        });
    }
    let cap = effective_cap(family, offset, policy);
    if max_ln == f64::NEG_INFINITY {
        // Far outside every cluster: flagged uniform over the ceiling.
        let len = cap as usize + 1;
        return Ok((vec![1.0 / len as f64; len], true));
    }
    let mut denom = 0.0;
    for a in &active {
        denom += (a.ln_w - max_ln).exp();
    }
    active.retain(|a| a.ln_w - max_ln > -46.0);
    for a in &mut active {
        a.ln_w = ((a.ln_w - max_ln).exp() / denom).ln();
        a.prev_cdf = vec![0.0; a.nodes.len()]; // Phi at c_{-1} = -inf
    }

    let mut pmf = Vec::new();
    let mut cum = 0.0;
    let mut flagged = true;
    for y in 0..=cap {
        let mut p_y = 0.0;
        for a in &mut active {
            let c_hi = a.cuts.cut(y as i64);
            let mut mass = 0.0;
            for (k, &(w, m, sd)) in a.nodes.iter().enumerate() {
                let cdf_hi = if c_hi == f64::INFINITY {
                    1.0
                } else {
                    std_normal_cdf((c_hi - m) / sd)
                };
                mass += w * (cdf_hi - a.prev_cdf[k]).max(0.0);
                a.prev_cdf[k] = cdf_hi;
            }
            p_y += a.ln_w.exp() * mass;
        }
        pmf.push(p_y);
        cum += p_y;
        if cum >= policy.mass {
            flagged = false;
            break;
        }
    }
    Ok((pmf, flagged))
}

fn effective_cap(
    family: crate::distributions::OutcomeFamily,
    offset: f64,
    policy: YCeilingPolicy,
) -> u64 {
    if family.offset_is_trials() {
        policy.cap.min(offset as u64)
    } else {
        policy.cap
    }
}

/// Evaluate one posterior draw over the whole grid.
pub fn conditional_pmf_draw(
    snapshot: &MixtureSnapshot,
    grid: &CovariateGrid,
    sweep: u64,
) -> Result<ConditionalPmfDraw> {
    grid.validate()?;
    let mut pmfs = Vec::with_capacity(grid.points.len());
    let mut flagged = Vec::with_capacity(grid.points.len());
    for point in &grid.points {
        let (pmf, flag) = conditional_pmf(snapshot, point, grid.offset, grid.ceiling)?;
        pmfs.push(pmf);
        flagged.push(flag);
    }
    Ok(ConditionalPmfDraw {
        sweep,
        pmfs,
        flagged,
    })
}

/// Derived functionals of a pmf vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmfFunctionals {
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Mean and quartiles (smallest `y` with cdf >= q) of a pmf vector.
pub fn pmf_functionals(pmf: &[f64]) -> PmfFunctionals {
    PmfFunctionals {
        mean: pmf.iter().enumerate().map(|(y, &p)| y as f64 * p).sum(),
        q25: pmf_quantile(pmf, 0.25),
        q75: pmf_quantile(pmf, 0.75),
    }
}

/// Smallest `y` with cumulative mass at least `q`.
pub fn pmf_quantile(pmf: &[f64], q: f64) -> f64 {
    let total: f64 = pmf.iter().sum();
    let target = q * total.max(1.0); // tolerate sub-unit tails
    let mut cum = 0.0;
    for (y, &p) in pmf.iter().enumerate() {
        cum += p;
        if cum >= target {
            return y as f64;
        }
    }
    (pmf.len().saturating_sub(1)) as f64
}

/// Pointwise posterior mean pmf with equal-tailed credible bands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorPmf {
    pub mean: Vec<Vec<f64>>,
    pub band_lo: Vec<Vec<f64>>,
    pub band_hi: Vec<Vec<f64>>,
    pub level: f64,
}

/// Average posterior pmfs over draws with equal-tailed bands per (x, y).
pub fn average_posterior_pmf(draws: &[ConditionalPmfDraw], level: f64) -> Result<PosteriorPmf> {
    if draws.is_empty() {
        return Err(Error::Config("no draws to average".into()));
    }
    let g = draws[0].pmfs.len();
    if draws.iter().any(|d| d.pmfs.len() != g) {
        return Err(Error::Layout("draws evaluated on different grids".into()));
    }
    let s = draws.len();
    let mut mean = Vec::with_capacity(g);
    let mut band_lo = Vec::with_capacity(g);
    let mut band_hi = Vec::with_capacity(g);
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    for c in 0..g {
        let y_max = draws.iter().map(|d| d.pmfs[c].len()).max().unwrap_or(0);
        let mut m = vec![0.0; y_max];
        let mut lo = vec![0.0; y_max];
        let mut hi = vec![0.0; y_max];
        let mut vals = vec![0.0; s];
        for y in 0..y_max {
            for (k, d) in draws.iter().enumerate() {
                vals[k] = d.pmfs[c].get(y).copied().unwrap_or(0.0);
            }
            m[y] = vals.iter().sum::<f64>() / s as f64;
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lo[y] = empirical_quantile(&sorted, lo_q);
            hi[y] = empirical_quantile(&sorted, hi_q);
        }
        mean.push(m);
        band_lo.push(lo);
        band_hi.push(hi);
    }
    Ok(PosteriorPmf {
        mean,
        band_lo,
        band_hi,
        level,
    })
}

/// Posterior summary of one functional at one grid point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per grid point: posterior mean and equal-tailed bands of the pmf mean,
/// 25th and 75th percentiles.
pub fn functional_bands(
    draws: &[ConditionalPmfDraw],
    level: f64,
) -> Result<Vec<[FunctionalSummary; 3]>> {
    if draws.is_empty() {
        return Err(Error::Config("no draws to summarize".into()));
    }
    let g = draws[0].pmfs.len();
    if draws.iter().any(|d| d.pmfs.len() != g) {
        return Err(Error::Layout("draws evaluated on different grids".into()));
    }
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let mut out = Vec::with_capacity(g);
    for c in 0..g {
        let mut per_functional: [Vec<f64>; 3] = Default::default();
        for d in draws {
            let f = pmf_functionals(&d.pmfs[c]);
            per_functional[0].push(f.mean);
            per_functional[1].push(f.q25);
            per_functional[2].push(f.q75);
        }
        let mut summaries = [FunctionalSummary {
            mean: 0.0,
            lo: 0.0,
            hi: 0.0,
        }; 3];
        for (k, vals) in per_functional.iter().enumerate() {
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            summaries[k] = FunctionalSummary {
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                lo: empirical_quantile(&sorted, lo_q),
                hi: empirical_quantile(&sorted, hi_q),
            };
        }
        out.push(summaries);
    }
    Ok(out)
}

/// Smallest sorted value with empirical cdf >= q.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Per-draw total squared error `sum_c (truth_c - est_c)^2`;
/// `estimates[s][c]` is the functional value of draw `s` at grid point `c`.
pub fn total_squared_error(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(estimates.len());
    for row in estimates {
        if row.len() != truth.len() {
            return Err(Error::Layout(format!(
                "estimate row has {} entries, truth has {}",
                row.len(),
                truth.len()
            )));
        }
        out.push(row.iter().zip(truth).map(|(e, t)| (t - e) * (t - e)).sum());
    }
    Ok(out)
}

/// Lower median via the empirical-quantile convention.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    empirical_quantile(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn functionals_of_point_mass() {
        let pmf = vec![0.0, 0.0, 0.0, 1.0];
        let f = pmf_functionals(&pmf);
        assert_eq!(f.mean, 3.0);
        assert_eq!(f.q25, 3.0);
        assert_eq!(f.q75, 3.0);
    }

    #[test]
    fn quantiles_use_smallest_y_convention() {
        let pmf = vec![0.25, 0.25, 0.25, 0.25];
        assert_eq!(pmf_quantile(&pmf, 0.25), 0.0);
        assert_eq!(pmf_quantile(&pmf, 0.75), 2.0);
    }

    #[test]
    fn tse_arithmetic() {
        // Single draw, single grid point, error 0.5 -> 0.25.
        let tse = total_squared_error(&[vec![1.5]], &[1.0]).unwrap();
        assert_eq!(tse, vec![0.25]);
        // Known iid offsets +-e at 25 points -> 25 e^2 per draw.
        let e = 0.2;
        let truth = vec![1.0; 25];
        let est: Vec<Vec<f64>> = (0..10)
            .map(|s| {
                truth
                    .iter()
                    .map(|t| t + if s % 2 == 0 { e } else { -e })
                    .collect()
            })
            .collect();
        let tse = total_squared_error(&est, &truth).unwrap();
        for v in tse {
            assert!((v - 25.0 * e * e).abs() < 1e-12);
        }
    }

    #[test]
    fn average_of_single_draw_is_identity() {
        let d = ConditionalPmfDraw {
            sweep: 0,
            pmfs: vec![vec![0.3, 0.7]],
            flagged: vec![false],
        };
        let avg = average_posterior_pmf(&[d.clone()], 0.95).unwrap();
        assert_eq!(avg.mean[0], d.pmfs[0]);
        assert_eq!(avg.band_lo[0], d.pmfs[0]);
        assert_eq!(avg.band_hi[0], d.pmfs[0]);
    }

    #[test]
    fn identical_draws_have_zero_width_bands() {
        let d = ConditionalPmfDraw {
            sweep: 0,
            pmfs: vec![vec![0.5, 0.5]],
            flagged: vec![false],
        };
        let avg = average_posterior_pmf(&[d.clone(), d.clone(), d], 0.9).unwrap();
        assert_eq!(avg.band_lo[0], avg.band_hi[0]);
    }

    #[test]
    fn median_is_lower_median() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.0);
    }
}
