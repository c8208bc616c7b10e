//! Simulation-study harness: the four-regime data-generating mechanism, its
//! Monte Carlo ground-truth conditionals, and the replicate comparison of
//! the Poisson / negative-binomial / generalized-Poisson cut-point models.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use rayon::prelude::*;

use crate::data::{DataSchema, Dataset};
use crate::distributions::OutcomeFamily;
use crate::error::{Error, Result};
use crate::inference::{
    pmf_functionals, total_squared_error, CovariateGrid, GridPoint, PmfFunctionals,
    YCeilingPolicy,
};
use crate::priors::build_base_prior;
use crate::sampler::{run_chain, ChainConfig, ChainModel, SamplerMode};

/// Conditional mean function of the mechanism.
pub fn sim_mean(x: f64) -> f64 {
    1.0 + (std::f64::consts::PI * x / 5.0).sin() + x / 4.0
}

/// Dispersion regime bands over the covariate range, half-open on the right.
pub const REGIME_BOUNDS: [f64; 3] = [3.0, 6.0, 9.0];

/// Index of the regime band containing `x`.
pub fn regime_of(x: f64) -> usize {
    REGIME_BOUNDS.iter().position(|&b| x < b).unwrap_or(3)
}

/// One response draw from the regime mechanism at covariate `x`, offset `h`.
pub fn draw_response<R: Rng + ?Sized>(x: f64, h: f64, rng: &mut R) -> u32 {
    let mu = h * sim_mean(x);
    let val = match regime_of(x) {
        0 => Poisson::new(mu).expect("positive rate").sample(rng),
        1 => {
            let e: f64 = Normal::new(1.0, 0.15).unwrap().sample(rng);
            Poisson::new(mu * e.abs()).expect("positive rate").sample(rng)
        }
        2 => {
            let e: f64 = Normal::new(0.0, 2.0).unwrap().sample(rng);
            (mu + e).round()
        }
        _ => {
            let e: f64 = Normal::new(1.0, 0.30).unwrap().sample(rng);
            Poisson::new(mu * e.abs()).expect("positive rate").sample(rng)
        }
    };
    val.max(0.0) as u32
}

/// Simulated dataset: X ~ U(0,11), H ~ U(10,30), regime responses.
pub fn generate_sim_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dataset {
    let ux = Uniform::new(0.0, 11.0).unwrap();
    let uh = Uniform::new(10.0, 30.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = ux.sample(rng);
        let hi = uh.sample(rng);
        y.push(draw_response(xi, hi, rng));
        x.push(xi);
        h.push(hi);
    }
    Dataset {
        y,
        offsets: h,
        x_binary: vec![],
        x_continuous: vec![x],
        names: DataSchema {
            response: "y".into(),
            offset: Some("H".into()),
            binary: vec![],
            continuous: vec!["x".into()],
        },
    }
}

/// Seeded convenience wrapper around [`generate_sim_dataset`].
pub fn generate_sim_dataset_seeded(n: usize, seed: u64) -> Dataset {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    generate_sim_dataset(n, &mut rng)
}

/// Monte Carlo estimate of the true conditional pmf at `(x, h)`, cached per
/// bit-identical `(x, h)` pair.
#[derive(Default)]
pub struct TruthCache {
    map: HashMap<(u64, u64), Vec<f64>>,
}

impl TruthCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pmf<R: Rng + ?Sized>(
        &mut self,
        x: f64,
        h: f64,
        mc_size: usize,
        rng: &mut R,
    ) -> &Vec<f64> {
        let key = (x.to_bits(), h.to_bits());
        self.map
            .entry(key)
            .or_insert_with(|| true_conditional_pmf(x, h, mc_size, rng))
    }
}

/// Empirical pmf of `mc_size` mechanism draws at fixed `(x, h)`.
pub fn true_conditional_pmf<R: Rng + ?Sized>(
    x: f64,
    h: f64,
    mc_size: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut counts: Vec<u64> = Vec::new();
    for _ in 0..mc_size {
        let y = draw_response(x, h, rng) as usize;
        if y >= counts.len() {
            counts.resize(y + 1, 0);
        }
        counts[y] += 1;
    }
    counts
        .iter()
        .map(|&c| c as f64 / mc_size as f64)
        .collect()
}

/// Replicate-study configuration. Desk-scale defaults reproduce the
/// qualitative orderings; `paper_scale` switches to the full setup
/// (20 replicates, 40k iterations, burn 20k, thin 5).
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub replicates: usize,
    pub n: usize,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub truncation: usize,
    pub seed: u64,
    pub truth_mc: usize,
    pub families: Vec<OutcomeFamily>,
    pub grid_points: usize,
    pub grid_range: (f64, f64),
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 5,
            n: 500,
            iterations: 8000,
            burnin: 4000,
            thin: 4,
            truncation: 50,
            seed: 20_240_501,
            truth_mc: 1_000_000,
            families: vec![
                OutcomeFamily::Poisson,
                OutcomeFamily::NegativeBinomial,
                OutcomeFamily::GeneralizedPoisson,
            ],
            grid_points: 25,
            grid_range: (0.1, 10.9),
        }
    }
}

impl StudyConfig {
    pub fn paper_scale(mut self) -> Self {
        self.replicates = 20;
        self.iterations = 40_000;
        self.burnin = 20_000;
        self.thin = 5;
        self
    }

    pub fn grid_xs(&self) -> Vec<f64> {
        let (lo, hi) = self.grid_range;
        let g = self.grid_points;
        (0..g)
            .map(|c| lo + (hi - lo) * c as f64 / (g - 1) as f64)
            .collect()
    }
}

pub const FUNCTIONAL_NAMES: [&str; 3] = ["mean", "q25", "q75"];

/// Total-squared-error draws for one (replicate, family) fit: per
/// functional, one value per retained draw, overall and per regime band.
#[derive(Clone, Debug)]
pub struct FitErrors {
    pub replicate: usize,
    pub family: OutcomeFamily,
    /// `[functional][draw]`.
    pub overall: [Vec<f64>; 3],
    /// `[band][functional][draw]`.
    pub bands: [[Vec<f64>; 3]; 4],
    /// Posterior mean curve of each functional over the grid.
    pub curves: [Vec<f64>; 3],
}

/// Full study report.
#[derive(Clone, Debug)]
pub struct StudyReport {
    pub config_summary: String,
    pub grid_xs: Vec<f64>,
    pub fits: Vec<FitErrors>,
    pub failures: Vec<String>,
    /// Truth functional curves per replicate: `[replicate][functional][grid]`.
    pub truth_curves: Vec<[Vec<f64>; 3]>,
}

fn mix_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 step keyed by the salt.
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct ReplicateInputs {
    dataset: Dataset,
    offset_mean: f64,
    truth: Vec<PmfFunctionals>,
}

fn prepare_replicate(cfg: &StudyConfig, r: usize) -> ReplicateInputs {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 1000 + r as u64));
    let dataset = generate_sim_dataset(cfg.n, &mut rng);
    let offset_mean = dataset.offsets.iter().sum::<f64>() / dataset.offsets.len() as f64;
    let mut truth_rng = ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 2000 + r as u64));
    let mut cache = TruthCache::new();
    let truth = cfg
        .grid_xs()
        .iter()
        .map(|&x| pmf_functionals(cache.pmf(x, offset_mean, cfg.truth_mc, &mut truth_rng)))
        .collect();
    ReplicateInputs {
        dataset,
        offset_mean,
        truth,
    }
}

fn fit_one(
    cfg: &StudyConfig,
    inputs: &ReplicateInputs,
    r: usize,
    family: OutcomeFamily,
) -> Result<FitErrors> {
    let prior = build_base_prior(&inputs.dataset, family)?;
    let model = ChainModel::new(
        &inputs.dataset,
        prior,
        SamplerMode::Truncated { t: cfg.truncation },
    )?;
    let grid_xs = cfg.grid_xs();
    let grid = CovariateGrid {
        points: grid_xs
            .iter()
            .map(|&x| GridPoint {
                x_binary: vec![],
                x_continuous: vec![x],
            })
            .collect(),
        offset: inputs.offset_mean,
        ceiling: YCeilingPolicy::default(),
    };
    let chain_cfg = ChainConfig {
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        thin: cfg.thin,
        seed: mix_seed(cfg.seed, 3000 + 10 * r as u64 + family as u64),
    };
    let out = run_chain(&model, &chain_cfg, Some(&grid))?;
    let draws = out.grid_draws.expect("grid requested");

    // Per-draw functionals per grid point.
    let n_draws = draws.len();
    let g = grid_xs.len();
    let mut func_draws = vec![[0.0f64; 3]; n_draws * g];
    for (s, d) in draws.iter().enumerate() {
        for c in 0..g {
            let f = pmf_functionals(&d.pmfs[c]);
            func_draws[s * g + c] = [f.mean, f.q25, f.q75];
        }
    }
    let truth_of = |k: usize| -> Vec<f64> {
        inputs
            .truth
            .iter()
            .map(|f| [f.mean, f.q25, f.q75][k])
            .collect()
    };

    let mut overall: [Vec<f64>; 3] = Default::default();
    let mut bands: [[Vec<f64>; 3]; 4] = Default::default();
    let mut curves: [Vec<f64>; 3] = Default::default();
    for k in 0..3 {
        let estimates: Vec<Vec<f64>> = (0..n_draws)
            .map(|s| (0..g).map(|c| func_draws[s * g + c][k]).collect())
            .collect();
        let truth_k = truth_of(k);
        overall[k] = total_squared_error(&estimates, &truth_k)?;
        for (b, band) in band_indices(&grid_xs).into_iter().enumerate() {
            let est_band: Vec<Vec<f64>> = estimates
                .iter()
                .map(|row| band.iter().map(|&c| row[c]).collect())
                .collect();
            let truth_band: Vec<f64> = band.iter().map(|&c| truth_k[c]).collect();
            bands[b][k] = total_squared_error(&est_band, &truth_band)?;
        }
        curves[k] = (0..g)
            .map(|c| (0..n_draws).map(|s| func_draws[s * g + c][k]).sum::<f64>() / n_draws as f64)
            .collect();
    }
    Ok(FitErrors {
        replicate: r,
        family,
        overall,
        bands,
        curves,
    })
}

/// Grid-point indices of each regime band.
pub fn band_indices(grid_xs: &[f64]) -> [Vec<usize>; 4] {
    let mut bands: [Vec<usize>; 4] = Default::default();
    for (c, &x) in grid_xs.iter().enumerate() {
        bands[regime_of(x)].push(c);
    }
    bands
}

/// Run the replicate study: replicate/family jobs in parallel, errors
/// logged and excluded.
pub fn run_replicate_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let inputs: Vec<ReplicateInputs> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| prepare_replicate(cfg, r))
        .collect();

    let jobs: Vec<(usize, OutcomeFamily)> = (0..cfg.replicates)
        .flat_map(|r| cfg.families.iter().map(move |&f| (r, f)))
        .collect();
    let results: Vec<std::result::Result<FitErrors, String>> = jobs
        .par_iter()
        .map(|&(r, family)| {
            fit_one(cfg, &inputs[r], r, family)
                .map_err(|e| format!("replicate {r}, family {}: {e}", family.name()))
        })
        .collect();

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(f) => fits.push(f),
            Err(e) => failures.push(e),
        }
    }
    if fits.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate fit failed: {failures:?}"
        )));
    }
    Ok(StudyReport {
        config_summary: format!(
            "replicates={} n={} iterations={} burnin={} thin={} truncation={} seed={}",
            cfg.replicates, cfg.n, cfg.iterations, cfg.burnin, cfg.thin, cfg.truncation, cfg.seed
        ),
        grid_xs: cfg.grid_xs(),
        fits,
        failures,
        truth_curves: inputs
            .iter()
            .map(|inp| {
                let mut t: [Vec<f64>; 3] = Default::default();
                for k in 0..3 {
                    t[k] = inp
                        .truth
                        .iter()
                        .map(|f| [f.mean, f.q25, f.q75][k])
                        .collect();
                }
                t
            })
            .collect(),
    })
}

impl StudyReport {
    /// Pooled posterior median of total squared error over all draws and
    /// replicates for one family and functional.
    pub fn pooled_median(&self, family: OutcomeFamily, functional: usize) -> f64 {
        let mut all = Vec::new();
        for fit in self.fits.iter().filter(|f| f.family == family) {
            all.extend_from_slice(&fit.overall[functional]);
        }
        crate::inference::median(&all)
    }

    /// Pooled band median for one family, band, and functional.
    pub fn pooled_band_median(&self, family: OutcomeFamily, band: usize, functional: usize) -> f64 {
        let mut all = Vec::new();
        for fit in self.fits.iter().filter(|f| f.family == family) {
            all.extend_from_slice(&fit.bands[band][functional]);
        }
        crate::inference::median(&all)
    }

    /// Per-replicate medians for one family and functional.
    pub fn replicate_medians(&self, family: OutcomeFamily, functional: usize) -> Vec<f64> {
        self.fits
            .iter()
            .filter(|f| f.family == family)
            .map(|f| crate::inference::median(&f.overall[functional]))
            .collect()
    }

    pub fn families(&self) -> Vec<OutcomeFamily> {
        let mut fams = Vec::new();
        for f in &self.fits {
            if !fams.contains(&f.family) {
                fams.push(f.family);
            }
        }
        fams
    }

    /// Overall comparison table (mirrors the total-error summary layout).
    pub fn render_overall_table(&self) -> String {
        let mut out = String::from("family\tmean\tq25\tq75\n");
        for fam in self.families() {
            out.push_str(&format!(
                "{}\t{:.3}\t{:.3}\t{:.3}\n",
                fam.name(),
                self.pooled_median(fam, 0),
                self.pooled_median(fam, 1),
                self.pooled_median(fam, 2),
            ));
        }
        out
    }

    /// Per-band comparison table.
    pub fn render_band_table(&self) -> String {
        let band_names = ["x<3", "3<x<6", "6<x<9", "x>9"];
        let mut out = String::from("family\tband\tmean\tq25\tq75\n");
        for fam in self.families() {
            for (b, name) in band_names.iter().enumerate() {
                out.push_str(&format!(
                    "{}\t{}\t{:.3}\t{:.3}\t{:.3}\n",
                    fam.name(),
                    name,
                    self.pooled_band_median(fam, b, 0),
                    self.pooled_band_median(fam, b, 1),
                    self.pooled_band_median(fam, b, 2),
                ));
            }
        }
        out
    }

    /// Per-replicate medians table.
    pub fn render_replicate_table(&self) -> String {
        let mut out = String::from("family\treplicate\tmean\tq25\tq75\n");
        for fit in &self.fits {
            out.push_str(&format!(
                "{}\t{}\t{:.3}\t{:.3}\t{:.3}\n",
                fit.family.name(),
                fit.replicate,
                crate::inference::median(&fit.overall[0]),
                crate::inference::median(&fit.overall[1]),
                crate::inference::median(&fit.overall[2]),
            ));
        }
        out
    }

    /// Posterior-mean functional curves with the replicate truth, for
    /// external plotting.
    pub fn render_curves(&self) -> String {
        let mut out = String::from("family\treplicate\tx\tfunctional\testimate\ttruth\n");
        for fit in &self.fits {
            for (k, name) in FUNCTIONAL_NAMES.iter().enumerate() {
                for (c, &x) in self.grid_xs.iter().enumerate() {
                    out.push_str(&format!(
                        "{}\t{}\t{:.3}\t{}\t{:.4}\t{:.4}\n",
                        fit.family.name(),
                        fit.replicate,
                        x,
                        name,
                        fit.curves[k][c],
                        self.truth_curves[fit.replicate][k][c],
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mean_function_value() {
        assert!((sim_mean(2.5) - 2.625).abs() < 1e-12);
    }

    #[test]
    fn regimes_are_exhaustive_and_half_open() {
        assert_eq!(regime_of(0.5), 0);
        assert_eq!(regime_of(3.0), 1);
        assert_eq!(regime_of(5.999), 1);
        assert_eq!(regime_of(6.0), 2);
        assert_eq!(regime_of(9.0), 3);
        assert_eq!(regime_of(10.9), 3);
    }

    #[test]
    fn responses_are_nonnegative_and_match_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let ds = generate_sim_dataset(2000, &mut rng);
        assert_eq!(ds.n(), 2000);
        assert!(ds.offsets.iter().all(|&h| (10.0..30.0).contains(&h)));
        assert!(ds.x_continuous[0].iter().all(|&x| (0.0..11.0).contains(&x)));
    }

    #[test]
    fn truth_pmf_sums_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pmf = true_conditional_pmf(1.0, 20.0, 20_000, &mut rng);
        let total: f64 = pmf.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_matches_stated_spacing() {
        let cfg = StudyConfig::default();
        let xs = cfg.grid_xs();
        assert_eq!(xs.len(), 25);
        assert!((xs[0] - 0.1).abs() < 1e-12);
        assert!((xs[24] - 10.9).abs() < 1e-12);
        assert!((xs[1] - xs[0] - 0.45).abs() < 1e-12);
    }
}
