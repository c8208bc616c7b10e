//! Mutable MCMC state: clusters, stick weights, allocations, latent values,
//! slice variables, concentration parameter and adaptive tuning scalars.

use nalgebra::DVector;

use crate::cutpoints::{CutpointCache, LatentInterval};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelAtom, VariableLayout};
use crate::priors::BasePrior;

/// Sampler flavor: fixed-truncation blocked Gibbs or exact slice sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    Truncated { t: usize },
    Slice { max_components: usize },
}

impl SamplerMode {
    pub const DEFAULT_TRUNCATION: usize = 50;
    pub const DEFAULT_SLICE_CAP: usize = 500;
}

/// Row-major copy of the dataset used by the sweep loops.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub n: usize,
    pub p_binary: usize,
    pub p_continuous: usize,
    pub y: Vec<u32>,
    pub offsets: Vec<f64>,
    xb: Vec<u8>,
    xc: Vec<f64>,
}

impl PreparedData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        ds.validate()?;
        let n = ds.n();
        let p_b = ds.p_binary();
        let p_c = ds.p_continuous();
        let mut xb = Vec::with_capacity(n * p_b);
        let mut xc = Vec::with_capacity(n * p_c);
        for i in 0..n {
            for col in &ds.x_binary {
                xb.push(col[i]);
            }
            for col in &ds.x_continuous {
                xc.push(col[i]);
            }
        }
        Ok(PreparedData {
            n,
            p_binary: p_b,
            p_continuous: p_c,
            y: ds.y.clone(),
            offsets: ds.offsets.clone(),
            xb,
            xc,
        })
    }

    #[inline]
    pub fn xb_row(&self, i: usize) -> &[u8] {
        &self.xb[i * self.p_binary..(i + 1) * self.p_binary]
    }

    #[inline]
    pub fn xc_row(&self, i: usize) -> &[f64] {
        &self.xc[i * self.p_continuous..(i + 1) * self.p_continuous]
    }
}

/// Everything fixed over a chain: data, layout, base prior, sampler mode.
#[derive(Clone, Debug)]
pub struct ChainModel {
    pub data: PreparedData,
    pub layout: VariableLayout,
    pub prior: BasePrior,
    pub mode: SamplerMode,
}

impl ChainModel {
    pub fn new(dataset: &Dataset, prior: BasePrior, mode: SamplerMode) -> Result<Self> {
        let data = PreparedData::from_dataset(dataset)?;
        let layout = prior.layout;
        if layout.p_binary != data.p_binary || layout.p_continuous != data.p_continuous {
            return Err(Error::Layout("prior and data layouts disagree".into()));
        }
        if layout.family.offset_is_trials() {
            for i in 0..data.n {
                if (data.y[i] as f64) > data.offsets[i] {
                    return Err(Error::Data(format!(
                        "row {}: response {} exceeds trial count {}",
                        i + 1,
                        data.y[i],
                        data.offsets[i]
                    )));
                }
            }
        }
        Ok(ChainModel {
            data,
            layout,
            prior,
            mode,
        })
    }
}

/// One mixture component plus its covariance expansion parameters and the
/// per-cluster cut-point cache (valid while xi is unchanged).
#[derive(Clone, Debug)]
pub struct Cluster {
    pub atom: KernelAtom,
    pub d_latent: DVector<f64>,
    cuts: CutpointCache,
}

impl Cluster {
    pub fn new(atom: KernelAtom, d_latent: DVector<f64>) -> Self {
        Cluster {
            atom,
            d_latent,
            cuts: CutpointCache::new(),
        }
    }

    /// Cached response interval for observed value `y` at `offset`.
    pub fn interval(&mut self, y: u32, offset: f64) -> Result<LatentInterval> {
        let layout = self.atom.layout();
        let params = self.atom.params(offset)?;
        self.cuts.interval(layout.family, y, &params)
    }

    /// Replace outcome parameters, invalidating cached cut-points.
    pub fn set_xi(&mut self, xi: Vec<f64>) {
        self.atom.set_xi(xi);
        self.cuts.clear();
    }
}

/// Per-scalar Metropolis acceptance bookkeeping within one adaptation batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptCounter {
    pub accepts: u64,
    pub attempts: u64,
}

impl AcceptCounter {
    pub fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        if accepted {
            self.accepts += 1;
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.accepts as f64 / self.attempts as f64)
    }

    pub fn reset(&mut self) {
        *self = AcceptCounter::default();
    }
}

/// Adaptive proposal scales: Wishart degrees of freedom and the
/// Metropolis precision parameters (proposal variance = 1/tau).
#[derive(Clone, Copy, Debug)]
pub struct AdaptiveTuning {
    pub psi: f64,
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub batch_index: u64,
    pub cov_counter: AcceptCounter,
    pub tau_counter: AcceptCounter,
    pub tau1_counter: AcceptCounter,
    pub tau2_counter: AcceptCounter,
}

/// Sweeps per adaptation batch.
pub const ADAPT_BATCH: u64 = 50;
pub const TAU_MIN: f64 = 1e-4;
pub const TAU_MAX: f64 = 1e8;

impl AdaptiveTuning {
    pub fn initial(q: usize) -> Self {
        AdaptiveTuning {
            psi: q as f64 + 50.0,
            tau: 10.0,
            tau1: 10.0,
            tau2: 10.0,
            batch_index: 0,
            cov_counter: AcceptCounter::default(),
            tau_counter: AcceptCounter::default(),
            tau1_counter: AcceptCounter::default(),
            tau2_counter: AcceptCounter::default(),
        }
    }
}

/// Full mutable sampler state.
#[derive(Clone, Debug)]
pub struct MixtureState {
    pub clusters: Vec<Cluster>,
    /// Stick-breaking fractions, one per instantiated component.
    pub v: Vec<f64>,
    /// Mixture weights implied by `v`.
    pub pi: Vec<f64>,
    /// Component label per observation.
    pub delta: Vec<usize>,
    /// Response latents, one per observation.
    pub y_latent: Vec<f64>,
    /// Binary-covariate latents, row-major `n x p_binary`.
    pub xb_latent: Vec<f64>,
    /// Slice variables (slice mode only; empty otherwise).
    pub u: Vec<f64>,
    pub alpha: f64,
    pub tuning: AdaptiveTuning,
    /// Non-fatal numerical notes (kept bounded).
    pub warnings: Vec<String>,
}

impl MixtureState {
    /// Number of instantiated components.
    pub fn t(&self) -> usize {
        self.clusters.len()
    }

    /// Per-component allocation counts.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.t()];
        for &d in &self.delta {
            c[d] += 1;
        }
        c
    }

    pub fn n_nonempty(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    /// Recompute `pi` from the stick fractions.
    pub fn recompute_weights(&mut self) {
        let mut rest = 1.0;
        self.pi.clear();
        for &v in &self.v {
            self.pi.push(v * rest);
            rest *= 1.0 - v;
        }
    }

    /// `|sum(pi) + prod(1 - v) - 1|`, an algebraic identity of the
    /// stick-breaking construction; numerical drift signals a bug.
    pub fn stick_identity_gap(&self) -> f64 {
        let total: f64 = self.pi.iter().sum();
        let rest: f64 = self.v.iter().map(|&v| 1.0 - v).product();
        (total + rest - 1.0).abs()
    }

    #[inline]
    pub fn xb_latent_row(&self, i: usize, p_binary: usize) -> &[f64] {
        &self.xb_latent[i * p_binary..(i + 1) * p_binary]
    }

    pub fn push_warning(&mut self, msg: String) {
        if self.warnings.len() < 100 {
            self.warnings.push(msg);
        }
    }

    /// Values of coordinates `1..q` (binary latents then continuous) for
    /// observation `i`, written into `buf`.
    pub fn rest_values(&self, data: &PreparedData, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(self.xb_latent_row(i, data.p_binary));
        buf.extend_from_slice(data.xc_row(i));
    }

    /// Full latent/observed coordinate vector for observation `i`.
    pub fn full_values(&self, data: &PreparedData, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.push(self.y_latent[i]);
        buf.extend_from_slice(self.xb_latent_row(i, data.p_binary));
        buf.extend_from_slice(data.xc_row(i));
    }
}
