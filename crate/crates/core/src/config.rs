//! Run configuration: a human-readable TOML file with CLI-flag overrides,
//! grid construction, and the reproducibility manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataSchema, Dataset};
use crate::distributions::OutcomeFamily;
use crate::error::{Error, Result};
use crate::inference::{CovariateGrid, GridPoint, YCeilingPolicy};
use crate::priors::BasePrior;
use crate::sampler::SamplerMode;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub hyper: HyperSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub response: Option<String>,
    pub offset: Option<String>,
    #[serde(default)]
    pub binary: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: String,
    pub mode: String,
    pub truncation: usize,
    pub slice_cap: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: "poisson".into(),
            mode: "truncated".into(),
            truncation: SamplerMode::DEFAULT_TRUNCATION,
            slice_cap: SamplerMode::DEFAULT_SLICE_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
}

impl Default for McmcSection {
    fn default() -> Self {
        McmcSection {
            iterations: 8000,
            burnin: 4000,
            thin: 4,
            seed: 1,
        }
    }
}

/// Grid specification: linspace per continuous covariate; binary covariates
/// are expanded over both levels unless fixed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// One `[min, max, count]` triple per continuous covariate.
    #[serde(default)]
    pub continuous: Vec<[f64; 3]>,
    /// Fixed binary values; empty means "expand all levels".
    #[serde(default)]
    pub binary: Vec<u8>,
    /// Evaluation offset; defaults to the mean of the data offsets.
    pub offset: Option<f64>,
    pub mass: Option<f64>,
    pub cap: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub xi_gamma_shape: f64,
    pub xi_gamma_rate: f64,
}

impl Default for HyperSection {
    fn default() -> Self {
        HyperSection {
            alpha_shape: crate::priors::ALPHA_PRIOR_DEFAULT.0,
            alpha_rate: crate::priors::ALPHA_PRIOR_DEFAULT.1,
            xi_gamma_shape: 1.0,
            xi_gamma_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mcmc.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.mcmc.iterations > 0 && self.mcmc.burnin >= self.mcmc.iterations {
            return Err(Error::Config("burn-in must be below iterations".into()));
        }
        self.family()?;
        self.mode()?;
        Ok(())
    }

    pub fn family(&self) -> Result<OutcomeFamily> {
        OutcomeFamily::parse(&self.model.family)
    }

    pub fn mode(&self) -> Result<SamplerMode> {
        match self.model.mode.as_str() {
            "truncated" => Ok(SamplerMode::Truncated {
                t: self.model.truncation,
            }),
            "slice" => Ok(SamplerMode::Slice {
                max_components: self.model.slice_cap,
            }),
            other => Err(Error::Config(format!("unknown sampler mode '{other}'"))),
        }
    }

    pub fn schema(&self) -> Result<DataSchema> {
        let response = self
            .data
            .response
            .clone()
            .ok_or_else(|| Error::Config("data.response is required".into()))?;
        Ok(DataSchema {
            response,
            offset: self.data.offset.clone(),
            binary: self.data.binary.clone(),
            continuous: self.data.continuous.clone(),
        })
    }

    /// Apply hyperparameter overrides to a freshly built base prior.
    pub fn apply_hyper(&self, mut prior: BasePrior) -> BasePrior {
        prior.alpha_shape = self.hyper.alpha_shape;
        prior.alpha_rate = self.hyper.alpha_rate;
        prior.xi_prior.gamma_shape = self.hyper.xi_gamma_shape;
        prior.xi_prior.gamma_rate = self.hyper.xi_gamma_rate;
        prior
    }

    /// Build the evaluation grid for a dataset: cartesian product of binary
    /// levels and the continuous linspaces (data ranges by default).
    pub fn build_grid(&self, dataset: &Dataset) -> Result<CovariateGrid> {
        let p_c = dataset.p_continuous();
        let p_b = dataset.p_binary();
        let mut cont_axes: Vec<Vec<f64>> = Vec::with_capacity(p_c);
        for j in 0..p_c {
            let spec = self.grid.continuous.get(j).copied().unwrap_or_else(|| {
                let col = &dataset.x_continuous[j];
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                [min, max, 25.0]
            });
            let count = spec[2].max(1.0) as usize;
            let axis = if count == 1 {
                vec![spec[0]]
            } else {
                (0..count)
                    .map(|k| spec[0] + (spec[1] - spec[0]) * k as f64 / (count - 1) as f64)
                    .collect()
            };
            cont_axes.push(axis);
        }
        let bin_axes: Vec<Vec<u8>> = if self.grid.binary.len() == p_b && p_b > 0 {
            self.grid.binary.iter().map(|&b| vec![b]).collect()
        } else {
            (0..p_b).map(|_| vec![0u8, 1u8]).collect()
        };

        let mut points = vec![GridPoint {
            x_binary: vec![],
            x_continuous: vec![],
        }];
        for axis in &bin_axes {
            let mut next = Vec::new();
            for p in &points {
                for &v in axis {
                    let mut np = p.clone();
                    np.x_binary.push(v);
                    next.push(np);
                }
            }
            points = next;
        }
        for axis in &cont_axes {
            let mut next = Vec::new();
            for p in &points {
                for &v in axis {
                    let mut np = p.clone();
                    np.x_continuous.push(v);
                    next.push(np);
                }
            }
            points = next;
        }

        let offset = self.grid.offset.unwrap_or_else(|| {
            dataset.offsets.iter().sum::<f64>() / dataset.n().max(1) as f64
        });
        let mut ceiling = YCeilingPolicy::default();
        if let Some(m) = self.grid.mass {
            ceiling.mass = m;
        }
        if let Some(c) = self.grid.cap {
            ceiling.cap = c;
        }
        let grid = CovariateGrid {
            points,
            offset,
            ceiling,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }
}

/// Reproducibility manifest written next to every run's artifacts.
pub fn render_manifest(config: &RunConfig, data_sha256: &str, data_rows: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "tool_version = {}\n",
        env!("CARGO_PKG_VERSION")
    ));
    out.push_str(&format!("store_format_version = {}\n", crate::store::STORE_VERSION));
    out.push_str(&format!("data_sha256 = {data_sha256}\n"));
    out.push_str(&format!("data_rows = {data_rows}\n"));
    out.push_str(&format!("family = {}\n", config.model.family));
    out.push_str(&format!("mode = {}\n", config.model.mode));
    out.push_str(&format!("truncation = {}\n", config.model.truncation));
    out.push_str(&format!("iterations = {}\n", config.mcmc.iterations));
    out.push_str(&format!("burnin = {}\n", config.mcmc.burnin));
    out.push_str(&format!("thin = {}\n", config.mcmc.thin));
    out.push_str(&format!("seed = {}\n", config.mcmc.seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let text = r#"
            [data]
            response = "y"
            continuous = ["x"]

            [mcmc]
            iterations = 100
            burnin = 50
            thin = 2
            seed = 3
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mcmc.iterations, 100);
        assert_eq!(cfg.model.truncation, 50);
        assert_eq!(cfg.family().unwrap(), OutcomeFamily::Poisson);
    }

    #[test]
    fn rejects_bad_invariants() {
        let mut cfg = RunConfig::default();
        cfg.data.response = Some("y".into());
        cfg.mcmc.burnin = cfg.mcmc.iterations;
        assert!(cfg.validate().is_err());
        cfg.mcmc.burnin = 0;
        cfg.mcmc.thin = 0;
        assert!(cfg.validate().is_err());
        cfg.mcmc.thin = 1;
        cfg.model.family = "weird".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_expands_binary_levels() {
        let ds = Dataset {
            y: vec![1, 2],
            offsets: vec![1.0, 1.0],
            x_binary: vec![vec![0, 1]],
            x_continuous: vec![vec![0.0, 4.0]],
            names: DataSchema {
                response: "y".into(),
                offset: None,
                binary: vec!["b".into()],
                continuous: vec!["x".into()],
            },
        };
        let mut cfg = RunConfig::default();
        cfg.grid.continuous = vec![[0.0, 4.0, 3.0]];
        let grid = cfg.build_grid(&ds).unwrap();
        assert_eq!(grid.points.len(), 6);
        assert_eq!(grid.offset, 1.0);
    }
}
