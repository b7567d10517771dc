//! Experiment configuration. Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroupRule;
use crate::sampler::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Block {
        #[serde(default)]
        seed: u64,
    },
    Lattice {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        rows: Option<usize>,
        #[serde(default)]
        cols: Option<usize>,
    },
    /// A ground-truth JSON document.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Read the training set from this CSV instead of sampling it.
    pub train_path: Option<PathBuf>,
    /// Read the test set from this CSV instead of sampling it.
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_train: 100, n_test: 1000, seed: 0, train_path: None, test_path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bayes,
    BayesExact,
    BayesP0,
    WainMax,
    WainMin,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bayes => "bayes",
            Method::BayesExact => "bayes_exact",
            Method::BayesP0 => "bayes_p0",
            Method::WainMax => "wain_max",
            Method::WainMin => "wain_min",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, Method::BayesP0 | Method::WainMax | Method::WainMin)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub p0_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Edge-probability threshold of the point model and the F1 score.
    pub threshold: f64,
    /// Samples in the predictive mixture, evenly spaced over the run.
    pub mixture_size: usize,
    /// Largest autocorrelation lag.
    pub max_lag: usize,
    /// Defaults to all nodes on block models and 3x3 windows on lattices.
    pub group: Option<GroupRule>,
    /// Seed of the random groups.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5, mixture_size: 100, max_lag: 50, group: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareInput {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub inputs: Vec<CompareInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub sampler: RunConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_method() -> Method {
    Method::Bayes
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks that do not need the model or the data.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if let ModelConfig::Lattice { rows, cols, .. } = self.model {
            if rows.is_some() != cols.is_some() {
                return fail("lattice rows and cols must be given together");
            }
            if rows == Some(0) || cols == Some(0) {
                return fail("lattice rows and cols must be positive");
            }
        }
        match self.method {
            Method::BayesP0 => match &self.sweep.p0_grid {
                Some(g) if !g.is_empty() && g.iter().all(|&p| p > 0.0 && p < 1.0) => {}
                _ => return fail("bayes_p0 needs a non-empty sweep.p0_grid with values in (0, 1)"),
            },
            Method::WainMax | Method::WainMin => match &self.sweep.lambda_grid {
                Some(g) if !g.is_empty() && g.iter().all(|&l| l >= 0.0 && l.is_finite()) => {}
                _ => return fail("wain methods need a non-empty sweep.lambda_grid of non-negative values"),
            },
            Method::Bayes | Method::BayesExact => {
                if self.sweep.p0_grid.is_some() || self.sweep.lambda_grid.is_some() {
                    return fail("sweep grids apply only to bayes_p0, wain_max and wain_min");
                }
            }
        }
        if self.method.is_sweep() && self.sweep.p0_grid.is_some() && self.sweep.lambda_grid.is_some() {
            return fail("give either sweep.p0_grid or sweep.lambda_grid, not both");
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold <= 1.0) {
            return fail("eval.threshold must lie in (0, 1]");
        }
        if self.eval.mixture_size == 0 {
            return fail("eval.mixture_size must be at least 1");
        }
        if self.compare.inputs.iter().any(|i| i.label.is_empty() || i.label.contains([',', '\n', '\r', '"'])) {
            return fail("compare labels must be non-empty and free of commas, quotes and line breaks");
        }
        let mut labels: Vec<&str> = self.compare.inputs.iter().map(|i| i.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("compare input labels must be unique");
        }
        Ok(())
    }
}
