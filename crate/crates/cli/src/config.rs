//! TOML run configuration.
//!
//! Every key is optional and command-line flags take precedence. Unknown
//! keys are rejected.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/worst-case"
//! strict = true
//!
//! [iterate]
//! operator = "worst-case:k=10"   # or an [iterate.affine] table
//! schedule = "picard"
//! horizon = 10
//! audits = ["km-norm-iter"]
//! x0 = [0.0, 0.0]                # defaults to the origin
//!
//! [iterate.affine]               # Tx = a x + b
//! a = [[0.0, -1.0], [1.0, 0.0]]
//! b = [0.0, 0.0]
//! v = [0.0, 0.0]                 # optional ground truth
//! x_star = [0.0, 0.0]
//!
//! [lowerbound]
//! k = "4,8,16"
//! draws = 100
//! resist_k = 6
//!
//! [pep]
//! k = "1..15"
//! tol = 1e-6
//! max_iter = 200000
//!
//! [pgextra]
//! preset = "reduced"             # or "full"; the keys below override it
//! m = 5
//! n = 4
//! p = 5
//! epsilon = 0.5
//! alpha = 0.01
//! beta = 0.01
//! horizon = 5000
//! objective = "random"           # or "zero"
//! variants = ["picard", "ohm", "km:0.5"]
//! reference_factor = 40
//! edges = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub strict: Option<bool>,
    #[serde(default)]
    pub iterate: IterateConfig,
    #[serde(default)]
    pub lowerbound: LowerBoundConfig,
    #[serde(default)]
    pub pep: PepConfig,
    #[serde(default)]
    pub pgextra: PgExtraConfig,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    pub operator: Option<String>,
    pub affine: Option<AffineConfig>,
    pub schedule: Option<String>,
    pub horizon: Option<usize>,
    pub audits: Option<Vec<String>>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    pub k: Option<String>,
    pub draws: Option<usize>,
    pub resist_k: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PepConfig {
    pub k: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgExtraConfig {
    pub preset: Option<String>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub horizon: Option<usize>,
    pub objective: Option<String>,
    pub variants: Option<Vec<String>>,
    pub reference_factor: Option<usize>,
    pub edges: Option<Vec<(usize, usize)>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
