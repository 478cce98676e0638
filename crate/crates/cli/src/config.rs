//! Experiment configuration: an optional JSON file with flag overrides.
//! Flags win over the file; anything left unset falls back to the
//! experiment's default.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use crittree::model::{builtin, load_model, ModelSpec};
use serde::{Deserialize, Serialize};

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Built-in model (binary, two-type, torus) or path to a model JSON file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Branching rate for the binary model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Starting state x.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    /// Master seed (required).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of replicates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Time grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    /// Scale grid n, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<f64>>,
    /// Simulation horizon.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Total-length budget for a single tree.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    /// Length cap for conditioned trees, in units of n².
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    /// Points per distance matrix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Ball radius for the lower mass function.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Deviation threshold for η-bad particles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Window start(s) R, comma separated.
    #[arg(long = "r", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    /// Moment order.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<u32>,
    /// Test function values per state, comma separated (default φ).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    /// Probe points for the lower mass function.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    /// Relative tolerance for moment checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Population threshold of the Q-process event {N_R ≥ k}.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_min: Option<usize>,
    /// Grid step of the excursion sampler.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Permutations for the energy test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    /// Minimum number of survivors required.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_survivors: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outdir: Option<PathBuf>,
    /// Run label; defaults to seed-<seed>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(mut self, flags: &ExperimentConfig) -> Self {
        overlay!(self, flags; model, gamma, state, seed, reps, t, n, horizon, length, cap, k, delta, eta, r,
            ell, f, probes, tolerance, event_min, dt, permutations, min_survivors, outdir, label);
        self
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| anyhow!("missing required key `seed`"))
    }

    pub fn model_name(&self, default: &str) -> String {
        self.model.clone().unwrap_or_else(|| default.to_string())
    }

    /// Resolves the model reference: a built-in name or a JSON file.
    pub fn load_model(&self, default: &str) -> anyhow::Result<ModelSpec> {
        let name = self.model_name(default);
        let gamma = self.gamma.unwrap_or(1.0);
        match name.as_str() {
            "binary" | "two-type" | "two_type" | "torus" => Ok(builtin(&name, gamma)?),
            path => {
                let p = Path::new(path);
                if !p.exists() {
                    return Err(anyhow!("key `model`: `{path}` is neither a built-in model nor an existing file"));
                }
                Ok(load_model(p)?)
            }
        }
    }

    pub fn label(&self) -> anyhow::Result<String> {
        Ok(match &self.label {
            Some(l) => l.clone(),
            None => format!("seed-{}", self.seed()?),
        })
    }
}
