//! Experiment configuration: a single TOML file describing the dataset,
//! privacy regime, method, training hyperparameters and seeds.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fedsplit::accountant;
use fedsplit::federation::{ClipConfig, FedAdamConfig, OptimizerKind, SplitStrategy};
use fedsplit::intermediary::RatioBase;
use fedsplit::train::{BatchSpec, LocalConfig};

/// Parse-level representation of the experiment file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub privacy: PrivacyConfig,
    pub method: MethodConfig,
    pub training: TrainingConfig,
    pub run: RunSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_source")]
    pub source: String,
    pub n_clients: Option<usize>,
    pub samples_per_client: Option<usize>,
    pub dim: Option<usize>,
    pub heterogeneity: Option<f64>,
    /// "base" draws a pooled test set from the shift-free distribution;
    /// "heldout" pools a per-client holdout fraction.
    #[serde(default = "default_test_source")]
    pub test_source: String,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub csv_paths: Vec<PathBuf>,
    #[serde(default)]
    pub label_column: Option<String>,
}

fn default_source() -> String {
    "synthetic".into()
}
fn default_test_source() -> String {
    "base".into()
}
fn default_test_samples() -> usize {
    2000
}
fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub z: f64,
    pub rounds: u32,
    pub delta: Option<f64>,
    /// Derive delta from the client count as the largest power of ten below
    /// 1/n. Exactly one of `delta` / `delta_rule` must be active.
    #[serde(default)]
    pub delta_rule: bool,
    #[serde(default = "default_ratio")]
    pub subsample_ratio: f64,
}

fn default_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default)]
    pub adaptive_intermediary: bool,
    #[serde(default = "default_v")]
    pub fixed_v: usize,
    #[serde(default = "default_ratio_base")]
    pub ratio_base: String,
    pub clip: ClipSection,
    #[serde(default)]
    pub fedadam: Option<FedAdamSection>,
}

fn default_optimizer() -> String {
    "fedavg".into()
}
fn default_v() -> usize {
    1
}
fn default_ratio_base() -> String {
    "clients".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSection {
    pub mode: String,
    pub c: Option<f64>,
    pub frac: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_eta_c")]
    pub eta_c: f64,
    #[serde(default)]
    pub sigma_b: f64,
    #[serde(default)]
    pub noised_correction: bool,
}

fn default_gamma() -> f64 {
    0.5
}
fn default_eta_c() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAdamSection {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eta_s")]
    pub eta_s: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_tau() -> f64 {
    1e-3
}
fn default_eta_s() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    /// Positive integer, or the string "full" for one whole-shard batch.
    pub batch_size: toml::Value,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_epochs() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// One of: z, v, n_clients, rounds, subsample.
    pub axis: String,
    pub values: Vec<f64>,
}

/// Field-checked configuration ready to execute.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub raw: ExperimentConfig,
    pub optimizer: OptimizerKind,
    pub clip: ClipConfig,
    pub split: SplitStrategy,
    pub local: LocalConfig,
    pub delta: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

pub fn load(path: &Path) -> Result<ValidatedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err("<file>", format!("cannot read {}: {e}", path.display())))?;
    let raw: ExperimentConfig = toml::from_str(&text).map_err(|e| err("<toml>", e.to_string()))?;
    validate(raw)
}

pub fn validate(raw: ExperimentConfig) -> Result<ValidatedConfig, ConfigError> {
    // dataset
    match raw.dataset.source.as_str() {
        "synthetic" => {
            if !raw.dataset.csv_paths.is_empty() {
                return Err(err(
                    "dataset.csv_paths",
                    "must be empty for the synthetic source (exactly one dataset source)",
                ));
            }
            for (field, value) in [
                ("dataset.n_clients", raw.dataset.n_clients),
                ("dataset.samples_per_client", raw.dataset.samples_per_client),
                ("dataset.dim", raw.dataset.dim),
            ] {
                match value {
                    None => return Err(err(field, "required for the synthetic source")),
                    Some(0) => return Err(err(field, "must be >= 1")),
                    Some(_) => {}
                }
            }
            let het = raw
                .dataset
                .heterogeneity
                .ok_or_else(|| err("dataset.heterogeneity", "required for the synthetic source"))?;
            if !(0.0..=1.0).contains(&het) {
                return Err(err("dataset.heterogeneity", "must lie in [0, 1]"));
            }
        }
        "csv" => {
            if raw.dataset.csv_paths.is_empty() {
                return Err(err("dataset.csv_paths", "required for the csv source"));
            }
            if raw.dataset.label_column.is_none() {
                return Err(err("dataset.label_column", "required for the csv source"));
            }
            if raw.dataset.n_clients.is_some() {
                return Err(err(
                    "dataset.n_clients",
                    "not allowed with the csv source (exactly one dataset source)",
                ));
            }
        }
        other => {
            return Err(err(
                "dataset.source",
                format!("unknown source `{other}` (expected synthetic or csv)"),
            ))
        }
    }
    match raw.dataset.test_source.as_str() {
        "base" => {
            if raw.dataset.test_samples == 0 {
                return Err(err("dataset.test_samples", "must be >= 1"));
            }
        }
        "heldout" => {
            if !(0.0 < raw.dataset.test_fraction && raw.dataset.test_fraction < 1.0) {
                return Err(err("dataset.test_fraction", "must lie in (0, 1)"));
            }
        }
        other => {
            return Err(err(
                "dataset.test_source",
                format!("unknown test source `{other}` (expected base or heldout)"),
            ))
        }
    }

    // privacy
    if raw.privacy.z < 0.0 || !raw.privacy.z.is_finite() {
        return Err(err("privacy.z", "must be >= 0"));
    }
    if raw.privacy.rounds == 0 {
        return Err(err("privacy.rounds", "must be >= 1"));
    }
    if !(raw.privacy.subsample_ratio > 0.0 && raw.privacy.subsample_ratio <= 1.0) {
        return Err(err("privacy.subsample_ratio", "must lie in (0, 1]"));
    }
    let delta = match (raw.privacy.delta, raw.privacy.delta_rule) {
        (Some(_), true) => {
            return Err(err(
                "privacy.delta",
                "give either delta or delta_rule, not both",
            ))
        }
        (Some(d), false) => {
            if !(d > 0.0 && d < 1.0) {
                return Err(err("privacy.delta", "must lie in (0, 1)"));
            }
            d
        }
        (None, true) => {
            let n = raw
                .dataset
                .n_clients
                .or(Some(raw.dataset.csv_paths.len()))
                .filter(|n| *n > 0)
                .ok_or_else(|| err("privacy.delta_rule", "needs a client count"))?
                as u64;
            accountant::delta_rule(n).map_err(|e| err("privacy.delta_rule", e.to_string()))?
        }
        (None, false) => {
            if raw.privacy.z > 0.0 {
                return Err(err("privacy.delta", "required when z > 0"));
            }
            1e-2 // unused on non-private runs
        }
    };

    // method
    let optimizer = match raw.method.optimizer.as_str() {
        "fedavg" => OptimizerKind::FedAvg,
        "fednova" => OptimizerKind::FedNova,
        "fedadam" => {
            let s = raw.method.fedadam.unwrap_or(FedAdamSection {
                beta1: default_beta1(),
                beta2: default_beta2(),
                tau: default_tau(),
                eta_s: default_eta_s(),
            });
            OptimizerKind::FedAdam(FedAdamConfig {
                beta1: s.beta1,
                beta2: s.beta2,
                tau: s.tau,
                eta_s: s.eta_s,
            })
        }
        other => {
            return Err(err(
                "method.optimizer",
                format!("unknown optimizer `{other}` (expected fedavg, fedadam or fednova)"),
            ))
        }
    };
    let clip = match raw.method.clip.mode.as_str() {
        "none" => {
            if raw.privacy.z > 0.0 {
                return Err(err(
                    "method.clip.mode",
                    "`none` is only valid on non-private runs (z = 0)",
                ));
            }
            ClipConfig::None
        }
        "fixed" => {
            let c = raw
                .method
                .clip
                .c
                .ok_or_else(|| err("method.clip.c", "required for mode = fixed"))?;
            if c <= 0.0 {
                return Err(err("method.clip.c", "must be positive"));
            }
            ClipConfig::Fixed { c }
        }
        "fixed_frac" => {
            let frac = raw
                .method
                .clip
                .frac
                .ok_or_else(|| err("method.clip.frac", "required for mode = fixed_frac"))?;
            if frac <= 0.0 {
                return Err(err("method.clip.frac", "must be positive"));
            }
            ClipConfig::FixedFromFirstRound { frac }
        }
        "adaptive" => {
            if !(0.0 < raw.method.clip.gamma && raw.method.clip.gamma < 1.0) {
                return Err(err("method.clip.gamma", "must lie in (0, 1)"));
            }
            if raw.method.clip.eta_c <= 0.0 {
                return Err(err("method.clip.eta_c", "must be positive"));
            }
            if raw.method.clip.sigma_b < 0.0 {
                return Err(err("method.clip.sigma_b", "must be >= 0"));
            }
            if raw.method.clip.noised_correction && raw.method.clip.sigma_b <= raw.privacy.z / 2.0 {
                return Err(err(
                    "method.clip.sigma_b",
                    "noised_correction needs sigma_b > z / 2",
                ));
            }
            ClipConfig::Adaptive {
                c0: raw.method.clip.c,
                eta_c: raw.method.clip.eta_c,
                gamma: raw.method.clip.gamma,
                sigma_b: raw.method.clip.sigma_b,
                noised_correction: raw.method.clip.noised_correction,
            }
        }
        other => {
            return Err(err(
                "method.clip.mode",
                format!("unknown mode `{other}` (expected none, fixed, fixed_frac or adaptive)"),
            ))
        }
    };
    let ratio_base = match raw.method.ratio_base.as_str() {
        "clients" => RatioBase::Clients,
        "participants" => RatioBase::Participants,
        other => {
            return Err(err(
                "method.ratio_base",
                format!("unknown base `{other}` (expected clients or participants)"),
            ))
        }
    };
    let split = if raw.method.adaptive_intermediary {
        SplitStrategy::Adaptive { base: ratio_base }
    } else {
        if raw.method.fixed_v == 0 {
            return Err(err("method.fixed_v", "must be >= 1"));
        }
        SplitStrategy::Fixed {
            v: raw.method.fixed_v,
        }
    };

    // training
    if raw.training.eta <= 0.0 || !raw.training.eta.is_finite() {
        return Err(err("training.eta", "must be positive"));
    }
    if raw.training.weight_decay < 0.0 {
        return Err(err("training.weight_decay", "must be >= 0"));
    }
    let batch = match &raw.training.batch_size {
        toml::Value::String(s) if s == "full" => BatchSpec::Full,
        toml::Value::Integer(k) if *k >= 1 => BatchSpec::Fixed(*k as usize),
        other => {
            return Err(err(
                "training.batch_size",
                format!("must be a positive integer or \"full\", got {other}"),
            ))
        }
    };
    let local = LocalConfig {
        eta: raw.training.eta,
        epochs: raw.training.epochs,
        batch,
        weight_decay: raw.training.weight_decay,
        dp: None,
    };

    if raw.run.seeds.is_empty() {
        return Err(err("run.seeds", "must list at least one seed"));
    }

    if let Some(sweep) = &raw.sweep {
        let known = ["z", "v", "n_clients", "rounds", "subsample"];
        if !known.contains(&sweep.axis.as_str()) {
            return Err(err(
                "sweep.axis",
                format!("unknown axis `{}` (expected one of {known:?})", sweep.axis),
            ));
        }
        if sweep.values.is_empty() {
            return Err(err("sweep.values", "must list at least one value"));
        }
    }

    let seeds = raw.run.seeds.clone();
    Ok(ValidatedConfig {
        raw,
        optimizer,
        clip,
        split,
        local,
        delta,
        seeds,
    })
}
