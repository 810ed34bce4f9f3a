//! Experiment configuration: one human-readable TOML file drives the
//! whole pipeline. Every section has defaults, so a config file only
//! states what it overrides. The resolved configuration is hashed and
//! the hash is embedded into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explain::{ExplainSettings, ExplainerId};
use crate::finetune::FinetuneConfig;
use crate::net::{LayerSpec, TrainConfig};
use crate::seeds::SeedPlan;
use crate::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `conv` or `mlp`.
    pub arch: String,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: "conv".to_string(),
            conv_channels: 16,
            conv_kernel: 3,
            hidden: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap; training stops earlier once the accuracy target is hit.
    pub epochs: usize,
    pub momentum: f64,
    /// Early-stop target on training accuracy (0 disables).
    pub target_train_accuracy: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.02,
            batch_size: 32,
            epochs: 40,
            momentum: 0.9,
            target_train_accuracy: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub roi_percentile: f64,
    pub surrogate: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    pub probe_explainers: Vec<String>,
    pub probe_max_samples: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            roi_percentile: 25.0,
            surrogate: "gradients".to_string(),
            epochs: 16,
            learning_rate: 0.02,
            batch_size: 32,
            momentum: 0.9,
            plateau_window: 3,
            plateau_rel_tol: 0.01,
            probe_explainers: vec!["gradients".to_string(), "deeplift".to_string()],
            probe_max_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Workload: components per explanation.
    pub k: usize,
    pub scenarios: Vec<String>,
    pub ig_steps: usize,
    pub lime_neighbors: usize,
    pub lime_kernel_factor: f64,
    pub ridge: f64,
    pub lemna_neighbors: usize,
    pub lemna_mixtures: usize,
    pub lemna_penalty: f64,
    pub lemna_max_iters: usize,
    pub lemna_tol: f64,
    pub shapley_exact_cap: usize,
    pub shapley_permutations: usize,
    pub neighbor_off_prob: f64,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let s = ExplainSettings::default();
        ExplainSection {
            k: 3,
            scenarios: vec![
                "black-box".to_string(),
                "low-cost".to_string(),
                "unlimited".to_string(),
            ],
            ig_steps: s.ig_steps,
            lime_neighbors: s.lime_neighbors,
            lime_kernel_factor: s.lime_kernel_factor,
            ridge: s.ridge,
            lemna_neighbors: s.lemna_neighbors,
            lemna_mixtures: s.lemna_mixtures,
            lemna_penalty: s.lemna_penalty,
            lemna_max_iters: s.lemna_max_iters,
            lemna_tol: s.lemna_tol,
            shapley_exact_cap: s.shapley_exact_cap,
            shapley_permutations: s.shapley_permutations,
            neighbor_off_prob: s.neighbor_off_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub k_grid: Vec<usize>,
    pub p_grid: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            k_grid: vec![1, 2, 3, 5, 8, 12, 16],
            p_grid: vec![5.0, 10.0, 20.0, 40.0, 60.0, 80.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub explain: ExplainSection,
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 42,
            out_dir: PathBuf::from("runs/default"),
            task: TaskSpec::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            explain: ExplainSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if !matches!(self.model.arch.as_str(), "conv" | "mlp") {
            return Err(Error::config(format!(
                "unknown model arch '{}' (expected conv or mlp)",
                self.model.arch
            )));
        }
        if self.model.arch == "conv"
            && (self.model.conv_channels == 0 || self.model.conv_kernel == 0)
        {
            return Err(Error::config("conv arch needs channels and kernel >= 1"));
        }
        if self.explain.k == 0 {
            return Err(Error::config("explain.k must be >= 1"));
        }
        for s in &self.explain.scenarios {
            crate::ensemble::Scenario::parse(s)?;
        }
        ExplainerId::parse(&self.finetune.surrogate)?;
        for p in &self.finetune.probe_explainers {
            ExplainerId::parse(p)?;
        }
        if self.metrics.k_grid.is_empty() || self.metrics.p_grid.is_empty() {
            return Err(Error::config("metric grids must not be empty"));
        }
        if self.metrics.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("metrics.k_grid must be strictly increasing"));
        }
        if self.metrics.p_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("metrics.p_grid must be strictly increasing"));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration (canonical TOML).
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serialization");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::from_master(self.master_seed)
    }

    /// Layer stack for the configured architecture over the task's
    /// `(max_rows, embedding_dim)` input.
    pub fn model_layers(&self) -> Vec<LayerSpec> {
        let m = self.task.max_rows;
        let n = self.task.embedding_dim;
        match self.model.arch.as_str() {
            "conv" => vec![
                LayerSpec::Conv1d {
                    in_channels: n,
                    out_channels: self.model.conv_channels,
                    kernel: self.model.conv_kernel,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::Dense {
                    input: self.model.conv_channels,
                    output: self.model.hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: self.model.hidden,
                    output: 1,
                },
                LayerSpec::SigmoidHead,
            ],
            "mlp" => vec![
                LayerSpec::Dense {
                    input: m * n,
                    output: self.model.hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: self.model.hidden,
                    output: 1,
                },
                LayerSpec::SigmoidHead,
            ],
            other => unreachable!("validated arch {other}"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            max_epochs: self.train.epochs,
            seed: self.seeds().train,
            momentum: self.train.momentum,
            target_train_accuracy: if self.train.target_train_accuracy > 0.0 {
                Some(self.train.target_train_accuracy)
            } else {
                None
            },
        }
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        Ok(FinetuneConfig {
            lambda: (
                self.finetune.lambda1,
                self.finetune.lambda2,
                self.finetune.lambda3,
            ),
            roi_percentile: self.finetune.roi_percentile,
            surrogate: ExplainerId::parse(&self.finetune.surrogate)?,
            epochs: self.finetune.epochs,
            learning_rate: self.finetune.learning_rate,
            batch_size: self.finetune.batch_size,
            momentum: self.finetune.momentum,
            seed: self.seeds().finetune,
            freeze: None,
            plateau_window: self.finetune.plateau_window,
            plateau_rel_tol: self.finetune.plateau_rel_tol,
            probe_explainers: self
                .finetune
                .probe_explainers
                .iter()
                .map(|s| ExplainerId::parse(s))
                .collect::<Result<_>>()?,
            probe_max_samples: self.finetune.probe_max_samples,
        })
    }

    pub fn explain_settings(&self) -> ExplainSettings {
        ExplainSettings {
            ig_steps: self.explain.ig_steps,
            lime_neighbors: self.explain.lime_neighbors,
            lime_kernel_factor: self.explain.lime_kernel_factor,
            ridge: self.explain.ridge,
            lemna_neighbors: self.explain.lemna_neighbors,
            lemna_mixtures: self.explain.lemna_mixtures,
            lemna_penalty: self.explain.lemna_penalty,
            lemna_max_iters: self.explain.lemna_max_iters,
            lemna_tol: self.explain.lemna_tol,
            shapley_exact_cap: self.explain.shapley_exact_cap,
            shapley_permutations: self.explain.shapley_permutations,
            neighbor_off_prob: self.explain.neighbor_off_prob,
        }
    }

    pub fn scenarios(&self) -> Result<Vec<crate::ensemble::Scenario>> {
        self.explain
            .scenarios
            .iter()
            .map(|s| crate::ensemble::Scenario::parse(s))
            .collect()
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
