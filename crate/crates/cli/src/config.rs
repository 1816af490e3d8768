//! Experiment configuration: a flat TOML document whose every field has a
//! default, so an empty file (or no file) reproduces the standard
//! hyper-parameters: task-level rate 1e-4, meta rate 1e-2, fine-tune rate
//! 1e-5, rate decay ×0.8 every 5 epochs, 100 epochs, weight decay 1e-5,
//! k=5 tasks per batch, S=6 adaptation steps, P=15 fine-tune steps,
//! Adam μ1=0.9 μ2=0.99 ε=1e-8.

use std::path::Path;

use miqa_core::meta::{MetaConfig, OptHyper, PooledConfig};
use miqa_core::model::{BackboneSpec, ConvSpec};
use miqa_core::optim::{AdamHyper, Schedule};
use miqa_core::taskgen::TaskGenConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Lodo,
    RandomSplit,
    Ablation,
    Sweep,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Lodo => "lodo",
            Protocol::RandomSplit => "random-split",
            Protocol::Ablation => "ablation",
            Protocol::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub input_channels: usize,
    pub input_hw: usize,
    /// One (out_channels, kernel, stride) triple per conv layer.
    pub convs: Vec<[usize; 3]>,
    pub hidden: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let spec = BackboneSpec::default();
        Self {
            input_channels: spec.input_channels,
            input_hw: spec.input_hw,
            convs: spec
                .convs
                .iter()
                .map(|c| [c.out_channels, c.kernel, c.stride])
                .collect(),
            hidden: spec.hidden,
        }
    }
}

impl BackboneSection {
    pub fn to_spec(&self) -> BackboneSpec {
        BackboneSpec {
            input_channels: self.input_channels,
            input_hw: self.input_hw,
            convs: self
                .convs
                .iter()
                .map(|&[out_channels, kernel, stride]| ConvSpec { out_channels, kernel, stride })
                .collect(),
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub tasks_per_batch: usize,
    pub adapt_steps: usize,
    pub task_rate: f64,
    pub meta_rate: f64,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub epsilon: f64,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            tasks_per_batch: 5,
            adapt_steps: 6,
            task_rate: 1e-4,
            meta_rate: 1e-2,
            epochs: 100,
            decay_factor: 0.8,
            decay_every: 5,
            weight_decay: 1e-5,
            mu1: 0.9,
            mu2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl MetaSection {
    pub fn opt_hyper(&self) -> OptHyper<f32> {
        OptHyper {
            adam: AdamHyper {
                mu1: self.mu1 as f32,
                mu2: self.mu2 as f32,
                epsilon: self.epsilon as f32,
            },
            weight_decay: self.weight_decay as f32,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { factor: self.decay_factor, every: self.decay_every }
    }

    pub fn to_meta_config(&self, seed: u64) -> MetaConfig<f32> {
        MetaConfig {
            tasks_per_batch: self.tasks_per_batch,
            inner_steps: self.adapt_steps,
            query_steps: self.adapt_steps,
            inner_rate: self.task_rate as f32,
            outer_rate: self.meta_rate as f32,
            epochs: self.epochs,
            opt: self.opt_hyper(),
            schedule: self.schedule(),
            seed,
        }
    }

    /// The conventional (single-level) training arm: plain Adam over the
    /// pooled images at the task-level rate, same schedule, same epochs.
    pub fn to_pooled_config(&self, seed: u64) -> PooledConfig<f32> {
        PooledConfig {
            batch_size: 16,
            rate: self.task_rate as f32,
            epochs: self.epochs,
            opt: self.opt_hyper(),
            schedule: self.schedule(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub steps: usize,
    pub rate: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { steps: 15, rate: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskgenSection {
    /// Empty list means all eight built-in families.
    pub families: Vec<String>,
    pub bases_per_family: usize,
    /// Number of severity levels per family; 0 keeps each family's full
    /// default grid.
    pub severity_levels: usize,
    pub resolution: [usize; 2],
    pub tau: f64,
    pub support_fraction: f64,
    pub target_train_fraction: f64,
}

impl Default for TaskgenSection {
    fn default() -> Self {
        let tg = TaskGenConfig::default();
        Self {
            families: Vec::new(),
            bases_per_family: tg.bases_per_family,
            severity_levels: 0,
            resolution: [tg.resolution.0, tg.resolution.1],
            tau: tg.tau,
            support_fraction: tg.support_fraction,
            target_train_fraction: tg.target_train_fraction,
        }
    }
}

impl TaskgenSection {
    pub fn to_taskgen_config(&self, seed: u64) -> Result<TaskGenConfig> {
        let mut cfg = TaskGenConfig::default();
        if !self.families.is_empty() {
            let all = miqa_core::taskgen::default_families();
            cfg.families = self
                .families
                .iter()
                .map(|name| {
                    all.iter()
                        .find(|f| f.kind.name() == name)
                        .cloned()
                        .ok_or_else(|| CliError::Config(format!("unknown family `{name}`")))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        if self.severity_levels > 0 {
            cfg.families = cfg
                .families
                .iter()
                .map(|f| f.truncated(self.severity_levels))
                .collect::<miqa_core::Result<Vec<_>>>()?;
        }
        cfg.bases_per_family = self.bases_per_family;
        cfg.resolution = (self.resolution[0], self.resolution[1]);
        cfg.tau = self.tau;
        cfg.support_fraction = self.support_fraction;
        cfg.target_train_fraction = self.target_train_fraction;
        cfg.seed = seed;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Fill the wall_ms column. Off by default: timing values change
    /// between runs, and deterministic output is the default posture.
    pub record_timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::Lodo,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: "out".into(),
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub k_values: Vec<usize>,
    pub s_values: Vec<usize>,
    /// Family held out while sweeping.
    pub held_out: String,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k_values: vec![2, 3, 5, 7],
            s_values: vec![1, 3, 6, 9],
            held_out: "gaussian-blur".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub backbone: BackboneSection,
    pub meta: MetaSection,
    pub finetune: FinetuneSection,
    pub taskgen: TaskgenSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(what.to_string()))
            }
        };
        check(self.meta.tasks_per_batch > 1, "meta.tasks_per_batch must exceed 1")?;
        check(self.meta.adapt_steps >= 1, "meta.adapt_steps must be >= 1")?;
        check(
            self.meta.task_rate > 0.0 && self.meta.meta_rate > 0.0,
            "meta rates must be positive",
        )?;
        check(self.meta.epochs >= 1, "meta.epochs must be >= 1")?;
        check(
            0.0 < self.meta.decay_factor && self.meta.decay_factor <= 1.0,
            "meta.decay_factor must lie in (0, 1]",
        )?;
        check(self.meta.decay_every >= 1, "meta.decay_every must be >= 1")?;
        check(self.finetune.steps >= 1, "finetune.steps must be >= 1")?;
        check(self.finetune.rate > 0.0, "finetune.rate must be positive")?;
        check(!self.run.seeds.is_empty(), "run.seeds must not be empty")?;
        check(
            self.taskgen.support_fraction > 0.0 && self.taskgen.support_fraction < 1.0,
            "taskgen.support_fraction must lie in (0, 1)",
        )?;
        check(
            self.taskgen.target_train_fraction > 0.0 && self.taskgen.target_train_fraction < 1.0,
            "taskgen.target_train_fraction must lie in (0, 1)",
        )?;
        self.backbone.to_spec().validate().map_err(CliError::from)?;
        Ok(())
    }

    /// SHA-256 over the canonical serialized form; two configs hash equal
    /// iff every effective setting is equal.
    pub fn hash(&self) -> [u8; 32] {
        let text = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_standard_hyperparameters() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.meta.task_rate, 1e-4);
        assert_eq!(cfg.meta.meta_rate, 1e-2);
        assert_eq!(cfg.finetune.rate, 1e-5);
        assert_eq!(cfg.meta.decay_factor, 0.8);
        assert_eq!(cfg.meta.decay_every, 5);
        assert_eq!(cfg.meta.epochs, 100);
        assert_eq!(cfg.meta.weight_decay, 1e-5);
        assert_eq!(cfg.meta.tasks_per_batch, 5);
        assert_eq!(cfg.meta.mu1, 0.9);
        assert_eq!(cfg.meta.mu2, 0.99);
        assert_eq!(cfg.meta.adapt_steps, 6);
        assert_eq!(cfg.finetune.steps, 15);
        assert_eq!(cfg.meta.epsilon, 1e-8);
        assert_eq!(cfg.run.seeds, vec![0, 1, 2, 3, 4]);
        assert!(!cfg.run.record_timing);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_are_rejected() {
        let cfg = ExperimentConfig::from_toml(
            "[meta]\ntask_rate = 0.001\n\n[run]\nprotocol = \"ablation\"\nseeds = [7]\n",
        )
        .unwrap();
        assert_eq!(cfg.meta.task_rate, 1e-3);
        assert_eq!(cfg.run.protocol, Protocol::Ablation);
        assert_eq!(cfg.run.seeds, vec![7]);
        assert!(ExperimentConfig::from_toml("[meta]\nlearning_rate = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[meta]\ntask_rate = -1.0\n").is_err());
    }

    #[test]
    fn hash_tracks_every_effective_setting() {
        let a = ExperimentConfig::from_toml("").unwrap();
        let b = ExperimentConfig::from_toml("[finetune]\nsteps = 15\n").unwrap();
        assert_eq!(a.hash(), b.hash(), "explicit default hashes like an omission");
        let c = ExperimentConfig::from_toml("[finetune]\nsteps = 16\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn family_subset_and_severity_truncation_flow_through() {
        let cfg = ExperimentConfig::from_toml(
            "[taskgen]\nfamilies = [\"gaussian-noise\", \"jitter\"]\nseverity_levels = 3\n",
        )
        .unwrap();
        let tg = cfg.taskgen.to_taskgen_config(0).unwrap();
        assert_eq!(tg.families.len(), 2);
        assert!(tg.families.iter().all(|f| f.levels.len() == 3));
        let bad = ExperimentConfig::from_toml("[taskgen]\nfamilies = [\"sepia\"]\n").unwrap();
        assert!(bad.taskgen.to_taskgen_config(0).is_err());
    }
}
