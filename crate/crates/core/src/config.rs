//! Pipeline configuration: JSON file format, validation, and the derived
//! architecture profile.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{BlurKind, DegradationSpace, Order};
use crate::error::{Error, Result};
use crate::evaluation::{Fig1aConfig, SrTrainCfg};
use crate::extractors::{Profile, ProfileKind};
use crate::generation::GenerateCfg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsCfg {
    /// Directory of HR training PNGs.
    pub hr_train: PathBuf,
    /// Directory of real (or stand-in) LR PNGs at the working resolution.
    pub lr_real: PathBuf,
    /// Output directory: checkpoints, logs, datasets, reports.
    pub out: PathBuf,
}

/// Architecture dimensions; merged with the profile kind into a [`Profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCfg {
    pub scale: usize,
    pub lr_size: usize,
    pub content_channels: usize,
    pub cond_channels: usize,
    pub deg_dim: usize,
    pub deg_blocks: usize,
    pub deg_stem_channels: usize,
    pub eps_channels: usize,
    pub time_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCfg {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// How the two degradation-extractor objectives combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegObjective {
    /// `L_cl + rl_weight * L_rl` every step.
    Sum,
    /// Alternate between the two losses on odd/even steps.
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCfg {
    pub seed: u64,
    pub batch: usize,
    pub content_steps: u64,
    pub degradation_steps: u64,
    pub ddpm_steps: u64,
    pub content_lr: f64,
    pub degradation_lr: f64,
    pub ddpm_lr: f64,
    pub finetune_lr: f64,
    /// Triplets per anchor in the contrastive batch.
    pub n_triplets: usize,
    pub margin: f64,
    pub deg_objective: DegObjective,
    pub rl_weight: f64,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentsCfg {
    /// Partial-noising caps swept by `ablate T`.
    pub t_sweep: Vec<usize>,
    /// Triplet-count sweep for `ablate n-margin` (margin held at default).
    pub n_sweep: Vec<usize>,
    /// Margin sweep (n held at default).
    pub margin_sweep: Vec<f64>,
    /// Reduced budgets for per-grid-point retraining.
    pub ablate_degradation_steps: u64,
    pub ablate_ddpm_steps: u64,
    /// Test pairs held out of a generated dataset during `eval`/`ablate`.
    pub eval_holdout: usize,
    /// HR images from the tail of hr_train held out as the trend test set.
    pub fig1a_test_images: usize,
    pub fig1a: Fig1aConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: ProfileKind,
    pub paths: PathsCfg,
    pub degradation: DegradationSpace,
    pub model: ModelCfg,
    pub schedule: ScheduleCfg,
    pub training: TrainingCfg,
    pub generation: GenerateCfg,
    pub sr: SrTrainCfg,
    pub experiments: ExperimentsCfg,
}

impl PipelineConfig {
    /// Toy defaults. Paper-stated values are kept where the paper states
    /// them: T_max 500, n 3, margin 0.01, k 3, lr 1e-4, fine-tune lr 1e-6;
    /// batch is 8 at toy scale (64 at paper scale).
    pub fn toy_defaults(root: &Path) -> Self {
        let profile = Profile::toy();
        PipelineConfig {
            profile: ProfileKind::Toy,
            paths: PathsCfg {
                hr_train: root.join("data/hr"),
                lr_real: root.join("data/lr_real"),
                out: root.join("out"),
            },
            degradation: DegradationSpace {
                blur_kinds: vec![BlurKind::IsotropicGaussian, BlurKind::AnisotropicGaussian],
                blur_sigma: (0.2, 3.0),
                kernel_size: (7, 13),
                noise_sigma: (0.0, 0.1),
                scale_factor: profile.scale,
                compression_off_prob: 0.7,
                compression_quality: (30, 95),
                orders: vec![Order::First, Order::Second],
                noise_seed: None,
            },
            model: ModelCfg {
                scale: profile.scale,
                lr_size: profile.lr_size,
                content_channels: profile.content_channels,
                cond_channels: profile.cond_channels,
                deg_dim: profile.deg_dim,
                deg_blocks: profile.deg_blocks,
                deg_stem_channels: profile.deg_stem_channels,
                eps_channels: profile.eps_channels,
                time_dim: profile.time_dim,
            },
            schedule: ScheduleCfg {
                t_max: 500,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            training: TrainingCfg {
                seed: 0,
                batch: 8,
                content_steps: 1500,
                degradation_steps: 1200,
                ddpm_steps: 3000,
                content_lr: 1e-4,
                degradation_lr: 1e-4,
                ddpm_lr: 1e-4,
                finetune_lr: 1e-6,
                n_triplets: 3,
                margin: 0.01,
                deg_objective: DegObjective::Sum,
                rl_weight: 1.0,
                checkpoint_every: 100,
            },
            generation: GenerateCfg::default(),
            sr: SrTrainCfg::default(),
            experiments: ExperimentsCfg {
                t_sweep: vec![200, 300, 400, 500],
                n_sweep: vec![1, 3, 5],
                margin_sweep: vec![0.001, 0.01, 0.1],
                ablate_degradation_steps: 200,
                ablate_ddpm_steps: 300,
                eval_holdout: 8,
                fig1a_test_images: 12,
                fig1a: crate::evaluation::Fig1aConfig {
                    target: crate::degrade::DegradationParams {
                        blur_kind: BlurKind::IsotropicGaussian,
                        blur_sigma: 1.0,
                        kernel_size: 9,
                        noise_sigma: 0.02,
                        scale_factor: profile.scale,
                        compression: crate::degrade::Compression::Off,
                        order: Order::First,
                        noise_seed: 0,
                    },
                    distributions: vec![
                        crate::evaluation::TrendDistribution {
                            name: "matched".into(),
                            role: crate::evaluation::DistRole::Matched,
                            space: DegradationSpace {
                                blur_kinds: vec![BlurKind::IsotropicGaussian],
                                blur_sigma: (0.8, 1.2),
                                kernel_size: (9, 9),
                                noise_sigma: (0.0, 0.04),
                                scale_factor: profile.scale,
                                compression_off_prob: 1.0,
                                compression_quality: (50, 95),
                                orders: vec![Order::First],
                                noise_seed: None,
                            },
                        },
                        crate::evaluation::TrendDistribution {
                            name: "mismatched".into(),
                            role: crate::evaluation::DistRole::Mismatched,
                            space: DegradationSpace {
                                blur_kinds: vec![BlurKind::IsotropicGaussian],
                                blur_sigma: (2.5, 3.0),
                                kernel_size: (9, 9),
                                noise_sigma: (0.06, 0.1),
                                scale_factor: profile.scale,
                                compression_off_prob: 1.0,
                                compression_quality: (50, 95),
                                orders: vec![Order::First],
                                noise_seed: None,
                            },
                        },
                    ],
                    sr: SrTrainCfg::default(),
                    seed: 0,
                },
            },
        }
    }

    /// Derived architecture profile.
    pub fn profile(&self) -> Profile {
        Profile {
            kind: self.profile,
            scale: self.model.scale,
            lr_size: self.model.lr_size,
            content_channels: self.model.content_channels,
            cond_channels: self.model.cond_channels,
            deg_dim: self.model.deg_dim,
            deg_blocks: self.model.deg_blocks,
            deg_stem_channels: self.model.deg_stem_channels,
            eps_channels: self.model.eps_channels,
            time_dim: self.model.time_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile().validate()?;
        self.degradation.validate()?;
        if self.degradation.scale_factor != self.model.scale {
            return Err(Error::Config(format!(
                "degradation scale_factor {} must match model scale {}",
                self.degradation.scale_factor, self.model.scale
            )));
        }
        if self.schedule.t_max == 0 {
            return Err(Error::Config("schedule t_max must be >= 1".into()));
        }
        if !(self.schedule.beta_start > 0.0
            && self.schedule.beta_start < self.schedule.beta_end
            && self.schedule.beta_end < 1.0)
        {
            return Err(Error::Config(format!(
                "schedule betas must satisfy 0 < start < end < 1, got [{}, {}]",
                self.schedule.beta_start, self.schedule.beta_end
            )));
        }
        let t = &self.training;
        if t.batch == 0 || t.n_triplets == 0 {
            return Err(Error::Config("batch and n_triplets must be >= 1".into()));
        }
        for (name, lr) in [
            ("content_lr", t.content_lr),
            ("degradation_lr", t.degradation_lr),
            ("ddpm_lr", t.ddpm_lr),
            ("finetune_lr", t.finetune_lr),
            ("sr.lr", self.sr.lr),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if t.margin < 0.0 {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        if t.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        if self.generation.k_candidates == 0 {
            return Err(Error::Config("k_candidates must be >= 1".into()));
        }
        if self.generation.tau_cap > self.schedule.t_max {
            return Err(Error::Config(format!(
                "tau_cap {} exceeds t_max {}",
                self.generation.tau_cap, self.schedule.t_max
            )));
        }
        for cap in &self.experiments.t_sweep {
            if *cap > self.schedule.t_max {
                return Err(Error::Config(format!(
                    "t_sweep cap {cap} exceeds t_max {}",
                    self.schedule.t_max
                )));
            }
        }
        if self.paths.hr_train.as_os_str().is_empty()
            || self.paths.lr_real.as_os_str().is_empty()
            || self.paths.out.as_os_str().is_empty()
        {
            return Err(Error::Config("paths must be non-empty".into()));
        }
        Ok(())
    }

    /// Load from JSON, resolving relative paths against the config file's
    /// directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.paths.hr_train,
                &mut cfg.paths.lr_real,
                &mut cfg.paths.out,
            ] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Stable content hash of the serialized config.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::toy_defaults(dir.path());
        let path = dir.path().join("cfg.json");
        cfg.save(&path).unwrap();
        let loaded = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);
        assert_eq!(cfg.content_hash(), loaded.content_hash());
    }

    #[test]
    fn defaults_mirror_paper_values() {
        let cfg = PipelineConfig::toy_defaults(Path::new("/tmp"));
        assert_eq!(cfg.schedule.t_max, 500);
        assert_eq!(cfg.training.n_triplets, 3);
        assert!((cfg.training.margin - 0.01).abs() < 1e-12);
        assert_eq!(cfg.generation.k_candidates, 3);
        assert!((cfg.training.ddpm_lr - 1e-4).abs() < 1e-18);
        assert!((cfg.training.finetune_lr - 1e-6).abs() < 1e-20);
        assert_eq!(cfg.training.batch, 8);
        assert_eq!(cfg.experiments.t_sweep, vec![200, 300, 400, 500]);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::toy_defaults(dir.path());
        cfg.schedule.t_max = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::toy_defaults(dir.path());
        cfg.training.content_lr = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::toy_defaults(dir.path());
        cfg.generation.tau_cap = 501;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::toy_defaults(dir.path());
        cfg.degradation.scale_factor = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::toy_defaults(dir.path());
        cfg.paths.hr_train = PathBuf::from("data/hr");
        cfg.paths.lr_real = PathBuf::from("data/lr");
        cfg.paths.out = PathBuf::from("out");
        let path = dir.path().join("nested/cfg.json");
        cfg.save(&path).unwrap();
        let loaded = PipelineConfig::load(&path).unwrap();
        assert_eq!(loaded.paths.hr_train, dir.path().join("nested/data/hr"));
        assert_eq!(loaded.paths.out, dir.path().join("nested/out"));
    }
}
