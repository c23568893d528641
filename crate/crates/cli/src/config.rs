use std::path::{Path, PathBuf};

use dacesr::error::{Error, Result};
use dacesr::evalkit::Level;
use dacesr::ree::{FinetuneConfig, PretrainConfig};
use dacesr::rng::derive;
use dacesr::srnet::NetworkConfig;
use dacesr::training::{Stage, TrainConfig};
use serde::{Deserialize, Serialize};

/// The built-in procedural corpus used when no `data_dir` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 64,
            size: 144,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Number of sampled degradation chains.
    pub n_specs: usize,
    /// Clean images each chain is scored on.
    pub n_images: usize,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            n_specs: 1000,
            n_images: 30,
            tau1: 0.710,
            tau2: 0.297,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReeConfig {
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Clean crops per training image for the fine-tuning pairs.
    pub pair_crops_per_image: usize,
}

impl Default for ReeConfig {
    fn default() -> Self {
        Self {
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig {
                lr: 2e-3,
                ..FinetuneConfig::default()
            },
            pair_crops_per_image: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub levels: Vec<Level>,
    /// Degradation chains kept per level.
    pub per_level: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            levels: Level::ALL.to_vec(),
            per_level: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    /// Every sub-seed is derived from this one.
    pub seed: u64,
    /// Directory of HR PNGs; the built-in corpus when absent.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    /// Images before this index train; the rest are held out for eval.
    pub n_train: usize,
    pub scoring: ScoringConfig,
    pub ree: ReeConfig,
    pub network: NetworkConfig,
    pub train_psnr: TrainConfig,
    pub train_gan: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: None,
            out_dir: PathBuf::from("runs/desk"),
            corpus: CorpusConfig::default(),
            n_train: 48,
            scoring: ScoringConfig::default(),
            ree: ReeConfig::default(),
            network: NetworkConfig::default(),
            train_psnr: TrainConfig {
                batch_size: 4,
                ..TrainConfig::default()
            },
            train_gan: TrainConfig {
                batch_size: 4,
                iterations: 1000,
                lr: 1e-4,
                warmup: 0,
                stage: Stage::Gan,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl ProjectConfig {
    /// Seconds-scale settings that still exercise every stage.
    pub fn smoke(out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self {
            out_dir: out_dir.into(),
            corpus: CorpusConfig {
                seed: 3,
                count: 10,
                size: 144,
            },
            n_train: 8,
            scoring: ScoringConfig {
                n_specs: 24,
                n_images: 4,
                tau1: 0.8,
                tau2: 0.5,
            },
            eval: EvalConfig {
                levels: Level::ALL.to_vec(),
                per_level: 2,
            },
            network: NetworkConfig {
                n_rssb: 1,
                vimm_per_rssb: 1,
                channels: 8,
                state_size: 4,
                cond_dim: 8,
                ..NetworkConfig::default()
            },
            ..Self::default()
        };
        c.ree.pretrain.encoder.embed_dim = 8;
        c.ree.pretrain.crop_size = 32;
        c.ree.pretrain.crops_per_image = 8;
        c.ree.pretrain.epochs = 1;
        c.ree.finetune.iterations = 4;
        c.ree.finetune.rank = 2;
        for t in [&mut c.train_psnr, &mut c.train_gan] {
            t.patch_size = 32;
            t.batch_size = 2;
            t.iterations = 3;
            t.warmup = 0;
        }
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Overwrites every per-component seed with one derived from `seed`,
    /// and forces the stage tags of the two training configs.
    pub fn resolve_seeds(&mut self) {
        let s = self.seed;
        self.ree.pretrain.seed = derive(s, "ree-pretrain", 0);
        self.ree.finetune.seed = derive(s, "ree-finetune", 0);
        self.train_psnr.seed = derive(s, "train-psnr", 0);
        self.train_gan.seed = derive(s, "train-gan", 0);
        self.train_psnr.stage = Stage::Psnr;
        self.train_gan.stage = Stage::Gan;
    }

    pub fn validate(&self) -> Result<()> {
        let sc = &self.scoring;
        if !(0.0..=1.0).contains(&sc.tau2) || !(0.0..=1.0).contains(&sc.tau1) || sc.tau1 <= sc.tau2 {
            return Err(Error::Config(format!("thresholds need 0 <= tau2 < tau1 <= 1, got {} / {}", sc.tau1, sc.tau2)));
        }
        if sc.n_specs < 4 || sc.n_images == 0 {
            return Err(Error::Config("scoring needs at least 4 specs and 1 image".into()));
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!("data_dir {} does not exist", d.display())));
            }
        } else if self.corpus.count == 0 || self.corpus.size == 0 {
            return Err(Error::Config("corpus count and size must be positive".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        if self.ree.pretrain.encoder.embed_dim != self.network.cond_dim {
            return Err(Error::Config(format!(
                "encoder embed_dim {} differs from network cond_dim {}",
                self.ree.pretrain.encoder.embed_dim, self.network.cond_dim
            )));
        }
        if self.eval.levels.is_empty() || self.eval.per_level == 0 {
            return Err(Error::Config("eval needs at least one level and chain".into()));
        }
        self.network.validate()?;
        self.train_psnr.validate(self.network.scale)?;
        if self.train_gan.iterations > 0 {
            self.train_gan.validate(self.network.scale)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ProjectConfig::default();
        c.validate().unwrap();
        assert_eq!((c.scoring.tau1, c.scoring.tau2), (0.710, 0.297));
        let back: ProjectConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bundled_configs_match_the_builtins() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(ProjectConfig::load(&root.join("desk.json")).unwrap(), ProjectConfig::default());
        assert_eq!(ProjectConfig::load(&root.join("smoke.json")).unwrap(), ProjectConfig::smoke("runs/smoke"));
    }

    #[test]
    fn smoke_config_is_valid() {
        ProjectConfig::smoke("x").validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ProjectConfig = serde_json::from_str(r#"{"seed": 9, "scoring": {"n_specs": 40}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.scoring.n_specs, 40);
        assert_eq!(c.scoring.tau1, 0.710);
    }

    #[test]
    fn seeds_flow_from_the_project_seed() {
        let mut a = ProjectConfig { seed: 1, ..Default::default() };
        let mut b = ProjectConfig { seed: 2, ..Default::default() };
        a.resolve_seeds();
        b.resolve_seeds();
        assert_ne!(a.train_psnr.seed, b.train_psnr.seed);
        assert_ne!(a.train_psnr.seed, a.train_gan.seed);
        assert_eq!(a.train_gan.stage, Stage::Gan);
    }

    #[test]
    fn bad_thresholds_and_paths_are_rejected() {
        let mut c = ProjectConfig::default();
        c.scoring.tau1 = 0.2;
        assert!(c.validate().is_err());
        let c = ProjectConfig {
            data_dir: Some("/definitely/not/here".into()),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
