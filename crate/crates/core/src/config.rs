//! Experiment configuration: a line-oriented `key = value` file plus
//! programmatic overrides. Unknown keys are errors, `#` starts a comment,
//! lists are comma-separated. Every key is documented in the README.

use crate::attack::{AttackConfig, AttackMethod};
use crate::bayes::{HmcConfig, ViConfig};
use crate::error::{Error, Result};
use crate::lrp::{Ranking, Stabilizer};
use crate::nn::SgdConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    SyntheticManifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceKind {
    Deterministic,
    Vi,
    Hmc,
}

/// Which class seeds the heatmaps of a clean/adversarial pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedClassRule {
    /// The model's prediction on the original input (default).
    OriginalPrediction,
    /// Each input's own predicted class.
    OwnPrediction,
    /// The dataset label.
    TrueLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackLabel {
    /// Attack the model's own prediction on the clean input (default).
    Predicted,
    /// Attack the dataset label.
    TrueLabel,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Directory holding the standard IDX filenames.
    pub data_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub has_bias: bool,
    pub sgd: SgdConfig,
    pub attack: AttackConfig,
    pub attack_label: AttackLabel,
    pub lrp_epsilon: f64,
    pub stabilizer: Stabilizer,
    pub ranking: Ranking,
    pub seed_rule: SeedClassRule,
    pub inference: InferenceKind,
    pub prior_std: f64,
    pub vi: ViConfig,
    pub hmc: HmcConfig,
    /// Training-subset size for the HMC potential.
    pub hmc_subset: usize,
    pub hmc_warm_start: bool,
    pub sample_counts: Vec<usize>,
    pub kgrid: Vec<usize>,
    /// Learnable-layer indices to seed LRP from (the last is class-seeded,
    /// inner ones all-unit-seeded).
    pub layers: Vec<usize>,
    /// Ambient dimension of the synthetic manifold task.
    pub manifold_dim: usize,
    /// Evaluation grid size for the geometry statistic.
    pub geometry_points: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_size: 5000,
            test_size: 500,
            hidden_sizes: vec![128, 128],
            has_bias: true,
            sgd: SgdConfig::default(),
            attack: AttackConfig::fgsm(0.25),
            attack_label: AttackLabel::Predicted,
            lrp_epsilon: 0.1,
            stabilizer: Stabilizer::SignMatched,
            ranking: Ranking::SignedDescending,
            seed_rule: SeedClassRule::OriginalPrediction,
            inference: InferenceKind::Hmc,
            prior_std: 1.0,
            vi: ViConfig::default(),
            hmc: HmcConfig::default(),
            hmc_subset: 2000,
            hmc_warm_start: true,
            sample_counts: vec![10, 50, 100],
            kgrid: vec![10, 30, 100],
            layers: vec![0, 1, 2],
            manifold_dim: 10,
            geometry_points: 64,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse {key} = {value:?} as bool"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse(key, s.trim()))
        .collect::<Result<Vec<usize>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config(format!("{key} must be a nonempty list")))
            } else {
                Ok(v)
            }
        })
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = match value {
                    "mnist" => DatasetKind::Mnist,
                    "fashion-mnist" => DatasetKind::FashionMnist,
                    "synthetic-manifold" => DatasetKind::SyntheticManifold,
                    _ => return Err(Error::Config(format!("unknown dataset {value:?}"))),
                }
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "train_images" => self.train_images = Some(PathBuf::from(value)),
            "train_labels" => self.train_labels = Some(PathBuf::from(value)),
            "test_images" => self.test_images = Some(PathBuf::from(value)),
            "test_labels" => self.test_labels = Some(PathBuf::from(value)),
            "train_size" => self.train_size = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "hidden_sizes" => self.hidden_sizes = parse_list(key, value)?,
            "has_bias" => self.has_bias = parse_bool(key, value)?,
            "sgd.learning_rate" => self.sgd.learning_rate = parse(key, value)?,
            "sgd.epochs" => self.sgd.epochs = parse(key, value)?,
            "sgd.batch_size" => self.sgd.batch_size = parse(key, value)?,
            "attack.method" => {
                self.attack.method = match value {
                    "fgsm" => AttackMethod::Fgsm,
                    "pgd" => AttackMethod::Pgd,
                    _ => return Err(Error::Config(format!("unknown attack method {value:?}"))),
                }
            }
            "attack.delta" => self.attack.delta = parse(key, value)?,
            "attack.eps" => self.attack.eps = parse(key, value)?,
            "attack.alpha" => self.attack.alpha = parse(key, value)?,
            "attack.steps" => self.attack.steps = parse(key, value)?,
            "attack.random_init" => self.attack.random_init = parse_bool(key, value)?,
            "attack.clip_min" => self.attack.clip.0 = parse(key, value)?,
            "attack.clip_max" => self.attack.clip.1 = parse(key, value)?,
            "attack.label" => {
                self.attack_label = match value {
                    "predicted" => AttackLabel::Predicted,
                    "true" => AttackLabel::TrueLabel,
                    _ => return Err(Error::Config(format!("unknown attack label {value:?}"))),
                }
            }
            "lrp.epsilon" => self.lrp_epsilon = parse(key, value)?,
            "lrp.stabilizer" => {
                self.stabilizer = match value {
                    "literal" => Stabilizer::Literal,
                    "sign-matched" => Stabilizer::SignMatched,
                    _ => return Err(Error::Config(format!("unknown stabilizer {value:?}"))),
                }
            }
            "lrp.ranking" => {
                self.ranking = match value {
                    "signed" => Ranking::SignedDescending,
                    "absolute" => Ranking::AbsoluteDescending,
                    _ => return Err(Error::Config(format!("unknown ranking {value:?}"))),
                }
            }
            "lrp.seed_rule" => {
                self.seed_rule = match value {
                    "original-pred" => SeedClassRule::OriginalPrediction,
                    "own-pred" => SeedClassRule::OwnPrediction,
                    "true-label" => SeedClassRule::TrueLabel,
                    _ => return Err(Error::Config(format!("unknown seed rule {value:?}"))),
                }
            }
            "inference" => {
                self.inference = match value {
                    "deterministic" => InferenceKind::Deterministic,
                    "vi" => InferenceKind::Vi,
                    "hmc" => InferenceKind::Hmc,
                    _ => return Err(Error::Config(format!("unknown inference {value:?}"))),
                }
            }
            "prior.std" => self.prior_std = parse(key, value)?,
            "vi.steps" => self.vi.steps = parse(key, value)?,
            "vi.learning_rate" => self.vi.learning_rate = parse(key, value)?,
            "vi.mc_samples" => self.vi.mc_samples = parse(key, value)?,
            "vi.batch_size" => self.vi.batch_size = parse(key, value)?,
            "vi.init_std" => self.vi.init_std = parse(key, value)?,
            "hmc.step_size" => self.hmc.step_size = parse(key, value)?,
            "hmc.leapfrog_steps" => self.hmc.leapfrog_steps = parse(key, value)?,
            "hmc.draws" => self.hmc.draws = parse(key, value)?,
            "hmc.burn_in" => self.hmc.burn_in = parse(key, value)?,
            "hmc.thinning" => self.hmc.thinning = parse(key, value)?,
            "hmc.subset_size" => self.hmc_subset = parse(key, value)?,
            "hmc.warm_start" => self.hmc_warm_start = parse_bool(key, value)?,
            "sample_counts" => self.sample_counts = parse_list(key, value)?,
            "kgrid" => self.kgrid = parse_list(key, value)?,
            "layers" => self.layers = parse_list(key, value)?,
            "manifold.ambient_dim" => self.manifold_dim = parse(key, value)?,
            "geometry.points" => self.geometry_points = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train_size and test_size must be positive".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("hidden_sizes must be nonempty".into()));
        }
        self.attack.validate()?;
        if self.lrp_epsilon < 0.0 {
            return Err(Error::Config("lrp.epsilon must be >= 0".into()));
        }
        if self.sample_counts.is_empty() || self.kgrid.is_empty() || self.layers.is_empty() {
            return Err(Error::Config("sample_counts, kgrid and layers must be nonempty".into()));
        }
        let layer_count = self.hidden_sizes.len() + 1;
        if let Some(&bad) = self.layers.iter().find(|&&l| l >= layer_count) {
            return Err(Error::Config(format!(
                "layer index {bad} out of range for {layer_count} learnable layers"
            )));
        }
        Ok(())
    }

    /// Image/label paths for the train and test splits, from explicit
    /// keys or `data_dir` with the standard filenames.
    pub fn idx_paths(&self) -> Result<(PathBuf, PathBuf, PathBuf, PathBuf)> {
        let join = |name: &str| self.data_dir.as_ref().map(|d| d.join(name));
        let ti = self.train_images.clone().or_else(|| join("train-images-idx3-ubyte"));
        let tl = self.train_labels.clone().or_else(|| join("train-labels-idx1-ubyte"));
        let vi = self.test_images.clone().or_else(|| join("t10k-images-idx3-ubyte"));
        let vl = self.test_labels.clone().or_else(|| join("t10k-labels-idx1-ubyte"));
        match (ti, tl, vi, vl) {
            (Some(a), Some(b), Some(c), Some(d)) => Ok((a, b, c, d)),
            _ => Err(Error::Config(
                "dataset paths missing: set data_dir or the four train/test image/label keys".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_with_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(
            &path,
            "# desk-scale run\n\
             dataset = mnist\n\
             train_size = 500   # small\n\
             attack.method = pgd\n\
             attack.eps = 0.25\n\
             attack.alpha = 0.05\n\
             sample_counts = 10, 50,100\n\
             lrp.stabilizer = literal\n\
             seed = 7\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.train_size, 500);
        assert_eq!(cfg.attack.method, AttackMethod::Pgd);
        assert_eq!(cfg.sample_counts, vec![10, 50, 100]);
        assert_eq!(cfg.stabilizer, Stabilizer::Literal);
        assert_eq!(cfg.seed, 7);
        // Defaults survive for everything unset.
        assert_eq!(cfg.test_size, 500);
        assert_eq!(cfg.kgrid, vec![10, 30, 100]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "train_size = 10\nnot_a_key = 3\n").unwrap();
        match ExperimentConfig::from_file(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn layer_indices_are_validated() {
        let mut cfg = ExperimentConfig::default();
        cfg.layers = vec![0, 5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn idx_paths_from_data_dir() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.idx_paths().is_err());
        cfg.data_dir = Some(PathBuf::from("/data/mnist"));
        let (a, _, c, _) = cfg.idx_paths().unwrap();
        assert!(a.ends_with("train-images-idx3-ubyte"));
        assert!(c.ends_with("t10k-images-idx3-ubyte"));
    }
}
