//! Flat key=value run configuration with a typed schema.
//!
//! Values resolve with precedence: command-line `--set` overrides > config
//! file > built-in default. Unknown keys are rejected with their source
//! location, and `--help` prints the schema below.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use jioc::data::{Profile, ReplayPolicy, TaskStreamConfig};
use jioc::error::{Error, Result};
use jioc::nn::Activation;
use jioc::trainer::{LossVariant, SuppressNorm, TrainerConfig};

/// One schema row: key, value syntax, default and description.
pub struct SchemaEntry {
    pub key: &'static str,
    pub kind: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const SCHEMA: &[SchemaEntry] = &[
    SchemaEntry {
        key: "num_tasks",
        kind: "int",
        default: "5",
        help: "tasks in the stream",
    },
    SchemaEntry {
        key: "classes_per_task",
        kind: "int",
        default: "2",
        help: "classes added per task",
    },
    SchemaEntry {
        key: "samples_per_class",
        kind: "int",
        default: "500",
        help: "training samples of the largest class",
    },
    SchemaEntry {
        key: "imbalance_factor",
        kind: "float",
        default: "24",
        help: "largest/smallest class size ratio",
    },
    SchemaEntry {
        key: "profile",
        kind: "balanced|long_tail",
        default: "long_tail",
        help: "per-class count profile",
    },
    SchemaEntry {
        key: "feature_dim",
        kind: "int",
        default: "5",
        help: "input feature width",
    },
    SchemaEntry {
        key: "cluster_separation",
        kind: "float",
        default: "2.2",
        help: "distance between class cluster means",
    },
    SchemaEntry {
        key: "cluster_std",
        kind: "float",
        default: "1",
        help: "per-class Gaussian spread",
    },
    SchemaEntry {
        key: "eval_per_class",
        kind: "int",
        default: "100",
        help: "balanced held-out samples per class",
    },
    SchemaEntry {
        key: "data_seed",
        kind: "int",
        default: "7",
        help: "seed of the synthetic data generator",
    },
    SchemaEntry {
        key: "train_data",
        kind: "path",
        default: "",
        help: "record file to load instead of generating",
    },
    SchemaEntry {
        key: "eval_data",
        kind: "path",
        default: "",
        help: "held-out record file (with train_data)",
    },
    SchemaEntry {
        key: "idx_train_images",
        kind: "path",
        default: "",
        help: "IDX image file for training",
    },
    SchemaEntry {
        key: "idx_train_labels",
        kind: "path",
        default: "",
        help: "IDX label file for training",
    },
    SchemaEntry {
        key: "idx_eval_images",
        kind: "path",
        default: "",
        help: "IDX image file for evaluation",
    },
    SchemaEntry {
        key: "idx_eval_labels",
        kind: "path",
        default: "",
        help: "IDX label file for evaluation",
    },
    SchemaEntry {
        key: "idx_num_classes",
        kind: "int",
        default: "10",
        help: "raw label count in the IDX files",
    },
    SchemaEntry {
        key: "hidden_layers",
        kind: "int list",
        default: "64,64",
        help: "hidden layer widths of the MLP",
    },
    SchemaEntry {
        key: "activation",
        kind: "relu|identity",
        default: "relu",
        help: "hidden layer activation",
    },
    SchemaEntry {
        key: "memory_capacity",
        kind: "int",
        default: "100",
        help: "replay memory exemplar budget",
    },
    SchemaEntry {
        key: "replay_policy",
        kind: "random_balanced|herding",
        default: "herding",
        help: "exemplar selection policy",
    },
    SchemaEntry {
        key: "epochs_per_task",
        kind: "int",
        default: "20",
        help: "SGD epochs per task",
    },
    SchemaEntry {
        key: "batch_size",
        kind: "int",
        default: "128",
        help: "SGD minibatch size",
    },
    SchemaEntry {
        key: "lr_initial",
        kind: "float",
        default: "0.4",
        help: "initial learning rate",
    },
    SchemaEntry {
        key: "lr_milestones",
        kind: "int list",
        default: "",
        help: "1-based epochs at which the rate decays",
    },
    SchemaEntry {
        key: "lr_decay",
        kind: "float",
        default: "0.1",
        help: "multiplier applied at each milestone",
    },
    SchemaEntry {
        key: "gamma1",
        kind: "float",
        default: "1",
        help: "weight of the distillation term",
    },
    SchemaEntry {
        key: "gamma2",
        kind: "float",
        default: "1",
        help: "weight of the new-head suppression term",
    },
    SchemaEntry {
        key: "temperature",
        kind: "float",
        default: "2",
        help: "distillation softmax temperature",
    },
    SchemaEntry {
        key: "loss_variants",
        kind: "name list",
        default: "jioc",
        help: "ce_kd_baseline, ic_only, oc_only and/or jioc",
    },
    SchemaEntry {
        key: "suppress_norm",
        kind: "n_new|n_old_batch",
        default: "n_new",
        help: "suppression-term normalizer",
    },
    SchemaEntry {
        key: "seeds",
        kind: "int list",
        default: "0,1,2,3,4",
        help: "one full run per seed",
    },
    SchemaEntry {
        key: "out_dir",
        kind: "path",
        default: "runs",
        help: "root directory for run artifacts",
    },
    SchemaEntry {
        key: "resume",
        kind: "bool",
        default: "true",
        help: "continue from an existing checkpoint",
    },
];

/// Fully resolved configuration for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub imbalance_factor: f64,
    pub profile: Profile,
    pub feature_dim: usize,
    pub cluster_separation: f64,
    pub cluster_std: f64,
    pub eval_per_class: usize,
    pub data_seed: u64,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_eval_images: Option<PathBuf>,
    pub idx_eval_labels: Option<PathBuf>,
    pub idx_num_classes: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub memory_capacity: usize,
    pub replay_policy: ReplayPolicy,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub temperature: f64,
    pub loss_variants: Vec<LossVariant>,
    pub suppress_norm: SuppressNorm,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_class: 500,
            imbalance_factor: 24.0,
            profile: Profile::LongTail,
            feature_dim: 5,
            cluster_separation: 2.2,
            cluster_std: 1.0,
            eval_per_class: 100,
            data_seed: 7,
            train_data: None,
            eval_data: None,
            idx_train_images: None,
            idx_train_labels: None,
            idx_eval_images: None,
            idx_eval_labels: None,
            idx_num_classes: 10,
            hidden_layers: vec![64, 64],
            activation: Activation::Relu,
            memory_capacity: 100,
            replay_policy: ReplayPolicy::Herding,
            epochs_per_task: 20,
            batch_size: 128,
            lr_initial: 0.4,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            gamma1: 1.0,
            gamma2: 1.0,
            temperature: 2.0,
            loss_variants: vec![LossVariant::Jioc],
            suppress_norm: SuppressNorm::NNew,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            resume: true,
        }
    }
}

fn fail(location: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{location}: {message}"))
}

fn parse_usize(location: &str, key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| fail(location, format!("{key} expects an integer, got {value:?}")))
}

fn parse_u64(location: &str, key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| fail(location, format!("{key} expects an integer, got {value:?}")))
}

fn parse_f64(location: &str, key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            fail(
                location,
                format!("{key} expects a finite number, got {value:?}"),
            )
        })
}

fn parse_bool(location: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(fail(
            location,
            format!("{key} expects true or false, got {value:?}"),
        )),
    }
}

fn parse_list<T>(
    location: &str,
    key: &str,
    value: &str,
    item: impl Fn(&str, &str, &str) -> Result<T>,
) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| item(location, key, s.trim()))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment; `location` names the source for
    /// error messages (config file line or command-line flag).
    pub fn apply(&mut self, key: &str, value: &str, location: &str) -> Result<()> {
        match key {
            "num_tasks" => self.num_tasks = parse_usize(location, key, value)?,
            "classes_per_task" => self.classes_per_task = parse_usize(location, key, value)?,
            "samples_per_class" => self.samples_per_class = parse_usize(location, key, value)?,
            "imbalance_factor" => self.imbalance_factor = parse_f64(location, key, value)?,
            "profile" => self.profile = Profile::parse(value).map_err(|e| fail(location, e))?,
            "feature_dim" => self.feature_dim = parse_usize(location, key, value)?,
            "cluster_separation" => self.cluster_separation = parse_f64(location, key, value)?,
            "cluster_std" => self.cluster_std = parse_f64(location, key, value)?,
            "eval_per_class" => self.eval_per_class = parse_usize(location, key, value)?,
            "data_seed" => self.data_seed = parse_u64(location, key, value)?,
            "train_data" => self.train_data = parse_path(value),
            "eval_data" => self.eval_data = parse_path(value),
            "idx_train_images" => self.idx_train_images = parse_path(value),
            "idx_train_labels" => self.idx_train_labels = parse_path(value),
            "idx_eval_images" => self.idx_eval_images = parse_path(value),
            "idx_eval_labels" => self.idx_eval_labels = parse_path(value),
            "idx_num_classes" => self.idx_num_classes = parse_usize(location, key, value)?,
            "hidden_layers" => self.hidden_layers = parse_list(location, key, value, parse_usize)?,
            "activation" => {
                self.activation = Activation::parse(value).map_err(|e| fail(location, e))?
            }
            "memory_capacity" => self.memory_capacity = parse_usize(location, key, value)?,
            "replay_policy" => {
                self.replay_policy = ReplayPolicy::parse(value).map_err(|e| fail(location, e))?
            }
            "epochs_per_task" => self.epochs_per_task = parse_usize(location, key, value)?,
            "batch_size" => self.batch_size = parse_usize(location, key, value)?,
            "lr_initial" => self.lr_initial = parse_f64(location, key, value)?,
            "lr_milestones" => self.lr_milestones = parse_list(location, key, value, parse_usize)?,
            "lr_decay" => self.lr_decay = parse_f64(location, key, value)?,
            "gamma1" => self.gamma1 = parse_f64(location, key, value)?,
            "gamma2" => self.gamma2 = parse_f64(location, key, value)?,
            "temperature" => self.temperature = parse_f64(location, key, value)?,
            "loss_variants" => {
                self.loss_variants = parse_list(location, key, value, |loc, _, s| {
                    LossVariant::parse(s).map_err(|e| fail(loc, e))
                })?
            }
            "suppress_norm" => {
                self.suppress_norm = SuppressNorm::parse(value).map_err(|e| fail(location, e))?
            }
            "seeds" => self.seeds = parse_list(location, key, value, parse_u64)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "resume" => self.resume = parse_bool(location, key, value)?,
            other => {
                return Err(fail(location, format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parses a config file of `key = value` lines (# comments, blank lines),
    /// applying each assignment on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in content.lines().enumerate() {
            let location = format!("{} line {}", path.display(), idx + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(&location, format!("expected key = value, got {raw:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(fail(&location, format!("duplicate key {key:?}")));
            }
            self.apply(key, value, &location)?;
        }
        Ok(())
    }

    /// Applies one `--set key=value` override.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| fail("--set", format!("expected key=value, got {assignment:?}")))?;
        self.apply(key.trim(), value.trim(), "--set")
    }

    /// Cross-field validation beyond per-key parsing.
    pub fn validate(&self) -> Result<()> {
        self.stream_config().validate()?;
        self.trainer_config(self.seeds.first().copied().unwrap_or(0))
            .validate()?;
        if self.hidden_layers.is_empty() {
            return Err(Error::Config("hidden_layers must not be empty".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config(
                "hidden_layers entries must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let unique_seeds: std::collections::BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique_seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds repeats a value".into()));
        }
        if self.loss_variants.is_empty() {
            return Err(Error::Config(
                "loss_variants must list at least one variant".into(),
            ));
        }
        let unique: std::collections::BTreeSet<&str> =
            self.loss_variants.iter().map(|v| v.name()).collect();
        if unique.len() != self.loss_variants.len() {
            return Err(Error::Config("loss_variants repeats a variant".into()));
        }
        if self.eval_data.is_some() && self.train_data.is_none() {
            return Err(Error::Config("eval_data requires train_data".into()));
        }
        if self.idx_train_images.is_some() != self.idx_train_labels.is_some() {
            return Err(Error::Config(
                "idx_train_images and idx_train_labels must be set together".into(),
            ));
        }
        if self.idx_eval_images.is_some() != self.idx_eval_labels.is_some() {
            return Err(Error::Config(
                "idx_eval_images and idx_eval_labels must be set together".into(),
            ));
        }
        if self.idx_eval_images.is_some() && self.idx_train_images.is_none() {
            return Err(Error::Config(
                "IDX eval files require IDX train files".into(),
            ));
        }
        if self.idx_train_images.is_some() && self.train_data.is_some() {
            return Err(Error::Config(
                "train_data and idx_train_images are mutually exclusive".into(),
            ));
        }
        if self.idx_train_images.is_some()
            && !self.idx_num_classes.is_multiple_of(self.classes_per_task)
        {
            return Err(Error::Config(format!(
                "idx_num_classes {} is not divisible by classes_per_task {}",
                self.idx_num_classes, self.classes_per_task
            )));
        }
        Ok(())
    }

    pub fn stream_config(&self) -> TaskStreamConfig {
        TaskStreamConfig {
            num_tasks: self.num_tasks,
            classes_per_task: self.classes_per_task,
            samples_per_class: self.samples_per_class,
            imbalance_factor: self.imbalance_factor,
            profile: self.profile,
            seed: self.data_seed,
            feature_dim: self.feature_dim,
            cluster_separation: self.cluster_separation,
            cluster_std: self.cluster_std,
            eval_per_class: self.eval_per_class,
        }
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            epochs_per_task: self.epochs_per_task,
            batch_size: self.batch_size,
            lr_initial: self.lr_initial,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay: self.lr_decay,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            temperature: self.temperature,
            loss_variant: self.loss_variants[0],
            suppress_norm: self.suppress_norm,
            seed,
        }
    }
}

/// Schema table for `--help`: every key with its type, default and effect.
pub fn schema_help() -> String {
    let width = SCHEMA.iter().map(|e| e.key.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key = value file lines or --set key=value):\n");
    for entry in SCHEMA {
        let default = if entry.default.is_empty() {
            "unset".to_string()
        } else {
            entry.default.to_string()
        };
        writeln!(
            out,
            "  {:width$}  {} [default: {}]; {}",
            entry.key, entry.kind, default, entry.help
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_schema_default_round_trips_through_apply() {
        let mut config = RunConfig::default();
        for entry in SCHEMA {
            config
                .apply(entry.key, entry.default, "test")
                .unwrap_or_else(|e| panic!("default for {} rejected: {e}", entry.key));
        }
        assert_eq!(config, RunConfig::default());
        config.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let mut config = RunConfig::default();
        let err = config
            .apply("batchsize", "64", "file.cfg line 3")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("batchsize"), "{msg}");
        assert!(msg.contains("file.cfg line 3"), "{msg}");
    }

    #[test]
    fn file_parsing_reports_line_numbers_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "batch_size = 64\n\n# comment\nbatch_size = 32\n").unwrap();
        let mut config = RunConfig::default();
        let msg = config.apply_file(&path).unwrap_err().to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("duplicate"), "{msg}");

        std::fs::write(&path, "gamma1 0.5\n").unwrap();
        let msg = config.apply_file(&path).unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn lists_and_enums_parse() {
        let mut config = RunConfig::default();
        config.apply("seeds", "3, 5, 8", "t").unwrap();
        assert_eq!(config.seeds, vec![3, 5, 8]);
        config.apply("hidden_layers", "32,16", "t").unwrap();
        assert_eq!(config.hidden_layers, vec![32, 16]);
        config
            .apply("loss_variants", "ce_kd_baseline,jioc", "t")
            .unwrap();
        assert_eq!(
            config.loss_variants,
            vec![LossVariant::CeKdBaseline, LossVariant::Jioc]
        );
        config.apply("lr_milestones", "", "t").unwrap();
        assert!(config.lr_milestones.is_empty());
        assert!(config.apply("profile", "wavy", "t").is_err());
        assert!(config.apply("resume", "maybe", "t").is_err());
    }

    #[test]
    fn help_covers_every_key_with_default() {
        let help = schema_help();
        for entry in SCHEMA {
            assert!(help.contains(entry.key), "missing {}", entry.key);
        }
        assert!(help.contains("[default: 128]"));
        assert!(help.contains("[default: unset]"));
    }
}
