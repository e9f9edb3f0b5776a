//! Task streams, dataset loading and the bounded exemplar replay memory.
//!
//! A [`TaskStream`] is an ordered sequence of classification tasks with
//! disjoint, contiguous class ranges: task `t` owns global classes
//! `[t*m, (t+1)*m)`. Streams are either generated synthetically (Gaussian
//! clusters, balanced or long-tail class counts) or loaded from IDX files,
//! and can be exported to line-delimited record files for reproducibility.

pub mod batch;
pub mod idx;
pub mod memory;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use batch::{make_batches, Batch};
pub use idx::load_idx_dataset;
pub use memory::{ReplayMemory, ReplayPolicy};

/// One classified sample: feature vector plus its class and owning task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub class_id: usize,
    pub task_id: usize,
}

/// Per-class sample count profile of a generated stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Balanced,
    LongTail,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Balanced => "balanced",
            Profile::LongTail => "long_tail",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Profile::Balanced),
            "long_tail" => Ok(Profile::LongTail),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }
}

/// Configuration for [`generate_stream`].
///
/// `samples_per_class` is the count of the most frequent class; under the
/// long-tail profile the count of class rank `c` (over all `C = T*m` classes)
/// decays as `round(n_max * f^(-c/(C-1)))` so that max/min is approximately
/// the imbalance factor `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStreamConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub imbalance_factor: f64,
    pub profile: Profile,
    pub seed: u64,
    pub feature_dim: usize,
    pub cluster_separation: f64,
    pub cluster_std: f64,
    pub eval_per_class: usize,
}

impl Default for TaskStreamConfig {
    fn default() -> Self {
        TaskStreamConfig {
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_class: 500,
            imbalance_factor: 24.0,
            profile: Profile::LongTail,
            seed: 0,
            feature_dim: 5,
            cluster_separation: 2.2,
            cluster_std: 1.0,
            eval_per_class: 100,
        }
    }
}

impl TaskStreamConfig {
    pub fn total_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.classes_per_task == 0 {
            return Err(Error::Config(
                "stream needs at least one task and one class".into(),
            ));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be at least 1".into()));
        }
        if !(self.imbalance_factor >= 1.0 && self.imbalance_factor.is_finite()) {
            return Err(Error::Config(format!(
                "imbalance_factor must be >= 1, got {}",
                self.imbalance_factor
            )));
        }
        if self.profile == Profile::LongTail
            && self.imbalance_factor > 1.0
            && self.total_classes() == 1
        {
            return Err(Error::Config(
                "long_tail with imbalance_factor > 1 needs at least 2 classes".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Config(format!(
                "cluster_std must be positive, got {}",
                self.cluster_std
            )));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::Config(format!(
                "cluster_separation must be nonnegative, got {}",
                self.cluster_separation
            )));
        }
        Ok(())
    }
}

/// Training and held-out evaluation examples of one task.
///
/// The evaluation split is balanced per class regardless of the training
/// profile, mirroring evaluation on a balanced test set; it may be empty, in
/// which case consumers fall back to the training examples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskData {
    pub train: Vec<LabeledExample>,
    pub eval: Vec<LabeledExample>,
}

/// Ordered class-incremental task sequence with disjoint contiguous class sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    tasks: Vec<TaskData>,
    class_counts: Vec<usize>,
    classes_per_task: usize,
    feature_dim: usize,
}

impl TaskStream {
    /// Validates and assembles a stream: task `t` must hold exactly the
    /// classes `[t*m, (t+1)*m)`, every class needs at least one training
    /// example, and all feature vectors must share one dimension.
    pub fn new(tasks: Vec<TaskData>, classes_per_task: usize) -> Result<Self> {
        if tasks.is_empty() || classes_per_task == 0 {
            return Err(Error::Config(
                "stream needs at least one task and one class".into(),
            ));
        }
        let m = classes_per_task;
        let total_classes = tasks.len() * m;
        let mut class_counts = vec![0usize; total_classes];
        let mut feature_dim = None;
        for (t, task) in tasks.iter().enumerate() {
            let range = t * m..(t + 1) * m;
            for (kind, examples) in [("train", &task.train), ("eval", &task.eval)] {
                for ex in examples.iter() {
                    if ex.task_id != t {
                        return Err(Error::Domain(format!(
                            "{kind} example labeled task {} found in task {t}",
                            ex.task_id
                        )));
                    }
                    if !range.contains(&ex.class_id) {
                        return Err(Error::Domain(format!(
                            "class {} outside task {t}'s range {range:?}",
                            ex.class_id
                        )));
                    }
                    match feature_dim {
                        None => feature_dim = Some(ex.features.len()),
                        Some(d) if d != ex.features.len() => {
                            return Err(Error::shape(
                                "TaskStream feature dim",
                                d,
                                ex.features.len(),
                            ));
                        }
                        _ => {}
                    }
                }
            }
            for ex in &task.train {
                class_counts[ex.class_id] += 1;
            }
            for class in range {
                if class_counts[class] == 0 {
                    return Err(Error::Domain(format!(
                        "class {class} of task {t} has no training examples"
                    )));
                }
            }
        }
        Ok(TaskStream {
            tasks,
            class_counts,
            classes_per_task,
            feature_dim: feature_dim.unwrap_or(0),
        })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn classes_per_task(&self) -> usize {
        self.classes_per_task
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.len() * self.classes_per_task
    }

    /// Training sample count per global class id.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Evaluation examples of task `t`, falling back to its training
    /// examples when no held-out split exists.
    pub fn eval_examples(&self, t: usize) -> &[LabeledExample] {
        let task = &self.tasks[t];
        if task.eval.is_empty() {
            &task.train
        } else {
            &task.eval
        }
    }

    /// Moves the training examples of `other` into this stream's
    /// evaluation slots; both streams must have the same shape.
    pub fn attach_eval_from(&mut self, other: TaskStream) -> Result<()> {
        if other.num_tasks() != self.num_tasks()
            || other.classes_per_task() != self.classes_per_task()
            || other.feature_dim() != self.feature_dim()
        {
            return Err(Error::shape(
                "attach_eval_from",
                format!(
                    "{} tasks x {} classes, dim {}",
                    self.num_tasks(),
                    self.classes_per_task(),
                    self.feature_dim()
                ),
                format!(
                    "{} tasks x {} classes, dim {}",
                    other.num_tasks(),
                    other.classes_per_task(),
                    other.feature_dim()
                ),
            ));
        }
        for (slot, donor) in self.tasks.iter_mut().zip(other.tasks) {
            slot.eval = donor.train;
        }
        Ok(())
    }
}

/// Per-class counts for the long-tail profile: exponential decay from
/// `n_max` with ratio `f` between the largest and smallest class.
pub fn long_tail_counts(n_max: usize, factor: f64, total_classes: usize) -> Result<Vec<usize>> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::Config(format!(
            "imbalance_factor must be >= 1, got {factor}"
        )));
    }
    if total_classes <= 1 {
        return Ok(vec![n_max; total_classes]);
    }
    let denom = (total_classes - 1) as f64;
    Ok((0..total_classes)
        .map(|c| {
            let count = n_max as f64 * factor.powf(-(c as f64) / denom);
            (count.round() as usize).max(1)
        })
        .collect())
}

fn class_mean(class: usize, config: &TaskStreamConfig) -> Vec<f64> {
    // Class means sit on scaled coordinate axes; once the axes are exhausted
    // the next classes move further out along the same axes.
    let mut mean = vec![0.0; config.feature_dim];
    let axis = class % config.feature_dim;
    let multiplier = (1 + class / config.feature_dim) as f64;
    mean[axis] = config.cluster_separation * multiplier;
    mean
}

fn sample_cluster(
    mean: &[f64],
    std: f64,
    count: usize,
    class: usize,
    task: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledExample> {
    (0..count)
        .map(|_| {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + std * z
                })
                .collect();
            LabeledExample {
                features,
                class_id: class,
                task_id: task,
            }
        })
        .collect()
}

/// Generates a synthetic Gaussian-cluster task stream.
///
/// Each class draws from its own RNG stream, so a class's samples do not
/// depend on the counts of other classes; the whole stream is deterministic
/// per seed.
pub fn generate_stream(config: &TaskStreamConfig) -> Result<TaskStream> {
    config.validate()?;
    let total = config.total_classes();
    let counts = match config.profile {
        Profile::Balanced => vec![config.samples_per_class; total],
        Profile::LongTail => {
            long_tail_counts(config.samples_per_class, config.imbalance_factor, total)?
        }
    };
    let mut tasks = Vec::with_capacity(config.num_tasks);
    for t in 0..config.num_tasks {
        let mut data = TaskData::default();
        for local in 0..config.classes_per_task {
            let class = t * config.classes_per_task + local;
            let mean = class_mean(class, config);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(class as u64 * 2);
            data.train.extend(sample_cluster(
                &mean,
                config.cluster_std,
                counts[class],
                class,
                t,
                &mut rng,
            ));
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(class as u64 * 2 + 1);
            data.eval.extend(sample_cluster(
                &mean,
                config.cluster_std,
                config.eval_per_class,
                class,
                t,
                &mut rng,
            ));
        }
        tasks.push(data);
    }
    TaskStream::new(tasks, config.classes_per_task)
}

fn write_records(examples: &[&LabeledExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        write!(out, "{} {}", ex.task_id, ex.class_id).expect("string write");
        for v in &ex.features {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display(), e))
}

/// Writes a stream as two line-delimited record files (train and eval), one
/// example per line: `task_id class_id feature...`. Floats use the shortest
/// representation that round-trips exactly.
pub fn export_stream(stream: &TaskStream, train_path: &Path, eval_path: &Path) -> Result<()> {
    let train: Vec<&LabeledExample> = stream.tasks.iter().flat_map(|t| t.train.iter()).collect();
    let eval: Vec<&LabeledExample> = stream.tasks.iter().flat_map(|t| t.eval.iter()).collect();
    write_records(&train, train_path)?;
    write_records(&eval, eval_path)
}

fn parse_records(path: &Path) -> Result<Vec<LabeledExample>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    let mut examples = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let task_id = fields
            .next()
            .ok_or_else(|| Error::format(path.display(), line_no, "missing task_id"))?
            .parse::<usize>()
            .map_err(|e| Error::format(path.display(), line_no, format!("bad task_id: {e}")))?;
        let class_id = fields
            .next()
            .ok_or_else(|| Error::format(path.display(), line_no, "missing class_id"))?
            .parse::<usize>()
            .map_err(|e| Error::format(path.display(), line_no, format!("bad class_id: {e}")))?;
        let features = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| {
                    Error::format(path.display(), line_no, format!("bad feature '{f}': {e}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            return Err(Error::format(path.display(), line_no, "no feature values"));
        }
        examples.push(LabeledExample {
            features,
            class_id,
            task_id,
        });
    }
    Ok(examples)
}

/// Groups flat examples into per-task buckets, inferring the task count and
/// the (uniform) classes-per-task width.
pub fn assemble_stream(
    train: Vec<LabeledExample>,
    eval: Vec<LabeledExample>,
    origin: &str,
) -> Result<TaskStream> {
    if train.is_empty() {
        return Err(Error::Domain(format!("{origin}: no training examples")));
    }
    let num_tasks = train.iter().map(|e| e.task_id).max().unwrap() + 1;
    let total_classes = train.iter().map(|e| e.class_id).max().unwrap() + 1;
    if total_classes % num_tasks != 0 {
        return Err(Error::Domain(format!(
            "{origin}: {total_classes} classes do not split evenly over {num_tasks} tasks"
        )));
    }
    let m = total_classes / num_tasks;
    let mut tasks = vec![TaskData::default(); num_tasks];
    for ex in train {
        if ex.task_id >= num_tasks {
            return Err(Error::Domain(format!(
                "{origin}: task id {} out of range",
                ex.task_id
            )));
        }
        tasks[ex.task_id].train.push(ex);
    }
    for ex in eval {
        if ex.task_id >= num_tasks {
            return Err(Error::Domain(format!(
                "{origin}: eval task id {} out of range",
                ex.task_id
            )));
        }
        tasks[ex.task_id].eval.push(ex);
    }
    TaskStream::new(tasks, m)
}

/// Reads a stream exported by [`export_stream`]; `eval_path` may be absent
/// for train-only record files.
pub fn import_stream(train_path: &Path, eval_path: Option<&Path>) -> Result<TaskStream> {
    let train = parse_records(train_path)?;
    let eval = match eval_path {
        Some(p) => parse_records(p)?,
        None => Vec::new(),
    };
    assemble_stream(train, eval, &train_path.display().to_string())
}
