//! Incremental training loop: snapshot the previous model, grow the
//! classifier head, and minimize the combined objective with SGD, task by
//! task over the stream.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, LabeledExample, ReplayMemory, TaskStream};
use crate::error::{Error, Result};
use crate::losses::{
    delta_weights, ic_logit_grad, ic_loss, jioc_loss, kd_logit_grad, kd_loss,
    suppression_logit_grad, suppression_loss, DeltaWeights, LossTerms, OneHotLabel, SnapshotLogits,
};
use crate::metrics::{evaluate_round, RunMetrics};
use crate::nn::{softmax_rows, GradientSet, Model};
use crate::tensor::Matrix;

/// Which terms of the combined objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Plain cross-entropy plus distillation.
    CeKdBaseline,
    /// Gradient-magnitude-weighted cross-entropy plus distillation.
    IcOnly,
    /// Cross-entropy plus distillation plus new-head suppression.
    OcOnly,
    /// All three terms.
    Jioc,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::CeKdBaseline,
        LossVariant::IcOnly,
        LossVariant::OcOnly,
        LossVariant::Jioc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::CeKdBaseline => "ce_kd_baseline",
            LossVariant::IcOnly => "ic_only",
            LossVariant::OcOnly => "oc_only",
            LossVariant::Jioc => "jioc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce_kd_baseline" => Ok(LossVariant::CeKdBaseline),
            "ic_only" => Ok(LossVariant::IcOnly),
            "oc_only" => Ok(LossVariant::OcOnly),
            "jioc" => Ok(LossVariant::Jioc),
            other => Err(Error::Config(format!(
                "unknown loss variant {other:?}, expected one of \
                 ce_kd_baseline, ic_only, oc_only, jioc"
            ))),
        }
    }

    /// Whether the classification term weights samples by `1 - p_true`.
    pub fn weights_by_delta(self) -> bool {
        matches!(self, LossVariant::IcOnly | LossVariant::Jioc)
    }

    /// Whether the new-head suppression term is active.
    pub fn suppresses_new_heads(self) -> bool {
        matches!(self, LossVariant::OcOnly | LossVariant::Jioc)
    }
}

/// Normalizer of the suppression term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressNorm {
    /// Number of new-task samples in the batch, clamped to at least 1.
    NNew,
    /// Number of replayed old-task samples in the batch.
    NOldBatch,
}

impl SuppressNorm {
    pub fn name(self) -> &'static str {
        match self {
            SuppressNorm::NNew => "n_new",
            SuppressNorm::NOldBatch => "n_old_batch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n_new" => Ok(SuppressNorm::NNew),
            "n_old_batch" => Ok(SuppressNorm::NOldBatch),
            other => Err(Error::Config(format!(
                "unknown suppression normalizer {other:?}, expected n_new or n_old_batch"
            ))),
        }
    }
}

/// Hyperparameters of the per-task optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// 1-based epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub temperature: f64,
    pub loss_variant: LossVariant,
    pub suppress_norm: SuppressNorm,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs_per_task: 20,
            batch_size: 128,
            lr_initial: 0.4,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            gamma1: 1.0,
            gamma2: 1.0,
            temperature: 2.0,
            loss_variant: LossVariant::Jioc,
            suppress_norm: SuppressNorm::NNew,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::Config("epochs_per_task must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::Config(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!(
                "lr_decay must be positive, got {}",
                self.lr_decay
            )));
        }
        for window in self.lr_milestones.windows(2) {
            if window[1] <= window[0] {
                return Err(Error::Config(format!(
                    "lr_milestones must be strictly increasing, got {:?}",
                    self.lr_milestones
                )));
            }
        }
        if self.lr_milestones.first() == Some(&0) {
            return Err(Error::Config("lr_milestones are 1-based epochs".into()));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got gamma1={} gamma2={}",
                self.gamma1, self.gamma2
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during the given 1-based epoch: the initial
    /// rate decayed once per milestone already reached.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr_initial * self.lr_decay.powi(decays as i32)
    }
}

/// Mutable training state for one task: the model being optimized, the
/// frozen pre-task snapshot that supplies distillation targets, and the
/// per-batch loss history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub current_model: Model,
    pub snapshot_model: Model,
    /// 0-based index of the task being trained.
    pub task_index: usize,
    pub loss_history: Vec<LossTerms>,
}

impl TrainState {
    /// Snapshots `model`, grows its head by `new_classes` rows and wraps both
    /// in a fresh state for task `task_index`.
    pub fn begin_task(
        model: Model,
        task_index: usize,
        new_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if model.layout().num_tasks() != task_index {
            return Err(Error::Config(format!(
                "model already has {} heads, cannot begin task {}",
                model.layout().num_tasks(),
                task_index
            )));
        }
        let snapshot_model = model.clone();
        let current_model = grow_head(model, new_classes, head_seed(seed, task_index))?;
        Ok(TrainState {
            current_model,
            snapshot_model,
            task_index,
            loss_history: Vec::new(),
        })
    }
}

/// Appends a freshly initialized head for the next sequential task id.
/// Existing parameters are bit-identical afterwards.
pub fn grow_head(mut model: Model, new_classes: usize, seed: u64) -> Result<Model> {
    let task_id = model.layout().num_tasks();
    model.append_head(task_id, new_classes, seed)?;
    Ok(model)
}

/// Seed for the freshly grown head rows of a task, drawn from a stream
/// disjoint from the per-epoch shuffle seeds.
fn head_seed(seed: u64, task_index: usize) -> u64 {
    derive_seed(seed, task_index, 0)
}

/// Seed for the batch shuffle of one (task, epoch) pair; epochs are 1-based
/// so stream 0 stays reserved for head growth.
fn shuffle_seed(seed: u64, task_index: usize, epoch: usize) -> u64 {
    derive_seed(seed, task_index, epoch)
}

fn derive_seed(seed: u64, task_index: usize, lane: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((task_index as u64) << 32) | lane as u64);
    rng.gen()
}

/// Loss terms, assembled per-logit gradient and forward cache for one batch.
fn assemble_batch(
    model: &Model,
    snapshot: &Model,
    batch: &Batch,
    config: &TrainerConfig,
    new_range: &Range<usize>,
) -> Result<(LossTerms, Matrix, crate::nn::ForwardCache)> {
    let (cache, logits) = model.forward_cached(&batch.features)?;
    let probs = softmax_rows(&logits)?;
    let labels: Vec<OneHotLabel> = batch
        .class_ids
        .iter()
        .map(|&c| OneHotLabel::from_class(c, model.layout()))
        .collect::<Result<_>>()?;

    let deltas = if config.loss_variant.weights_by_delta() {
        delta_weights(&probs, &labels)?
    } else {
        DeltaWeights::ones(labels.len())
    };
    let class_loss = ic_loss(&probs, &labels, &deltas)?;
    let mut grad = ic_logit_grad(&probs, &labels, &deltas)?;

    let kd_value = if snapshot.layout().num_tasks() == 0 {
        0.0
    } else {
        let (_, snap_logits) = snapshot.forward(&batch.features)?;
        let snap = SnapshotLogits::capture(snap_logits, snapshot.layout().clone())?;
        let value = kd_loss(model.partition(&logits)?, &snap, config.temperature)?;
        let kd_grad = kd_logit_grad(model.partition(&logits)?, &snap, config.temperature)?;
        grad.add_scaled(config.gamma1, &kd_grad)?;
        value
    };

    let sup_value = if config.loss_variant.suppresses_new_heads() && !batch.old_rows.is_empty() {
        let normalizer = match config.suppress_norm {
            SuppressNorm::NNew => batch.new_count().max(1),
            SuppressNorm::NOldBatch => batch.old_rows.len(),
        };
        let mut new_head_probs = Matrix::zeros(batch.old_rows.len(), new_range.len());
        for (i, &s) in batch.old_rows.iter().enumerate() {
            new_head_probs
                .row_mut(i)
                .copy_from_slice(&probs.row(s)[new_range.clone()]);
        }
        let value = suppression_loss(&new_head_probs, normalizer)?;
        let sup_grad =
            suppression_logit_grad(&probs, new_range.clone(), &batch.old_rows, normalizer)?;
        grad.add_scaled(config.gamma2, &sup_grad)?;
        value
    } else {
        0.0
    };

    let terms = jioc_loss(
        class_loss,
        kd_value,
        sup_value,
        config.gamma1,
        config.gamma2,
        config.temperature,
    )?;
    if !terms.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: class={} kd={} suppress={}",
            terms.l_ic, terms.l_oc_old_tasks, terms.l_oc_suppress
        )));
    }
    Ok((terms, grad, cache))
}

/// Loss terms and parameter gradients of the configured objective on one
/// batch, without stepping. `new_range` is the trained task's head range.
pub fn batch_loss_and_grads(
    model: &Model,
    snapshot: &Model,
    batch: &Batch,
    config: &TrainerConfig,
    new_range: Range<usize>,
) -> Result<(LossTerms, GradientSet)> {
    let (terms, grad, cache) = assemble_batch(model, snapshot, batch, config, &new_range)?;
    let grads = model.backward(&cache, &grad)?;
    Ok((terms, grads))
}

/// Runs `epochs_per_task` SGD epochs on the union of the task's data and the
/// replay memory. Batch failures abort with task/epoch/batch diagnostics.
pub fn train_task(
    mut state: TrainState,
    task_data: &[LabeledExample],
    memory: &ReplayMemory,
    config: &TrainerConfig,
) -> Result<TrainState> {
    config.validate()?;
    let t = state.task_index;
    if state.snapshot_model.layout().num_tasks() != t
        || state.current_model.layout().num_tasks() != t + 1
    {
        return Err(Error::Config(format!(
            "state for task {} has {} snapshot heads and {} current heads",
            t,
            state.snapshot_model.layout().num_tasks(),
            state.current_model.layout().num_tasks()
        )));
    }
    let new_range = state
        .current_model
        .layout()
        .range_for_task(t)
        .ok_or_else(|| Error::Config(format!("current model has no head for task {t}")))?;

    for epoch in 1..=config.epochs_per_task {
        let lr = config.learning_rate(epoch);
        let batches = make_batches(
            task_data,
            memory,
            config.batch_size,
            shuffle_seed(config.seed, t, epoch),
        )?;
        for (b, batch) in batches.iter().enumerate() {
            let step = (|| -> Result<LossTerms> {
                let (terms, grad, cache) = assemble_batch(
                    &state.current_model,
                    &state.snapshot_model,
                    batch,
                    config,
                    &new_range,
                )?;
                let grads = state.current_model.backward(&cache, &grad)?;
                state.current_model.sgd_step(&grads, lr)?;
                Ok(terms)
            })();
            let terms = step.map_err(|e| {
                Error::Numeric(format!(
                    "aborted at task {} epoch {epoch} batch {b} (lr {lr}): {e}",
                    t + 1
                ))
            })?;
            state.loss_history.push(terms);
        }
    }
    Ok(state)
}

/// Everything [`run_stream`] produces: the final model, a frozen copy of the
/// model after each task, and the evaluation metrics.
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub final_model: Model,
    pub task_snapshots: Vec<Model>,
    pub memory: ReplayMemory,
    pub metrics: RunMetrics,
}

/// Trains `backbone` over the whole stream: for each task, snapshot, grow the
/// head, train on new data plus replay, refresh the memory and evaluate every
/// task seen so far.
///
/// `backbone` must be headless (no classifier rows yet) and match the
/// stream's feature width.
pub fn run_stream(
    stream: &TaskStream,
    backbone: Model,
    memory: ReplayMemory,
    config: &TrainerConfig,
) -> Result<StreamOutcome> {
    run_stream_with(stream, backbone, memory, config, |_, _, _, _| Ok(()))
}

/// [`run_stream`] with an observer invoked after every completed task with
/// the 0-based task index and the post-task model, memory and metrics; the
/// usual observer writes a checkpoint.
pub fn run_stream_with<F>(
    stream: &TaskStream,
    backbone: Model,
    memory: ReplayMemory,
    config: &TrainerConfig,
    after_task: F,
) -> Result<StreamOutcome>
where
    F: FnMut(usize, &Model, &ReplayMemory, &RunMetrics) -> Result<()>,
{
    config.validate()?;
    if backbone.layout().num_tasks() != 0 {
        return Err(Error::Config(format!(
            "run_stream needs a headless backbone, got {} heads",
            backbone.layout().num_tasks()
        )));
    }
    let mut metrics = RunMetrics::new();
    echo_config(&mut metrics, &backbone, &memory, config);
    stream_loop(stream, backbone, memory, metrics, config, after_task)
}

/// Continues a partially trained run: `model` already holds one head per
/// finished task and `metrics` the matching evaluation rounds. Remaining
/// tasks train exactly as an uninterrupted [`run_stream`] would train them.
pub fn resume_stream_with<F>(
    stream: &TaskStream,
    model: Model,
    memory: ReplayMemory,
    metrics: RunMetrics,
    config: &TrainerConfig,
    after_task: F,
) -> Result<StreamOutcome>
where
    F: FnMut(usize, &Model, &ReplayMemory, &RunMetrics) -> Result<()>,
{
    config.validate()?;
    let done = model.layout().num_tasks();
    if metrics.num_rounds() != done {
        return Err(Error::Config(format!(
            "resume state disagrees: model has {done} heads, metrics {} rounds",
            metrics.num_rounds()
        )));
    }
    if done > stream.num_tasks() {
        return Err(Error::Config(format!(
            "resume state has {done} finished tasks but the stream only has {}",
            stream.num_tasks()
        )));
    }
    stream_loop(stream, model, memory, metrics, config, after_task)
}

fn stream_loop<F>(
    stream: &TaskStream,
    mut model: Model,
    mut memory: ReplayMemory,
    mut metrics: RunMetrics,
    config: &TrainerConfig,
    mut after_task: F,
) -> Result<StreamOutcome>
where
    F: FnMut(usize, &Model, &ReplayMemory, &RunMetrics) -> Result<()>,
{
    if model.input_width() != stream.feature_dim() {
        return Err(Error::shape(
            "run_stream input width",
            stream.feature_dim(),
            model.input_width(),
        ));
    }
    let m = stream.classes_per_task();
    let start = model.layout().num_tasks();
    let mut task_snapshots = Vec::with_capacity(stream.num_tasks() - start);

    for t in start..stream.num_tasks() {
        let task = &stream.tasks()[t];
        let state = TrainState::begin_task(model, t, m, config.seed)?;
        let state = train_task(state, &task.train, &memory, config)?;
        model = state.current_model;
        memory = memory.update(&task.train, Some(&model))?;
        metrics.push_round(evaluate_round(&model, stream, t)?)?;
        metrics.push_loss_curve(state.loss_history);
        after_task(t, &model, &memory, &metrics)?;
        task_snapshots.push(model.clone());
    }

    Ok(StreamOutcome {
        final_model: model,
        task_snapshots,
        memory,
        metrics,
    })
}

fn echo_config(
    metrics: &mut RunMetrics,
    backbone: &Model,
    memory: &ReplayMemory,
    config: &TrainerConfig,
) {
    let mut widths = vec![backbone.input_width().to_string()];
    widths.extend(
        backbone
            .extractor()
            .iter()
            .map(|l| l.out_width().to_string()),
    );
    let echo = &mut metrics.config_echo;
    echo.insert("model_widths".into(), widths.join("x"));
    echo.insert("epochs_per_task".into(), config.epochs_per_task.to_string());
    echo.insert("batch_size".into(), config.batch_size.to_string());
    echo.insert("lr_initial".into(), config.lr_initial.to_string());
    echo.insert(
        "lr_milestones".into(),
        config
            .lr_milestones
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    echo.insert("lr_decay".into(), config.lr_decay.to_string());
    echo.insert("gamma1".into(), config.gamma1.to_string());
    echo.insert("gamma2".into(), config.gamma2.to_string());
    echo.insert("temperature".into(), config.temperature.to_string());
    echo.insert("loss_variant".into(), config.loss_variant.name().into());
    echo.insert("suppress_norm".into(), config.suppress_norm.name().into());
    echo.insert("seed".into(), config.seed.to_string());
    echo.insert("memory_capacity".into(), memory.capacity().to_string());
    echo.insert("replay_policy".into(), memory.policy().name().into());
}
