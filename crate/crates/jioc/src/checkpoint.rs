//! Versioned binary run checkpoints.
//!
//! A checkpoint captures everything a run needs to continue after a finished
//! task: the model (shapes, parameters, head layout), the replay memory
//! (exemplars plus its sampling-stream counters), the metrics recorded so
//! far, the trainer configuration and a fingerprint of the task stream. All
//! scalars are encoded little-endian, so files are byte-stable across
//! platforms. Every random choice in training is derived from seeds stored
//! here, which is what makes resumed runs bit-identical to uninterrupted
//! ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{LabeledExample, ReplayMemory, ReplayPolicy, TaskStream};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::nn::{Activation, DenseLayer, HeadLayout, Model};
use crate::report::{metrics_from_json, metrics_to_json};
use crate::tensor::Matrix;
use crate::trainer::TrainerConfig;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"JIOCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable run state after some prefix of the task stream.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// 0-based index of the next task to train; equals the number finished.
    pub next_task: usize,
    pub model: Model,
    pub memory: ReplayMemory,
    pub metrics: RunMetrics,
    pub config: TrainerConfig,
    pub stream_fingerprint: u64,
}

impl Checkpoint {
    /// Errors unless the checkpoint belongs to this exact stream and config.
    pub fn verify(&self, stream: &TaskStream, config: &TrainerConfig) -> Result<()> {
        if self.stream_fingerprint != stream_fingerprint(stream) {
            return Err(Error::Config(
                "checkpoint was written for a different task stream".into(),
            ));
        }
        if &self.config != config {
            return Err(Error::Config(
                "checkpoint was written with a different trainer configuration".into(),
            ));
        }
        if self.next_task > stream.num_tasks() {
            return Err(Error::Config(format!(
                "checkpoint finished {} tasks but the stream only has {}",
                self.next_task,
                stream.num_tasks()
            )));
        }
        Ok(())
    }
}

/// FNV-1a hash of the stream's structure and every example, used to refuse
/// resuming against different data.
pub fn stream_fingerprint(stream: &TaskStream) -> u64 {
    let mut h = Fnv::new();
    h.put_u64(stream.num_tasks() as u64);
    h.put_u64(stream.classes_per_task() as u64);
    h.put_u64(stream.feature_dim() as u64);
    for task in stream.tasks() {
        for split in [&task.train, &task.eval] {
            h.put_u64(split.len() as u64);
            for ex in split {
                h.put_u64(ex.task_id as u64);
                h.put_u64(ex.class_id as u64);
                for &f in &ex.features {
                    h.put_bytes(&f.to_le_bytes());
                }
            }
        }
    }
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn put_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn put_u64(&mut self, v: u64) {
        self.put_bytes(&v.to_le_bytes());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.put_bytes(&CHECKPOINT_MAGIC);
    w.put_u32(CHECKPOINT_VERSION);
    w.put_u64(checkpoint.next_task as u64);
    w.put_u64(checkpoint.stream_fingerprint);
    let config_json = serde_json::to_string(&checkpoint.config)
        .map_err(|e| Error::Domain(format!("config serialization failed: {e}")))?;
    w.put_str(&config_json);
    write_model(&mut w, &checkpoint.model);
    write_memory(&mut w, &checkpoint.memory);
    w.put_str(&metrics_to_json(&checkpoint.metrics)?);
    fs::write(path, w.buf).map_err(|e| Error::io(path.display(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display(), e))?;
    let mut r = Reader::new(&bytes, path);
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.format_err(0, "not a checkpoint file (bad magic)"));
    }
    let version = r.take_u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.format_err(
            8,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let next_task = r.take_u64()? as usize;
    let stream_fingerprint = r.take_u64()?;
    let config_json = r.take_str()?;
    let config: TrainerConfig = serde_json::from_str(&config_json)
        .map_err(|e| r.format_err(r.pos(), format!("bad trainer config: {e}")))?;
    let model = read_model(&mut r)?;
    let memory = read_memory(&mut r)?;
    let metrics = metrics_from_json(&r.take_str()?)?;
    r.expect_end()?;
    Ok(Checkpoint {
        next_task,
        model,
        memory,
        metrics,
        config,
        stream_fingerprint,
    })
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn activation_from_tag(tag: u8, r: &Reader<'_>) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Identity),
        other => Err(r.format_err(r.pos() - 1, format!("unknown activation tag {other}"))),
    }
}

fn policy_tag(p: ReplayPolicy) -> u8 {
    match p {
        ReplayPolicy::RandomBalanced => 0,
        ReplayPolicy::Herding => 1,
    }
}

fn policy_from_tag(tag: u8, r: &Reader<'_>) -> Result<ReplayPolicy> {
    match tag {
        0 => Ok(ReplayPolicy::RandomBalanced),
        1 => Ok(ReplayPolicy::Herding),
        other => Err(r.format_err(r.pos() - 1, format!("unknown replay policy tag {other}"))),
    }
}

fn write_matrix(w: &mut Writer, m: &Matrix) {
    w.put_u64(m.rows() as u64);
    w.put_u64(m.cols() as u64);
    for &v in m.data() {
        w.put_f64(v);
    }
}

fn read_matrix(r: &mut Reader<'_>) -> Result<Matrix> {
    let rows = r.take_u64()? as usize;
    let cols = r.take_u64()? as usize;
    let data = r.take_f64s(
        rows.checked_mul(cols)
            .ok_or_else(|| r.format_err(r.pos(), "matrix dimensions overflow"))?,
    )?;
    Matrix::from_vec(rows, cols, data)
}

fn write_f64s(w: &mut Writer, values: &[f64]) {
    w.put_u64(values.len() as u64);
    for &v in values {
        w.put_f64(v);
    }
}

fn read_f64s(r: &mut Reader<'_>) -> Result<Vec<f64>> {
    let n = r.take_u64()? as usize;
    r.take_f64s(n)
}

fn write_model(w: &mut Writer, model: &Model) {
    w.put_u32(model.extractor().len() as u32);
    for layer in model.extractor() {
        w.put_u8(activation_tag(layer.activation));
        write_matrix(w, &layer.weight);
        write_f64s(w, &layer.bias);
    }
    write_matrix(w, model.classifier_weight());
    write_f64s(w, model.classifier_bias());
    w.put_u32(model.layout().num_tasks() as u32);
    for range in model.layout().ranges() {
        w.put_u64(range.task_id as u64);
        w.put_u64(range.start as u64);
        w.put_u64(range.end as u64);
    }
}

fn read_model(r: &mut Reader<'_>) -> Result<Model> {
    let layers = r.take_u32()? as usize;
    let mut extractor = Vec::with_capacity(layers);
    for _ in 0..layers {
        let activation = activation_from_tag(r.take_u8()?, r)?;
        let weight = read_matrix(r)?;
        let bias = read_f64s(r)?;
        extractor.push(DenseLayer {
            weight,
            bias,
            activation,
        });
    }
    let classifier_weight = read_matrix(r)?;
    let classifier_bias = read_f64s(r)?;
    let ranges = r.take_u32()? as usize;
    let mut layout = HeadLayout::new();
    for _ in 0..ranges {
        let task_id = r.take_u64()? as usize;
        let start = r.take_u64()? as usize;
        let end = r.take_u64()? as usize;
        if layout.total_width() != start || end <= start {
            return Err(r.format_err(
                r.pos(),
                format!("head range {start}..{end} does not extend the layout"),
            ));
        }
        layout.push_task(task_id, end - start)?;
    }
    Model::new(extractor, classifier_weight, classifier_bias, layout)
}

fn write_memory(w: &mut Writer, memory: &ReplayMemory) {
    w.put_u64(memory.capacity() as u64);
    w.put_u8(policy_tag(memory.policy()));
    w.put_u64(memory.seed());
    w.put_u64(memory.updates() as u64);
    let dim = memory.examples().next().map_or(0, |ex| ex.features.len());
    w.put_u64(dim as u64);
    let slots: Vec<_> = memory.slot_entries().collect();
    w.put_u32(slots.len() as u32);
    for (class, examples) in slots {
        w.put_u64(class as u64);
        w.put_u32(examples.len() as u32);
        for ex in examples {
            w.put_u64(ex.task_id as u64);
            for &f in &ex.features {
                w.put_f64(f);
            }
        }
    }
}

fn read_memory(r: &mut Reader<'_>) -> Result<ReplayMemory> {
    let capacity = r.take_u64()? as usize;
    let policy = policy_from_tag(r.take_u8()?, r)?;
    let seed = r.take_u64()?;
    let updates = r.take_u64()? as usize;
    let dim = r.take_u64()? as usize;
    let classes = r.take_u32()? as usize;
    let mut slots: BTreeMap<usize, Vec<LabeledExample>> = BTreeMap::new();
    for _ in 0..classes {
        let class_id = r.take_u64()? as usize;
        let count = r.take_u32()? as usize;
        let mut examples = Vec::with_capacity(count);
        for _ in 0..count {
            let task_id = r.take_u64()? as usize;
            let features = r.take_f64s(dim)?;
            examples.push(LabeledExample {
                features,
                class_id,
                task_id,
            });
        }
        if slots.insert(class_id, examples).is_some() {
            return Err(r.format_err(r.pos(), format!("duplicate memory class {class_id}")));
        }
    }
    ReplayMemory::from_parts(capacity, policy, seed, updates, slots)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn put_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn put_u32(&mut self, v: u32) {
        self.put_bytes(&v.to_le_bytes());
    }

    fn put_u64(&mut self, v: u64) {
        self.put_bytes(&v.to_le_bytes());
    }

    fn put_f64(&mut self, v: f64) {
        self.put_bytes(&v.to_le_bytes());
    }

    fn put_str(&mut self, s: &str) {
        self.put_u64(s.len() as u64);
        self.put_bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Reader {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn pos(&self) -> usize {
        self.pos
    }

    fn format_err(&self, offset: usize, message: impl ToString) -> Error {
        Error::format(&self.path, offset as u64, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.format_err(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn take_str(&mut self) -> Result<String> {
        let len = self.take_u64()? as usize;
        let start = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| self.format_err(start, format!("invalid utf-8: {e}")))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format_err(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
