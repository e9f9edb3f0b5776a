//! Bounded exemplar replay memory with balanced per-class quotas.
//!
//! The memory never stores more than its capacity. After each task the
//! per-class quota is recomputed as `floor(capacity / classes)` with the
//! remainder going to the lowest class ids, existing slots are truncated to
//! the new quota (keeping their selection-order prefix), and the finished
//! task's classes are filled by the configured policy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Matrix;

/// How exemplars of a newly finished task are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayPolicy {
    /// Uniform seeded sample without replacement.
    RandomBalanced,
    /// Greedy selection keeping the exemplar feature mean close to the class
    /// feature mean under a given model.
    Herding,
}

impl ReplayPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ReplayPolicy::RandomBalanced => "random_balanced",
            ReplayPolicy::Herding => "herding",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random_balanced" => Ok(ReplayPolicy::RandomBalanced),
            "herding" => Ok(ReplayPolicy::Herding),
            other => Err(Error::Config(format!("unknown replay policy '{other}'"))),
        }
    }
}

/// Immutable snapshot of the exemplar memory; updates return a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    capacity: usize,
    policy: ReplayPolicy,
    seed: u64,
    updates: usize,
    slots: BTreeMap<usize, Vec<LabeledExample>>,
}

impl ReplayMemory {
    pub fn new(capacity: usize, policy: ReplayPolicy, seed: u64) -> Self {
        ReplayMemory {
            capacity,
            policy,
            seed,
            updates: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> ReplayPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(Vec::is_empty)
    }

    pub fn classes(&self) -> Vec<usize> {
        self.slots.keys().copied().collect()
    }

    pub fn per_class_counts(&self) -> BTreeMap<usize, usize> {
        self.slots.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    /// Stored exemplars in ascending class order, selection order within a class.
    pub fn examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.slots.values().flatten()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of [`ReplayMemory::update`] calls that produced this memory.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Per-class exemplar slots in ascending class order.
    pub fn slot_entries(&self) -> impl Iterator<Item = (usize, &[LabeledExample])> {
        self.slots.iter().map(|(&c, v)| (c, v.as_slice()))
    }

    /// Rebuilds a memory from serialized parts (checkpoint restore).
    pub fn from_parts(
        capacity: usize,
        policy: ReplayPolicy,
        seed: u64,
        updates: usize,
        slots: BTreeMap<usize, Vec<LabeledExample>>,
    ) -> Result<Self> {
        let total: usize = slots.values().map(Vec::len).sum();
        if total > capacity {
            return Err(Error::Config(format!(
                "memory holds {total} exemplars but capacity is {capacity}"
            )));
        }
        for (&class, examples) in &slots {
            if examples.iter().any(|ex| ex.class_id != class) {
                return Err(Error::Config(format!(
                    "memory slot for class {class} holds a foreign example"
                )));
            }
        }
        Ok(ReplayMemory {
            capacity,
            policy,
            seed,
            updates,
            slots,
        })
    }

    /// Incorporates a finished task: rebalances quotas across all classes
    /// seen so far, truncates existing slots and fills the new classes.
    ///
    /// Herding requires `model`; the other policy ignores it.
    pub fn update(
        &self,
        finished_task: &[LabeledExample],
        model: Option<&Model>,
    ) -> Result<ReplayMemory> {
        if finished_task.is_empty() {
            return Err(Error::Domain("memory update with no examples".into()));
        }
        if self.policy == ReplayPolicy::Herding && model.is_none() {
            return Err(Error::Config(
                "herding replay policy needs a model for feature means".into(),
            ));
        }
        let mut by_class: BTreeMap<usize, Vec<&LabeledExample>> = BTreeMap::new();
        for ex in finished_task {
            if self.slots.contains_key(&ex.class_id) {
                return Err(Error::Domain(format!(
                    "class {} is already stored in memory",
                    ex.class_id
                )));
            }
            by_class.entry(ex.class_id).or_default().push(ex);
        }

        let mut all_classes: Vec<usize> = self.slots.keys().copied().collect();
        all_classes.extend(by_class.keys().copied());
        all_classes.sort_unstable();
        let quotas = per_class_quotas(self.capacity, &all_classes);

        let mut slots = BTreeMap::new();
        for (&class, examples) in &self.slots {
            let quota = quotas[&class];
            slots.insert(class, examples[..quota.min(examples.len())].to_vec());
        }
        for (class, examples) in by_class {
            let quota = quotas[&class];
            let picked = match self.policy {
                ReplayPolicy::RandomBalanced => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(((self.updates as u64) << 32) | class as u64);
                    sample_uniform(&examples, quota, &mut rng)
                }
                ReplayPolicy::Herding => herd(&examples, quota, model.expect("checked above"))?,
            };
            slots.insert(class, picked);
        }
        Ok(ReplayMemory {
            capacity: self.capacity,
            policy: self.policy,
            seed: self.seed,
            updates: self.updates + 1,
            slots,
        })
    }
}

/// Splits `capacity` across classes: `floor(capacity / n)` each, with the
/// remainder distributed to the lowest class ids.
fn per_class_quotas(capacity: usize, classes: &[usize]) -> BTreeMap<usize, usize> {
    let n = classes.len().max(1);
    let base = capacity / n;
    let remainder = capacity % n;
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, base + usize::from(i < remainder)))
        .collect()
}

fn sample_uniform(
    examples: &[&LabeledExample],
    quota: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledExample> {
    if examples.len() <= quota {
        return examples.iter().map(|&e| e.clone()).collect();
    }
    let mut indices = rand::seq::index::sample(rng, examples.len(), quota).into_vec();
    indices.sort_unstable();
    indices.into_iter().map(|i| examples[i].clone()).collect()
}

/// Greedy herding: at each step pick the example whose addition keeps the
/// mean of the selected exemplars' features closest (squared L2) to the
/// class feature mean. Ties resolve to the lowest index.
fn herd(examples: &[&LabeledExample], quota: usize, model: &Model) -> Result<Vec<LabeledExample>> {
    if examples.len() <= quota {
        return Ok(examples.iter().map(|&e| e.clone()).collect());
    }
    let dim = examples[0].features.len();
    let mut batch = Matrix::zeros(examples.len(), dim);
    for (r, ex) in examples.iter().enumerate() {
        batch.row_mut(r).copy_from_slice(&ex.features);
    }
    let (features, _) = model.forward(&batch)?;
    let feat_dim = features.cols();

    let mut class_mean = vec![0.0; feat_dim];
    for r in 0..features.rows() {
        for (m, &v) in class_mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in &mut class_mean {
        *m /= examples.len() as f64;
    }

    let mut selected = vec![false; examples.len()];
    let mut order = Vec::with_capacity(quota);
    let mut running_sum = vec![0.0; feat_dim];
    for step in 1..=quota {
        let mut best: Option<(usize, f64)> = None;
        for (i, &already) in selected.iter().enumerate() {
            if already {
                continue;
            }
            let row = features.row(i);
            let mut dist = 0.0;
            for d in 0..feat_dim {
                let candidate_mean = (running_sum[d] + row[d]) / step as f64;
                let diff = class_mean[d] - candidate_mean;
                dist += diff * diff;
            }
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (idx, _) = best.expect("quota below example count");
        selected[idx] = true;
        for (s, &v) in running_sum.iter_mut().zip(features.row(idx)) {
            *s += v;
        }
        order.push(idx);
    }
    Ok(order.into_iter().map(|i| examples[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadLayout;

    fn examples(class: usize, task: usize, values: &[f64]) -> Vec<LabeledExample> {
        values
            .iter()
            .map(|&v| LabeledExample {
                features: vec![v],
                class_id: class,
                task_id: task,
            })
            .collect()
    }

    fn identity_model(dim: usize) -> Model {
        let mut layout = HeadLayout::new();
        layout.push_task(0, dim).unwrap();
        Model::new(Vec::new(), Matrix::identity(dim), vec![0.0; dim], layout).unwrap()
    }

    #[test]
    fn even_split_across_two_classes() {
        let memory = ReplayMemory::new(10, ReplayPolicy::RandomBalanced, 1);
        let mut task = examples(0, 0, &[0.0; 20]);
        task.extend(examples(1, 0, &[1.0; 20]));
        let updated = memory.update(&task, None).unwrap();
        assert_eq!(updated.per_class_counts(), BTreeMap::from([(0, 5), (1, 5)]));
        assert_eq!(updated.len(), 10);
    }

    #[test]
    fn remainder_goes_to_lowest_classes() {
        let memory = ReplayMemory::new(10, ReplayPolicy::RandomBalanced, 1);
        let mut task = examples(0, 0, &[0.0; 8]);
        task.extend(examples(1, 0, &[1.0; 8]));
        task.extend(examples(2, 0, &[2.0; 8]));
        let updated = memory.update(&task, None).unwrap();
        assert_eq!(
            updated.per_class_counts(),
            BTreeMap::from([(0, 4), (1, 3), (2, 3)])
        );
    }

    #[test]
    fn update_truncates_old_slots_to_new_quota() {
        let memory = ReplayMemory::new(10, ReplayPolicy::RandomBalanced, 1);
        let mut first = examples(0, 0, &[0.0; 12]);
        first.extend(examples(1, 0, &[1.0; 12]));
        let after_first = memory.update(&first, None).unwrap();
        let kept: Vec<LabeledExample> = after_first.examples().cloned().collect();

        let mut second = examples(2, 1, &[2.0; 12]);
        second.extend(examples(3, 1, &[3.0; 12]));
        let after_second = after_first.update(&second, None).unwrap();
        assert_eq!(
            after_second.per_class_counts(),
            BTreeMap::from([(0, 3), (1, 3), (2, 2), (3, 2)])
        );
        assert_eq!(after_second.len(), 10);
        // Truncation keeps the selection-order prefix of each old slot.
        let class0: Vec<_> = after_second
            .examples()
            .filter(|e| e.class_id == 0)
            .cloned()
            .collect();
        assert_eq!(class0[..], kept[..3]);
    }

    #[test]
    fn rejects_classes_already_stored() {
        let memory = ReplayMemory::new(10, ReplayPolicy::RandomBalanced, 1);
        let task = examples(0, 0, &[0.0; 5]);
        let updated = memory.update(&task, None).unwrap();
        assert!(updated.update(&task, None).is_err());
    }

    #[test]
    fn herding_requires_a_model() {
        let memory = ReplayMemory::new(4, ReplayPolicy::Herding, 1);
        let task = examples(0, 0, &[0.0; 5]);
        assert!(matches!(memory.update(&task, None), Err(Error::Config(_))));
    }

    #[test]
    fn herding_picks_mean_closest_examples() {
        let memory = ReplayMemory::new(2, ReplayPolicy::Herding, 1);
        let task = examples(0, 0, &[0.0, 1.0, 10.0]);
        let model = identity_model(1);
        let updated = memory.update(&task, Some(&model)).unwrap();
        let picked: Vec<f64> = updated.examples().map(|e| e.features[0]).collect();
        // Mean is 11/3; the single closest point is 1.0, then adding 10.0
        // brings the pair mean (5.5) closer than adding 0.0 (0.5).
        assert_eq!(picked, vec![1.0, 10.0]);
    }

    #[test]
    fn herding_tie_breaks_to_first_index() {
        let memory = ReplayMemory::new(2, ReplayPolicy::Herding, 1);
        let task = examples(0, 0, &[3.0, 3.0, 3.0, 3.0]);
        let model = identity_model(1);
        let updated = memory.update(&task, Some(&model)).unwrap();
        let picked: Vec<LabeledExample> = updated.examples().cloned().collect();
        assert_eq!(picked[..], task[..2]);
    }

    #[test]
    fn random_selection_is_deterministic() {
        let memory = ReplayMemory::new(3, ReplayPolicy::RandomBalanced, 42);
        let task = examples(0, 0, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let a = memory.update(&task, None).unwrap();
        let b = memory.update(&task, None).unwrap();
        assert_eq!(a, b);
        let other_seed = ReplayMemory::new(3, ReplayPolicy::RandomBalanced, 43);
        let c = other_seed.update(&task, None).unwrap();
        let av: Vec<f64> = a.examples().map(|e| e.features[0]).collect();
        let cv: Vec<f64> = c.examples().map(|e| e.features[0]).collect();
        assert_ne!(av, cv);
    }
}
