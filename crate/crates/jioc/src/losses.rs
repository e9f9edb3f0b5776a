//! Loss terms for replay-based class-incremental training.
//!
//! The objective combines three parts: a gradient-magnitude-weighted
//! cross-entropy over all heads, a per-old-task tempered distillation term
//! against a frozen snapshot of the previous model, and a suppression term
//! penalizing probability mass that replayed old-task samples place on the
//! new task's heads. Every function here is pure; gradients with respect to
//! logits are provided alongside each loss so the trainer can assemble one
//! backward pass.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{HeadLayout, LogitsPartition};
use crate::tensor::Matrix;

/// Floor applied to probabilities before taking logs, so an exactly-zero
/// true-class probability yields a large finite loss instead of infinity.
pub const LOG_CLAMP_FLOOR: f64 = 1e-12;

/// One-hot classification target resolved against a head layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    class_index: usize,
    task_id: usize,
    width: usize,
}

impl OneHotLabel {
    /// Builds a label for `class_index`, resolving the owning task from the
    /// layout. Fails if the class falls outside every head range.
    pub fn from_class(class_index: usize, layout: &HeadLayout) -> Result<Self> {
        let task_id = layout.task_of_class(class_index).ok_or_else(|| {
            Error::Domain(format!(
                "class {class_index} is outside the {}-wide head layout",
                layout.total_width()
            ))
        })?;
        Ok(OneHotLabel {
            class_index,
            task_id,
            width: layout.total_width(),
        })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Per-sample stop-gradient weights `delta = 1 - p_true`, recomputed each batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaWeights(Vec<f64>);

impl DeltaWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("delta weight {v} outside [0, 1]")));
            }
        }
        Ok(DeltaWeights(values))
    }

    /// Weight 1 for every sample, which reduces the weighted loss to plain
    /// cross-entropy.
    pub fn ones(n: usize) -> Self {
        DeltaWeights(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Pre-update logits of the previous model over its own heads, captured once
/// per task and immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLogits {
    logits: Matrix,
    layout: HeadLayout,
}

impl SnapshotLogits {
    pub fn capture(logits: Matrix, layout: HeadLayout) -> Result<Self> {
        if logits.cols() != layout.total_width() {
            return Err(Error::shape(
                "SnapshotLogits::capture",
                layout.total_width(),
                logits.cols(),
            ));
        }
        Ok(SnapshotLogits { logits, layout })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn rows(&self) -> usize {
        self.logits.rows()
    }
}

/// The combined objective broken into its reported parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_ic: f64,
    pub l_oc_old_tasks: f64,
    pub l_oc_suppress: f64,
    pub total: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub temperature: f64,
}

fn check_prob_rows(probs: &Matrix, context: &str) -> Result<()> {
    for r in 0..probs.rows() {
        let mut sum = 0.0;
        for &p in probs.row(r) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "{context}: probability {p} in row {r} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Domain(format!(
                "{context}: row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

fn check_labels(probs: &Matrix, labels: &[OneHotLabel], context: &str) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(Error::shape(context, probs.rows(), labels.len()));
    }
    for label in labels {
        if label.width != probs.cols() {
            return Err(Error::shape(
                format!("{context} label width"),
                probs.cols(),
                label.width,
            ));
        }
    }
    Ok(())
}

/// Mean negative log-probability of the true class, with log clamping.
///
/// Returns the loss and the number of clamped probabilities.
pub fn cross_entropy_diag(probs: &Matrix, labels: &[OneHotLabel]) -> Result<(f64, usize)> {
    let ones = DeltaWeights::ones(labels.len());
    ic_loss_diag(probs, labels, &ones)
}

/// Mean negative log-probability of the true class over the batch.
pub fn cross_entropy(probs: &Matrix, labels: &[OneHotLabel]) -> Result<f64> {
    cross_entropy_diag(probs, labels).map(|(v, _)| v)
}

/// Delta-weighted cross-entropy with per-sample clamp diagnostics.
pub fn ic_loss_diag(
    probs: &Matrix,
    labels: &[OneHotLabel],
    deltas: &DeltaWeights,
) -> Result<(f64, usize)> {
    check_prob_rows(probs, "ic_loss probs")?;
    check_labels(probs, labels, "ic_loss labels")?;
    if deltas.len() != labels.len() {
        return Err(Error::shape("ic_loss deltas", labels.len(), deltas.len()));
    }
    if labels.is_empty() {
        return Err(Error::Domain("loss over an empty batch".into()));
    }
    let mut sum = 0.0;
    let mut clamped = 0;
    for (r, (label, &delta)) in labels.iter().zip(deltas.values()).enumerate() {
        let mut p = probs.get(r, label.class_index);
        if p < LOG_CLAMP_FLOOR {
            p = LOG_CLAMP_FLOOR;
            clamped += 1;
        }
        sum -= delta * p.ln();
    }
    Ok((sum / labels.len() as f64, clamped))
}

/// Delta-weighted cross-entropy averaged over the batch.
///
/// With all weights equal to 1 this is exactly [`cross_entropy`].
pub fn ic_loss(probs: &Matrix, labels: &[OneHotLabel], deltas: &DeltaWeights) -> Result<f64> {
    ic_loss_diag(probs, labels, deltas).map(|(v, _)| v)
}

/// Per-sample weights `delta = |p_true - 1| = 1 - p_true`, the magnitude of
/// the true-class logit gradient. Treated as constants: no gradient flows
/// through them.
pub fn delta_weights(probs: &Matrix, labels: &[OneHotLabel]) -> Result<DeltaWeights> {
    check_prob_rows(probs, "delta_weights probs")?;
    check_labels(probs, labels, "delta_weights labels")?;
    let values = labels
        .iter()
        .enumerate()
        .map(|(r, label)| 1.0 - probs.get(r, label.class_index))
        .collect();
    DeltaWeights::new(values)
}

/// Gradient of the (unnormalized, single-sample) cross-entropy with respect
/// to the logits: exactly `p - y` componentwise.
pub fn softmax_ce_logit_grad(probs: &[f64], label: &OneHotLabel) -> Result<Vec<f64>> {
    if label.width != probs.len() {
        return Err(Error::shape(
            "softmax_ce_logit_grad",
            label.width,
            probs.len(),
        ));
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(u, &p)| p - f64::from(u == label.class_index))
        .collect())
}

/// Logit gradient of [`ic_loss`] over a batch: row `s` is
/// `delta_s * (p_s - y_s) / n`.
pub fn ic_logit_grad(
    probs: &Matrix,
    labels: &[OneHotLabel],
    deltas: &DeltaWeights,
) -> Result<Matrix> {
    check_labels(probs, labels, "ic_logit_grad labels")?;
    if deltas.len() != labels.len() {
        return Err(Error::shape(
            "ic_logit_grad deltas",
            labels.len(),
            deltas.len(),
        ));
    }
    let n = labels.len() as f64;
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for (r, (label, &delta)) in labels.iter().zip(deltas.values()).enumerate() {
        let grad = softmax_ce_logit_grad(probs.row(r), label)?;
        for (o, g) in out.row_mut(r).iter_mut().zip(grad) {
            *o = delta * g / n;
        }
    }
    Ok(out)
}

fn tempered_log_softmax(logits: &[f64], eps: f64) -> Vec<f64> {
    let tempered: Vec<f64> = logits.iter().map(|&z| z / eps).collect();
    let max = tempered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + tempered.iter().map(|&t| (t - max).exp()).sum::<f64>().ln();
    tempered.into_iter().map(|t| t - lse).collect()
}

fn check_kd_inputs(
    current: &LogitsPartition<'_>,
    snapshot: &SnapshotLogits,
    eps: f64,
) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!(
            "distillation temperature must be positive, got {eps}"
        )));
    }
    if current.rows() != snapshot.rows() {
        return Err(Error::shape("kd rows", snapshot.rows(), current.rows()));
    }
    for range in snapshot.layout().ranges() {
        let cur = current.layout().range_for_task(range.task_id);
        if cur != Some(range.range()) {
            return Err(Error::shape(
                "kd head ranges",
                format!("task {} at {:?}", range.task_id, range.range()),
                format!("{cur:?}"),
            ));
        }
    }
    Ok(())
}

/// Distillation between the current logits and a frozen snapshot.
///
/// For every old task the logits over that task's head range are tempered by
/// `eps` and softmaxed separately; the KL divergence from snapshot to current
/// is summed over old tasks, averaged over samples and scaled by `eps^2` so
/// gradient magnitudes stay comparable across temperatures. With no old tasks
/// the loss is zero by definition.
pub fn kd_loss(current: LogitsPartition<'_>, snapshot: &SnapshotLogits, eps: f64) -> Result<f64> {
    check_kd_inputs(&current, snapshot, eps)?;
    if snapshot.layout().num_tasks() == 0 || snapshot.rows() == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for s in 0..snapshot.rows() {
        let cur_row = current.logits().row(s);
        let snap_row = snapshot.logits().row(s);
        for range in snapshot.layout().ranges() {
            let lp = tempered_log_softmax(&snap_row[range.range()], eps);
            let lq = tempered_log_softmax(&cur_row[range.range()], eps);
            for (&lp_v, &lq_v) in lp.iter().zip(&lq) {
                let p = lp_v.exp();
                if p > 0.0 {
                    acc += p * (lp_v - lq_v);
                }
            }
        }
    }
    Ok(eps * eps * acc / snapshot.rows() as f64)
}

/// Logit gradient of [`kd_loss`]: `eps * (q_u - p_u) / n` inside each old
/// task's head range, zero elsewhere (new heads included).
pub fn kd_logit_grad(
    current: LogitsPartition<'_>,
    snapshot: &SnapshotLogits,
    eps: f64,
) -> Result<Matrix> {
    check_kd_inputs(&current, snapshot, eps)?;
    let mut out = Matrix::zeros(current.rows(), current.width());
    if snapshot.layout().num_tasks() == 0 || snapshot.rows() == 0 {
        return Ok(out);
    }
    let n = snapshot.rows() as f64;
    for s in 0..snapshot.rows() {
        let cur_row = current.logits().row(s);
        let snap_row = snapshot.logits().row(s);
        for range in snapshot.layout().ranges() {
            let lp = tempered_log_softmax(&snap_row[range.range()], eps);
            let lq = tempered_log_softmax(&cur_row[range.range()], eps);
            for (offset, (&lp_v, &lq_v)) in lp.iter().zip(&lq).enumerate() {
                out.set(s, range.start + offset, eps * (lq_v.exp() - lp_v.exp()) / n);
            }
        }
    }
    Ok(out)
}

/// Probability mass that replayed old-task samples place on the new task's
/// heads, summed over samples and head indices, divided by `n_new`.
///
/// `probs_new_heads` holds one row per replayed old-task sample: the
/// global-softmax probabilities restricted to the new task's head range. An
/// empty matrix (no old samples, e.g. the first task) gives zero.
pub fn suppression_loss(probs_new_heads: &Matrix, n_new: usize) -> Result<f64> {
    if probs_new_heads.rows() == 0 {
        return Ok(0.0);
    }
    if n_new == 0 {
        return Err(Error::Domain(
            "suppression normalizer must be positive when old samples are present".into(),
        ));
    }
    for (r, row) in probs_new_heads.rows_iter().enumerate() {
        for &p in row {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "suppression probs: value {p} in row {r} outside [0, 1]"
                )));
            }
        }
    }
    let sum: f64 = probs_new_heads.data().iter().sum();
    Ok(sum / n_new as f64)
}

/// Logit gradient of [`suppression_loss`] when its probabilities come from
/// the global softmax of `probs`' logits.
///
/// `old_rows` selects the replayed old-task samples; rows of new-task samples
/// get zero gradient. For an old row with new-head mass `M`, the gradient at
/// column `u` is `p_u * (1[u in new_range] - M) / normalizer`.
pub fn suppression_logit_grad(
    probs: &Matrix,
    new_range: Range<usize>,
    old_rows: &[usize],
    normalizer: usize,
) -> Result<Matrix> {
    check_prob_rows(probs, "suppression_logit_grad probs")?;
    if new_range.end > probs.cols() || new_range.is_empty() {
        return Err(Error::shape(
            "suppression_logit_grad range",
            format!("non-empty within 0..{}", probs.cols()),
            format!("{new_range:?}"),
        ));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    if old_rows.is_empty() {
        return Ok(out);
    }
    if normalizer == 0 {
        return Err(Error::Domain(
            "suppression normalizer must be positive when old samples are present".into(),
        ));
    }
    for &s in old_rows {
        if s >= probs.rows() {
            return Err(Error::shape(
                "suppression_logit_grad old row",
                format!("< {}", probs.rows()),
                s,
            ));
        }
        let row = probs.row(s);
        let mass: f64 = row[new_range.clone()].iter().sum();
        for (u, &p) in row.iter().enumerate() {
            let indicator = f64::from(new_range.contains(&u));
            out.set(s, u, p * (indicator - mass) / normalizer as f64);
        }
    }
    Ok(out)
}

/// Combines the three terms into the overall objective
/// `total = ic + gamma1 * oc_old + gamma2 * oc_suppress`.
pub fn jioc_loss(
    ic: f64,
    oc_old: f64,
    oc_suppress: f64,
    gamma1: f64,
    gamma2: f64,
    temperature: f64,
) -> Result<LossTerms> {
    if gamma1 < 0.0 || gamma2 < 0.0 {
        return Err(Error::Config(format!(
            "loss weights must be nonnegative, got gamma1={gamma1} gamma2={gamma2}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    Ok(LossTerms {
        l_ic: ic,
        l_oc_old_tasks: oc_old,
        l_oc_suppress: oc_suppress,
        total: ic + gamma1 * oc_old + gamma2 * oc_suppress,
        gamma1,
        gamma2,
        temperature,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::nn::{softmax, softmax_rows};
    use proptest::prelude::*;

    fn logit_rows(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-30.0..30.0f64, rows * cols)
    }

    fn single_task_layout(width: usize) -> HeadLayout {
        let mut layout = HeadLayout::new();
        layout.push_task(0, width).unwrap();
        layout
    }

    proptest! {
        #[test]
        fn logit_grad_is_probs_minus_onehot(data in logit_rows(1, 5), class in 0usize..5) {
            let layout = single_task_layout(5);
            let label = OneHotLabel::from_class(class, &layout).unwrap();
            let p = softmax(&data, None).unwrap();
            let grad = softmax_ce_logit_grad(&p, &label).unwrap();
            for (u, &g) in grad.iter().enumerate() {
                let expected = p[u] - f64::from(u == class);
                prop_assert_eq!(g, expected);
            }
            let sum: f64 = grad.iter().sum();
            prop_assert!(sum.abs() < 1e-9);
        }

        #[test]
        fn delta_stays_in_unit_interval(data in logit_rows(4, 5), classes in proptest::collection::vec(0usize..5, 4)) {
            let layout = single_task_layout(5);
            let logits = Matrix::from_vec(4, 5, data).unwrap();
            let probs = softmax_rows(&logits).unwrap();
            let labels: Vec<_> = classes
                .iter()
                .map(|&c| OneHotLabel::from_class(c, &layout).unwrap())
                .collect();
            let deltas = delta_weights(&probs, &labels).unwrap();
            for (r, &d) in deltas.values().iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&d));
                let at_one = probs.get(r, classes[r]) == 1.0;
                prop_assert_eq!(d == 0.0, at_one);
            }
        }

        #[test]
        fn constant_weights_scale_cross_entropy(
            data in logit_rows(3, 4),
            classes in proptest::collection::vec(0usize..4, 3),
            c in 0.0..1.0f64,
        ) {
            let layout = single_task_layout(4);
            let logits = Matrix::from_vec(3, 4, data).unwrap();
            let probs = softmax_rows(&logits).unwrap();
            let labels: Vec<_> = classes
                .iter()
                .map(|&k| OneHotLabel::from_class(k, &layout).unwrap())
                .collect();
            let ce = cross_entropy(&probs, &labels).unwrap();
            let ones = DeltaWeights::ones(3);
            prop_assert!((ic_loss(&probs, &labels, &ones).unwrap() - ce).abs() <= 1e-12);
            let consts = DeltaWeights::new(vec![c; 3]).unwrap();
            prop_assert!((ic_loss(&probs, &labels, &consts).unwrap() - c * ce).abs() <= 1e-12);
        }

        #[test]
        fn kd_is_nonnegative_and_zero_at_identity(
            cur_old in logit_rows(3, 4),
            cur_new in logit_rows(3, 2),
            snap in logit_rows(3, 4),
            eps in 0.5..5.0f64,
        ) {
            let mut old = HeadLayout::new();
            old.push_task(0, 2).unwrap();
            old.push_task(1, 2).unwrap();
            let mut current_layout = old.clone();
            current_layout.push_task(2, 2).unwrap();

            let mut cur_data = Vec::new();
            for r in 0..3 {
                cur_data.extend_from_slice(&cur_old[r * 4..(r + 1) * 4]);
                cur_data.extend_from_slice(&cur_new[r * 2..(r + 1) * 2]);
            }
            let cur = Matrix::from_vec(3, 6, cur_data).unwrap();
            let snapshot =
                SnapshotLogits::capture(Matrix::from_vec(3, 4, snap.clone()).unwrap(), old).unwrap();
            let part = LogitsPartition::new(&cur, &current_layout).unwrap();
            prop_assert!(kd_loss(part, &snapshot, eps).unwrap() >= -1e-12);

            // Identical old-head logits give exactly zero regardless of new heads.
            let mut same_data = Vec::new();
            for r in 0..3 {
                same_data.extend_from_slice(&snap[r * 4..(r + 1) * 4]);
                same_data.extend_from_slice(&cur_new[r * 2..(r + 1) * 2]);
            }
            let same = Matrix::from_vec(3, 6, same_data).unwrap();
            let part = LogitsPartition::new(&same, &current_layout).unwrap();
            prop_assert_eq!(kd_loss(part, &snapshot, eps).unwrap(), 0.0);
        }

        #[test]
        fn tempering_preserves_argmax(data in logit_rows(1, 6), eps in 0.1..10.0f64) {
            // Skip near-ties, where float division could reorder.
            let mut sorted = data.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sorted[0] - sorted[1] > 1e-6);

            let argmax_raw = data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let tempered: Vec<f64> = data.iter().map(|&z| z / eps).collect();
            let p = softmax(&tempered, None).unwrap();
            let argmax_p = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            prop_assert_eq!(argmax_raw, argmax_p);
        }

        #[test]
        fn suppression_stays_in_bounds(
            data in logit_rows(4, 6),
            n_new in 1usize..10,
        ) {
            let logits = Matrix::from_vec(4, 6, data).unwrap();
            let probs = softmax_rows(&logits).unwrap();
            let mut sliced = Matrix::zeros(4, 2);
            for s in 0..4 {
                sliced.set(s, 0, probs.get(s, 4));
                sliced.set(s, 1, probs.get(s, 5));
            }
            let v = suppression_loss(&sliced, n_new).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(v <= 4.0 / n_new as f64 + 1e-9);
        }

        #[test]
        fn total_reconstructs_from_parts(
            ic in 0.0..10.0f64,
            oc_old in 0.0..10.0f64,
            oc_sup in 0.0..10.0f64,
            g1 in 0.0..3.0f64,
            g2 in 0.0..3.0f64,
        ) {
            let terms = jioc_loss(ic, oc_old, oc_sup, g1, g2, 2.0).unwrap();
            let rebuilt = terms.l_ic + terms.gamma1 * terms.l_oc_old_tasks
                + terms.gamma2 * terms.l_oc_suppress;
            prop_assert!((terms.total - rebuilt).abs() <= 1e-12);
        }
    }
}
