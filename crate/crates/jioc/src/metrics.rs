//! Accuracy metrics over incremental rounds.
//!
//! After finishing task `t` the model is evaluated on every task seen so
//! far, giving per-task accuracies `A_1..A_t`. Each round records those
//! fractions plus three aggregates: the mean over all seen tasks, the new
//! task's accuracy, and the mean over old tasks (absent in round 1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::losses::LossTerms;
use crate::nn::Model;
use crate::tensor::Matrix;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Evaluation results after one incremental round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index; round `t` follows training on task `t`.
    pub round: usize,
    /// `A_1..A_t` as fractions in `[0, 1]`.
    pub per_task_accuracy: Vec<f64>,
    pub all_tasks_avg: f64,
    pub new_task_acc: f64,
    /// Mean accuracy over tasks `1..t-1`; `None` in the first round.
    pub old_tasks_avg: Option<f64>,
}

/// Full record of one training run: per-round accuracies, per-task loss
/// series and an echo of the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub config_echo: BTreeMap<String, String>,
    pub per_round: Vec<RoundMetrics>,
    /// One series per task, one entry per training batch.
    pub loss_curves: Vec<Vec<LossTerms>>,
}

impl Default for RunMetrics {
    fn default() -> Self {
        Self::new()
    }
}

impl RunMetrics {
    pub fn new() -> Self {
        RunMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            config_echo: BTreeMap::new(),
            per_round: Vec::new(),
            loss_curves: Vec::new(),
        }
    }

    pub fn num_rounds(&self) -> usize {
        self.per_round.len()
    }

    /// Average accuracy over all tasks after the final round.
    pub fn final_average(&self) -> Option<f64> {
        self.per_round.last().map(|r| r.all_tasks_avg)
    }

    /// Appends the evaluation of round `len+1` from its per-task accuracies,
    /// computing the three aggregates.
    pub fn push_round(&mut self, per_task_accuracy: Vec<f64>) -> Result<()> {
        let round = self.per_round.len() + 1;
        if per_task_accuracy.len() != round {
            return Err(Error::shape(
                "push_round accuracies",
                round,
                per_task_accuracy.len(),
            ));
        }
        let all_tasks_avg = average_accuracy(&per_task_accuracy)?;
        let new_task_acc = *per_task_accuracy.last().unwrap();
        let old_tasks_avg = if round > 1 {
            Some(average_accuracy(&per_task_accuracy[..round - 1])?)
        } else {
            None
        };
        self.per_round.push(RoundMetrics {
            round,
            per_task_accuracy,
            all_tasks_avg,
            new_task_acc,
            old_tasks_avg,
        });
        Ok(())
    }

    pub fn push_loss_curve(&mut self, series: Vec<LossTerms>) {
        self.loss_curves.push(series);
    }

    /// Checks every recorded invariant: bounds, aggregate consistency and
    /// loss finiteness.
    pub fn validate(&self) -> Result<()> {
        for (i, round) in self.per_round.iter().enumerate() {
            let t = i + 1;
            if round.round != t {
                return Err(Error::Domain(format!(
                    "round index {} at position {t}",
                    round.round
                )));
            }
            if round.per_task_accuracy.len() != t {
                return Err(Error::shape(
                    "round accuracy count",
                    t,
                    round.per_task_accuracy.len(),
                ));
            }
            for &a in round
                .per_task_accuracy
                .iter()
                .chain([&round.all_tasks_avg, &round.new_task_acc])
                .chain(round.old_tasks_avg.iter())
            {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Domain(format!(
                        "accuracy {a} outside [0, 1] in round {t}"
                    )));
                }
            }
            let mean = average_accuracy(&round.per_task_accuracy)?;
            if (round.all_tasks_avg - mean).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "round {t}: all_tasks_avg {} disagrees with mean {mean}",
                    round.all_tasks_avg
                )));
            }
            let new = *round.per_task_accuracy.last().unwrap();
            if (round.new_task_acc - new).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "round {t}: new_task_acc {} is not A_{t} = {new}",
                    round.new_task_acc
                )));
            }
            match round.old_tasks_avg {
                None if t == 1 => {}
                None => {
                    return Err(Error::Domain(format!("round {t}: old_tasks_avg missing")));
                }
                Some(_) if t == 1 => {
                    return Err(Error::Domain(
                        "round 1 must not report an old-task average".into(),
                    ));
                }
                Some(old) => {
                    let expected = average_accuracy(&round.per_task_accuracy[..t - 1])?;
                    if (old - expected).abs() > 1e-12 {
                        return Err(Error::Domain(format!(
                            "round {t}: old_tasks_avg {old} disagrees with mean {expected}"
                        )));
                    }
                    let reconstructed = round.new_task_acc + (t - 1) as f64 * old;
                    if (t as f64 * round.all_tasks_avg - reconstructed).abs() > 1e-9 {
                        return Err(Error::Domain(format!(
                            "round {t}: aggregates are mutually inconsistent"
                        )));
                    }
                }
            }
        }
        for (task, series) in self.loss_curves.iter().enumerate() {
            for (i, terms) in series.iter().enumerate() {
                for v in [
                    terms.l_ic,
                    terms.l_oc_old_tasks,
                    terms.l_oc_suppress,
                    terms.total,
                ] {
                    if !v.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite loss recorded for task {task}, batch {i}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fraction of examples whose highest-scoring head over all classes equals
/// the true class. The argmax of the logits equals the argmax of the global
/// softmax, so no normalization is needed.
pub fn task_accuracy(model: &Model, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Domain("accuracy over an empty task set".into()));
    }
    let width = model.output_width();
    let dim = examples[0].features.len();
    let mut batch = Matrix::zeros(examples.len(), dim);
    for (r, ex) in examples.iter().enumerate() {
        if ex.class_id >= width {
            return Err(Error::shape(
                "task_accuracy class coverage",
                format!("< {width}"),
                ex.class_id,
            ));
        }
        batch.row_mut(r).copy_from_slice(&ex.features);
    }
    let (_, logits) = model.forward(&batch)?;
    let mut correct = 0usize;
    for (r, ex) in examples.iter().enumerate() {
        let row = logits.row(r);
        let mut argmax = 0usize;
        for (u, &v) in row.iter().enumerate() {
            if v > row[argmax] {
                argmax = u;
            }
        }
        if argmax == ex.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Arithmetic mean of per-task accuracies.
pub fn average_accuracy(per_task: &[f64]) -> Result<f64> {
    if per_task.is_empty() {
        return Err(Error::Domain("average over an empty accuracy list".into()));
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// `A_1..A_t` for the tasks seen after round `t` (0-based `upto_task`),
/// using each task's held-out split where present.
pub fn evaluate_round(
    model: &Model,
    stream: &crate::data::TaskStream,
    upto_task: usize,
) -> Result<Vec<f64>> {
    (0..=upto_task)
        .map(|t| task_accuracy(model, stream.eval_examples(t)))
        .collect()
}
