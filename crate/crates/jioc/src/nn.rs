//! Small multilayer perceptron with explicit forward and backward passes.
//!
//! A [`Model`] is a stack of dense extractor layers followed by a linear
//! classifier whose output rows are partitioned into per-task head ranges.
//! Heads are appended as tasks arrive; appending never disturbs existing
//! parameters. All arithmetic is 64-bit so analytic gradients can be checked
//! against central finite differences.

use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Element-wise nonlinearity for extractor layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the post-activation output.
    pub fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// One dense extractor layer: `a = activation(W x + b)` with `W` of shape (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }
}

/// Contiguous slice of classifier outputs belonging to one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadRange {
    pub task_id: usize,
    pub start: usize,
    pub end: usize,
}

impl HeadRange {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// Partition of the classifier output into per-task head ranges.
///
/// Ranges are contiguous, disjoint and cover `[0, total_width)` in task
/// arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeadLayout {
    ranges: Vec<HeadRange>,
}

impl HeadLayout {
    pub fn new() -> Self {
        HeadLayout { ranges: Vec::new() }
    }

    /// Appends a head of `width` classes for `task_id` at the end of the layout.
    pub fn push_task(&mut self, task_id: usize, width: usize) -> Result<()> {
        if width == 0 {
            return Err(Error::Config("head width must be positive".into()));
        }
        if self.ranges.iter().any(|r| r.task_id == task_id) {
            return Err(Error::Config(format!(
                "task {task_id} already has a head range"
            )));
        }
        let start = self.total_width();
        self.ranges.push(HeadRange {
            task_id,
            start,
            end: start + width,
        });
        Ok(())
    }

    pub fn total_width(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn num_tasks(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[HeadRange] {
        &self.ranges
    }

    pub fn range_for_task(&self, task_id: usize) -> Option<Range<usize>> {
        self.ranges
            .iter()
            .find(|r| r.task_id == task_id)
            .map(|r| r.range())
    }

    /// Task owning the given class index.
    pub fn task_of_class(&self, class_index: usize) -> Option<usize> {
        self.ranges
            .iter()
            .find(|r| r.range().contains(&class_index))
            .map(|r| r.task_id)
    }

    /// Layout of the first `n_tasks` ranges, e.g. the old-head view a snapshot exposes.
    pub fn prefix(&self, n_tasks: usize) -> HeadLayout {
        HeadLayout {
            ranges: self.ranges[..n_tasks.min(self.ranges.len())].to_vec(),
        }
    }
}

/// Borrowed view of a batch of pre-softmax logits (one row per sample)
/// together with the head layout partitioning their columns.
#[derive(Debug, Clone, Copy)]
pub struct LogitsPartition<'a> {
    logits: &'a Matrix,
    layout: &'a HeadLayout,
}

impl<'a> LogitsPartition<'a> {
    pub fn new(logits: &'a Matrix, layout: &'a HeadLayout) -> Result<Self> {
        if logits.cols() != layout.total_width() {
            return Err(Error::shape(
                "LogitsPartition::new",
                layout.total_width(),
                logits.cols(),
            ));
        }
        Ok(LogitsPartition { logits, layout })
    }

    pub fn logits(&self) -> &'a Matrix {
        self.logits
    }

    pub fn layout(&self) -> &'a HeadLayout {
        self.layout
    }

    pub fn rows(&self) -> usize {
        self.logits.rows()
    }

    pub fn width(&self) -> usize {
        self.logits.cols()
    }
}

/// Feature extractor plus per-task-partitioned linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    extractor: Vec<DenseLayer>,
    classifier_weight: Matrix,
    classifier_bias: Vec<f64>,
    layout: HeadLayout,
}

/// Per-parameter gradients mirroring a [`Model`]'s shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub extractor: Vec<(Matrix, Vec<f64>)>,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vec<f64>,
}

/// Post-activation outputs of every extractor layer, kept for the backward pass.
pub struct ForwardCache {
    activations: Vec<Matrix>,
}

impl Model {
    pub fn new(
        extractor: Vec<DenseLayer>,
        classifier_weight: Matrix,
        classifier_bias: Vec<f64>,
        layout: HeadLayout,
    ) -> Result<Self> {
        let mut width = extractor
            .first()
            .map_or(classifier_weight.cols(), |l| l.in_width());
        for (i, layer) in extractor.iter().enumerate() {
            if layer.in_width() != width {
                return Err(Error::shape(
                    "Model::new layer chain",
                    width,
                    format!("layer {i} input {}", layer.in_width()),
                ));
            }
            if layer.bias.len() != layer.out_width() {
                return Err(Error::shape(
                    "Model::new layer bias",
                    layer.out_width(),
                    layer.bias.len(),
                ));
            }
            width = layer.out_width();
        }
        if classifier_weight.cols() != width {
            return Err(Error::shape(
                "Model::new classifier input",
                width,
                classifier_weight.cols(),
            ));
        }
        if classifier_bias.len() != classifier_weight.rows() {
            return Err(Error::shape(
                "Model::new classifier bias",
                classifier_weight.rows(),
                classifier_bias.len(),
            ));
        }
        if layout.total_width() != classifier_weight.rows() {
            return Err(Error::shape(
                "Model::new head layout",
                classifier_weight.rows(),
                layout.total_width(),
            ));
        }
        Ok(Model {
            extractor,
            classifier_weight,
            classifier_bias,
            layout,
        })
    }

    pub fn input_width(&self) -> usize {
        self.extractor
            .first()
            .map_or(self.classifier_weight.cols(), |l| l.in_width())
    }

    pub fn feature_width(&self) -> usize {
        self.classifier_weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.classifier_weight.rows()
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn extractor(&self) -> &[DenseLayer] {
        &self.extractor
    }

    pub fn classifier_weight(&self) -> &Matrix {
        &self.classifier_weight
    }

    pub fn classifier_bias(&self) -> &[f64] {
        &self.classifier_bias
    }

    /// Runs the extractor and classifier on a batch (one sample per row).
    ///
    /// Returns the extractor outputs and the pre-softmax logits, one row per
    /// input row.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let (cache, logits) = self.forward_cached(batch)?;
        let features = cache.activations.into_iter().last().unwrap_or_else(|| {
            // Unreachable: the cache always holds at least the input batch.
            Matrix::zeros(0, 0)
        });
        Ok((features, logits))
    }

    /// Like [`Model::forward`] but keeps every intermediate activation for
    /// [`Model::backward`].
    pub fn forward_cached(&self, batch: &Matrix) -> Result<(ForwardCache, Matrix)> {
        if batch.cols() != self.input_width() {
            return Err(Error::shape(
                "Model::forward batch width",
                self.input_width(),
                batch.cols(),
            ));
        }
        let mut activations = Vec::with_capacity(self.extractor.len() + 1);
        activations.push(batch.clone());
        for layer in &self.extractor {
            let mut z = activations.last().unwrap().matmul_nt(&layer.weight)?;
            z.add_row_broadcast(&layer.bias)?;
            z.map_inplace(|v| layer.activation.apply(v));
            activations.push(z);
        }
        let features = activations.last().unwrap();
        let mut logits = features.matmul_nt(&self.classifier_weight)?;
        logits.add_row_broadcast(&self.classifier_bias)?;
        Ok((ForwardCache { activations }, logits))
    }

    /// Wraps a logits batch produced by [`Model::forward`] in a partitioned view.
    pub fn partition<'a>(&'a self, logits: &'a Matrix) -> Result<LogitsPartition<'a>> {
        LogitsPartition::new(logits, &self.layout)
    }

    /// Backpropagates a per-row logit gradient through classifier and
    /// extractor, returning gradients of the summed scalar loss with respect
    /// to every parameter.
    pub fn backward(&self, cache: &ForwardCache, logit_grad: &Matrix) -> Result<GradientSet> {
        let features = cache
            .activations
            .last()
            .ok_or_else(|| Error::Domain("forward cache is empty".into()))?;
        if logit_grad.rows() != features.rows() {
            return Err(Error::shape(
                "Model::backward rows",
                features.rows(),
                logit_grad.rows(),
            ));
        }
        if logit_grad.cols() != self.output_width() {
            return Err(Error::shape(
                "Model::backward logit width",
                self.output_width(),
                logit_grad.cols(),
            ));
        }

        let classifier_weight_grad = logit_grad.matmul_tn(features)?;
        let classifier_bias_grad = column_sums(logit_grad);
        let mut upstream = logit_grad.matmul(&self.classifier_weight)?;

        let mut extractor_grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(self.extractor.len());
        for (idx, layer) in self.extractor.iter().enumerate().rev() {
            let output = &cache.activations[idx + 1];
            let input = &cache.activations[idx];
            // dZ = dA ⊙ activation'(A)
            let mut dz = upstream;
            for r in 0..dz.rows() {
                let out_row = output.row(r);
                for (g, &a) in dz.row_mut(r).iter_mut().zip(out_row) {
                    *g *= layer.activation.grad_from_output(a);
                }
            }
            let weight_grad = dz.matmul_tn(input)?;
            let bias_grad = column_sums(&dz);
            upstream = dz.matmul(&layer.weight)?;
            extractor_grads.push((weight_grad, bias_grad));
        }
        extractor_grads.reverse();

        Ok(GradientSet {
            extractor: extractor_grads,
            classifier_weight: classifier_weight_grad,
            classifier_bias: classifier_bias_grad,
        })
    }

    /// In-place SGD update `p <- p - lr * g`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.extractor.len() != self.extractor.len() {
            return Err(Error::shape(
                "Model::sgd_step layers",
                self.extractor.len(),
                grads.extractor.len(),
            ));
        }
        grads.validate_finite()?;
        for (layer, (wg, bg)) in self.extractor.iter_mut().zip(&grads.extractor) {
            apply_update(&mut layer.weight, wg, &mut layer.bias, bg, lr)?;
        }
        apply_update(
            &mut self.classifier_weight,
            &grads.classifier_weight,
            &mut self.classifier_bias,
            &grads.classifier_bias,
            lr,
        )
    }

    /// Appends freshly initialized classifier rows for a new task head.
    ///
    /// Existing parameters are untouched; the new rows are drawn from the same
    /// fan-in-scaled uniform distribution as [`init_model`].
    pub fn append_head(&mut self, task_id: usize, classes: usize, seed: u64) -> Result<()> {
        if classes == 0 {
            return Err(Error::Config("new head needs at least one class".into()));
        }
        let feat = self.feature_width();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = init_dist(feat);
        let old = std::mem::replace(&mut self.classifier_weight, Matrix::zeros(0, 0));
        let mut data = old.into_data();
        for _ in 0..classes * feat {
            data.push(dist.sample(&mut rng));
        }
        let rows = self.layout.total_width() + classes;
        self.classifier_weight = Matrix::from_vec(rows, feat, data)?;
        self.classifier_bias
            .extend(std::iter::repeat_n(0.0, classes));
        self.layout.push_task(task_id, classes)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.extractor
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum::<usize>()
            + self.classifier_weight.data().len()
            + self.classifier_bias.len()
    }

    /// Flattens every parameter in a fixed order (layer weights then bias,
    /// classifier last).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.extractor {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.classifier_weight.data());
        out.extend_from_slice(&self.classifier_bias);
        out
    }

    /// Writes back a flat parameter vector produced by [`Model::flat_params`].
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "Model::set_flat_params",
                self.param_count(),
                params.len(),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.extractor {
            let wlen = layer.weight.data().len();
            layer
                .weight
                .data_mut()
                .copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        let wlen = self.classifier_weight.data().len();
        self.classifier_weight
            .data_mut()
            .copy_from_slice(&params[offset..offset + wlen]);
        offset += wlen;
        self.classifier_bias.copy_from_slice(&params[offset..]);
        Ok(())
    }
}

impl GradientSet {
    pub fn validate_finite(&self) -> Result<()> {
        for (i, (w, b)) in self.extractor.iter().enumerate() {
            w.validate_finite(&format!("gradient of layer {i} weight"))?;
            for &v in b {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite value in gradient of layer {i} bias"
                    )));
                }
            }
        }
        self.classifier_weight
            .validate_finite("classifier weight gradient")?;
        for &v in &self.classifier_bias {
            if !v.is_finite() {
                return Err(Error::Numeric(
                    "non-finite value in classifier bias gradient".into(),
                ));
            }
        }
        Ok(())
    }

    /// Flat view matching [`Model::flat_params`] ordering.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.extractor {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out.extend_from_slice(self.classifier_weight.data());
        out.extend_from_slice(&self.classifier_bias);
        out
    }
}

fn apply_update(
    weight: &mut Matrix,
    weight_grad: &Matrix,
    bias: &mut [f64],
    bias_grad: &[f64],
    lr: f64,
) -> Result<()> {
    if weight.rows() != weight_grad.rows() || weight.cols() != weight_grad.cols() {
        return Err(Error::shape(
            "sgd_step weight",
            format!("{}x{}", weight.rows(), weight.cols()),
            format!("{}x{}", weight_grad.rows(), weight_grad.cols()),
        ));
    }
    if bias.len() != bias_grad.len() {
        return Err(Error::shape("sgd_step bias", bias.len(), bias_grad.len()));
    }
    for (p, &g) in weight.data_mut().iter_mut().zip(weight_grad.data()) {
        *p -= lr * g;
    }
    for (p, &g) in bias.iter_mut().zip(bias_grad) {
        *p -= lr * g;
    }
    Ok(())
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, &v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums
}

/// Layer widths for [`init_model`]: input width, hidden widths, classifier width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        ModelSpec {
            widths,
            activation: Activation::Relu,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(
                "model spec needs at least input and output widths".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

fn init_dist(fan_in: usize) -> Uniform<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Uniform::new_inclusive(-limit, limit)
}

/// Builds a model with fan-in-scaled uniform weights, zero biases and a single
/// head covering the whole classifier.
///
/// Deterministic for a given `(spec, seed)`.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut model = init_backbone(&spec.widths[..spec.widths.len() - 1], spec.activation, seed)?;
    // Distinct stream for the head so backbones shared across runs stay
    // identical regardless of how the classifier grows.
    model.append_head(
        0,
        *spec.widths.last().unwrap(),
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok(model)
}

/// Builds a model with a headless classifier: `widths` lists input and hidden
/// widths, features are the last entry (the raw inputs when no hidden layers
/// are given), and heads arrive later via [`Model::append_head`].
pub fn init_backbone(widths: &[usize], activation: Activation, seed: u64) -> Result<Model> {
    if widths.is_empty() {
        return Err(Error::Config("backbone needs an input width".into()));
    }
    if widths.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extractor = Vec::new();
    for pair in widths.windows(2) {
        let (fan_in, out) = (pair[0], pair[1]);
        let dist = init_dist(fan_in);
        let data: Vec<f64> = (0..out * fan_in).map(|_| dist.sample(&mut rng)).collect();
        extractor.push(DenseLayer {
            weight: Matrix::from_vec(out, fan_in, data)?,
            bias: vec![0.0; out],
            activation,
        });
    }
    let feat = *widths.last().unwrap();
    Model::new(
        extractor,
        Matrix::zeros(0, feat),
        Vec::new(),
        HeadLayout::new(),
    )
}

/// Numerically stabilized softmax.
///
/// With `index_range` the normalization runs only over that slice of the
/// logits (split softmax); the returned vector has the range's length.
pub fn softmax(logits: &[f64], index_range: Option<Range<usize>>) -> Result<Vec<f64>> {
    let range = index_range.unwrap_or(0..logits.len());
    if range.is_empty() {
        return Err(Error::Domain("softmax over an empty range".into()));
    }
    if range.end > logits.len() {
        return Err(Error::shape(
            "softmax range",
            format!("within 0..{}", logits.len()),
            format!("{}..{}", range.start, range.end),
        ));
    }
    let slice = &logits[range];
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = slice.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Row-wise softmax over the full logit width.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let probs = softmax(logits.row(r), None)?;
        out.row_mut(r).copy_from_slice(&probs);
    }
    Ok(out)
}
