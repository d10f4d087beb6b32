//! Staged fully-connected network with exact manual backpropagation,
//! SGD with momentum and weight decay, and the two-phase learning-rate schedule.
//!
//! All arithmetic is `f64`. Matrices are row-major; a dense layer stores its
//! weight as `(out_width, in_width)` so that `y = x W^T + b` for a batch `x`
//! of shape `(batch, in_width)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{GrowError, Result};
use crate::morph::ArchSpec;
use crate::rng::{self, Rng, Stream};

/// Evaluation passes are chunked so a full-dataset forward never allocates
/// more than this many rows of activations at once.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GrowError::Shape(format!(
                "buffer of {} values cannot be {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Copies the listed rows into a new matrix, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// Dot product with four independent accumulators. The summation order
/// depends only on the slice length, so a row produces the same bits no
/// matter which batch it sits in.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Plain,
    Residual,
}

impl Family {
    pub fn block_kind(self) -> BlockKind {
        match self {
            Family::Plain => BlockKind::Plain,
            Family::Residual => BlockKind::Residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// `y = relu(Wx + b)`, square.
    Plain,
    /// `y = x + relu(Wx + b)`, square.
    Residual,
    /// `y = relu(Wx + b)`, changes width; only at the head of a stage.
    Downsample,
}

/// A weight matrix and bias vector. Also used as the container for
/// gradients, momentum buffers and EMA shadows of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_width: usize, in_width: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_width, in_width),
            bias: vec![0.0; out_width],
        }
    }

    /// He-normal weights (std `sqrt(2 / in_width)`), zero bias.
    pub fn he(out_width: usize, in_width: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, he_std(in_width)).expect("finite std");
        let data = (0..out_width * in_width)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            weight: Matrix {
                rows: out_width,
                cols: in_width,
                data,
            },
            bias: vec![0.0; out_width],
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows
    }

    pub fn same_shape(&self, other: &Dense) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }

    pub fn len(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x W^T + b`
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.out_width());
        for i in 0..x.rows {
            let xi = x.row(i);
            let oi = out.row_mut(i);
            for (j, o) in oi.iter_mut().enumerate() {
                *o = self.bias[j] + dot(xi, self.weight.row(j));
            }
        }
        out
    }

    /// Accumulates parameter gradients for `dz` (batch × out) with layer
    /// input `x` into `grad`, and returns the gradient w.r.t. `x`.
    fn backward(&self, x: &Matrix, dz: &Matrix, grad: &mut Dense) -> Matrix {
        let mut dx = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let xi = x.row(i);
            let dzi = dz.row(i);
            for (j, &g) in dzi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[j] += g;
                axpy(g, xi, grad.weight.row_mut(j));
                axpy(g, self.weight.row(j), dx.row_mut(i));
            }
        }
        dx
    }
}

pub fn he_std(in_width: usize) -> f64 {
    (2.0 / in_width as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub dense: Dense,
}

impl Block {
    /// Returns the output and the pre-activation needed by backprop.
    fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let pre = self.dense.affine(x);
        let mut out = pre.clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if self.kind == BlockKind::Residual {
            for (o, xi) in out.data.iter_mut().zip(&x.data) {
                *o += xi;
            }
        }
        (out, pre)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub width: usize,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub family: Family,
    pub input_dim: usize,
    pub num_classes: usize,
    pub stages: Vec<Stage>,
    pub classifier: Dense,
}

/// Parameter-shaped collection in canonical order: every block of every
/// stage in sequence, then the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Dense>,
}

impl ParamSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .map(|d| Dense::zeros(d.out_width(), d.in_width()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|d| d.weight.data.iter().chain(&d.bias))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn build_network(arch: &ArchSpec, rng_seed: u64) -> Result<Network> {
    arch.validate()?;
    let mut rng = rng::stream(rng_seed, Stream::Init);
    let mut prev = arch.input_dim;
    let mut stages = Vec::with_capacity(arch.stages.len());
    for st in &arch.stages {
        let blocks = (0..st.blocks)
            .map(|b| {
                let in_width = if b == 0 { prev } else { st.width };
                let kind = if in_width != st.width {
                    BlockKind::Downsample
                } else {
                    arch.family.block_kind()
                };
                Block {
                    kind,
                    dense: Dense::he(st.width, in_width, &mut rng),
                }
            })
            .collect();
        stages.push(Stage {
            width: st.width,
            blocks,
        });
        prev = st.width;
    }
    let classifier = Dense::he(arch.num_classes, prev, &mut rng);
    Ok(Network {
        family: arch.family,
        input_dim: arch.input_dim,
        num_classes: arch.num_classes,
        stages,
        classifier,
    })
}

impl Network {
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.stages
            .iter()
            .flat_map(|s| s.blocks.iter().map(|b| &b.dense))
            .chain(std::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.stages
            .iter_mut()
            .flat_map(|s| s.blocks.iter_mut().map(|b| &mut b.dense))
            .chain(std::iter::once(&mut self.classifier))
    }

    pub fn num_layers(&self) -> usize {
        self.total_blocks() + 1
    }

    /// Canonical index of block `block` in stage `stage`.
    pub fn flat_index(&self, stage: usize, block: usize) -> usize {
        self.stages[..stage]
            .iter()
            .map(|s| s.blocks.len())
            .sum::<usize>()
            + block
    }

    pub fn blocks_per_stage(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.blocks.len()).collect()
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    /// The architecture this network currently has.
    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            family: self.family,
            stages: self
                .stages
                .iter()
                .map(|s| crate::morph::StageSpec {
                    width: s.width,
                    blocks: s.blocks.len(),
                })
                .collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols != self.input_dim {
            return Err(GrowError::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols, self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(&x).0;
            }
        }
        Ok(self.classifier.affine(&x))
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient
    /// with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &Matrix, labels: &[usize]) -> Result<(f64, ParamSet)> {
        self.loss_grads_and_hits(batch, labels)
            .map(|(loss, grads, _)| (loss, grads))
    }

    /// [`Network::loss_and_grads`] plus the number of correctly classified
    /// samples in the batch.
    pub fn loss_grads_and_hits(
        &self,
        batch: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, ParamSet, usize)> {
        self.check_input(batch)?;
        check_labels(labels, batch.rows, self.num_classes)?;

        // Forward, keeping each block's input and pre-activation.
        let mut cache: Vec<(Matrix, Matrix)> = Vec::with_capacity(self.total_blocks());
        let mut x = batch.clone();
        for stage in &self.stages {
            for block in &stage.blocks {
                let (out, pre) = block.forward(&x);
                cache.push((x, pre));
                x = out;
            }
        }
        let logits = self.classifier.affine(&x);
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(logits.row(i)) == y)
            .count();
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels);

        let mut grads = ParamSet::zeros_like(self);
        let last = grads.layers.len() - 1;
        let mut dx = self.classifier.backward(&x, &dlogits, &mut grads.layers[last]);

        let blocks: Vec<&Block> = self.stages.iter().flat_map(|s| &s.blocks).collect();
        for (k, block) in blocks.iter().enumerate().rev() {
            let (input, pre) = &cache[k];
            let mut dz = dx.clone();
            for (g, &p) in dz.data.iter_mut().zip(&pre.data) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut dinput = block.dense.backward(input, &dz, &mut grads.layers[k]);
            if block.kind == BlockKind::Residual {
                for (d, skip) in dinput.data.iter_mut().zip(&dx.data) {
                    *d += skip;
                }
            }
            dx = dinput;
        }
        Ok((loss, grads, hits))
    }

    /// Predicted classes; ties go to the lowest class index.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows).map(|i| argmax(logits.row(i))).collect())
    }

    /// Accuracy (percent) and mean cross-entropy over a whole dataset.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(GrowError::EmptyDataset);
        }
        let n = data.len();
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let x = data.features.slice_rows(start, end);
            let labels = &data.labels[start..end];
            let logits = self.forward(&x)?;
            check_labels(labels, x.rows, self.num_classes)?;
            for (i, &y) in labels.iter().enumerate() {
                let row = logits.row(i);
                if argmax(row) == y {
                    correct += 1;
                }
                loss_sum += log_sum_exp(row) - row[y];
            }
            start = end;
        }
        Ok((100.0 * correct as f64 / n as f64, loss_sum / n as f64))
    }
}

/// Percent of samples whose argmax logit equals the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    net.evaluate(data).map(|(acc, _)| acc)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(GrowError::Shape(format!(
            "{} labels for {rows} samples",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(GrowError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() / b;
        }
        g[y] -= 1.0 / b;
    }
    (loss / b, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub lr_base: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        Self {
            lr_base: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum buffers aligned with [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: ParamSet,
    pub hyper: SgdHyper,
}

impl OptState {
    pub fn new(net: &Network, hyper: SgdHyper) -> Self {
        Self {
            velocity: ParamSet::zeros_like(net),
            hyper,
        }
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.velocity.layers.len() == net.num_layers()
            && self
                .velocity
                .layers
                .iter()
                .zip(net.layers())
                .all(|(v, p)| v.same_shape(p))
    }
}

/// `v <- momentum * v + g + weight_decay * p; p <- p - lr * v`, applied to
/// weights and biases alike.
pub fn sgd_step(net: &mut Network, grads: &ParamSet, opt: &mut OptState, lr: f64) -> Result<()> {
    if !opt.matches(net) {
        return Err(GrowError::Shape(
            "optimizer buffers do not match network parameters (missed resize after growth?)"
                .into(),
        ));
    }
    if grads.layers.len() != opt.velocity.layers.len()
        || grads
            .layers
            .iter()
            .zip(&opt.velocity.layers)
            .any(|(g, v)| !g.same_shape(v))
    {
        return Err(GrowError::Shape("gradients do not match network parameters".into()));
    }
    let SgdHyper {
        momentum,
        weight_decay,
        ..
    } = opt.hyper;
    for ((p, g), v) in net
        .layers_mut()
        .zip(&grads.layers)
        .zip(opt.velocity.layers.iter_mut())
    {
        let params = p.weight.data.iter_mut().chain(p.bias.iter_mut());
        let gs = g.weight.data.iter().chain(&g.bias);
        let vs = v.weight.data.iter_mut().chain(v.bias.iter_mut());
        for ((pi, gi), vi) in params.zip(gs).zip(vs) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Constant learning rate while growing, cosine decay to zero once the
/// network has reached its target size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_base: f64,
}

impl LrSchedule {
    /// `finetune_start` is the first epoch trained at target size (`None`
    /// while still growing); `total_epochs` is E_T.
    pub fn lr_at(&self, epoch: usize, finetune_start: Option<usize>, total_epochs: usize) -> f64 {
        match finetune_start {
            Some(start) if epoch >= start && total_epochs > start => {
                let progress = (epoch - start) as f64 / (total_epochs - start) as f64;
                self.lr_base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            _ => self.lr_base,
        }
    }
}
