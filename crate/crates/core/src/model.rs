//! Minimal sequence classifier with reverse-mode differentiation.
//!
//! The stack is `embedding → (linear → tanh)* → mean-pool → linear head →
//! softmax cross-entropy`. Besides the usual summed gradient, the backward pass
//! exposes for every parameterized layer the layer input `a` and the gradient
//! of the loss with respect to the layer output `g`, which is all the
//! clipping strategies need.

use std::ops::Range;

use crate::error::{param, Error, Result};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, DenseTensor, SeededRng};

/// A batch of token sequences with one class label per sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeqBatch {
    token_ids: Vec<usize>,
    labels: Vec<usize>,
    seq_len: usize,
}

impl SeqBatch {
    /// `token_ids` is row-major `B×T`.
    pub fn new(token_ids: Vec<usize>, labels: Vec<usize>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(param("sequence length must be positive"));
        }
        if token_ids.len() != labels.len() * seq_len {
            return Err(Error::Dimension {
                op: "SeqBatch::new",
                left: vec![token_ids.len()],
                right: vec![labels.len(), seq_len],
            });
        }
        Ok(Self {
            token_ids,
            labels,
            seq_len,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tokens(&self, i: usize) -> &[usize] {
        &self.token_ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    /// Rows `indices` of this batch, in the given order.
    pub fn select(&self, indices: &[usize]) -> SeqBatch {
        let mut token_ids = Vec::with_capacity(indices.len() * self.seq_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            token_ids.extend_from_slice(self.tokens(i));
            labels.push(self.labels[i]);
        }
        SeqBatch {
            token_ids,
            labels,
            seq_len: self.seq_len,
        }
    }
}

/// Layer descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Embedding { vocab: usize, dim: usize },
    Linear { in_dim: usize, out_dim: usize, bias: bool },
    Tanh,
    MeanPool,
}

/// Ordered layer list. Validated on construction: an embedding first, exactly
/// one mean-pool, a linear head last, and matching widths in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    num_classes: usize,
    vocab: usize,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let (vocab, mut width) = match layers.first() {
            Some(&LayerSpec::Embedding { vocab, dim }) if vocab > 0 && dim > 0 => (vocab, dim),
            _ => return Err(param("first layer must be an embedding with positive dims")),
        };
        let mut pools = 0;
        for (i, layer) in layers.iter().enumerate().skip(1) {
            match *layer {
                LayerSpec::Embedding { .. } => {
                    return Err(param(format!("layer {i}: embedding is only allowed first")))
                }
                LayerSpec::Linear { in_dim, out_dim, .. } => {
                    if in_dim != width || out_dim == 0 {
                        return Err(Error::Dimension {
                            op: "ModelSpec::new",
                            left: vec![width],
                            right: vec![in_dim, out_dim],
                        });
                    }
                    width = out_dim;
                }
                LayerSpec::Tanh => {}
                LayerSpec::MeanPool => pools += 1,
            }
        }
        if pools != 1 {
            return Err(param(format!("expected exactly one mean-pool layer, found {pools}")));
        }
        if !matches!(layers.last(), Some(LayerSpec::Linear { .. })) {
            return Err(param("last layer must be the linear classifier head"));
        }
        Ok(Self {
            layers,
            num_classes: width,
            vocab,
        })
    }

    /// `embedding → [linear → tanh]* → mean-pool → linear head`.
    pub fn standard(vocab: usize, embed_dim: usize, hidden: &[usize], classes: usize, bias: bool) -> Result<Self> {
        let mut layers = vec![LayerSpec::Embedding { vocab, dim: embed_dim }];
        let mut width = embed_dim;
        for &h in hidden {
            layers.push(LayerSpec::Linear {
                in_dim: width,
                out_dim: h,
                bias,
            });
            layers.push(LayerSpec::Tanh);
            width = h;
        }
        layers.push(LayerSpec::MeanPool);
        layers.push(LayerSpec::Linear {
            in_dim: width,
            out_dim: classes,
            bias,
        });
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Shape summary of every parameterized layer, with the effective number of
    /// time steps seen by the layer (1 after pooling).
    pub fn param_layer_dims(&self, seq_len: usize) -> Vec<LayerDims> {
        let mut t = seq_len;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Embedding { vocab, dim } => out.push(LayerDims {
                    layer: i,
                    in_dim: vocab,
                    out_dim: dim,
                    seq_len: t,
                    bias: false,
                }),
                LayerSpec::Linear { in_dim, out_dim, bias } => out.push(LayerDims {
                    layer: i,
                    in_dim,
                    out_dim,
                    seq_len: t,
                    bias,
                }),
                LayerSpec::MeanPool => t = 1,
                LayerSpec::Tanh => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_layer_dims(1).iter().map(LayerDims::num_params).sum()
    }
}

/// Dimensions of one parameterized layer: weight is `out_dim × in_dim`
/// (`vocab × dim` for the embedding table, whose `in_dim` is the vocabulary).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub layer: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub seq_len: usize,
    pub bias: bool,
}

impl LayerDims {
    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamSlot {
    pub weight: Range<usize>,
    pub bias: Option<Range<usize>>,
}

/// Model parameters stored as a single flat vector, laid out layer by layer
/// (weight row-major, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    spec: ModelSpec,
    params: Vec<f64>,
    slots: Vec<Option<ParamSlot>>,
}

impl SeqModel {
    /// Embedding entries `N(0, 1)`, linear weights `N(0, 1/in_dim)`, zero biases.
    pub fn init(spec: ModelSpec, rng: &mut SeededRng) -> Self {
        let slots = Self::layout(&spec);
        let mut params = vec![0.0; spec.num_params()];
        for (layer, slot) in spec.layers.iter().zip(&slots) {
            let Some(slot) = slot else { continue };
            let std = match *layer {
                LayerSpec::Linear { in_dim, .. } => (1.0 / in_dim as f64).sqrt(),
                _ => 1.0,
            };
            for w in &mut params[slot.weight.clone()] {
                *w = std * rng.standard_normal();
            }
        }
        Self { spec, params, slots }
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.num_params() {
            return Err(Error::Dimension {
                op: "SeqModel::from_params",
                left: vec![params.len()],
                right: vec![spec.num_params()],
            });
        }
        let slots = Self::layout(&spec);
        Ok(Self { spec, params, slots })
    }

    fn layout(spec: &ModelSpec) -> Vec<Option<ParamSlot>> {
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        spec.layers
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Embedding { vocab, dim } => Some(ParamSlot {
                    weight: take(vocab * dim),
                    bias: None,
                }),
                LayerSpec::Linear { in_dim, out_dim, bias } => Some(ParamSlot {
                    weight: take(in_dim * out_dim),
                    bias: bias.then(|| take(out_dim)),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn slot(&self, layer: usize) -> &ParamSlot {
        self.slots[layer].as_ref().expect("parameterized layer")
    }

    /// Weight of a parameterized layer as a matrix (`out×in`, or `vocab×dim`).
    pub fn weight(&self, layer: usize) -> Option<DenseTensor> {
        let slot = self.slots.get(layer)?.as_ref()?;
        let shape = match self.spec.layers[layer] {
            LayerSpec::Embedding { vocab, dim } => [vocab, dim],
            LayerSpec::Linear { in_dim, out_dim, .. } => [out_dim, in_dim],
            _ => unreachable!(),
        };
        DenseTensor::from_vec(&shape, self.params[slot.weight.clone()].to_vec()).ok()
    }

    /// Runs the forward pass and keeps what both backward modes need.
    pub fn forward<'a>(&'a self, batch: &'a SeqBatch) -> Result<ForwardPass<'a>> {
        let b = batch.len();
        let t = batch.seq_len();
        let k = self.spec.num_classes;
        if let Some(&label) = batch.labels.iter().find(|&&y| y >= k) {
            return Err(Error::OutOfRange {
                what: "label",
                value: label,
                limit: k,
            });
        }
        let mut cache = Vec::with_capacity(self.spec.layers.len());
        let mut x = DenseTensor::zeros(&[b, t, 0]);
        let mut steps = t;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Embedding { vocab, dim } => {
                    let table = &self.params[self.slot(i).weight.clone()];
                    let mut out = vec![0.0; b * t * dim];
                    for (row, &id) in out.chunks_exact_mut(dim).zip(&batch.token_ids) {
                        if id >= vocab {
                            return Err(Error::OutOfRange {
                                what: "token id",
                                value: id,
                                limit: vocab,
                            });
                        }
                        row.copy_from_slice(&table[id * dim..(id + 1) * dim]);
                    }
                    x = DenseTensor::from_vec(&[b, t, dim], out)?;
                    cache.push(Cached::Ids);
                }
                LayerSpec::Linear { in_dim, out_dim, .. } => {
                    let slot = self.slot(i);
                    let rows = b * steps;
                    let mut out = vec![0.0; rows * out_dim];
                    if let Some(bias) = &slot.bias {
                        let bias = &self.params[bias.clone()];
                        for row in out.chunks_exact_mut(out_dim) {
                            row.copy_from_slice(bias);
                        }
                    }
                    matmul_nt_acc(
                        x.data(),
                        &self.params[slot.weight.clone()],
                        rows,
                        in_dim,
                        out_dim,
                        &mut out,
                    );
                    let input = std::mem::replace(&mut x, DenseTensor::from_vec(&[b, steps, out_dim], out)?);
                    cache.push(Cached::Input(input));
                }
                LayerSpec::Tanh => {
                    x.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                    cache.push(Cached::Output(x.clone()));
                }
                LayerSpec::MeanPool => {
                    let w = x.shape()[2];
                    let mut out = vec![0.0; b * w];
                    for (i, row) in out.chunks_exact_mut(w).enumerate() {
                        for s in 0..steps {
                            let src = &x.data()[(i * steps + s) * w..(i * steps + s + 1) * w];
                            row.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                        row.iter_mut().for_each(|o| *o /= steps as f64);
                    }
                    cache.push(Cached::Pool { steps });
                    steps = 1;
                    x = DenseTensor::from_vec(&[b, 1, w], out)?;
                }
            }
        }

        let mut probs = x.into_data();
        let mut losses = Vec::with_capacity(b);
        for (row, &label) in probs.chunks_exact_mut(k).zip(&batch.labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            losses.push(lse - row[label]);
            row.iter_mut().for_each(|z| *z = (*z - lse).exp());
        }
        Ok(ForwardPass {
            model: self,
            batch,
            cache,
            probs,
            losses: LossVector(losses),
        })
    }
}

#[derive(Debug)]
enum Cached {
    Ids,
    Input(DenseTensor),
    Output(DenseTensor),
    Pool { steps: usize },
}

/// Per-example cross-entropy losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector(pub Vec<f64>);

impl LossVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return f64::NAN;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Input of a parameterized layer as seen during backpropagation.
#[derive(Debug, Clone, Copy)]
pub enum LayerInput<'a> {
    /// Token ids of the embedding layer, row-major `B×T`.
    Ids { ids: &'a [usize], vocab: usize },
    /// Dense activations `B×T×d`.
    Dense(&'a DenseTensor),
}

/// What a backward hook receives for one parameterized layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerSignal<'a> {
    pub layer: usize,
    pub input: LayerInput<'a>,
    /// Gradient of the (weighted) loss with respect to the layer output, `B×T×p`.
    pub out_grad: &'a DenseTensor,
    pub bias: bool,
}

impl LayerSignal<'_> {
    pub fn batch(&self) -> usize {
        self.out_grad.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.out_grad.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.out_grad.shape()[2]
    }

    pub fn in_dim(&self) -> usize {
        match self.input {
            LayerInput::Ids { vocab, .. } => vocab,
            LayerInput::Dense(a) => a.shape()[2],
        }
    }
}

/// Result of [`SeqModel::forward`].
#[derive(Debug)]
pub struct ForwardPass<'a> {
    model: &'a SeqModel,
    batch: &'a SeqBatch,
    cache: Vec<Cached>,
    probs: Vec<f64>,
    losses: LossVector,
}

impl<'a> ForwardPass<'a> {
    pub fn losses(&self) -> &LossVector {
        &self.losses
    }

    pub fn model(&self) -> &'a SeqModel {
        self.model
    }

    pub fn batch(&self) -> &'a SeqBatch {
        self.batch
    }

    /// Softmax probabilities, row-major `B×K`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn correct(&self) -> usize {
        let k = self.model.spec.num_classes;
        self.probs
            .chunks_exact(k)
            .zip(&self.batch.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count()
    }

    /// Captures `a` and `g` for every parameterized layer, where `g` is the
    /// gradient of `Σ_i L_i` with respect to the layer output.
    pub fn backward_tape(&self) -> LayerTape {
        self.backward_tape_scaled(1.0)
    }

    /// Tape of the loss `K · Σ_i L_i`.
    pub fn backward_tape_scaled(&self, scale: f64) -> LayerTape {
        let weights = vec![scale; self.batch.len()];
        let mut entries = Vec::new();
        self.backward_with(&weights, None, &mut |sig: LayerSignal<'_>| {
            let input = match sig.input {
                LayerInput::Ids { ids, vocab } => TapeInput::Ids {
                    ids: ids.to_vec(),
                    vocab,
                },
                LayerInput::Dense(a) => TapeInput::Dense(a.clone()),
            };
            entries.push(TapeEntry {
                layer: sig.layer,
                input,
                out_grad: sig.out_grad.clone(),
                bias: sig.bias,
            });
        })
        .expect("weights sized to the batch");
        entries.reverse();
        LayerTape {
            entries,
            losses: self.losses.0.clone(),
            expected_layers: self.model.slots.iter().flatten().count(),
        }
    }

    /// Flat gradient of `Σ_i w_i L_i` with respect to all parameters.
    pub fn backward_weighted(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.model.num_params()];
        self.backward_with(weights, Some(&mut grad), &mut |_| {})?;
        Ok(grad)
    }

    /// Backpropagates `Σ_i w_i L_i`, calling `hook` once per parameterized
    /// layer (top layer first) and accumulating into `grad` when given.
    pub fn backward_with(
        &self,
        weights: &[f64],
        mut grad: Option<&mut [f64]>,
        hook: &mut dyn FnMut(LayerSignal<'_>),
    ) -> Result<()> {
        let b = self.batch.len();
        if weights.len() != b {
            return Err(Error::Dimension {
                op: "backward",
                left: vec![weights.len()],
                right: vec![b],
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(param(format!("loss weights must be finite, got {w}")));
        }
        let params = &self.model.params;
        let k = self.model.spec.num_classes;
        let mut g = self.probs.clone();
        for ((row, &y), &w) in g.chunks_exact_mut(k).zip(&self.batch.labels).zip(weights) {
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v *= w);
        }
        let mut g = DenseTensor::from_vec(&[b, 1, k], g)?;

        for (i, layer) in self.model.spec.layers.iter().enumerate().rev() {
            match (*layer, &self.cache[i]) {
                (LayerSpec::Linear { in_dim, out_dim, bias }, Cached::Input(a)) => {
                    hook(LayerSignal {
                        layer: i,
                        input: LayerInput::Dense(a),
                        out_grad: &g,
                        bias,
                    });
                    let slot = self.model.slot(i);
                    let rows = a.shape()[0] * a.shape()[1];
                    if let Some(grad) = grad.as_deref_mut() {
                        matmul_tn_acc(
                            g.data(),
                            a.data(),
                            rows,
                            out_dim,
                            in_dim,
                            &mut grad[slot.weight.clone()],
                        );
                        if let Some(br) = &slot.bias {
                            let gb = &mut grad[br.clone()];
                            for row in g.data().chunks_exact(out_dim) {
                                gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                            }
                        }
                    }
                    let mut down = vec![0.0; rows * in_dim];
                    matmul_acc(g.data(), &params[slot.weight.clone()], rows, out_dim, in_dim, &mut down);
                    g = DenseTensor::from_vec(a.shape(), down)?;
                }
                (LayerSpec::Tanh, Cached::Output(y)) => {
                    g.data_mut()
                        .iter_mut()
                        .zip(y.data())
                        .for_each(|(gv, yv)| *gv *= 1.0 - yv * yv);
                }
                (LayerSpec::MeanPool, &Cached::Pool { steps }) => {
                    let w = g.shape()[2];
                    let mut up = vec![0.0; b * steps * w];
                    for (i, src) in g.data().chunks_exact(w).enumerate() {
                        for s in 0..steps {
                            let dst = &mut up[(i * steps + s) * w..(i * steps + s + 1) * w];
                            dst.iter_mut().zip(src).for_each(|(d, v)| *d = v / steps as f64);
                        }
                    }
                    g = DenseTensor::from_vec(&[b, steps, w], up)?;
                }
                (LayerSpec::Embedding { vocab, dim }, Cached::Ids) => {
                    hook(LayerSignal {
                        layer: i,
                        input: LayerInput::Ids {
                            ids: &self.batch.token_ids,
                            vocab,
                        },
                        out_grad: &g,
                        bias: false,
                    });
                    if let Some(grad) = grad.as_deref_mut() {
                        let table = &mut grad[self.model.slot(i).weight.clone()];
                        for (&id, row) in self.batch.token_ids.iter().zip(g.data().chunks_exact(dim)) {
                            table[id * dim..(id + 1) * dim]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                }
                _ => unreachable!("cache entry does not match layer {i}"),
            }
        }
        Ok(())
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Stored input of one tape entry.
#[derive(Debug, Clone, PartialEq)]
pub enum TapeInput {
    Ids { ids: Vec<usize>, vocab: usize },
    Dense(DenseTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapeEntry {
    pub layer: usize,
    pub input: TapeInput,
    pub out_grad: DenseTensor,
    pub bias: bool,
}

impl TapeEntry {
    pub fn signal(&self) -> LayerSignal<'_> {
        LayerSignal {
            layer: self.layer,
            input: match &self.input {
                TapeInput::Ids { ids, vocab } => LayerInput::Ids { ids, vocab: *vocab },
                TapeInput::Dense(a) => LayerInput::Dense(a),
            },
            out_grad: &self.out_grad,
            bias: self.bias,
        }
    }
}

/// Layer inputs and output gradients for every parameterized layer, in
/// forward order, plus the per-example losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTape {
    pub entries: Vec<TapeEntry>,
    pub losses: Vec<f64>,
    pub expected_layers: usize,
}

impl LayerTape {
    pub fn batch(&self) -> usize {
        self.losses.len()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.expected_layers
    }
}

/// Per-example weight gradient of a linear layer applied to a sequence:
/// `g_iᵀ a_i` for `a_i: T×d` and `g_i: T×p`, giving `p×d`.
pub fn per_example_grad_linear(a: &DenseTensor, g: &DenseTensor) -> Result<DenseTensor> {
    match (a.shape(), g.shape()) {
        (&[t, d], &[t2, p]) if t == t2 => {
            let mut out = DenseTensor::zeros(&[p, d]);
            matmul_tn_acc(g.data(), a.data(), t, p, d, out.data_mut());
            Ok(out)
        }
        _ => Err(Error::Dimension {
            op: "per_example_grad_linear",
            left: a.shape().to_vec(),
            right: g.shape().to_vec(),
        }),
    }
}
