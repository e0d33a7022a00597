//! Per-example gradient norms and sums of clipped per-example gradients.
//!
//! Three interchangeable strategies compute the squared norms `‖∇L_i‖²`:
//!
//! * [`ClippingMode::Naive`] instantiates every per-example gradient for all
//!   layers at once (`B × P` reals) and takes row norms.
//! * [`ClippingMode::Layerwise`] instantiates the per-example gradients of one
//!   layer at a time and sums per-layer squared norms.
//! * [`ClippingMode::Ghost`] never forms a per-example gradient. For a linear
//!   layer applied to a sequence, `‖g_iᵀ a_i‖²_F = ⟨a_i a_iᵀ, g_i g_iᵀ⟩`, so only
//!   the two `T×T` Gram matrices are needed. An embedding is a linear layer on
//!   one-hot inputs whose Gram is `[id_s = id_t]`.
//!
//! [`ClippingMode::GhostAuto`] picks per layer whichever of the Gram path
//! (`2T²` reals per example) and the direct path (`p·d`) is cheaper.
//!
//! Given the norms, the clipped sum `Σ_i c_i ∇L_i` with
//! `c_i = min(1, C/‖∇L_i‖)` comes from a second backward pass on the
//! reweighted loss `Σ_i c_i L_i`.

use std::fmt;
use std::str::FromStr;

use crate::error::{param, Error, Result};
use crate::model::{ForwardPass, LayerDims, LayerInput, LayerSignal, LayerTape, SeqBatch, SeqModel};
use crate::tensor::{dot, matmul_nt_acc, matmul_tn_acc, sq_norm, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClippingMode {
    Naive,
    Layerwise,
    Ghost,
    GhostAuto,
}

impl ClippingMode {
    pub const ALL: [ClippingMode; 4] = [Self::Naive, Self::Layerwise, Self::Ghost, Self::GhostAuto];

    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Layerwise => "layerwise",
            Self::Ghost => "ghost",
            Self::GhostAuto => "auto",
        }
    }

    /// Whether a layer with these dims goes through the Gram path.
    pub fn uses_gram(self, dims: &LayerDims) -> bool {
        match self {
            Self::Ghost => true,
            Self::GhostAuto => 2 * dims.seq_len * dims.seq_len < dims.out_dim * dims.in_dim,
            Self::Naive | Self::Layerwise => false,
        }
    }
}

impl fmt::Display for ClippingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClippingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "layerwise" => Ok(Self::Layerwise),
            "ghost" => Ok(Self::Ghost),
            "auto" | "ghost-auto" => Ok(Self::GhostAuto),
            other => Err(param(format!(
                "unknown clipping mode `{other}` (expected naive|layerwise|ghost|auto)"
            ))),
        }
    }
}

/// Squared global gradient norm of each example.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleNorms {
    pub sq_norms: Vec<f64>,
}

impl PerExampleNorms {
    pub fn norms(&self) -> Vec<f64> {
        self.sq_norms.iter().map(|s| s.sqrt()).collect()
    }
}

/// Per-example scaling factors in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFactors(pub Vec<f64>);

impl ClipFactors {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of examples whose gradient was actually shrunk.
    pub fn clipped_count(&self) -> usize {
        self.0.iter().filter(|&&c| c < 1.0).count()
    }
}

fn dims_of(sig: &LayerSignal<'_>) -> LayerDims {
    LayerDims {
        layer: sig.layer,
        in_dim: sig.in_dim(),
        out_dim: sig.out_dim(),
        seq_len: sig.seq_len(),
        bias: sig.bias,
    }
}

fn check_seq_pair(op: &'static str, a: &DenseTensor, g: &DenseTensor) -> Result<(usize, usize, usize)> {
    match (a.shape(), g.shape()) {
        (&[t, d], &[t2, p]) if t == t2 => Ok((t, d, p)),
        _ => Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: g.shape().to_vec(),
        }),
    }
}

/// Gram matrix `x xᵀ` of the `t` rows of `x` (row-major `t×w`) written into `out`.
fn gram_into(x: &[f64], t: usize, w: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    matmul_nt_acc(x, x, t, w, t, out);
}

/// `‖g_iᵀ a_i‖²_F` through the two `T×T` Gram matrices only.
pub fn ghost_norm_linear(a: &DenseTensor, g: &DenseTensor) -> Result<f64> {
    let (t, d, p) = check_seq_pair("ghost_norm_linear", a, g)?;
    let mut aa = vec![0.0; t * t];
    gram_into(a.data(), t, d, &mut aa);
    let mut gg = vec![0.0; t * t];
    gram_into(g.data(), t, p, &mut gg);
    Ok(dot(&aa, &gg))
}

fn boolean_gram_dot(ids: &[usize], gg: &[f64]) -> f64 {
    let t = ids.len();
    let mut acc = 0.0;
    for s in 0..t {
        for u in 0..t {
            if ids[s] == ids[u] {
                acc += gg[s * t + u];
            }
        }
    }
    acc
}

/// Squared Frobenius norm of one example's embedding-table gradient.
///
/// Equal to [`ghost_norm_linear`] on the one-hot encoding of `ids`, using the
/// Boolean Gram `[ids_s = ids_t]` so no `vocab`-wide tensor is formed.
pub fn ghost_norm_embedding(ids: &[usize], vocab: usize, g: &DenseTensor) -> Result<f64> {
    let (t, p) = match g.shape() {
        &[t, p] if t == ids.len() => (t, p),
        _ => {
            return Err(Error::Dimension {
                op: "ghost_norm_embedding",
                left: vec![ids.len()],
                right: g.shape().to_vec(),
            })
        }
    };
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::OutOfRange {
            what: "token id",
            value: id,
            limit: vocab,
        });
    }
    let mut gg = vec![0.0; t * t];
    gram_into(g.data(), t, p, &mut gg);
    Ok(boolean_gram_dot(ids, &gg))
}

/// Accumulates per-layer squared norms into per-example totals.
struct LayerwiseNorms {
    mode: ClippingMode,
    sq: Vec<f64>,
}

impl LayerwiseNorms {
    fn new(mode: ClippingMode, batch: usize) -> Self {
        Self {
            mode,
            sq: vec![0.0; batch],
        }
    }

    fn add(&mut self, sig: LayerSignal<'_>) {
        let dims = dims_of(&sig);
        if self.mode.uses_gram(&dims) {
            self.add_gram(sig, dims);
        } else {
            self.add_direct(sig, dims);
        }
    }

    fn add_gram(&mut self, sig: LayerSignal<'_>, dims: LayerDims) {
        let (b, t, p) = (sig.batch(), dims.seq_len, dims.out_dim);
        let g = sig.out_grad.data();
        let mut gg = vec![0.0; b * t * t];
        for (i, gram) in gg.chunks_exact_mut(t * t).enumerate() {
            gram_into(&g[i * t * p..(i + 1) * t * p], t, p, gram);
        }
        match sig.input {
            LayerInput::Ids { ids, .. } => {
                for (i, gram) in gg.chunks_exact(t * t).enumerate() {
                    self.sq[i] += boolean_gram_dot(&ids[i * t..(i + 1) * t], gram);
                }
            }
            LayerInput::Dense(a) => {
                let d = dims.in_dim;
                let mut aa = vec![0.0; b * t * t];
                for (i, gram) in aa.chunks_exact_mut(t * t).enumerate() {
                    gram_into(&a.data()[i * t * d..(i + 1) * t * d], t, d, gram);
                }
                for (i, (ga, gg)) in aa.chunks_exact(t * t).zip(gg.chunks_exact(t * t)).enumerate() {
                    self.sq[i] += dot(ga, gg);
                }
            }
        }
        if dims.bias {
            // ‖Σ_t g_t‖² = 1ᵀ (g gᵀ) 1
            for (i, gram) in gg.chunks_exact(t * t).enumerate() {
                self.sq[i] += gram.iter().sum::<f64>();
            }
        }
    }

    fn add_direct(&mut self, sig: LayerSignal<'_>, dims: LayerDims) {
        let b = sig.batch();
        let width = dims.num_params();
        let mut per_example = vec![0.0; b * width];
        for (i, row) in per_example.chunks_exact_mut(width).enumerate() {
            write_example_grad(&sig, i, row);
        }
        for (i, row) in per_example.chunks_exact(width).enumerate() {
            self.sq[i] += sq_norm(row);
        }
    }
}

/// Writes example `i`'s gradient for one layer into `out`, laid out like the
/// model parameters (weight row-major, then bias).
fn write_example_grad(sig: &LayerSignal<'_>, i: usize, out: &mut [f64]) {
    let (t, p) = (sig.seq_len(), sig.out_dim());
    let g = &sig.out_grad.data()[i * t * p..(i + 1) * t * p];
    match sig.input {
        LayerInput::Ids { ids, .. } => {
            for (&id, row) in ids[i * t..(i + 1) * t].iter().zip(g.chunks_exact(p)) {
                out[id * p..(id + 1) * p].iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
        }
        LayerInput::Dense(a) => {
            let d = a.shape()[2];
            let a = &a.data()[i * t * d..(i + 1) * t * d];
            matmul_tn_acc(g, a, t, p, d, &mut out[..p * d]);
            if sig.bias {
                let bias = &mut out[p * d..p * d + p];
                for row in g.chunks_exact(p) {
                    bias.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
            }
        }
    }
}

/// `B × P` matrix of fully instantiated per-example gradients.
struct Instantiated {
    width: usize,
    offsets: Vec<(usize, usize)>,
    rows: Vec<f64>,
}

impl Instantiated {
    fn new(layers: &[LayerDims], batch: usize) -> Self {
        let mut offset = 0;
        let offsets = layers
            .iter()
            .map(|d| {
                let o = (d.layer, offset);
                offset += d.num_params();
                o
            })
            .collect();
        Self {
            width: offset,
            offsets,
            rows: vec![0.0; batch * offset],
        }
    }

    fn add(&mut self, sig: LayerSignal<'_>) {
        let start = self
            .offsets
            .iter()
            .find(|(l, _)| *l == sig.layer)
            .map(|&(_, o)| o)
            .expect("layer registered");
        let len = dims_of(&sig).num_params();
        for (i, row) in self.rows.chunks_exact_mut(self.width).enumerate() {
            write_example_grad(&sig, i, &mut row[start..start + len]);
        }
    }

    fn sq_norms(&self) -> Vec<f64> {
        self.rows.chunks_exact(self.width).map(sq_norm).collect()
    }
}

/// Squared per-example gradient norms from a completed tape.
pub fn per_example_norms(tape: &LayerTape, mode: ClippingMode) -> Result<PerExampleNorms> {
    if !tape.is_complete() {
        return Err(Error::IncompleteTape {
            expected: tape.expected_layers,
            found: tape.entries.len(),
        });
    }
    let b = tape.batch();
    let sq_norms = match mode {
        ClippingMode::Naive => {
            let dims: Vec<LayerDims> = tape.entries.iter().map(|e| dims_of(&e.signal())).collect();
            let mut inst = Instantiated::new(&dims, b);
            for e in &tape.entries {
                inst.add(e.signal());
            }
            inst.sq_norms()
        }
        _ => {
            let mut acc = LayerwiseNorms::new(mode, b);
            for e in &tape.entries {
                acc.add(e.signal());
            }
            acc.sq
        }
    };
    Ok(PerExampleNorms { sq_norms })
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 {
        Ok(())
    } else {
        Err(param(format!("clipping threshold must be > 0, got {threshold}")))
    }
}

/// `c_i = min(1, C/‖∇L_i‖)`; zero-norm examples get 1. `C = +∞` disables
/// clipping.
pub fn clip_factors(norms: &PerExampleNorms, threshold: f64) -> Result<ClipFactors> {
    check_threshold(threshold)?;
    Ok(ClipFactors(
        norms
            .sq_norms
            .iter()
            .map(|&sq| {
                let n = sq.sqrt();
                if n <= threshold {
                    1.0
                } else {
                    threshold / n
                }
            })
            .collect(),
    ))
}

/// Output of a clipped-sum computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedSum {
    /// `Σ_i c_i ∇(K·L_i)`, flat over all parameters.
    pub sum: Vec<f64>,
    /// Squared norms of the `K`-scaled per-example gradients.
    pub norms: PerExampleNorms,
    pub factors: ClipFactors,
}

/// `Σ_i Clip(∇L_i, C)` over the batch.
pub fn clipped_grad_sum(model: &SeqModel, batch: &SeqBatch, threshold: f64, mode: ClippingMode) -> Result<Vec<f64>> {
    let fwd = model.forward(batch)?;
    Ok(clipped_sum_scaled(&fwd, threshold, mode, 1.0)?.sum)
}

/// Clipped sum of the per-example gradients of the loss scaled by
/// `loss_scale`, each clipped to `threshold`.
///
/// Non-naive modes run two backward passes: the first streams layer signals
/// into the norm accumulator, the second backpropagates `Σ_i K·c_i·L_i`.
pub fn clipped_sum_scaled(
    fwd: &ForwardPass<'_>,
    threshold: f64,
    mode: ClippingMode,
    loss_scale: f64,
) -> Result<ClippedSum> {
    check_threshold(threshold)?;
    let b = fwd.batch().len();
    let unit = vec![loss_scale; b];
    let model = fwd.model();
    if mode == ClippingMode::Naive {
        let dims = model.spec().param_layer_dims(fwd.batch().seq_len());
        let mut inst = Instantiated::new(&dims, b);
        fwd.backward_with(&unit, None, &mut |sig| inst.add(sig))?;
        let norms = PerExampleNorms {
            sq_norms: inst.sq_norms(),
        };
        let factors = clip_factors(&norms, threshold)?;
        let mut sum = vec![0.0; inst.width];
        for (row, &c) in inst.rows.chunks_exact(inst.width).zip(factors.values()) {
            sum.iter_mut().zip(row).for_each(|(s, v)| *s += c * v);
        }
        return Ok(ClippedSum { sum, norms, factors });
    }

    let mut acc = LayerwiseNorms::new(mode, b);
    fwd.backward_with(&unit, None, &mut |sig| acc.add(sig))?;
    let norms = PerExampleNorms { sq_norms: acc.sq };
    let factors = clip_factors(&norms, threshold)?;
    let weights: Vec<f64> = factors.values().iter().map(|c| loss_scale * c).collect();
    let sum = fwd.backward_weighted(&weights)?;
    Ok(ClippedSum { sum, norms, factors })
}

/// Analytic transient cost of one layer, in 64-bit reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: usize,
    /// Per-example gradients of the layer: `B·p·d` (`+ B·p` with a bias).
    pub naive: usize,
    /// Both Gram matrices: `2·B·T²`.
    pub ghost: usize,
    /// A single Gram matrix: `B·T²`.
    pub ghost_single_gram: usize,
    /// Cost of the path the mode takes for this layer.
    pub chosen: usize,
}

/// Transient memory of the norm computation for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemLedger {
    pub mode: ClippingMode,
    pub batch: usize,
    pub layers: Vec<LayerCost>,
    /// Naive keeps all layers alive at once; the other modes one layer at a time.
    pub peak: usize,
}

pub fn mem_cost(layers: &[LayerDims], batch: usize, mode: ClippingMode) -> MemLedger {
    let costs: Vec<LayerCost> = layers
        .iter()
        .map(|d| {
            let naive = batch * d.num_params();
            let single = batch * d.seq_len * d.seq_len;
            let ghost = 2 * single;
            LayerCost {
                layer: d.layer,
                naive,
                ghost,
                ghost_single_gram: single,
                chosen: if mode.uses_gram(d) { ghost } else { naive },
            }
        })
        .collect();
    let peak = match mode {
        ClippingMode::Naive => costs.iter().map(|c| c.chosen).sum(),
        _ => costs.iter().map(|c| c.chosen).max().unwrap_or(0),
    };
    MemLedger {
        mode,
        batch,
        layers: costs,
        peak,
    }
}
