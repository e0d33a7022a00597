//! Memory and throughput benchmark of the clipping modes.
//!
//! For every model shape, each mode's largest batch whose instrumented peak
//! stays under a budget of 64-bit reals is found by doubling then bisection.
//! Throughput is timed on a common batch size: the least common multiple of
//! the per-mode maxima when that stays within eight times the largest
//! maximum, otherwise the largest maximum. Each mode works through it in
//! chunks of its own maximum.

use std::str::FromStr;
use std::time::Instant;

use crate::alloc::{is_installed, measure, AllocStats};
use crate::clipping::{clipped_sum_scaled, mem_cost, per_example_norms, ClippingMode};
use crate::error::{param, Error, Result};
use crate::model::{ModelSpec, SeqBatch, SeqModel};
use crate::tensor::SeededRng;

use super::report::CsvTable;

/// Embedding → mean-pool → linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchDims {
    pub vocab: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
    pub classes: usize,
}

impl BenchDims {
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::standard(self.vocab, self.embed_dim, &[], self.classes, true)
    }
}

impl FromStr for BenchDims {
    type Err = Error;

    /// `V:p:T` or `V:p:T:K`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| param(format!("bad bench dims '{s}'"))))
            .collect::<Result<_>>()?;
        match parts[..] {
            [vocab, embed_dim, seq_len] => Ok(BenchDims {
                vocab,
                embed_dim,
                seq_len,
                classes: 4,
            }),
            [vocab, embed_dim, seq_len, classes] => Ok(BenchDims {
                vocab,
                embed_dim,
                seq_len,
                classes,
            }),
            _ => Err(param(format!("bench dims '{s}' must be V:p:T or V:p:T:K"))),
        }
    }
}

impl std::fmt::Display for BenchDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}:{}", self.vocab, self.embed_dim, self.seq_len, self.classes)
    }
}

pub fn default_grid() -> Vec<BenchDims> {
    ["8192:64:128", "4096:32:64", "2048:32:32"]
        .iter()
        .map(|s| s.parse().expect("valid default dims"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dims: Vec<BenchDims>,
    /// Budget in 64-bit reals.
    pub float_budget: usize,
    pub seed: u64,
    pub max_batch_cap: usize,
    pub timing_reps: usize,
    /// Skip timing; throughput columns become NaN.
    pub skip_timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: default_grid(),
            float_budget: 1 << 23,
            seed: 0,
            max_batch_cap: 1 << 14,
            timing_reps: 3,
            skip_timing: false,
        }
    }
}

/// `None` is the non-private baseline (summed gradient only).
pub type BenchMode = Option<ClippingMode>;

pub fn mode_name(mode: BenchMode) -> &'static str {
    mode.map_or("nonprivate", ClippingMode::name)
}

pub fn random_batch(vocab: usize, classes: usize, seq_len: usize, batch: usize, rng: &mut SeededRng) -> SeqBatch {
    let ids = (0..batch * seq_len).map(|_| rng.below(vocab)).collect();
    let labels = (0..batch).map(|_| rng.below(classes)).collect();
    SeqBatch::new(ids, labels, seq_len).expect("consistent batch")
}

fn gradient(model: &SeqModel, batch: &SeqBatch, mode: BenchMode) -> Result<Vec<f64>> {
    let fwd = model.forward(batch)?;
    match mode {
        None => fwd.backward_weighted(&vec![1.0; batch.len()]),
        Some(m) => Ok(clipped_sum_scaled(&fwd, 1.0, m, 1.0)?.sum),
    }
}

/// Allocation stats of one forward pass plus gradient computation.
pub fn measure_step(model: &SeqModel, batch: &SeqBatch, mode: BenchMode) -> Result<AllocStats> {
    let (out, stats) = measure(|| gradient(model, batch, mode).map(|g| g.len()));
    out?;
    Ok(stats)
}

/// Allocation stats of the per-example norm pass alone, on a precomputed tape.
pub fn measure_norm_pass(model: &SeqModel, batch: &SeqBatch, mode: ClippingMode) -> Result<AllocStats> {
    let tape = model.forward(batch)?.backward_tape();
    let (out, stats) = measure(|| per_example_norms(&tape, mode).map(|n| n.sq_norms.len()));
    out?;
    Ok(stats)
}

/// Largest batch in `1..=cap` whose instrumented peak fits `budget` reals,
/// with its peak. `(0, 0)` when a single example does not fit.
pub fn max_batch(
    model: &SeqModel,
    dims: &BenchDims,
    mode: BenchMode,
    budget: usize,
    cap: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let peak_at = |b: usize| -> Result<usize> {
        let batch = random_batch(dims.vocab, dims.classes, dims.seq_len, b, &mut SeededRng::new(seed));
        Ok(measure_step(model, &batch, mode)?.peak_reals())
    };
    let first = peak_at(1)?;
    if first > budget {
        return Ok((0, 0));
    }
    let (mut good, mut good_peak) = (1usize, first);
    let mut bad = None;
    while good < cap {
        let b = (good * 2).min(cap);
        let p = peak_at(b)?;
        if p <= budget {
            good = b;
            good_peak = p;
        } else {
            bad = Some(b);
            break;
        }
    }
    if let Some(mut hi) = bad {
        while hi - good > 1 {
            let mid = good + (hi - good) / 2;
            let p = peak_at(mid)?;
            if p <= budget {
                good = mid;
                good_peak = p;
            } else {
                hi = mid;
            }
        }
    }
    Ok((good, good_peak))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Shared batch size for throughput comparisons.
pub fn common_batch(maxima: &[usize]) -> usize {
    let positive: Vec<usize> = maxima.iter().copied().filter(|&b| b > 0).collect();
    let largest = positive.iter().copied().max().unwrap_or(0);
    let mut lcm = 1usize;
    for &b in &positive {
        lcm = lcm / gcd(lcm, b) * b;
        if lcm > 8 * largest {
            return largest;
        }
    }
    lcm.max(largest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dims: BenchDims,
    pub mode: BenchMode,
    pub max_batch: usize,
    /// Ledger peak of the clipping transients at `max_batch`.
    pub ledger_peak: usize,
    /// Instrumented peak at `max_batch`, in reals.
    pub measured_peak: usize,
    pub common_batch: usize,
    pub examples_per_sec: f64,
    pub relative_throughput: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub table: CsvTable,
}

impl BenchResult {
    pub fn row(&self, dims: &BenchDims, mode: BenchMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| &r.dims == dims && r.mode == mode)
    }
}

pub const BENCH_COLUMNS: &[&str] = &[
    "vocab",
    "embed_dim",
    "seq_len",
    "mode",
    "max_batch",
    "ledger_peak_reals",
    "measured_peak_reals",
    "common_batch",
    "examples_per_sec",
    "relative_throughput",
];

pub const BENCH_MODES: [BenchMode; 5] = [
    None,
    Some(ClippingMode::Naive),
    Some(ClippingMode::Layerwise),
    Some(ClippingMode::Ghost),
    Some(ClippingMode::GhostAuto),
];

fn time_mode(
    model: &SeqModel,
    dims: &BenchDims,
    mode: BenchMode,
    chunk: usize,
    total: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let mut chunks = Vec::new();
    let mut left = total;
    while left > 0 {
        let b = left.min(chunk);
        chunks.push(random_batch(dims.vocab, dims.classes, dims.seq_len, b, &mut rng));
        left -= b;
    }
    let start = Instant::now();
    for _ in 0..reps {
        for c in &chunks {
            std::hint::black_box(gradient(model, c, mode)?);
        }
    }
    Ok((total * reps) as f64 / start.elapsed().as_secs_f64())
}

/// Requires [`crate::alloc::CountingAlloc`] as the global allocator.
pub fn bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if !is_installed() {
        return Err(param(
            "bench needs the counting allocator installed as #[global_allocator]",
        ));
    }
    let mut rows = Vec::new();
    for dims in &cfg.dims {
        let spec = dims.spec()?;
        if spec.num_params() >= cfg.float_budget {
            return Err(Error::Infeasible(format!(
                "budget of {} reals does not exceed one model copy ({} reals) for {dims}",
                cfg.float_budget,
                spec.num_params()
            )));
        }
        let layer_dims = spec.param_layer_dims(dims.seq_len);
        let model = SeqModel::init(spec, &mut SeededRng::new(cfg.seed));
        let mut found = Vec::new();
        for mode in BENCH_MODES {
            found.push((
                mode,
                max_batch(&model, dims, mode, cfg.float_budget, cfg.max_batch_cap, cfg.seed)?,
            ));
        }
        if found.iter().all(|(_, (b, _))| *b == 0) {
            return Err(Error::Infeasible(format!(
                "no batch fits {} reals for {dims}",
                cfg.float_budget
            )));
        }
        let maxima: Vec<usize> = found.iter().map(|(_, (b, _))| *b).collect();
        let common = common_batch(&maxima);
        let mut speeds = Vec::new();
        for (mode, (b, _)) in &found {
            let s = if cfg.skip_timing || *b == 0 {
                f64::NAN
            } else {
                time_mode(&model, dims, *mode, *b, common, cfg.timing_reps.max(1), cfg.seed)?
            };
            speeds.push(s);
        }
        let base = speeds[0];
        for ((mode, (b, peak)), speed) in found.into_iter().zip(speeds) {
            rows.push(BenchRow {
                dims: *dims,
                mode,
                max_batch: b,
                ledger_peak: mode.map_or(0, |m| mem_cost(&layer_dims, b, m).peak),
                measured_peak: peak,
                common_batch: common,
                examples_per_sec: speed,
                relative_throughput: speed / base,
            });
        }
    }
    let mut table = CsvTable::new(BENCH_COLUMNS);
    for r in &rows {
        table.push(vec![
            r.dims.vocab.into(),
            r.dims.embed_dim.into(),
            r.dims.seq_len.into(),
            mode_name(r.mode).into(),
            r.max_batch.into(),
            r.ledger_peak.into(),
            r.measured_peak.into(),
            r.common_batch.into(),
            r.examples_per_sec.into(),
            r.relative_throughput.into(),
        ]);
    }
    table.note("float_budget", cfg.float_budget);
    table.note("seed", cfg.seed);
    Ok(BenchResult { rows, table })
}
