//! Acceptance suite. Prints one line per criterion and exits non-zero when a
//! criterion fails that is not listed in `KNOWN_FAILURES`.

use std::process::{Command, ExitCode};
use std::time::Instant;

use ghostclip::accountant::{
    default_orders, dyadic_grid, epsilon, epsilon_with_orders, gdp_clt_epsilon, rdp_step, solve_sigma_with,
    sqrt_rule_check, Conversion, PrivacyBudget, SamplingPlan,
};
use ghostclip::alloc::CountingAlloc;
use ghostclip::clipping::{clipped_grad_sum, clipped_sum_scaled, ghost_norm_linear, mem_cost, ClippingMode};
use ghostclip::harness::bench::{measure_norm_pass, random_batch};
use ghostclip::harness::{
    bench, gen_synthetic_task, snr_sweep, train, BatchSpec, BenchConfig, BenchDims, Duration, RunConfig, TaskConfig,
};
use ghostclip::model::{LayerSpec, ModelSpec, SeqBatch, SeqModel};
use ghostclip::optim::{DpTrainer, LossScale, NoiseSpec, OptimizerKind, ScaleRecipe, TrainerConfig};
use ghostclip::tensor::{DenseTensor, SeededRng};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

/// Criteria expected to fail; see the README for the numbers.
const KNOWN_FAILURES: &[usize] = &[9];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normal_tensor(shape: &[usize], rng: &mut SeededRng) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::from_vec(shape, (0..n).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn random_batch_of(vocab: usize, classes: usize, t: usize, b: usize, rng: &mut SeededRng) -> SeqBatch {
    let ids = (0..b * t).map(|_| rng.below(vocab)).collect();
    let labels = (0..b).map(|_| rng.below(classes)).collect();
    SeqBatch::new(ids, labels, t).unwrap()
}

/// Random `embedding → linear → tanh → pool → linear` model with a batch.
fn random_three_layer(rng: &mut SeededRng, bias: bool) -> (SeqModel, SeqBatch) {
    let vocab = 2 + rng.below(6);
    let d = 1 + rng.below(6);
    let h = 1 + rng.below(6);
    let k = 2 + rng.below(3);
    let t = 1 + rng.below(8);
    let b = 1 + rng.below(6);
    let spec = ModelSpec::standard(vocab, d, &[h], k, bias).unwrap();
    let mut model = SeqModel::init(spec, rng);
    // Nonzero biases.
    let scale = 0.5 + 2.0 * rng.uniform();
    for p in model.params_mut() {
        *p = scale * rng.standard_normal();
    }
    (model, random_batch_of(vocab, k, t, b, rng))
}

/// Parameter blocks in flat layout order, named.
fn blocks(spec: &ModelSpec) -> Vec<(String, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut off = 0;
    for (i, layer) in spec.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Embedding { vocab, dim } => {
                out.push((format!("embedding[{i}]"), off..off + vocab * dim));
                off += vocab * dim;
            }
            LayerSpec::Linear { in_dim, out_dim, bias } => {
                out.push((format!("linear[{i}].weight"), off..off + in_dim * out_dim));
                off += in_dim * out_dim;
                if bias {
                    out.push((format!("linear[{i}].bias"), off..off + out_dim));
                    off += out_dim;
                }
            }
            _ => {}
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    let mut examples = 0;
    let instances = 1000;
    for _ in 0..instances {
        let b = 1 + rng.below(8);
        let t = 1 + rng.below(16);
        let d = 1 + rng.below(32);
        let p = 1 + rng.below(32);
        for _ in 0..b {
            let a = normal_tensor(&[t, d], &mut rng);
            let g = normal_tensor(&[t, p], &mut rng);
            let ghost = ghost_norm_linear(&a, &g).unwrap();
            let mut oracle = 0.0;
            for r in 0..p {
                for c in 0..d {
                    let mut s = 0.0;
                    for k in 0..t {
                        s += g.data()[k * p + r] * a.data()[k * d + c];
                    }
                    oracle += s * s;
                }
            }
            worst = worst.max((ghost - oracle).abs() / oracle.max(f64::MIN_POSITIVE));
            examples += 1;
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{instances} instances, {examples} examples, max rel err {worst:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = SeededRng::new(202);
    let modes = ClippingMode::ALL;
    let mut worst = 0.0f64;
    let mut collisions = 0;
    let mut clipped = 0;
    let models = 100;
    for m in 0..models {
        let (model, batch) = random_three_layer(&mut rng, m % 4 != 3);
        let seq = batch.seq_len();
        if (0..batch.len()).any(|i| {
            let ids = batch.tokens(i);
            (0..seq).any(|s| (s + 1..seq).any(|u| ids[s] == ids[u]))
        }) {
            collisions += 1;
        }
        let fwd = model.forward(&batch).unwrap();
        let norms = clipped_sum_scaled(&fwd, f64::INFINITY, ClippingMode::Naive, 1.0)
            .unwrap()
            .norms
            .norms();
        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        let c = sorted[sorted.len() / 2].max(1e-3);
        clipped += norms.iter().filter(|&&n| n > c).count();
        let sums: Vec<Vec<f64>> = modes
            .iter()
            .map(|&mode| clipped_grad_sum(&model, &batch, c, mode).unwrap())
            .collect();
        for i in 0..sums.len() {
            for j in i + 1..sums.len() {
                worst = worst.max(rel_diff(&sums[i], &sums[j]));
            }
        }
    }
    outcome(
        worst <= 1e-9 && collisions > 0,
        format!(
            "{models} models, {collisions} with repeated tokens, {clipped} clipped examples, max pairwise rel diff {worst:.2e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = SeededRng::new(303);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut checked = 0;
    for m in 0..60 {
        let (model, batch) = random_three_layer(&mut rng, m % 2 == 0);
        let fwd = model.forward(&batch).unwrap();
        let c = [1e-3, 0.1, 1.0, 10.0][m % 4];
        for mode in ClippingMode::ALL {
            let factors = clipped_sum_scaled(&fwd, c, mode, 1.0).unwrap().factors;
            for i in 0..batch.len() {
                let mut w = vec![0.0; batch.len()];
                w[i] = factors.values()[i];
                let g = fwd.backward_weighted(&w).unwrap();
                worst_excess = worst_excess.max(norm(&g) - c);
                checked += 1;
            }
        }
    }
    outcome(
        worst_excess <= 1e-12,
        format!("{checked} reconstructed gradients, max ‖g‖ − C = {worst_excess:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = SeededRng::new(404);
    let mut worst = 0.0f64;
    let mut worst_block = String::new();
    let mut n_blocks = 0;
    for hidden in [vec![], vec![6], vec![5, 4]] {
        for bias in [true, false] {
            let spec = ModelSpec::standard(7, 5, &hidden, 3, bias).unwrap();
            let mut model = SeqModel::init(spec.clone(), &mut rng);
            for p in model.params_mut() {
                *p = 0.7 * rng.standard_normal();
            }
            let batch = random_batch_of(7, 3, 4, 5, &mut rng);
            let weights: Vec<f64> = (0..batch.len()).map(|_| 0.5 + rng.uniform()).collect();
            let analytic = model.forward(&batch).unwrap().backward_weighted(&weights).unwrap();
            let loss = |m: &SeqModel| -> f64 {
                let f = m.forward(&batch).unwrap();
                f.losses().values().iter().zip(&weights).map(|(l, w)| l * w).sum()
            };
            let h = 1e-5;
            let mut fd = vec![0.0; analytic.len()];
            for (j, v) in fd.iter_mut().enumerate() {
                let orig = model.params()[j];
                model.params_mut()[j] = orig + h;
                let up = loss(&model);
                model.params_mut()[j] = orig - h;
                let down = loss(&model);
                model.params_mut()[j] = orig;
                *v = (up - down) / (2.0 * h);
            }
            for (name, r) in blocks(&spec) {
                let e = rel_diff(&analytic[r.clone()], &fd[r]);
                n_blocks += 1;
                if e > worst {
                    worst = e;
                    worst_block = format!("{name}, hidden {hidden:?}");
                }
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("{n_blocks} parameter blocks over 6 models, max rel err {worst:.2e} ({worst_block})"),
    )
}

fn reference_adam(params: &mut [f64], m: &mut [f64], v: &mut [f64], t: u64, g: &[f64], lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let denom = (v[i] / bc2).sqrt() + eps;
        params[i] -= lr * (m[i] / bc1) / denom;
    }
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(505);
    let spec = ModelSpec::standard(20, 6, &[5], 3, true).unwrap();
    let init = SeqModel::init(spec.clone(), &mut rng);
    let batch = random_batch_of(20, 3, 6, 12, &mut rng);
    let b = batch.len();
    let steps = 50;
    let mut details = Vec::new();
    let mut pass = true;
    for (kind, lr) in [(OptimizerKind::Adam, 0.01), (OptimizerKind::Sgd, 0.1)] {
        let cfg = TrainerConfig {
            noise: NoiseSpec::new(f64::INFINITY, 0.0, b).unwrap(),
            mode: ClippingMode::Ghost,
            optimizer: kind,
            learning_rate: lr,
            sampling_rate: 1.0,
            loss_scale: LossScale::ONE,
            recipe: ScaleRecipe::Consistent,
        };
        let mut trainer = DpTrainer::new(init.clone(), cfg, SeededRng::new(1)).unwrap();
        let mut reference = init.clone();
        let n = reference.num_params();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=steps {
            trainer.step_on(&batch).unwrap();
            let mut g = reference
                .forward(&batch)
                .unwrap()
                .backward_weighted(&vec![1.0; b])
                .unwrap();
            g.iter_mut().for_each(|x| *x /= b as f64);
            match kind {
                OptimizerKind::Adam => reference_adam(reference.params_mut(), &mut m, &mut v, t, &g, lr),
                OptimizerKind::Sgd => reference
                    .params_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(p, g)| *p -= lr * g),
            }
        }
        let e = rel_diff(trainer.model().params(), reference.params());
        let moved = rel_diff(init.params(), reference.params());
        pass &= e <= 1e-9 && moved > 1e-3;
        details.push(format!(
            "{kind}: rel diff {e:.2e} after {steps} steps (moved {moved:.2e})"
        ));
    }
    outcome(pass, details.join("; "))
}

/// Extended-precision values of the per-step RDP `(σ, q, α, ρ)`.
const FROZEN_RDP: &[(f64, f64, f64, f64)] = &[
    (0.8, 0.001, 2.0, 3.7707260727711086e-06),
    (0.8, 0.05, 32.0, 21.907631201492652),
    (1.0, 0.01, 16.0, 3.0878507836962448),
    (1.0, 0.2, 8.0, 2.1649002382774243),
    (2.0, 0.0243455933, 128.0, 12.255340427956927),
    (1.5, 0.3, 64.0, 12.99913873846418),
    (0.6, 0.01, 256.0, 350.9323258786421),
    (4.0, 0.5, 3.0, 0.024378035733103046),
];

fn criterion_6() -> Outcome {
    let mut exact = true;
    for sigma in [0.5, 0.7, 1.0, 3.0] {
        for &a in &default_orders() {
            exact &= rdp_step(sigma, 1.0, a).unwrap() == a / (2.0 * sigma * sigma);
        }
    }
    let integer_orders: Vec<f64> = (2..=256).map(f64::from).collect();
    let one_step = SamplingPlan::new(1.0, 1).unwrap();
    let conv = epsilon_with_orders(1.0, one_step, 1e-5, &integer_orders).unwrap();
    let analytic = (2..=256)
        .map(|a| {
            let a = f64::from(a);
            a / 2.0 + (1e5f64).ln() / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    for &(s, q, a, rho) in FROZEN_RDP {
        worst = worst.max((rdp_step(s, q, a).unwrap() - rho).abs() / rho);
    }
    let pass =
        exact && (conv.epsilon - 5.3026).abs() <= 1e-3 && (conv.epsilon - analytic).abs() < 1e-12 && worst <= 1e-8;
    outcome(
        pass,
        format!(
            "q=1 exact: {exact}; single step ε = {:.6} at α = {} (closed form {analytic:.6}); {} frozen values, max rel err {worst:.2e}",
            conv.epsilon,
            conv.order,
            FROZEN_RDP.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let n = 42061;
    let plan = SamplingPlan::from_dataset(n, 1024, 10).unwrap();
    let delta = 1.0 / (2.0 * n as f64);
    let budget = PrivacyBudget::new(8.0, delta).unwrap();
    let improved = solve_sigma_with(budget, plan, Conversion::Improved).unwrap().sigma;
    let gdp = gdp_clt_epsilon(improved, plan.q, plan.steps, delta).unwrap();
    let classic = solve_sigma_with(budget, plan, Conversion::Classic).unwrap().sigma;
    let gdp_classic = gdp_clt_epsilon(classic, plan.q, plan.steps, delta).unwrap();
    outcome(
        (5.1..=6.0).contains(&gdp),
        format!(
            "q = {:.6}, S = {}: improved conversion σ = {improved:.6}, GDP ε = {gdp:.4}; classic conversion σ = {classic:.6}, GDP ε = {gdp_classic:.4}",
            plan.q, plan.steps
        ),
    )
}

fn criterion_8() -> Outcome {
    let delta = 1e-5;
    let mut points = 0;
    let mut violations = Vec::new();
    let mut min_gap = f64::INFINITY;
    for sigma in [0.5, 0.7, 1.0, 1.5, 2.0, 4.0] {
        for q in [0.001, 0.004, 0.016, 0.064] {
            for steps in [100u64, 1000, 10000] {
                let plan = SamplingPlan::new(q, steps).unwrap();
                let rdp = epsilon(sigma, plan, delta).unwrap().epsilon;
                let gdp = gdp_clt_epsilon(sigma, q, steps, delta).unwrap();
                points += 1;
                min_gap = min_gap.min(rdp - gdp);
                if gdp >= rdp {
                    violations.push(format!("(σ={sigma}, q={q}, S={steps}): gdp {gdp:.4} >= rdp {rdp:.4}"));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "{points} grid points, {} violations, min rdp − gdp = {min_gap:.3e}{}",
            violations.len(),
            violations.first().map(|v| format!(", first {v}")).unwrap_or_default()
        ),
    )
}

fn criterion_9() -> Outcome {
    let budget = PrivacyBudget::new(3.0, 1e-5).unwrap();
    let table = sqrt_rule_check(budget, 50, &dyadic_grid(12)).unwrap();
    let fit_err = table
        .rows
        .iter()
        .filter(|r| r.in_fit_range)
        .map(|r| (r.predicted - r.sigma).abs() / r.sigma)
        .fold(0.0, f64::max);
    let small: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.q <= 2f64.powi(-10) * (1.0 + 1e-12))
        .map(|r| (r.sigma - r.predicted) / r.sigma)
        .collect();
    let under = small.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_q = table
        .rows
        .iter()
        .filter(|r| r.in_fit_range)
        .max_by(|a, b| ((a.predicted - a.sigma).abs() / a.sigma).total_cmp(&((b.predicted - b.sigma).abs() / b.sigma)))
        .map(|r| r.q)
        .unwrap_or(f64::NAN);
    // Minimax constant, for reference only.
    let ratios: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.in_fit_range)
        .map(|r| r.sigma / r.q.sqrt())
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let c_minimax = 2.0 / (1.0 / lo + 1.0 / hi);
    let minimax_err = ratios.iter().map(|r| (c_minimax - r).abs() / r).fold(0.0, f64::max);
    outcome(
        fit_err <= 0.10 && under >= 0.20,
        format!(
            "c = {:.4}; max |c√q − σ|/σ on [2^-7, 1] = {:.1}% (at q = {worst_q}); min underestimate at q <= 2^-10 = {:.1}%; minimax c = {c_minimax:.4} would give {:.1}%",
            table.c,
            100.0 * fit_err,
            100.0 * under,
            100.0 * minimax_err
        ),
    )
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_10() -> Outcome {
    let base = RunConfig {
        epsilon: 3.0,
        learning_rate: 0.01,
        ..RunConfig::default()
    };
    let q_grid = [0.002, 0.01, 0.05, 0.2];
    let sweep = snr_sweep(&base, &q_grid, 200, &[0, 1, 2]).unwrap();
    let sigma_eff: Vec<f64> = sweep.rows.iter().map(|r| r.sigma_eff).collect();
    let rbar: Vec<f64> = sweep.rows.iter().map(|r| r.median_rbar()).collect();
    let loss: Vec<f64> = sweep.rows.iter().map(|r| r.median_loss()).collect();
    outcome(
        nonincreasing(&sigma_eff) && nondecreasing(&rbar) && nonincreasing(&loss),
        format!(
            "σ_eff [{}], median r̄ [{}], median final loss [{}]",
            fmt_list(&sigma_eff),
            fmt_list(&rbar),
            fmt_list(&loss)
        ),
    )
}

fn criterion_11() -> Outcome {
    let dims: BenchDims = "8192:64:128".parse().unwrap();
    let t = dims.seq_len;
    let pd = dims.vocab * dims.embed_dim;
    let spec = dims.spec().unwrap();
    let model = SeqModel::init(spec.clone(), &mut SeededRng::new(0));

    let b = 8;
    let batch = random_batch(dims.vocab, dims.classes, t, b, &mut SeededRng::new(1));
    let stats = measure_norm_pass(&model, &batch, ClippingMode::Ghost).unwrap();
    let per_example = stats.largest_reals() as f64 / b as f64;

    let cfg = BenchConfig {
        dims: vec![dims],
        skip_timing: true,
        ..BenchConfig::default()
    };
    let result = bench(&cfg).unwrap();
    let get = |m| result.row(&dims, Some(m)).unwrap().max_batch;
    let (naive, layer, ghost) = (
        get(ClippingMode::Naive),
        get(ClippingMode::Layerwise),
        get(ClippingMode::Ghost),
    );

    let layer_dims = spec.param_layer_dims(t);
    let ratio = mem_cost(&layer_dims, b, ClippingMode::Naive).peak as f64
        / mem_cost(&layer_dims, b, ClippingMode::Ghost).peak as f64;
    let needed = 0.5 * pd as f64 / (t * t) as f64;
    outcome(
        per_example <= (t * t) as f64 && ghost >= layer && layer >= naive && ratio >= needed,
        format!(
            "ghost largest norm-pass block / B = {per_example} (T² = {}); max batch ghost {ghost}, layerwise {layer}, naive {naive}; ledger naive/ghost = {ratio:.3} (>= {needed})",
            t * t
        ),
    )
}

fn loss_scale_run(k: f64, recipe: ScaleRecipe, clip: f64, model: &SeqModel, data: &SeqBatch) -> Vec<f64> {
    let cfg = TrainerConfig {
        noise: NoiseSpec::new(clip, 1.1, 32).unwrap(),
        mode: ClippingMode::Ghost,
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        sampling_rate: 32.0 / data.len() as f64,
        loss_scale: LossScale::new(k).unwrap(),
        recipe,
    };
    let mut trainer = DpTrainer::new(model.clone(), cfg, SeededRng::new(77)).unwrap();
    for _ in 0..50 {
        trainer.step(data).unwrap();
    }
    trainer.into_model().params().to_vec()
}

fn criterion_12() -> Outcome {
    let mut rng = SeededRng::new(1212);
    let spec = ModelSpec::standard(30, 8, &[6], 4, true).unwrap();
    let model = SeqModel::init(spec, &mut rng);
    let data = random_batch_of(30, 4, 8, 256, &mut rng);

    let scaled = loss_scale_run(16.0, ScaleRecipe::Consistent, 0.5, &model, &data);
    let plain = loss_scale_run(1.0, ScaleRecipe::Consistent, 0.5, &model, &data);
    let invariance = rel_diff(&scaled, &plain);
    let odd = rel_diff(
        &loss_scale_run(10.0, ScaleRecipe::Consistent, 0.5, &model, &data),
        &plain,
    );

    // Threshold above every per-example norm: nothing is clipped at K = 1,
    // everything is clipped when the K-scaled gradients meet the raw C.
    let norms = clipped_sum_scaled(&model.forward(&data).unwrap(), f64::INFINITY, ClippingMode::Naive, 1.0)
        .unwrap()
        .norms
        .norms();
    let clip = 2.0 * norms.iter().copied().fold(0.0, f64::max);
    let honest = loss_scale_run(1.0, ScaleRecipe::Consistent, clip, &model, &data);
    let buggy = loss_scale_run(16.0, ScaleRecipe::UnscaledThreshold, clip, &model, &data);
    let divergence = rel_diff(&buggy, &honest);
    outcome(
        invariance <= 1e-8 && odd <= 1e-8 && divergence > 1e-3,
        format!("K=16 vs K=1 rel diff {invariance:.2e} (K=10: {odd:.2e}); unscaled-threshold recipe at K=16 rel diff {divergence:.2e}"),
    )
}

fn small_config() -> RunConfig {
    RunConfig {
        task: TaskConfig {
            n: 512,
            eval_n: 128,
            ..TaskConfig::default()
        },
        batch: BatchSpec::Size(64),
        duration: Duration::Steps(20),
        seed: 13,
        ..RunConfig::default()
    }
}

const SMALL_CONFIG_FILE: &str = "n = 512\neval_n = 128\nbatch_size = 64\nsteps = 20\nseed = 13\n";

fn criterion_13() -> Outcome {
    let cfg = small_config();
    let lib_a = train(&cfg).unwrap().table.to_csv();
    let lib_b = train(&cfg).unwrap().table.to_csv();
    let data_a = gen_synthetic_task(&cfg.task).unwrap().to_csv();
    let data_b = gen_synthetic_task(&cfg.task).unwrap().to_csv();

    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.cfg");
    std::fs::write(&config_path, SMALL_CONFIG_FILE).unwrap();
    let cli = |name: &str| -> String {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ghostclip"))
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .arg("train")
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let cli_a = cli("a.csv");
    let cli_b = cli("b.csv");
    let rows = lib_a.lines().filter(|l| !l.starts_with('#')).count() - 1;
    outcome(
        lib_a == lib_b && data_a == data_b && cli_a == cli_b && cli_a == lib_a,
        format!(
            "library train CSV identical: {}; dataset CSV identical: {}; CLI train CSV identical: {}, equal to library: {}; {rows} rows, {} bytes",
            lib_a == lib_b,
            data_a == data_b,
            cli_a == cli_b,
            cli_a == lib_a,
            lib_a.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("ghost norm identity", criterion_1),
        ("strategy equivalence", criterion_2),
        ("clip bound", criterion_3),
        ("gradient check", criterion_4),
        ("non-private reduction", criterion_5),
        ("accountant closed forms", criterion_6),
        ("accountant reproduction", criterion_7),
        ("GDP underestimation", criterion_8),
        ("square-root rule", criterion_9),
        ("noise and SNR trends", criterion_10),
        ("memory", criterion_11),
        ("loss-scale invariance", criterion_12),
        ("determinism", criterion_13),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.contains(&n);
        let verdict = match (out.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        if !out.pass && !known {
            unexpected += 1;
        }
        println!("criterion {n:>2} {name}: {verdict} ({}; {secs:.2} s)", out.detail);
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
