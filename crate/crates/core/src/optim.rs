//! Poisson sampling, gradient privatization, DP-SGD and DP-Adam.
//!
//! One private update is
//!
//! ```text
//! ḡ = (1/B)·(Σ_{i∈batch} Clip(∇L_i, C) + z),   z ~ N(0, σ²C²·I)
//! ```
//!
//! with the expected batch size `B` as a fixed denominator, followed by an
//! SGD or Adam step on `ḡ`.

use crate::clipping::{clipped_sum_scaled, ClippingMode};
use crate::error::{param, Error, Result};
use crate::model::{SeqBatch, SeqModel};
use crate::tensor::{gaussian_noise, norm, SeededRng};

/// Includes every index of `0..n` independently with probability `q`.
pub fn poisson_sample(n: usize, q: f64, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(param(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if q == 1.0 {
        return Ok((0..n).collect());
    }
    if q == 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..n).filter(|_| rng.uniform() < q).collect())
}

/// Clipping threshold, noise multiplier and averaging denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    clip: f64,
    sigma: f64,
    expected_batch: usize,
}

impl NoiseSpec {
    /// `clip` may be `+∞` only without noise.
    pub fn new(clip: f64, sigma: f64, expected_batch: usize) -> Result<Self> {
        if clip.is_nan() || clip <= 0.0 {
            return Err(param(format!("clipping threshold must be positive, got {clip}")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(param(format!("noise multiplier must be finite and >= 0, got {sigma}")));
        }
        if sigma > 0.0 && clip.is_infinite() {
            return Err(param("noise needs a finite clipping threshold"));
        }
        if expected_batch == 0 {
            return Err(param("expected batch size must be positive"));
        }
        Ok(NoiseSpec {
            clip,
            sigma,
            expected_batch,
        })
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn expected_batch(&self) -> usize {
        self.expected_batch
    }

    /// Per-coordinate standard deviation of the noise added to the sum.
    pub fn noise_std(&self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma * self.clip
        }
    }
}

/// A privatized gradient with its two components.
#[derive(Debug, Clone, PartialEq)]
pub struct Privatized {
    /// `ḡ = g̃ + z̄`.
    pub grad: Vec<f64>,
    /// `g̃ = Σ Clip(∇L_i)/B`.
    pub clipped_mean: Vec<f64>,
    /// `z̄ = z/B`.
    pub noise_mean: Vec<f64>,
}

impl Privatized {
    pub fn signal_to_noise(&self) -> f64 {
        signal_to_noise(&self.clipped_mean, &self.noise_mean)
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(param(format!("{what} has non-finite entries")))
    }
}

fn draw_noise(len: usize, spec: &NoiseSpec, rng: &mut SeededRng) -> Result<Vec<f64>> {
    Ok(gaussian_noise(&[len], spec.noise_std(), rng)?.into_data())
}

/// `(clipped_sum + z)/B` with `z ~ N(0, σ²C²·I)`.
pub fn privatize(clipped_sum: &[f64], spec: &NoiseSpec, rng: &mut SeededRng) -> Result<Privatized> {
    check_finite(clipped_sum, "clipped sum")?;
    let z = draw_noise(clipped_sum.len(), spec, rng)?;
    let b = spec.expected_batch as f64;
    Ok(Privatized {
        grad: clipped_sum.iter().zip(&z).map(|(s, z)| (s + z) / b).collect(),
        clipped_mean: clipped_sum.iter().map(|s| s / b).collect(),
        noise_mean: z.iter().map(|z| z / b).collect(),
    })
}

/// `‖g̃‖/‖z̄‖`, `+∞` when the noise is zero.
pub fn signal_to_noise(clipped_mean: &[f64], noise_mean: &[f64]) -> f64 {
    let noise = norm(noise_mean);
    if noise == 0.0 {
        f64::INFINITY
    } else {
        norm(clipped_mean) / noise
    }
}

fn check_lengths(params: usize, grad: usize) -> Result<()> {
    if params == grad {
        Ok(())
    } else {
        Err(Error::Dimension {
            op: "optimizer step",
            left: vec![params],
            right: vec![grad],
        })
    }
}

/// `θ ← θ − η·ḡ`.
pub fn dp_sgd_step(params: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
    check_lengths(params.len(), grad.len())?;
    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= eta * g);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    beta1: f64,
    beta2: f64,
    gamma: f64,
}

impl AdamState {
    /// β₁ = 0.9, β₂ = 0.999, γ = 1e-8.
    pub fn new(num_params: usize) -> Self {
        Self::with_hyper(num_params, 0.9, 0.999, 1e-8).expect("default Adam constants are valid")
    }

    pub fn with_hyper(num_params: usize, beta1: f64, beta2: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(param(format!("Adam betas must lie in [0, 1), got {beta1}, {beta2}")));
        }
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(param(format!("Adam gamma must be positive, got {gamma}")));
        }
        Ok(AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1,
            beta2,
            gamma,
        })
    }

    pub fn betas(&self) -> (f64, f64) {
        (self.beta1, self.beta2)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// One Adam update on a privatized gradient, bias-corrected with the
/// incremented step count.
pub fn dp_adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
    check_lengths(params.len(), grad.len())?;
    check_lengths(state.m.len(), grad.len())?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= eta * m_hat / (v_hat.sqrt() + state.gamma);
    }
    Ok(())
}

/// Loss scale factor `K > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScale(f64);

impl LossScale {
    pub const ONE: LossScale = LossScale(1.0);

    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k > 0.0 {
            Ok(LossScale(k))
        } else {
            Err(param(format!("loss scale must be finite and positive, got {k}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// How privatization treats a scaled loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ScaleRecipe {
    /// Clip by `K·C`, noise times `K`, divide by `K`.
    #[default]
    Consistent,
    /// Clip the `K`-scaled gradients by `C`. Not scale invariant; kept for
    /// regression tests.
    UnscaledThreshold,
}

/// Privatized gradient of a batch under loss scale `K`.
pub fn scaled_privatized_step(
    model: &SeqModel,
    batch: &SeqBatch,
    spec: &NoiseSpec,
    mode: ClippingMode,
    scale: LossScale,
    recipe: ScaleRecipe,
    rng: &mut SeededRng,
) -> Result<Privatized> {
    Ok(scaled_step_with_loss(model, batch, spec, mode, scale, recipe, rng)?.0)
}

fn scaled_step_with_loss(
    model: &SeqModel,
    batch: &SeqBatch,
    spec: &NoiseSpec,
    mode: ClippingMode,
    scale: LossScale,
    recipe: ScaleRecipe,
    rng: &mut SeededRng,
) -> Result<(Privatized, f64)> {
    let k = scale.value();
    let (scaled_sum, loss) = if batch.is_empty() {
        (vec![0.0; model.num_params()], f64::NAN)
    } else {
        let fwd = model.forward(batch)?;
        let threshold = match recipe {
            ScaleRecipe::Consistent => k * spec.clip,
            ScaleRecipe::UnscaledThreshold => spec.clip,
        };
        (clipped_sum_scaled(&fwd, threshold, mode, k)?.sum, fwd.losses().mean())
    };
    check_finite(&scaled_sum, "scaled clipped sum")?;
    let z = draw_noise(scaled_sum.len(), spec, rng)?;
    let b = spec.expected_batch as f64;
    let out = Privatized {
        grad: scaled_sum.iter().zip(&z).map(|(s, z)| ((s + k * z) / k) / b).collect(),
        clipped_mean: scaled_sum.iter().map(|s| (s / k) / b).collect(),
        noise_mean: z.iter().map(|z| z / b).collect(),
    };
    Ok((out, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(param(format!("unknown optimizer '{other}' (sgd|adam)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub noise: NoiseSpec,
    pub mode: ClippingMode,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Poisson sampling rate used by [`DpTrainer::step`].
    pub sampling_rate: f64,
    pub loss_scale: LossScale,
    pub recipe: ScaleRecipe,
}

/// Summary of one private update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: u64,
    pub batch_size: usize,
    /// Mean loss over the sampled batch before the update; NaN when empty.
    pub batch_loss: f64,
    pub signal_norm: f64,
    pub noise_norm: f64,
    pub snr: f64,
}

enum OptState {
    Sgd,
    Adam(AdamState),
}

/// DP-SGD / DP-Adam over a fixed dataset with Poisson-sampled batches.
pub struct DpTrainer {
    model: SeqModel,
    config: TrainerConfig,
    state: OptState,
    rng: SeededRng,
    steps: u64,
}

impl DpTrainer {
    pub fn new(model: SeqModel, config: TrainerConfig, rng: SeededRng) -> Result<Self> {
        if !config.learning_rate.is_finite() || config.learning_rate < 0.0 {
            return Err(param(format!(
                "learning rate must be finite and >= 0, got {}",
                config.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&config.sampling_rate) {
            return Err(param(format!(
                "sampling rate must lie in [0, 1], got {}",
                config.sampling_rate
            )));
        }
        let state = match config.optimizer {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adam => OptState::Adam(AdamState::new(model.num_params())),
        };
        Ok(DpTrainer {
            model,
            config,
            state,
            rng,
            steps: 0,
        })
    }

    pub fn model(&self) -> &SeqModel {
        &self.model
    }

    pub fn into_model(self) -> SeqModel {
        self.model
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Samples a batch from `data` and applies one private update.
    pub fn step(&mut self, data: &SeqBatch) -> Result<StepRecord> {
        let idx = poisson_sample(data.len(), self.config.sampling_rate, &mut self.rng)?;
        self.step_on(&data.select(&idx))
    }

    /// One private update on a given batch. An empty batch is a pure-noise
    /// step.
    pub fn step_on(&mut self, batch: &SeqBatch) -> Result<StepRecord> {
        let c = &self.config;
        let (priv_grad, loss) = scaled_step_with_loss(
            &self.model,
            batch,
            &c.noise,
            c.mode,
            c.loss_scale,
            c.recipe,
            &mut self.rng,
        )?;
        let eta = c.learning_rate;
        match &mut self.state {
            OptState::Sgd => dp_sgd_step(self.model.params_mut(), &priv_grad.grad, eta)?,
            OptState::Adam(s) => dp_adam_step(s, self.model.params_mut(), &priv_grad.grad, eta)?,
        }
        self.steps += 1;
        let signal_norm = norm(&priv_grad.clipped_mean);
        let noise_norm = norm(&priv_grad.noise_mean);
        Ok(StepRecord {
            step: self.steps,
            batch_size: batch.len(),
            batch_loss: loss,
            signal_norm,
            noise_norm,
            snr: priv_grad.signal_to_noise(),
        })
    }
}
