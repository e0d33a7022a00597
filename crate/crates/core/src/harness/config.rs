//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! ```text
//! # privacy
//! epsilon = 3
//! delta = auto        # 1/(2N)
//! clip = 0.1
//! batch_size = 1024   # or: sampling_rate = 0.02
//! epochs = 10         # or: steps = 400
//! ```
//!
//! Every key is listed in [`RunConfig::KEYS`]. Unknown keys, duplicates and
//! malformed values are reported with their line number.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::accountant::{steps_per_epoch, Conversion, SamplingPlan};
use crate::clipping::ClippingMode;
use crate::error::{param, Error, Result};
use crate::optim::{OptimizerKind, ScaleRecipe};

use super::report::fmt_g9;

/// Synthetic task and model dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    /// Training set size `N`.
    pub n: usize,
    pub eval_n: usize,
    pub seq_len: usize,
    pub vocab: usize,
    pub classes: usize,
    pub embed_dim: usize,
    /// Widths of the `linear → tanh` blocks between embedding and pooling.
    pub hidden: Vec<usize>,
    pub bias: bool,
    pub task_seed: u64,
    /// Probability of replacing a planted label by a uniform one.
    pub label_noise: f64,
    /// Start the model's embedding from the teacher's frozen table.
    pub pretrained: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            n: 8192,
            eval_n: 2048,
            seq_len: 16,
            vocab: 256,
            classes: 4,
            embed_dim: 16,
            hidden: Vec::new(),
            bias: true,
            task_seed: 0,
            label_noise: 0.0,
            pretrained: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSpec {
    Size(usize),
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duration {
    Epochs(u64),
    Steps(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    /// `+∞` disables privacy: no noise, no accounting.
    pub epsilon: f64,
    /// `None` means `1/(2N)`.
    pub delta: Option<f64>,
    pub clip: f64,
    pub conversion: Conversion,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch: BatchSpec,
    pub duration: Duration,
    pub loss_scale: f64,
    pub recipe: ScaleRecipe,
    pub mode: ClippingMode,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskConfig::default(),
            epsilon: 3.0,
            delta: None,
            clip: 0.1,
            conversion: Conversion::Classic,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch: BatchSpec::Size(1024),
            duration: Duration::Epochs(10),
            loss_scale: 1.0,
            recipe: ScaleRecipe::Consistent,
            mode: ClippingMode::Ghost,
            seed: 0,
            out: None,
        }
    }
}

/// Quantities derived from a [`RunConfig`] before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub q: f64,
    /// Averaging denominator `B`.
    pub expected_batch: usize,
    pub plan: SamplingPlan,
    pub delta: f64,
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_f64(key: &str, value: &str) -> std::result::Result<f64, String> {
    match value {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_num(key, value),
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got '{value}'")),
    }
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "n",
        "eval_n",
        "seq_len",
        "vocab",
        "classes",
        "embed_dim",
        "hidden",
        "bias",
        "task_seed",
        "label_noise",
        "pretrained",
        "epsilon",
        "delta",
        "clip",
        "conversion",
        "optimizer",
        "lr",
        "batch_size",
        "sampling_rate",
        "epochs",
        "steps",
        "loss_scale",
        "recipe",
        "mode",
        "seed",
        "out",
    ];

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(err(format!("duplicate key '{key}' (first set on line {first})")));
            }
            if key == "batch_size" || key == "sampling_rate" {
                let other = if key == "batch_size" {
                    "sampling_rate"
                } else {
                    "batch_size"
                };
                if let Some((_, l)) = seen.iter().find(|(k, _)| k == other) {
                    return Err(err(format!("'{key}' conflicts with '{other}' on line {l}")));
                }
            }
            if key == "epochs" || key == "steps" {
                let other = if key == "epochs" { "steps" } else { "epochs" };
                if let Some((_, l)) = seen.iter().find(|(k, _)| k == other) {
                    return Err(err(format!("'{key}' conflicts with '{other}' on line {l}")));
                }
            }
            cfg.set(key, value).map_err(err)?;
            seen.push((key.to_string(), line));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Used by the parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.task;
        match key {
            "n" => t.n = parse_num(key, value)?,
            "eval_n" => t.eval_n = parse_num(key, value)?,
            "seq_len" => t.seq_len = parse_num(key, value)?,
            "vocab" => t.vocab = parse_num(key, value)?,
            "classes" => t.classes = parse_num(key, value)?,
            "embed_dim" => t.embed_dim = parse_num(key, value)?,
            "hidden" => t.hidden = parse_list(key, value)?,
            "bias" => t.bias = parse_bool(key, value)?,
            "task_seed" => t.task_seed = parse_num(key, value)?,
            "label_noise" => t.label_noise = parse_f64(key, value)?,
            "pretrained" => t.pretrained = parse_bool(key, value)?,
            "epsilon" => self.epsilon = parse_f64(key, value)?,
            "delta" => {
                self.delta = if value == "auto" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            "clip" => self.clip = parse_f64(key, value)?,
            "conversion" => self.conversion = value.parse().map_err(|e: Error| e.to_string())?,
            "optimizer" => self.optimizer = value.parse().map_err(|e: Error| e.to_string())?,
            "lr" => self.learning_rate = parse_f64(key, value)?,
            "batch_size" => self.batch = BatchSpec::Size(parse_num(key, value)?),
            "sampling_rate" => self.batch = BatchSpec::Rate(parse_f64(key, value)?),
            "epochs" => self.duration = Duration::Epochs(parse_num(key, value)?),
            "steps" => self.duration = Duration::Steps(parse_num(key, value)?),
            "loss_scale" => self.loss_scale = parse_f64(key, value)?,
            "recipe" => {
                self.recipe = match value {
                    "consistent" => ScaleRecipe::Consistent,
                    "unscaled-threshold" => ScaleRecipe::UnscaledThreshold,
                    _ => {
                        return Err(format!(
                            "recipe: expected consistent or unscaled-threshold, got '{value}'"
                        ))
                    }
                }
            }
            "mode" => self.mode = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        let bad = |m: String| Err(param(m));
        if t.n == 0 || t.seq_len == 0 || t.vocab == 0 || t.embed_dim == 0 || t.classes < 2 {
            return bad("n, seq_len, vocab, embed_dim must be positive and classes >= 2".into());
        }
        if t.classes > t.vocab {
            return bad(format!("classes ({}) must not exceed vocab ({})", t.classes, t.vocab));
        }
        if t.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.label_noise) {
            return bad(format!("label_noise must lie in [0, 1], got {}", t.label_noise));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {d}"));
            }
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.clip.is_infinite() && self.epsilon.is_finite() {
            return bad("clip = inf needs epsilon = inf".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("lr must be finite and >= 0, got {}", self.learning_rate));
        }
        match self.batch {
            BatchSpec::Size(b) if b == 0 || b > t.n => {
                return bad(format!("batch_size must lie in [1, n = {}], got {b}", t.n))
            }
            BatchSpec::Rate(q) if !(q > 0.0 && q <= 1.0) => {
                return bad(format!("sampling_rate must lie in (0, 1], got {q}"))
            }
            _ => {}
        }
        match self.duration {
            Duration::Epochs(0) | Duration::Steps(0) => return bad("epochs/steps must be positive".into()),
            _ => {}
        }
        if !self.loss_scale.is_finite() || self.loss_scale <= 0.0 {
            return bad(format!(
                "loss_scale must be finite and positive, got {}",
                self.loss_scale
            ));
        }
        Ok(())
    }

    /// Sampling rate, averaging denominator, step count and `δ`.
    pub fn derive(&self) -> Result<Derived> {
        self.validate()?;
        let n = self.task.n;
        let (q, expected_batch) = match self.batch {
            BatchSpec::Size(b) => (b as f64 / n as f64, b),
            BatchSpec::Rate(q) => (q, ((q * n as f64).round() as usize).max(1)),
        };
        let steps = match (self.duration, self.batch) {
            (Duration::Steps(s), _) => s,
            (Duration::Epochs(e), BatchSpec::Size(b)) => e * n.div_ceil(b) as u64,
            (Duration::Epochs(e), BatchSpec::Rate(q)) => e * steps_per_epoch(q),
        };
        Ok(Derived {
            q,
            expected_batch,
            plan: SamplingPlan::new(q, steps)?,
            delta: self.delta.unwrap_or(1.0 / (2.0 * n as f64)),
        })
    }

    /// All keys with their effective values, in [`RunConfig::KEYS`] order.
    /// Keys of the unused alternative (`steps` vs `epochs`, `batch_size` vs
    /// `sampling_rate`) are left out.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.task;
        let hidden = if t.hidden.is_empty() {
            "none".to_string()
        } else {
            t.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut out = vec![
            ("n", t.n.to_string()),
            ("eval_n", t.eval_n.to_string()),
            ("seq_len", t.seq_len.to_string()),
            ("vocab", t.vocab.to_string()),
            ("classes", t.classes.to_string()),
            ("embed_dim", t.embed_dim.to_string()),
            ("hidden", hidden),
            ("bias", t.bias.to_string()),
            ("task_seed", t.task_seed.to_string()),
            ("label_noise", fmt_g9(t.label_noise)),
            ("pretrained", t.pretrained.to_string()),
            ("epsilon", fmt_g9(self.epsilon)),
            ("delta", self.delta.map_or("auto".into(), fmt_g9)),
            ("clip", fmt_g9(self.clip)),
            ("conversion", self.conversion.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("lr", fmt_g9(self.learning_rate)),
        ];
        match self.batch {
            BatchSpec::Size(b) => out.push(("batch_size", b.to_string())),
            BatchSpec::Rate(q) => out.push(("sampling_rate", fmt_g9(q))),
        }
        match self.duration {
            Duration::Epochs(e) => out.push(("epochs", e.to_string())),
            Duration::Steps(s) => out.push(("steps", s.to_string())),
        }
        out.push(("loss_scale", fmt_g9(self.loss_scale)));
        out.push((
            "recipe",
            match self.recipe {
                ScaleRecipe::Consistent => "consistent".into(),
                ScaleRecipe::UnscaledThreshold => "unscaled-threshold".into(),
            },
        ));
        out.push(("mode", self.mode.to_string()));
        out.push(("seed", self.seed.to_string()));
        out
    }
}
