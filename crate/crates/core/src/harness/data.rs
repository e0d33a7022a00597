//! Synthetic sequence classification with a planted linear teacher.
//!
//! Tokens are uniform over the vocabulary. The teacher mean-pools a frozen
//! random embedding of the tokens and labels each sequence by the argmax of
//! `W·x + b`, where the class offsets `b` are tuned on the training set so
//! the label histogram is flat. Optional label noise resamples a label
//! uniformly.

use crate::error::{param, Result};
use crate::model::SeqBatch;
use crate::tensor::{DenseTensor, SeededRng};

use super::config::TaskConfig;
use super::report::{Cell, CsvTable};

/// The labelling teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    embedding: DenseTensor,
    weight: DenseTensor,
    bias: Vec<f64>,
}

impl PlantedModel {
    /// Teacher scores `W·mean(E[tokens]) + b`.
    pub fn scores(&self, tokens: &[usize]) -> Vec<f64> {
        let d = self.embedding.shape()[1];
        let e = self.embedding.data();
        let mut x = vec![0.0; d];
        for &t in tokens {
            x.iter_mut().zip(&e[t * d..(t + 1) * d]).for_each(|(x, e)| *x += e);
        }
        let inv = 1.0 / tokens.len() as f64;
        x.iter_mut().for_each(|v| *v *= inv);
        self.weight
            .data()
            .chunks_exact(d)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, tokens: &[usize]) -> usize {
        argmax(&self.scores(tokens))
    }

    /// Fraction of `batch` whose label the teacher reproduces.
    pub fn accuracy(&self, batch: &SeqBatch) -> f64 {
        if batch.is_empty() {
            return f64::NAN;
        }
        let hits = (0..batch.len())
            .filter(|&i| self.predict(batch.tokens(i)) == batch.labels()[i])
            .count();
        hits as f64 / batch.len() as f64
    }

    /// The frozen `V×D` embedding table.
    pub fn embedding(&self) -> &DenseTensor {
        &self.embedding
    }

    pub fn class_bias(&self) -> &[f64] {
        &self.bias
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: SeqBatch,
    pub eval: SeqBatch,
    pub teacher: PlantedModel,
}

impl SyntheticTask {
    /// Rows `split,label,t0,…,t{T−1}`.
    pub fn to_csv(&self) -> String {
        let t = self.train.seq_len();
        let mut header: Vec<String> = vec!["split".into(), "label".into()];
        header.extend((0..t).map(|i| format!("t{i}")));
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut table = CsvTable::new(&refs);
        for (name, batch) in [("train", &self.train), ("eval", &self.eval)] {
            for i in 0..batch.len() {
                let mut row: Vec<Cell> = vec![name.into(), batch.labels()[i].into()];
                row.extend(batch.tokens(i).iter().map(|&x| Cell::from(x)));
                table.push(row);
            }
        }
        table.to_csv()
    }

    /// Label counts of the training split.
    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        self.train.labels().iter().for_each(|&y| h[y] += 1);
        h
    }
}

fn random_tokens(n: usize, t: usize, vocab: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..n * t).map(|_| rng.below(vocab)).collect()
}

/// Shifts class offsets until argmax labels are close to uniform on `pooled`
/// scores.
fn balance_offsets(scores: &[Vec<f64>], classes: usize) -> Vec<f64> {
    let n = scores.len() as f64;
    let spread = {
        let all: Vec<f64> = scores.iter().flatten().copied().collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        (all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / all.len() as f64).sqrt()
    };
    let mut bias = vec![0.0; classes];
    let mut step = 0.5 * spread.max(1e-12);
    for _ in 0..400 {
        let mut counts = vec![0usize; classes];
        for s in scores {
            let shifted: Vec<f64> = s.iter().zip(&bias).map(|(s, b)| s + b).collect();
            counts[argmax(&shifted)] += 1;
        }
        let target = n / classes as f64;
        if counts.iter().all(|&c| (c as f64 - target).abs() <= 1.0) {
            break;
        }
        for (b, &c) in bias.iter_mut().zip(&counts) {
            *b -= step * (c as f64 - target) / target;
        }
        step *= 0.98;
    }
    bias
}

/// Draws the train and eval splits for `task`, seeded by `task.task_seed`.
pub fn gen_synthetic_task(task: &TaskConfig) -> Result<SyntheticTask> {
    if task.classes < 2 || task.classes > task.vocab {
        return Err(param(format!(
            "need 2 <= classes <= vocab, got classes = {} and vocab = {}",
            task.classes, task.vocab
        )));
    }
    if task.n == 0 || task.seq_len == 0 || task.embed_dim == 0 {
        return Err(param("n, seq_len and embed_dim must be positive"));
    }
    if !(0.0..=1.0).contains(&task.label_noise) {
        return Err(param(format!(
            "label noise must lie in [0, 1], got {}",
            task.label_noise
        )));
    }
    let root = SeededRng::new(task.task_seed);
    let (v, d, k, t) = (task.vocab, task.embed_dim, task.classes, task.seq_len);

    let mut rng = root.fork(0);
    let embedding = DenseTensor::from_vec(&[v, d], (0..v * d).map(|_| rng.standard_normal()).collect())?;
    let scale = 3.0 * (t as f64 / d as f64).sqrt();
    let mut rng = root.fork(1);
    let weight = DenseTensor::from_vec(&[k, d], (0..k * d).map(|_| scale * rng.standard_normal()).collect())?;
    let mut teacher = PlantedModel {
        embedding,
        weight,
        bias: vec![0.0; k],
    };

    let train_ids = random_tokens(task.n, t, v, &mut root.fork(2));
    let eval_ids = random_tokens(task.eval_n, t, v, &mut root.fork(3));
    let raw: Vec<Vec<f64>> = train_ids.chunks_exact(t).map(|s| teacher.scores(s)).collect();
    teacher.bias = balance_offsets(&raw, k);

    let mut noise = root.fork(4);
    let mut label = |tokens: &[usize]| {
        let y = teacher.predict(tokens);
        if task.label_noise > 0.0 && noise.uniform() < task.label_noise {
            noise.below(k)
        } else {
            y
        }
    };
    let train_labels: Vec<usize> = train_ids.chunks_exact(t).map(&mut label).collect();
    let eval_labels: Vec<usize> = eval_ids.chunks_exact(t).map(&mut label).collect();
    Ok(SyntheticTask {
        train: SeqBatch::new(train_ids, train_labels, t)?,
        eval: SeqBatch::new(eval_ids, eval_labels, t)?,
        teacher,
    })
}
