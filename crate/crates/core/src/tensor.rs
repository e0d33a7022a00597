//! Dense row-major tensors, the few matrix kernels the engine needs, and
//! seeded randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{param, Error, Result};

/// Row-major n-dimensional array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        sq_norm(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }
}

/// Matrix product `a[m×n] · b[n×k]`.
pub fn gemm(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, n) = a.matrix_dims("gemm")?;
    let (n2, k) = b.matrix_dims("gemm")?;
    if n != n2 {
        return Err(Error::Dimension {
            op: "gemm",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = DenseTensor::zeros(&[m, k]);
    matmul_acc(&a.data, &b.data, m, n, k, &mut out.data);
    Ok(out)
}

/// `out[m×k] += a[m×n] · b[n×k]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let row = &mut out[i * k..(i + 1) * k];
        for (l, &av) in a[i * n..(i + 1) * n].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[l * k..(l + 1) * k]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for j in 0..k {
            out[i * k + j] += dot(ar, &b[j * n..(j + 1) * n]);
        }
    }
}

/// `out[n×k] += a[m×n]ᵀ · b[m×k]`, i.e. a sum of row outer products.
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * k);
    for r in 0..m {
        let br = &b[r * k..(r + 1) * k];
        for (i, &av) in a[r * n..(r + 1) * n].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * k..(i + 1) * k].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    sq_norm(v).sqrt()
}

/// Deterministic random source.
///
/// Wraps a ChaCha8 keystream: the output is a pure function of `(seed, stream,
/// position)`, so splitting one request into several calls yields the same
/// draws as a single call.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator on a separate keystream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self { seed: self.seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

/// I.i.d. `N(0, std²)` samples; the standard normal is drawn first and then
/// multiplied by `std`.
pub fn gaussian_noise(shape: &[usize], std: f64, rng: &mut SeededRng) -> Result<DenseTensor> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(param(format!("noise std must be finite and >= 0, got {std}")));
    }
    let len: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![0.0; len]
    } else {
        (0..len).map(|_| rng.standard_normal() * std).collect()
    };
    DenseTensor::from_vec(shape, data)
}
