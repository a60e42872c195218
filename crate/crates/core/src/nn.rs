//! Numeric building blocks shared by both models: parameter containers,
//! the Adam optimizer, initializers and the small set of activations the
//! models need, each with its hand-written derivative.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A fixed, ordered collection of dense parameter tensors.
///
/// Gradients and optimizer moments use the same type as the parameters, so
/// every element-wise operation is a zip over `tensors` / `tensors_mut`.
pub trait ParamSet: Clone + Send + Sync {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Sum of per-example gradients, reduced in the order given.
pub fn sum_ordered<P: ParamSet>(template: &P, grads: impl IntoIterator<Item = P>) -> P {
    let mut acc = template.zeros_like();
    for g in grads {
        acc.add_scaled(&g, 1.0);
    }
    acc
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

pub(crate) fn tref2<'a>(name: impl Into<String>, a: &'a Array2<f64>) -> TensorRef<'a> {
    TensorRef {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: slice2(a),
    }
}

pub(crate) fn tref1<'a>(name: impl Into<String>, a: &'a Array1<f64>) -> TensorRef<'a> {
    TensorRef {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: slice1(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the moment update.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone)]
pub struct Adam<P: ParamSet> {
    pub config: AdamConfig,
    pub m: P,
    pub v: P,
    pub t: u64,
}

impl<P: ParamSet> Adam<P> {
    pub fn new(config: AdamConfig, params: &P) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.config;
        let mut clip = 1.0;
        if let Some(max_norm) = c.clip_norm {
            let norm = grads.sq_norm().sqrt();
            if norm > max_norm {
                clip = max_norm / norm;
            }
        }
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let g = grads.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g)
        {
            for i in 0..p.len() {
                let gi = g.data[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Xavier/Glorot uniform for a `fan_in x fan_out` weight.
pub fn xavier_matrix(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}

pub fn xavier_vector(fan_in: usize, fan_out: usize, len: usize, rng: &mut Rng) -> Array1<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-a..a))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with the prediction clamped to `[eps, 1 - eps]`.
pub fn bce(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce(sigmoid(z), y) / dz, ignoring the clamp (which only binds when the
/// logit magnitude exceeds ~16).
pub fn bce_logit_grad(y_hat: f64, y: f64) -> f64 {
    y_hat - y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns (output, normalized input, 1/std per row).
pub fn layer_norm(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let out = &xhat * gamma + beta;
    (out, xhat, rstd)
}

/// Backward of [`layer_norm`]; accumulates into `dgamma` / `dbeta` and
/// returns the input gradient.
pub fn layer_norm_backward(
    dout: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dout * xhat).sum_axis(Axis(0));
    *dbeta += &dout.sum_axis(Axis(0));
    let d = xhat.ncols() as f64;
    let dxhat = dout * gamma;
    let mut dx = Array2::zeros(dout.raw_dim());
    for r in 0..dout.nrows() {
        let dxh = dxhat.row(r);
        let xh = xhat.row(r);
        let mean_dxh = dxh.sum() / d;
        let mean_dxh_xh = dxh.dot(&xh) / d;
        let rs = rstd[r];
        for c in 0..dout.ncols() {
            dx[[r, c]] = rs * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.mapv(|x| x - lse)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Central finite-difference gradient checking.
///
/// Independent of every backward pass in the crate: it only evaluates the
/// scalar loss at perturbed parameter vectors.
pub mod gradcheck {
    /// Central differences of `f` at `point` for the given coordinates.
    pub fn central_diff<F>(f: F, point: &[f64], coords: &[usize], step: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut x = point.to_vec();
        coords
            .iter()
            .map(|&i| {
                let orig = x[i];
                x[i] = orig + step;
                let plus = f(&x);
                x[i] = orig - step;
                let minus = f(&x);
                x[i] = orig;
                (plus - minus) / (2.0 * step)
            })
            .collect()
    }

    /// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = na.max(nb);
        if denom == 0.0 {
            0.0
        } else {
            diff / denom
        }
    }
}
