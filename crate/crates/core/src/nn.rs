//! A fixed-architecture MLP velocity network `v_θ(x, t)` with hand-written
//! reverse-mode gradients, forward-mode Jacobian-vector products, AdamW and
//! early stopping.
//!
//! Input rows are `[x | embed(t)]`, followed by `depth` hidden affine layers
//! with SiLU activations and a final affine layer back to `d` outputs. All
//! parameters live in one flat vector; layer `l` stores its weight matrix
//! (row-major, `out × in`) followed by its bias.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::rng;
use crate::{Error, Matrix, Result};

/// Architecture of a [`VelocityNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Data dimension.
    pub d: usize,
    /// Width of every hidden layer.
    pub width: usize,
    /// Number of hidden layers (0 gives an affine map).
    pub depth: usize,
    /// Number of sin/cos pairs in the time embedding.
    pub embed_pairs: usize,
}

impl NetConfig {
    /// The default architecture: 4 hidden layers of width 256 and a
    /// 256-dimensional time embedding.
    pub fn standard(d: usize) -> Self {
        NetConfig { d, width: 256, depth: 4, embed_pairs: 128 }
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.embed_pairs
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.d + self.embed_dim();
        for _ in 0..self.depth {
            dims.push((self.width, fan_in));
            fan_in = self.width;
        }
        dims.push((self.d, fan_in));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(o, i)| o * i + o).sum()
    }
}

/// Highest embedding frequency; frequencies are geometric from 1 to this value.
pub const MAX_FREQUENCY: f64 = 1000.0;

/// Geometric frequencies `ω_k = 1000^{k/(pairs−1)}`, `k = 0..pairs`.
pub fn embedding_frequencies(pairs: usize) -> Vec<f64> {
    if pairs == 1 {
        return vec![1.0];
    }
    (0..pairs).map(|k| libm::pow(MAX_FREQUENCY, k as f64 / (pairs - 1) as f64)).collect()
}

/// `[sin(2πω_k t) for all k, cos(2πω_k t) for all k]`.
pub fn time_embed(t: f64, freqs: &[f64], out: &mut [f64]) {
    let p = freqs.len();
    for (k, &w) in freqs.iter().enumerate() {
        let a = 2.0 * PI * w * t;
        out[k] = libm::sin(a);
        out[p + k] = libm::cos(a);
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Pre-activations and activations of one forward pass.
pub struct ForwardCache {
    rows: usize,
    /// `acts[0]` is the input; `acts[l + 1] = silu(pre[l])` for hidden layers.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self, d: usize) -> Matrix {
        Matrix::from_vec(self.rows, d, self.output.clone()).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    config: NetConfig,
    freqs: Vec<f64>,
    params: Vec<f64>,
}

impl VelocityNet {
    /// He-uniform hidden layers, zero biases and a zero output layer, so the
    /// network starts as the zero velocity field.
    pub fn new(config: NetConfig, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = Vec::with_capacity(config.param_count());
        let dims = config.layer_dims();
        for (l, &(out, fan_in)) in dims.iter().enumerate() {
            let last = l + 1 == dims.len();
            let bound = libm::sqrt(6.0 / fan_in as f64);
            for _ in 0..out * fan_in {
                params.push(if last { 0.0 } else { rng.random_range(-bound..bound) });
            }
            params.extend(core::iter::repeat_n(0.0, out));
        }
        VelocityNet { config, freqs: embedding_frequencies(config.embed_pairs), params }
    }

    pub fn from_parts(config: NetConfig, freqs: Vec<f64>, params: Vec<f64>) -> Result<Self> {
        if freqs.len() != config.embed_pairs {
            return Err(Error::DimensionMismatch { expected: config.embed_pairs, got: freqs.len() });
        }
        if params.len() != config.param_count() {
            return Err(Error::DimensionMismatch { expected: config.param_count(), got: params.len() });
        }
        Ok(VelocityNet { config, freqs, params })
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(name, rows, cols, offset)` of every weight and bias tensor.
    pub fn tensor_layout(&self) -> Vec<(alloc::string::String, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (l, &(o, i)) in self.config.layer_dims().iter().enumerate() {
            out.push((alloc::format!("layer{l}.weight"), o, i, off));
            off += o * i;
            out.push((alloc::format!("layer{l}.bias"), o, 1, off));
            off += o;
        }
        out
    }

    fn check(&self, x: &Matrix, t: &[f64]) -> Result<()> {
        if x.cols() != self.config.d {
            return Err(Error::DimensionMismatch { expected: self.config.d, got: x.cols() });
        }
        if t.len() != x.rows() {
            return Err(Error::DimensionMismatch { expected: x.rows(), got: t.len() });
        }
        if !x.is_finite() || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn input(&self, x: &Matrix, t: &[f64]) -> Vec<f64> {
        let (d, e) = (self.config.d, self.config.embed_dim());
        let mut h = vec![0.0; x.rows() * (d + e)];
        for (i, row) in h.chunks_exact_mut(d + e).enumerate() {
            row[..d].copy_from_slice(x.row(i));
            time_embed(t[i], &self.freqs, &mut row[d..]);
        }
        h
    }

    /// Forward pass keeping the intermediate values needed by [`Self::jvp_cached`].
    pub fn forward_cached(&self, x: &Matrix, t: &[f64]) -> Result<ForwardCache> {
        self.check(x, t)?;
        let b = x.rows();
        let dims = self.config.layer_dims();
        let mut acts = vec![self.input(x, t)];
        let mut pre = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (l, &(out, fan_in)) in dims.iter().enumerate() {
            let w = &self.params[off..off + out * fan_in];
            let bias = &self.params[off + out * fan_in..off + out * fan_in + out];
            off += out * fan_in + out;
            let mut z = vec![0.0; b * out];
            for row in z.chunks_exact_mut(out) {
                row.copy_from_slice(bias);
            }
            gemm_nt(b, fan_in, out, 1.0, &acts[l], w, 1.0, &mut z);
            if l + 1 < dims.len() {
                acts.push(z.iter().map(|&v| silu(v)).collect());
                pre.push(z);
            } else {
                return Ok(ForwardCache { rows: b, acts, pre, output: z });
            }
        }
        unreachable!("the output layer always exists")
    }

    /// `v_θ(x, t)` for a batch of rows.
    pub fn forward(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        Ok(self.forward_cached(x, t)?.output(self.config.d))
    }

    /// Directional derivative `J_x v_θ(x, t) · v` reusing a forward cache.
    pub fn jvp_cached(&self, cache: &ForwardCache, v: &Matrix) -> Result<Matrix> {
        let (d, e) = (self.config.d, self.config.embed_dim());
        if v.cols() != d || v.rows() != cache.rows {
            return Err(Error::DimensionMismatch { expected: cache.rows * d, got: v.rows() * v.cols() });
        }
        let b = cache.rows;
        let mut tangent = vec![0.0; b * (d + e)];
        for (i, row) in tangent.chunks_exact_mut(d + e).enumerate() {
            row[..d].copy_from_slice(v.row(i));
        }
        let dims = self.config.layer_dims();
        let mut off = 0;
        for (l, &(out, fan_in)) in dims.iter().enumerate() {
            let w = &self.params[off..off + out * fan_in];
            off += out * fan_in + out;
            let mut dz = vec![0.0; b * out];
            gemm_nt(b, fan_in, out, 1.0, &tangent, w, 0.0, &mut dz);
            if l + 1 < dims.len() {
                for (g, &z) in dz.iter_mut().zip(&cache.pre[l]) {
                    *g *= silu_prime(z);
                }
            }
            tangent = dz;
        }
        Matrix::from_vec(b, d, tangent)
    }

    /// Directional derivative `J_x v_θ(x, t) · v`.
    pub fn jvp(&self, x: &Matrix, t: &[f64], v: &Matrix) -> Result<Matrix> {
        let cache = self.forward_cached(x, t)?;
        self.jvp_cached(&cache, v)
    }

    // Back-propagate an output cotangent; returns the parameter gradient (if
    // requested) and the cotangent of the input rows.
    fn backward(&self, cache: &ForwardCache, g_out: Vec<f64>, want_params: bool) -> (Vec<f64>, Vec<f64>) {
        let b = cache.rows;
        let dims = self.config.layer_dims();
        let mut grad = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(out, fan_in) in &dims {
            offsets.push(off);
            off += out * fan_in + out;
        }
        let mut g = g_out;
        for l in (0..dims.len()).rev() {
            let (out, fan_in) = dims[l];
            let off = offsets[l];
            if l + 1 < dims.len() {
                for (gv, &z) in g.iter_mut().zip(&cache.pre[l]) {
                    *gv *= silu_prime(z);
                }
            }
            if want_params {
                let (gw, gb) = grad[off..off + out * fan_in + out].split_at_mut(out * fan_in);
                gemm_tn(out, b, fan_in, 1.0, &g, &cache.acts[l], 0.0, gw);
                for row in g.chunks_exact(out) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
            }
            let w = &self.params[off..off + out * fan_in];
            let mut g_in = vec![0.0; b * fan_in];
            gemm_nn(b, out, fan_in, 1.0, &g, w, 0.0, &mut g_in);
            g = g_in;
        }
        (grad, g)
    }

    /// Vector-Jacobian product `J_x v_θ(x, t)ᵀ · u`.
    pub fn vjp(&self, x: &Matrix, t: &[f64], u: &Matrix) -> Result<Matrix> {
        let cache = self.forward_cached(x, t)?;
        let d = self.config.d;
        if u.cols() != d || u.rows() != x.rows() {
            return Err(Error::DimensionMismatch { expected: x.rows() * d, got: u.rows() * u.cols() });
        }
        let (_, g_in) = self.backward(&cache, u.as_slice().to_vec(), false);
        let width = d + self.config.embed_dim();
        let data = g_in.chunks_exact(width).flat_map(|row| row[..d].iter().copied()).collect();
        Matrix::from_vec(x.rows(), d, data)
    }

    /// Mean squared error `mean_{i,j} (v_θ(x_i, t_i)_j − u_ij)²` and its gradient
    /// with respect to the parameters.
    pub fn loss_and_grad(&self, x: &Matrix, t: &[f64], target: &Matrix) -> Result<(f64, Vec<f64>)> {
        if x.rows() == 0 {
            return Err(Error::Empty);
        }
        if target.rows() != x.rows() || target.cols() != self.config.d {
            return Err(Error::DimensionMismatch { expected: x.rows() * self.config.d, got: target.rows() * target.cols() });
        }
        let cache = self.forward_cached(x, t)?;
        let scale = 1.0 / (x.rows() * self.config.d) as f64;
        let mut loss = 0.0;
        let g_out: Vec<f64> = cache
            .output
            .iter()
            .zip(target.as_slice())
            .map(|(o, u)| {
                let r = o - u;
                loss += r * r;
                2.0 * scale * r
            })
            .collect();
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::Diverged(alloc::format!("training loss is {loss}")));
        }
        let (grad, _) = self.backward(&cache, g_out, true);
        Ok((loss, grad))
    }

    /// Mean squared error without the gradient.
    pub fn loss(&self, x: &Matrix, t: &[f64], target: &Matrix) -> Result<f64> {
        let out = self.forward(x, t)?;
        let n = out.as_slice().len() as f64;
        Ok(out.as_slice().iter().zip(target.as_slice()).map(|(o, u)| (o - u) * (o - u)).sum::<f64>() / n)
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip threshold (`+∞` disables clipping).
    pub clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5, clip: 10.0 }
    }
}

/// AdamW with decoupled weight decay and global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Scale `grad` in place to global norm at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grad.iter().map(|g| g * g).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        AdamW { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update; `grad` is clipped in place. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64]) -> Result<f64> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(alloc::string::String::from("non-finite gradient")));
        }
        let c = self.config;
        let norm = clip_global_norm(grad, c.clip);
        self.step += 1;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.lr * (c.weight_decay * params[i] + m_hat / (libm::sqrt(v_hat) + c.eps));
        }
        Ok(norm)
    }
}

/// Patience-based early stopping on a validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0 }
    }

    /// Record the loss of the next epoch; returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        (improved, self.epoch - self.best_epoch >= self.patience)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based epoch of the best loss (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
