//! Dense layers with hand-written forward/backward passes.
//!
//! Parameters live in a flat [`ParamSet`]; layers hold indices into it.
//! Forward passes return the caches their backward passes need, so a single
//! immutable model can run many samples in parallel, each accumulating into
//! its own [`GradSet`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Flat parameter store; index order is construction order and therefore
/// deterministic for a given config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
    pub names: Vec<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.tensors.push(tensor);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Gradient accumulator mirroring a [`ParamSet`]'s shapes.
pub struct GradSet {
    pub tensors: Vec<Tensor>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Elementwise merge in index order; deterministic.
    pub fn merge(&mut self, other: &GradSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }
}

/// Glorot-uniform initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// `y = x W + b` with `x: (L, in)`, `W: (in, out)`, `b: (1, out)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

pub struct LinearCache {
    x: Tensor,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = params.register(format!("{name}.w"), glorot(in_dim, out_dim, rng));
        let b = params.register(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self { w, b }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> (Tensor, LinearCache) {
        let mut y = x.matmul(params.get(self.w));
        y.add_bias(params.get(self.b));
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &LinearCache,
        dy: &Tensor,
        grads: &mut GradSet,
    ) -> Tensor {
        grads.get_mut(self.w).add_assign(&cache.x.matmul_at_b(dy));
        let db = grads.get_mut(self.b);
        for i in 0..dy.rows {
            for (g, d) in db.row_mut(0).iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        dy.matmul_a_bt(params.get(self.w))
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

pub struct LayerNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = params.register(format!("{name}.gain"), Tensor::from_fn(1, dim, |_, _| 1.0));
        let bias = params.register(format!("{name}.bias"), Tensor::zeros(1, dim));
        Self {
            gain,
            bias,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> (Tensor, LayerNormCache) {
        let d = x.cols as f64;
        let mut x_hat = Tensor::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            for (out, &v) in x_hat.row_mut(i).iter_mut().zip(row) {
                *out = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let gain = params.get(self.gain);
        let bias = params.get(self.bias);
        let mut y = x_hat.clone();
        for i in 0..y.rows {
            for ((v, g), b) in y.row_mut(i).iter_mut().zip(gain.row(0)).zip(bias.row(0)) {
                *v = *v * g + b;
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &LayerNormCache,
        dy: &Tensor,
        grads: &mut GradSet,
    ) -> Tensor {
        let d = dy.cols as f64;
        let gain = params.get(self.gain);
        let mut dx = Tensor::zeros(dy.rows, dy.cols);
        for i in 0..dy.rows {
            let dyr = dy.row(i);
            let xh = cache.x_hat.row(i);
            {
                let dgain = grads.get_mut(self.gain);
                for ((g, &dyv), &x) in dgain.row_mut(0).iter_mut().zip(dyr).zip(xh) {
                    *g += dyv * x;
                }
            }
            {
                let dbias = grads.get_mut(self.bias);
                for (g, &dyv) in dbias.row_mut(0).iter_mut().zip(dyr) {
                    *g += dyv;
                }
            }
            // dL/dx through the normalization
            let dxhat: Vec<f64> = dyr
                .iter()
                .zip(gain.row(0))
                .map(|(dyv, g)| dyv * g)
                .collect();
            let mean_dxhat = dxhat.iter().sum::<f64>() / d;
            let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let inv = cache.inv_std[i];
            for ((out, &dxh), &x) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xh) {
                *out = inv * (dxh - mean_dxhat - x * mean_dxhat_xhat);
            }
        }
        dx
    }
}

/// Smooth GELU (tanh approximation); smoothness keeps finite-difference
/// gradient checks clean.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    const K: f64 = 0.7978845608028654;
    let inner = K * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = K * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Position-wise feed-forward block: Linear -> GELU -> Linear.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct FeedForwardCache {
    lin1: LinearCache,
    pre_act: Tensor,
    lin2: LinearCache,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            lin1: Linear::new(params, &format!("{name}.lin1"), d_model, d_ff, rng),
            lin2: Linear::new(params, &format!("{name}.lin2"), d_ff, d_model, rng),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> (Tensor, FeedForwardCache) {
        let (pre_act, lin1) = self.lin1.forward(params, x);
        let mut hidden = pre_act.clone();
        for v in &mut hidden.data {
            *v = gelu(*v);
        }
        let (y, lin2) = self.lin2.forward(params, &hidden);
        (
            y,
            FeedForwardCache {
                lin1,
                pre_act,
                lin2,
            },
        )
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &FeedForwardCache,
        dy: &Tensor,
        grads: &mut GradSet,
    ) -> Tensor {
        let mut dhidden = self.lin2.backward(params, &cache.lin2, dy, grads);
        for (g, &x) in dhidden.data.iter_mut().zip(&cache.pre_act.data) {
            *g *= gelu_grad(x);
        }
        self.lin1.backward(params, &cache.lin1, &dhidden, grads)
    }
}

/// Inverted-dropout mask; identity when `p == 0` or in inference mode.
pub struct Dropout {
    pub p: f64,
}

pub struct DropoutCache {
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> (Tensor, DropoutCache) {
        match rng {
            Some(rng) if self.p > 0.0 => {
                let keep = 1.0 - self.p;
                let mask = Tensor::from_fn(x.rows, x.cols, |_, _| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mut y = x.clone();
                for (v, m) in y.data.iter_mut().zip(&mask.data) {
                    *v *= m;
                }
                (y, DropoutCache { mask: Some(mask) })
            }
            _ => (x.clone(), DropoutCache { mask: None }),
        }
    }

    pub fn backward(&self, cache: &DropoutCache, dy: &Tensor) -> Tensor {
        match &cache.mask {
            None => dy.clone(),
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, m) in dx.data.iter_mut().zip(&mask.data) {
                    *v *= m;
                }
                dx
            }
        }
    }
}
