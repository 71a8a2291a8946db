//! Fully connected layers, GRU cells, windowed attention pooling, diagonal
//! Gaussian heads and reparameterized sampling.
//!
//! Blocks only hold [`ParamId`]s; the values live in a [`ParamStore`] and are
//! bound onto a [`Graph`] per forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError, Var};

/// Bounds applied to every predicted log-variance.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Uniform(−1/√fan_in, 1/√fan_in) for matrices; biases start at zero.
pub fn init_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone)]
pub struct FcLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl FcLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_matrix(rng, out_dim, in_dim));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        FcLayer {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let y = g.linear(w, x, b)?;
        match self.activation {
            Activation::None => Ok(y),
            Activation::Tanh => g.tanh(y),
            Activation::Softmax => g.softmax(y),
        }
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let mut gate = |gate: &str| {
            let w = store.add(format!("{name}.w_{gate}"), init_matrix(rng, hidden_dim, input_dim));
            let u = store.add(format!("{name}.u_{gate}"), init_matrix(rng, hidden_dim, hidden_dim));
            let b = store.add(format!("{name}.b_{gate}"), Tensor::zeros(&[hidden_dim]));
            (w, u, b)
        };
        let (w_update, u_update, b_update) = gate("update");
        let (w_reset, u_reset, b_reset) = gate("reset");
        let (w_cand, u_cand, b_cand) = gate("cand");
        GruCell {
            w_update,
            u_update,
            b_update,
            w_reset,
            u_reset,
            b_reset,
            w_cand,
            u_cand,
            b_cand,
            input_dim,
            hidden_dim,
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h_prev: Var) -> Result<Var> {
        if g.value(h_prev).shape() != [self.hidden_dim] {
            return Err(TensorError::Shape {
                op: "gru_step",
                expected: format!("hidden [{}]", self.hidden_dim),
                got: format!("{:?}", g.value(h_prev).shape()),
            });
        }
        let wz = g.param(self.w_update);
        let uz = g.param(self.u_update);
        let bz = g.param(self.b_update);
        let xz = g.linear(wz, x, bz)?;
        let hz = g.matvec(uz, h_prev)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;

        let wr = g.param(self.w_reset);
        let ur = g.param(self.u_reset);
        let br = g.param(self.b_reset);
        let xr = g.linear(wr, x, br)?;
        let hr = g.matvec(ur, h_prev)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;

        let wn = g.param(self.w_cand);
        let un = g.param(self.u_cand);
        let bn = g.param(self.b_cand);
        let xn = g.linear(wn, x, bn)?;
        let rh = g.mul(r, h_prev)?;
        let hn = g.matvec(un, rh)?;
        let n = g.add(xn, hn)?;
        let n = g.tanh(n)?;

        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h_prev, n)?;
        let keep = g.mul(z, diff)?;
        g.add(n, keep)
    }
}

/// Single-head scaled dot-product attention over a window of lower-layer
/// states, queried by the upper layer's previous state.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub attn_dim: usize,
    pub lower_dim: usize,
    pub upper_dim: usize,
}

impl AttentionPool {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        lower_dim: usize,
        upper_dim: usize,
        attn_dim: usize,
    ) -> Self {
        let query = store.add(format!("{name}.query"), init_matrix(rng, attn_dim, upper_dim));
        let key = store.add(format!("{name}.key"), init_matrix(rng, attn_dim, lower_dim));
        let value = store.add(format!("{name}.value"), init_matrix(rng, attn_dim, lower_dim));
        AttentionPool {
            query,
            key,
            value,
            attn_dim,
            lower_dim,
            upper_dim,
        }
    }

    /// Returns `(pooled, weights)`; `weights` has one entry per window element.
    pub fn pool(&self, g: &mut Graph, window: &[Var], query_state: Var) -> Result<(Var, Var)> {
        if window.is_empty() {
            return Err(TensorError::Contract("attention over an empty window".into()));
        }
        let rows = g.stack(window)?; // [k × lower]
        let wq = g.param(self.query);
        let wk = g.param(self.key);
        let wv = g.param(self.value);
        let q = g.matvec(wq, query_state)?; // [a]
        let wk_t = g.transpose(wk)?;
        let keys = g.matmul(rows, wk_t)?; // [k × a]
        let scores = g.matvec(keys, q)?; // [k]
        let scores = g.scale(scores, 1.0 / (self.attn_dim as f64).sqrt())?;
        let weights = g.softmax(scores)?;
        let wv_t = g.transpose(wv)?;
        let values = g.matmul(rows, wv_t)?; // [k × a]
        let values_t = g.transpose(values)?; // [a × k]
        let pooled = g.matvec(values_t, weights)?;
        Ok((pooled, weights))
    }
}

/// Diagonal Gaussian given by mean and log-variance nodes.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianParams {
    pub fn mean_values(&self, g: &Graph) -> Vec<f64> {
        g.value(self.mean).data().to_vec()
    }

    pub fn log_var_values(&self, g: &Graph) -> Vec<f64> {
        g.value(self.log_var).data().to_vec()
    }
}

/// Two parallel FC layers producing mean and (clamped) log-variance.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mean: FcLayer,
    pub log_var: FcLayer,
}

impl GaussianHead {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, out_dim: usize) -> Self {
        GaussianHead {
            mean: FcLayer::new(store, rng, &format!("{name}.mean"), in_dim, out_dim, Activation::None),
            log_var: FcLayer::new(store, rng, &format!("{name}.log_var"), in_dim, out_dim, Activation::None),
        }
    }

    pub fn forward(&self, g: &mut Graph, features: Var) -> Result<GaussianParams> {
        gaussian_head(g, &self.mean, &self.log_var, features)
    }
}

pub fn gaussian_head(g: &mut Graph, mean_layer: &FcLayer, logvar_layer: &FcLayer, features: Var) -> Result<GaussianParams> {
    let mean = mean_layer.forward(g, features)?;
    let raw = logvar_layer.forward(g, features)?;
    let log_var = g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok(GaussianParams { mean, log_var })
}

/// `mean + exp(½ log_var) ⊙ noise`.
pub fn reparam_sample(g: &mut Graph, params: GaussianParams, noise: &Tensor) -> Result<Var> {
    if noise.shape() != g.value(params.mean).shape() {
        return Err(TensorError::Shape {
            op: "reparam_sample",
            expected: format!("{:?}", g.value(params.mean).shape()),
            got: format!("{:?}", noise.shape()),
        });
    }
    let half = g.scale(params.log_var, 0.5)?;
    let std = g.exp(half)?;
    let eps = g.input(noise.clone());
    let scaled = g.mul(std, eps)?;
    g.add(params.mean, scaled)
}
