//! Per-trajectory transformation network.
//!
//! Each step attends over the anchor locations with a single scaled
//! dot-product head, then an MLP maps `[q_t, h_t, t_norm]` to a displacement
//! `δ_t`. The output head starts at zero, so a fresh network is the identity
//! transform `Q' = Q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::PlanePoint;

pub const DEFAULT_ATTENTION_DIM: usize = 32;
pub const HIDDEN_DIMS: [usize; 2] = [64, 128];
pub const DEFAULT_INITIAL_TAU: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Attention feature dimension.
    pub d: usize,
    /// Initial matching temperature.
    pub tau_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d: DEFAULT_ATTENTION_DIM,
            tau_init: DEFAULT_INITIAL_TAU,
        }
    }
}

/// Affine map `x W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformNetParams {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    /// Two hidden layers and the linear output head.
    pub mlp: [Dense; 3],
    /// Temperature is `exp(log_tau)`, positive by construction.
    pub log_tau: f64,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

impl TransformNetParams {
    /// Random attention and hidden layers, zero output head, `τ = tau_init`.
    pub fn init(cfg: &NetConfig, rng_seed: u64) -> Result<Self> {
        if cfg.d < 1 {
            return Err(Error::InvalidInput("attention dimension d must be >= 1".into()));
        }
        if !(cfg.tau_init > 0.0 && cfg.tau_init.is_finite()) {
            return Err(Error::InvalidInput("tau_init must be positive".into()));
        }
        let d = cfg.d;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let w_query = uniform(&mut rng, 2, d, 2);
        let w_key = uniform(&mut rng, 2, d, 2);
        let w_value = uniform(&mut rng, 2, d, 2);
        let in_dim = 2 + d + 1;
        let [h1, h2] = HIDDEN_DIMS;
        let l1 = Dense {
            weight: uniform(&mut rng, in_dim, h1, in_dim),
            bias: uniform(&mut rng, 1, h1, in_dim),
        };
        let l2 = Dense {
            weight: uniform(&mut rng, h1, h2, h1),
            bias: uniform(&mut rng, 1, h2, h1),
        };
        let out = Dense {
            weight: Tensor::zeros(h2, 2),
            bias: Tensor::zeros(1, 2),
        };
        Ok(Self {
            w_query,
            w_key,
            w_value,
            mlp: [l1, l2, out],
            log_tau: cfg.tau_init.ln(),
        })
    }

    pub fn d(&self) -> usize {
        self.w_query.cols()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_query,
            &self.w_key,
            &self.w_value,
            &self.mlp[0].weight,
            &self.mlp[0].bias,
            &self.mlp[1].weight,
            &self.mlp[1].bias,
            &self.mlp[2].weight,
            &self.mlp[2].bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        let [l1, l2, l3] = &mut self.mlp;
        [
            &mut self.w_query,
            &mut self.w_key,
            &mut self.w_value,
            &mut l1.weight,
            &mut l1.bias,
            &mut l2.weight,
            &mut l2.bias,
            &mut l3.weight,
            &mut l3.bias,
        ]
    }

    /// Number of network weights, excluding `log_tau`.
    pub fn num_weights(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    /// All network weights in a fixed order; `log_tau` is not included.
    pub fn flatten_weights(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_weights(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_weights() {
            return Err(Error::LengthMismatch {
                expected: self.num_weights(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Weights followed by `log_tau`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.flatten_weights();
        v.push(self.log_tau);
        v
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_weights();
        if flat.len() != n + 1 {
            return Err(Error::LengthMismatch {
                expected: n + 1,
                actual: flat.len(),
            });
        }
        self.set_weights(&flat[..n])?;
        self.log_tau = flat[n];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite()) && self.log_tau.is_finite()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let [wq, wk, wv, w1, b1, w2, b2, w3, b3] = self.tensors().map(|t| tape.param(t.clone()));
        let log_tau = tape.param(Tensor::scalar(self.log_tau));
        ParamVars {
            w_query: wq,
            w_key: wk,
            w_value: wv,
            weights: [w1, w2, w3],
            biases: [b1, b2, b3],
            log_tau,
        }
    }

    /// `Q' = Q + Δ` evaluated outside of any optimization.
    pub fn transform(&self, q: &[PlanePoint], anchors: &[PlanePoint]) -> Result<Vec<PlanePoint>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = forward(&mut tape, &vars, q, anchors)?;
        let delta = tape.value(out.delta);
        Ok(q.iter()
            .enumerate()
            .map(|(t, p)| PlanePoint::new(p.x + delta.get(t, 0), p.y + delta.get(t, 1)))
            .collect())
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w_query: Var,
    pub w_key: Var,
    pub w_value: Var,
    pub weights: [Var; 3],
    pub biases: [Var; 3],
    pub log_tau: Var,
}

impl ParamVars {
    /// Gradient in the layout of [`TransformNetParams::flatten`].
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let [w1, w2, w3] = self.weights;
        let [b1, b2, b3] = self.biases;
        let mut out = Vec::new();
        for v in [self.w_query, self.w_key, self.w_value, w1, b1, w2, b2, w3, b3, self.log_tau] {
            out.extend_from_slice(grads.wrt(v).data());
        }
        out
    }
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    /// `T×M` attention weights over the anchors.
    pub attention: Var,
    /// `T×d` attended anchor features.
    pub features: Var,
    /// `T×2` displacements.
    pub delta: Var,
}

pub fn points_tensor(points: &[PlanePoint]) -> Tensor {
    Tensor::from_vec(
        points.len(),
        2,
        points.iter().flat_map(|p| [p.x, p.y]).collect(),
    )
    .expect("sized by construction")
}

/// Runs the network for trajectory `q` against anchor locations `anchors`
/// (time-unknown first, then time-known).
pub fn forward(
    tape: &mut Tape,
    vars: &ParamVars,
    q: &[PlanePoint],
    anchors: &[PlanePoint],
) -> Result<NetOutput> {
    if anchors.is_empty() {
        return Err(Error::NoAnchors);
    }
    if q.len() < 2 {
        return Err(Error::InvalidInput("trajectory needs at least 2 points".into()));
    }
    let t_len = q.len();
    let d = tape.value(vars.w_query).cols();

    let q_mat = tape.constant(points_tensor(q));
    let x_mat = tape.constant(points_tensor(anchors));
    let queries = tape.matmul(q_mat, vars.w_query)?;
    let keys = tape.matmul(x_mat, vars.w_key)?;
    let values = tape.matmul(x_mat, vars.w_value)?;
    let keys_t = tape.transpose(keys);
    let scores = tape.matmul(queries, keys_t)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attention = tape.softmax(scores, Axis::Cols);
    let features = tape.matmul(attention, values)?;

    let denom = (t_len - 1) as f64;
    let time = tape.constant(Tensor::from_vec(
        t_len,
        1,
        (0..t_len).map(|t| t as f64 / denom).collect(),
    )?);
    let mut h = tape.concat_cols(&[q_mat, features, time])?;
    for layer in 0..3 {
        let lin = tape.matmul(h, vars.weights[layer])?;
        h = tape.add_bias(lin, vars.biases[layer])?;
        if layer < 2 {
            h = tape.relu(h);
        }
    }
    Ok(NetOutput {
        attention,
        features,
        delta: h,
    })
}
