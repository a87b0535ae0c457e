//! Full-batch Adam optimization of the transformation network.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{PlanePoint, Session};
use crate::objective::{loss_total_from_delta, AnchorTargets, ObjectiveConfig};
use crate::transform_net::{forward, points_tensor, NetConfig, TransformNetParams};

/// Runs abort once the loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Step size for the network weights.
    pub learning_rate: f64,
    /// Step size for `log τ`.
    pub tau_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds the network initialization.
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.001,
            tau_learning_rate: 0.03,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidInput("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.tau_learning_rate >= 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidInput("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> i32 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &OptimizerConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step);
    let c2 = 1.0 - b2.powi(state.step);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    /// Loss before each update; one entry per iteration.
    pub losses: Vec<f64>,
    pub final_tau: f64,
    pub final_params: TransformNetParams,
}

/// Optimizes a fresh network for `session` and returns `Q' = Q + Δ`.
pub fn optimize_transform(
    session: &Session,
    net_cfg: &NetConfig,
    objective: &ObjectiveConfig,
    opt_cfg: &OptimizerConfig,
) -> Result<(Vec<PlanePoint>, OptimizationTrace)> {
    opt_cfg.validate()?;
    let q = session.relative.points();
    let anchor_locs = session.anchor_locations();
    let tu = session.tu_locations();
    let targets = AnchorTargets::new(&tu, &session.anchors_tk)?;

    let mut params = TransformNetParams::init(net_cfg, opt_cfg.rng_seed)?;
    let mut weights = params.flatten_weights();
    let mut weight_state = AdamState::new(weights.len());
    let mut log_tau = [params.log_tau];
    let mut tau_state = AdamState::new(1);
    let mut losses = Vec::with_capacity(opt_cfg.iterations);
    let q_tensor = points_tensor(q);

    for iteration in 1..=opt_cfg.iterations {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let out = forward(&mut tape, &vars, q, &anchor_locs)?;
        let q_const = tape.constant(q_tensor.clone());
        let qp = tape.add(q_const, out.delta)?;
        let terms = loss_total_from_delta(&mut tape, qp, out.delta, &targets, vars.log_tau, objective)?;
        let loss = tape.item(terms.total);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        if loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { iteration, loss });
        }
        losses.push(loss);

        let grads = tape.backward(terms.total)?;
        let mut flat = vars.flat_gradient(&grads);
        let tau_grad = flat.pop().expect("log_tau gradient");
        adam_step(&mut weights, &flat, &mut weight_state, opt_cfg.learning_rate, opt_cfg);
        adam_step(&mut log_tau, &[tau_grad], &mut tau_state, opt_cfg.tau_learning_rate, opt_cfg);
        params.set_weights(&weights)?;
        params.log_tau = log_tau[0];
        debug_assert!(params.tau() > 0.0);
    }

    let qp = params.transform(q, &anchor_locs)?;
    if let Some(i) = qp.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("transformed point {i} is not finite")));
    }
    Ok((
        qp,
        OptimizationTrace {
            losses,
            final_tau: params.tau(),
            final_params: params,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [0.3, -4.0, 1e-3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, 0.001, &cfg);
        let expect = [1.0 - 0.001, -2.0 + 0.001, 0.5 - 0.001];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, 0.01, &cfg);
        }
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_minimizes_quadratic_deterministically() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = vec![3.0, -1.0];
            let mut st = AdamState::new(2);
            for _ in 0..3000 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * (x - 0.5)).collect();
                adam_step(&mut p, &g, &mut st, 0.01, &cfg);
            }
            p
        };
        let p = run();
        assert!(p.iter().all(|x| (x - 0.5).abs() < 1e-3), "{p:?}");
        assert_eq!(p, run());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
