//! Anchor-alignment objective for the transformed trajectory `Q'`.
//!
//! `L = L_match + L_bound + λ·L_reg` where
//!
//! * `L_match = Σ_t max_x w(t, x)·‖q'_t − x‖²` over all anchors. Time-known
//!   anchors have `w = 1` at their own timestep and `0` elsewhere; each
//!   time-unknown anchor spreads its weight over time with a softmax of
//!   `−‖q'_t − x‖² / τ`.
//! * `L_bound = max_t ‖ReLU(−q'_t) + ReLU(q'_t − 1)‖²` keeps `Q'` in the unit square.
//! * `L_reg = Σ_{t≥2} ‖δ_t − δ_{t−1}‖` with `δ = Q' − Q`.
//!
//! The temperature enters as `log_tau` so it can be optimized jointly.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{PlanePoint, TimeKnownAnchor};
use crate::transform_net::points_tensor;

pub const DEFAULT_LAMBDA_REG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda_reg: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_reg: DEFAULT_LAMBDA_REG,
        }
    }
}

/// Matching confidences, `T×(J+K)`, time-unknown columns first.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchWeights {
    pub weights: Tensor,
    pub num_time_unknown: usize,
}

/// Anchors in the form the objective consumes.
#[derive(Debug, Clone)]
pub struct AnchorTargets {
    time_unknown: Vec<PlanePoint>,
    time_known: Vec<TimeKnownAnchor>,
}

impl AnchorTargets {
    pub fn new(time_unknown: &[PlanePoint], time_known: &[TimeKnownAnchor]) -> Result<Self> {
        if time_unknown.is_empty() && time_known.is_empty() {
            return Err(Error::NoAnchors);
        }
        Ok(Self {
            time_unknown: time_unknown.to_vec(),
            time_known: time_known.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.time_unknown.len() + self.time_known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn known_mask(&self, t_len: usize) -> Result<Tensor> {
        let k = self.time_known.len();
        let mut mask = Tensor::zeros(t_len, k);
        for (col, a) in self.time_known.iter().enumerate() {
            if a.timestep < 1 || a.timestep > t_len {
                return Err(Error::InvalidInput(format!(
                    "time-known anchor timestep {} outside [1, {t_len}]",
                    a.timestep
                )));
            }
            mask.set(a.timestep - 1, col, 1.0);
        }
        Ok(mask)
    }
}

/// Nodes for weights and squared distances, both `T×(J+K)`.
struct MatchNodes {
    weighted: Var,
    weights: Var,
}

fn match_nodes(tape: &mut Tape, qp: Var, anchors: &AnchorTargets, log_tau: Var) -> Result<MatchNodes> {
    let t_len = tape.value(qp).rows();
    let mut weighted = Vec::new();
    let mut weights = Vec::new();
    if !anchors.time_unknown.is_empty() {
        let x = tape.constant(points_tensor(&anchors.time_unknown));
        let dist = tape.sq_dist(qp, x)?;
        let neg_log_tau = tape.neg(log_tau);
        let inv_tau = tape.exp(neg_log_tau);
        let scaled = tape.mul_scalar_var(dist, inv_tau)?;
        let logits = tape.neg(scaled);
        let w = tape.softmax(logits, Axis::Rows);
        weighted.push(tape.mul(w, dist)?);
        weights.push(w);
    }
    if !anchors.time_known.is_empty() {
        let locs: Vec<PlanePoint> = anchors.time_known.iter().map(|a| a.location).collect();
        let x = tape.constant(points_tensor(&locs));
        let dist = tape.sq_dist(qp, x)?;
        let mask = tape.constant(anchors.known_mask(t_len)?);
        weighted.push(tape.mul(dist, mask)?);
        weights.push(mask);
    }
    Ok(MatchNodes {
        weighted: tape.concat_cols(&weighted)?,
        weights: tape.concat_cols(&weights)?,
    })
}

/// Matching confidences of `qp` against the anchors at temperature `tau`.
pub fn match_weights(
    qp: &[PlanePoint],
    time_unknown: &[PlanePoint],
    time_known: &[TimeKnownAnchor],
    tau: f64,
) -> Result<MatchWeights> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let anchors = AnchorTargets::new(time_unknown, time_known)?;
    let mut tape = Tape::new();
    let qv = tape.constant(points_tensor(qp));
    let lt = tape.constant(Tensor::scalar(tau.ln()));
    let nodes = match_nodes(&mut tape, qv, &anchors, lt)?;
    Ok(MatchWeights {
        weights: tape.value(nodes.weights).clone(),
        num_time_unknown: time_unknown.len(),
    })
}

pub fn loss_match(tape: &mut Tape, qp: Var, anchors: &AnchorTargets, log_tau: Var) -> Result<Var> {
    let nodes = match_nodes(tape, qp, anchors, log_tau)?;
    let best = tape.max_axis(nodes.weighted, Axis::Cols)?;
    Ok(tape.sum(best))
}

pub fn loss_bound(tape: &mut Tape, qp: Var) -> Result<Var> {
    let below = tape.neg(qp);
    let below = tape.relu(below);
    let above = tape.add_scalar(qp, -1.0);
    let above = tape.relu(above);
    let excess = tape.add(below, above)?;
    let sq = tape.square(excess);
    let per_step = tape.sum_axis(sq, Axis::Cols);
    tape.max_axis(per_step, Axis::Rows)
}

pub fn loss_reg(tape: &mut Tape, qp: Var, q: Var) -> Result<Var> {
    let (a, b) = (tape.value(qp).shape(), tape.value(q).shape());
    if a != b {
        return Err(Error::LengthMismatch {
            expected: b[0],
            actual: a[0],
        });
    }
    let delta = tape.sub(qp, q)?;
    reg_from_delta(tape, delta)
}

/// `Σ_{t≥2} ‖δ_t − δ_{t−1}‖` given the displacement node directly.
pub fn reg_from_delta(tape: &mut Tape, delta: Var) -> Result<Var> {
    let t_len = tape.value(delta).rows();
    if t_len < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let later = tape.slice_rows(delta, 1, t_len)?;
    let earlier = tape.slice_rows(delta, 0, t_len - 1)?;
    let change = tape.sub(later, earlier)?;
    Ok(tape.l1_norm_rows(change))
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub matching: Var,
    pub boundary: Var,
    pub regularizer: Var,
}

/// Full objective with the regularizer computed from an explicit `δ` node.
pub fn loss_total_from_delta(
    tape: &mut Tape,
    qp: Var,
    delta: Var,
    anchors: &AnchorTargets,
    log_tau: Var,
    cfg: &ObjectiveConfig,
) -> Result<LossTerms> {
    let matching = loss_match(tape, qp, anchors, log_tau)?;
    let boundary = loss_bound(tape, qp)?;
    let regularizer = reg_from_delta(tape, delta)?;
    let weighted = tape.scale(regularizer, cfg.lambda_reg);
    let partial = tape.add(matching, boundary)?;
    let total = tape.add(partial, weighted)?;
    Ok(LossTerms {
        total,
        matching,
        boundary,
        regularizer,
    })
}

pub fn loss_total(
    tape: &mut Tape,
    qp: Var,
    q: Var,
    anchors: &AnchorTargets,
    log_tau: Var,
    cfg: &ObjectiveConfig,
) -> Result<LossTerms> {
    let (a, b) = (tape.value(qp).shape(), tape.value(q).shape());
    if a != b {
        return Err(Error::LengthMismatch {
            expected: b[0],
            actual: a[0],
        });
    }
    let delta = tape.sub(qp, q)?;
    loss_total_from_delta(tape, qp, delta, anchors, log_tau, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub matching: f64,
    pub boundary: f64,
    pub regularizer: f64,
}

/// Evaluates every term for plain point sequences.
pub fn evaluate(
    qp: &[PlanePoint],
    q: &[PlanePoint],
    time_unknown: &[PlanePoint],
    time_known: &[TimeKnownAnchor],
    tau: f64,
    cfg: &ObjectiveConfig,
) -> Result<LossValues> {
    let anchors = AnchorTargets::new(time_unknown, time_known)?;
    let mut tape = Tape::new();
    let qpv = tape.constant(points_tensor(qp));
    let qv = tape.constant(points_tensor(q));
    let lt = tape.constant(Tensor::scalar(tau.ln()));
    let terms = loss_total(&mut tape, qpv, qv, &anchors, lt, cfg)?;
    Ok(LossValues {
        total: tape.item(terms.total),
        matching: tape.item(terms.matching),
        boundary: tape.item(terms.boundary),
        regularizer: tape.item(terms.regularizer),
    })
}
