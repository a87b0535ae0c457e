//! Average positional error and method comparison tables.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AbsoluteTrajectory, Session};
use crate::pipeline::{estimate, Method, RunConfig};

pub const DEFAULT_EVAL_HZ: f64 = 2.0;

/// Sampling stride that brings a `dt` trajectory down to `eval_hz`.
pub fn eval_stride(dt: f64, eval_hz: f64) -> usize {
    ((1.0 / (dt * eval_hz)).round() as usize).max(1)
}

/// Mean distance in meters over every `stride`-th timestep, starting at the
/// first one. No alignment is applied.
pub fn average_positional_error(
    est: &AbsoluteTrajectory,
    gt: &AbsoluteTrajectory,
    scale_m: f64,
    eval_hz: f64,
) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: est.len(),
        });
    }
    if (est.dt() - gt.dt()).abs() > 1e-12 * gt.dt().abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dt mismatch: estimate {} vs ground truth {}",
            est.dt(),
            gt.dt()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidInput("empty trajectories".into()));
    }
    if !(eval_hz > 0.0) {
        return Err(Error::InvalidInput("eval_hz must be positive".into()));
    }
    let stride = eval_stride(gt.dt(), eval_hz);
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in est.points().iter().zip(gt.points()).step_by(stride) {
        sum += a.point().dist(&b.point());
        n += 1;
    }
    Ok(scale_m * sum / n as f64)
}

/// A session with an identifier and an optional carry-mode label.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub carry_mode: Option<String>,
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scenario_id: String,
    pub method: Method,
    pub seed: u64,
    pub carry_mode: Option<String>,
    pub steps: usize,
    /// `Err` holds the diagnostic of a failed run.
    pub ape_m: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Sessions left out of the table, with the reason.
    pub skipped: Vec<String>,
}

impl EvalReport {
    /// Mean APE over the successful runs of `method`.
    pub fn mean(&self, method: Method) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.ape_m.as_ref().ok().copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.method) {
                m.push(r.method);
            }
        }
        m
    }

    pub fn ape(&self, scenario_id: &str, method: Method, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario_id == scenario_id && r.method == method && r.seed == seed)
            .and_then(|r| r.ape_m.as_ref().ok().copied())
    }

    /// The report as CSV: one row per run, a `mean` row per method, then
    /// `#` comment lines for failed runs and skipped sessions.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario_id", "method", "seed", "carry_mode", "T", "ape_m"])?;
        for r in &self.rows {
            let ape = r.ape_m.as_ref().map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.scenario_id.as_str(),
                r.method.name(),
                &r.seed.to_string(),
                r.carry_mode.as_deref().unwrap_or(""),
                &r.steps.to_string(),
                &ape,
            ])?;
        }
        for m in self.methods() {
            let mean = self.mean(m).map(|v| v.to_string()).unwrap_or_default();
            w.write_record(["mean", m.name(), "", "", "", &mean])?;
        }
        let mut out = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .expect("csv output is UTF-8");
        for r in &self.rows {
            if let Err(msg) = &r.ape_m {
                out.push_str(&format!(
                    "# missing {} {} seed {}: {}\n",
                    r.scenario_id,
                    r.method,
                    r.seed,
                    one_line(msg)
                ));
            }
        }
        for s in &self.skipped {
            out.push_str(&format!("# skipped {}\n", one_line(s)));
        }
        Ok(out)
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Runs every method with every seed on every scenario. Seeds replace both
/// the optimizer and the graph-sampling seeds of `cfg`. Runs are spread over
/// the rayon pool; row order follows the inputs.
pub fn run_suite(scenarios: &[Scenario], methods: &[Method], seeds: &[u64], cfg: &RunConfig) -> EvalReport {
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for sc in scenarios {
        if sc.session.ground_truth.is_none() {
            skipped.push(format!("{}: no ground truth", sc.id));
            continue;
        }
        for &method in methods {
            for &seed in seeds {
                jobs.push((sc, method, seed));
            }
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(sc, method, seed)| {
            let mut run_cfg = *cfg;
            run_cfg.optimizer.rng_seed = seed;
            run_cfg.viterbi.rng_seed = seed;
            let gt = sc.session.ground_truth.as_ref().expect("filtered above");
            let ape_m = estimate(&sc.session, method, &run_cfg)
                .and_then(|e| {
                    average_positional_error(&e.trajectory, gt, sc.session.environment.scale_m, DEFAULT_EVAL_HZ)
                })
                .map_err(|e| e.to_string());
            EvalRow {
                scenario_id: sc.id.clone(),
                method,
                seed,
                carry_mode: sc.carry_mode.clone(),
                steps: sc.session.len(),
                ape_m,
            }
        })
        .collect();
    EvalReport { rows, skipped }
}
