//! End-to-end estimation: the two-stage method and the baselines behind one
//! entry point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{anchored_raw_baseline, tsp_baseline};
use crate::continuous_opt::{optimize_transform, OptimizerConfig};
use crate::discrete_opt::{project, ViterbiConfig};
use crate::error::{Error, Result};
use crate::model::{AbsoluteTrajectory, Session};
use crate::objective::ObjectiveConfig;
use crate::transform_net::NetConfig;

/// Every tunable of a run. Missing sections fall back to their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub viterbi: ViterbiConfig,
    pub net: NetConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.viterbi.validate()?;
        if self.net.d == 0 {
            return Err(Error::InvalidInput("net.d must be >= 1".into()));
        }
        if !(self.net.tau_init > 0.0) || !self.net.tau_init.is_finite() {
            return Err(Error::InvalidInput("net.tau_init must be positive".into()));
        }
        if !(self.objective.lambda_reg >= 0.0) {
            return Err(Error::InvalidInput("objective.lambda_reg must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    RetailOpt,
    Tsp,
    Raw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RetailOpt, Method::Tsp, Method::Raw];

    pub fn name(self) -> &'static str {
        match self {
            Method::RetailOpt => "retailopt",
            Method::Tsp => "tsp",
            Method::Raw => "raw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}` (expected retailopt, tsp or raw)")))
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub method: Method,
    pub trajectory: AbsoluteTrajectory,
    /// Loss per optimizer iteration; empty for the baselines.
    pub loss_trace: Vec<f64>,
}

/// Runs `method` on `session`.
pub fn estimate(session: &Session, method: Method, cfg: &RunConfig) -> Result<Estimate> {
    cfg.validate()?;
    let (trajectory, loss_trace) = match method {
        Method::RetailOpt => {
            let (qp, trace) = optimize_transform(session, &cfg.net, &cfg.objective, &cfg.optimizer)?;
            let traj = project(&qp, &session.environment, &cfg.viterbi, session.dt())?;
            (traj, trace.losses)
        }
        Method::Tsp => (tsp_baseline(session, &cfg.viterbi)?, Vec::new()),
        Method::Raw => (anchored_raw_baseline(session)?, Vec::new()),
    };
    Ok(Estimate {
        method,
        trajectory,
        loss_trace,
    })
}
