//! JSON file formats for sessions, run configurations and estimates.
//!
//! Parsing is strict: unknown keys are errors. Files are written to a
//! temporary sibling and renamed into place so a failed write never leaves a
//! partial file behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_session, AbsoluteTrajectory, Environment, ObstacleRect, PlanePoint, RelativeTrajectory, Session,
    TimeKnownAnchor, TimeUnknownAnchor,
};
use crate::pipeline::{Estimate, Method};

pub type Pair = [f64; 2];

fn pair(p: PlanePoint) -> Pair {
    [p.x, p.y]
}

fn point(p: Pair) -> PlanePoint {
    PlanePoint::new(p[0], p[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFile {
    pub min: Pair,
    pub max: Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub name: String,
    pub scale_m: f64,
    #[serde(default)]
    pub obstacles: Vec<ObstacleFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeKnownFile {
    pub loc: Pair,
    /// 1-based timestep.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub environment: EnvironmentFile,
    pub dt: f64,
    pub relative: Vec<Pair>,
    #[serde(default)]
    pub anchors_tu: Vec<Pair>,
    #[serde(default)]
    pub anchors_tk: Vec<TimeKnownFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Pair>>,
}

impl SessionFile {
    pub fn from_session(s: &Session) -> Self {
        Self {
            environment: EnvironmentFile {
                name: s.environment.name.clone(),
                scale_m: s.environment.scale_m,
                obstacles: s
                    .environment
                    .obstacles
                    .iter()
                    .map(|o| ObstacleFile {
                        min: pair(o.min),
                        max: pair(o.max),
                    })
                    .collect(),
            },
            dt: s.dt(),
            relative: s.relative.points().iter().copied().map(pair).collect(),
            anchors_tu: s.anchors_tu.iter().map(|a| pair(a.location)).collect(),
            anchors_tk: s
                .anchors_tk
                .iter()
                .map(|a| TimeKnownFile {
                    loc: pair(a.location),
                    t: a.timestep,
                })
                .collect(),
            ground_truth: s
                .ground_truth
                .as_ref()
                .map(|g| g.plane_points().into_iter().map(pair).collect()),
        }
    }

    /// Converts to a [`Session`], reporting every violated invariant with
    /// the offending field.
    pub fn into_session(self) -> Result<Session> {
        let field_err = |field: &str, e: Error| Error::InvalidSession(vec![format!("{field}: {}", plain(e))]);
        let relative = RelativeTrajectory::new(self.relative.into_iter().map(point).collect(), self.dt)
            .map_err(|e| field_err("relative", e))?;
        let ground_truth = match self.ground_truth {
            None => None,
            Some(g) => {
                let pts: Vec<PlanePoint> = g.into_iter().map(point).collect();
                Some(AbsoluteTrajectory::try_from_plane(&pts, self.dt).map_err(|e| field_err("ground_truth", e))?)
            }
        };
        let session = Session {
            environment: Environment {
                name: self.environment.name,
                scale_m: self.environment.scale_m,
                obstacles: self
                    .environment
                    .obstacles
                    .into_iter()
                    .map(|o| ObstacleRect {
                        min: point(o.min),
                        max: point(o.max),
                    })
                    .collect(),
            },
            relative,
            anchors_tu: self
                .anchors_tu
                .into_iter()
                .map(|p| TimeUnknownAnchor { location: point(p) })
                .collect(),
            anchors_tk: self
                .anchors_tk
                .into_iter()
                .map(|a| TimeKnownAnchor {
                    location: point(a.loc),
                    timestep: a.t,
                })
                .collect(),
            ground_truth,
        };
        let problems = validate_session(&session);
        if problems.is_empty() {
            Ok(session)
        } else {
            Err(Error::InvalidSession(problems))
        }
    }
}

fn plain(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

/// Output of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub method: Method,
    pub trajectory: Vec<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

impl EstimateFile {
    pub fn from_estimate(e: &Estimate, runtime_ms: Option<u64>) -> Self {
        Self {
            method: e.method,
            trajectory: e.trajectory.plane_points().into_iter().map(pair).collect(),
            loss_trace: (!e.loss_trace.is_empty()).then(|| e.loss_trace.clone()),
            runtime_ms,
        }
    }

    pub fn points(&self) -> Vec<PlanePoint> {
        self.trajectory.iter().copied().map(point).collect()
    }
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&fs::read_to_string(path)?)
}

pub fn read_session(path: &Path) -> Result<Session> {
    read_json::<SessionFile>(path)?.into_session()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn write_session(path: &Path, session: &Session) -> Result<()> {
    write_json(path, &SessionFile::from_session(session))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RunConfig;
    use crate::synth::{generate_session, ScenarioConfig};

    const MINIMAL: &str = r#"{
        "environment": {"name": "shop", "scale_m": 10, "obstacles": [{"min": [0.4, 0.4], "max": [0.6, 0.6]}]},
        "dt": 0.5,
        "relative": [[0, 0], [0.1, 0], [0.2, 0.05]],
        "anchors_tu": [[0.3, 0.3]],
        "anchors_tk": [{"loc": [0.1, 0.1], "t": 1}]
    }"#;

    #[test]
    fn parses_minimal_session() {
        let s = parse_json::<SessionFile>(MINIMAL).unwrap().into_session().unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.anchors_tk[0].timestep, 1);
        assert!(s.ground_truth.is_none());
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let text = MINIMAL.replace("\"dt\"", "\"dtt\"");
        let err = parse_json::<SessionFile>(&text).unwrap_err().to_string();
        assert!(err.contains("dtt") && err.contains("line"), "{err}");
    }

    #[test]
    fn invalid_fields_are_named() {
        let text = MINIMAL.replace("\"t\": 1", "\"t\": 9");
        let Err(Error::InvalidSession(msgs)) = parse_json::<SessionFile>(&text).unwrap().into_session() else {
            panic!("expected a session error");
        };
        assert!(msgs.iter().any(|m| m.starts_with("anchors_tk[0]")), "{msgs:?}");

        let text = MINIMAL.replace("[[0.3, 0.3]]", "[[0.5, 0.5]]");
        let Err(Error::InvalidSession(msgs)) = parse_json::<SessionFile>(&text).unwrap().into_session() else {
            panic!("expected a session error");
        };
        assert_eq!(msgs, vec!["anchors_tu[0]: anchor inside obstacle interior".to_string()]);

        let text = MINIMAL.replace("\"relative\": [[0, 0], [0.1, 0], [0.2, 0.05]]", "\"relative\": [[0, 0]]");
        let err = parse_json::<SessionFile>(&text).unwrap().into_session().unwrap_err();
        assert!(err.to_string().contains("relative"), "{err}");
    }

    #[test]
    fn generated_session_round_trips() {
        let cfg = ScenarioConfig {
            shelf_cols: 3,
            route_samples: 60,
            ..Default::default()
        };
        let session = generate_session(&cfg).unwrap();
        let text = to_json(&SessionFile::from_session(&session)).unwrap();
        let back = parse_json::<SessionFile>(&text).unwrap().into_session().unwrap();
        assert_eq!(back, session);
        assert_eq!(to_json(&SessionFile::from_session(&back)).unwrap(), text);
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        write_json(&path, &RunConfig::default()).unwrap();
        write_json(&path, &RunConfig::default()).unwrap();
        let back: RunConfig = read_json(&path).unwrap();
        assert_eq!(back, RunConfig::default());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("no/such/dir/x.json");
        assert!(write_json(&missing, &RunConfig::default()).is_err());
    }
}
