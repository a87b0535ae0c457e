//! Shared domain types for one estimation problem.
//!
//! Coordinates live in the normalized domain `[0,1]²`; `Environment::scale_m`
//! converts normalized distances to meters. Time-known anchor timesteps are
//! 1-based everywhere they cross a public interface.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the unbounded plane (normalized units).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Checked constructor; rejects NaN and infinities.
    pub fn try_new(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(Error::InvalidInput(format!("non-finite point ({x}, {y})")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(&self, other: &PlanePoint) -> f64 {
        (*self - *other).norm()
    }

    pub fn dist_sq(&self, other: &PlanePoint) -> f64 {
        (*self - *other).norm_sq()
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn lerp(&self, other: &PlanePoint, s: f64) -> PlanePoint {
        PlanePoint::new(self.x + (other.x - self.x) * s, self.y + (other.y - self.y) * s)
    }
}

impl Add for PlanePoint {
    type Output = PlanePoint;
    fn add(self, rhs: PlanePoint) -> PlanePoint {
        PlanePoint::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for PlanePoint {
    type Output = PlanePoint;
    fn sub(self, rhs: PlanePoint) -> PlanePoint {
        PlanePoint::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for PlanePoint {
    type Output = PlanePoint;
    fn mul(self, rhs: f64) -> PlanePoint {
        PlanePoint::new(self.x * rhs, self.y * rhs)
    }
}

/// A point of the bounded domain `[0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainPoint(PlanePoint);

impl DomainPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let p = PlanePoint::try_new(x, y)?;
        Self::try_from_plane(p)
    }

    pub fn try_from_plane(p: PlanePoint) -> Result<Self> {
        if p.is_finite() && p.in_unit_square() {
            Ok(Self(p))
        } else {
            Err(Error::InvalidInput(format!(
                "point ({}, {}) outside domain [0,1]^2",
                p.x, p.y
            )))
        }
    }

    /// Projects a finite plane point onto the domain.
    pub fn clamp(p: PlanePoint) -> Self {
        debug_assert!(p.is_finite());
        Self(PlanePoint::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0)))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn point(&self) -> PlanePoint {
        self.0
    }
}

impl From<DomainPoint> for PlanePoint {
    fn from(p: DomainPoint) -> Self {
        p.0
    }
}

/// Output of inertial navigation, expressed relative to its own start.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTrajectory {
    points: Vec<PlanePoint>,
    dt: f64,
}

impl RelativeTrajectory {
    pub fn new(points: Vec<PlanePoint>, dt: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "relative trajectory needs at least 2 points, got {}",
                points.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("relative[{i}] is not finite")));
        }
        Ok(Self { points, dt })
    }

    pub fn points(&self) -> &[PlanePoint] {
        &self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A trajectory inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteTrajectory {
    points: Vec<DomainPoint>,
    dt: f64,
}

impl AbsoluteTrajectory {
    pub fn new(points: Vec<DomainPoint>, dt: f64) -> Self {
        Self { points, dt }
    }

    /// Builds a trajectory by clamping each plane point onto the domain.
    pub fn from_clamped(points: &[PlanePoint], dt: f64) -> Self {
        Self {
            points: points.iter().map(|&p| DomainPoint::clamp(p)).collect(),
            dt,
        }
    }

    pub fn try_from_plane(points: &[PlanePoint], dt: f64) -> Result<Self> {
        let points = points
            .iter()
            .map(|&p| DomainPoint::try_from_plane(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, dt })
    }

    pub fn points(&self) -> &[DomainPoint] {
        &self.points
    }

    pub fn plane_points(&self) -> Vec<PlanePoint> {
        self.points.iter().map(|p| p.point()).collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeUnknownAnchor {
    pub location: PlanePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeKnownAnchor {
    pub location: PlanePoint,
    /// 1-based timestep in `[1, T]`.
    pub timestep: usize,
}

/// Axis-aligned impassable rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleRect {
    pub min: PlanePoint,
    pub max: PlanePoint,
}

impl ObstacleRect {
    pub fn new(min: PlanePoint, max: PlanePoint) -> Result<Self> {
        let rect = Self { min, max };
        match rect.violation() {
            None => Ok(rect),
            Some(v) => Err(Error::InvalidInput(v)),
        }
    }

    pub fn from_coords(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(PlanePoint::new(x0, y0), PlanePoint::new(x1, y1))
    }

    fn violation(&self) -> Option<String> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            Some("obstacle corner not finite".into())
        } else if !(self.min.x < self.max.x && self.min.y < self.max.y) {
            Some("obstacle min corner not below max corner".into())
        } else if !(self.min.in_unit_square() && self.max.in_unit_square()) {
            Some("obstacle outside domain".into())
        } else {
            None
        }
    }

    /// Strict interior membership; the boundary is not part of the obstacle.
    pub fn contains_strict(&self, p: &PlanePoint) -> bool {
        self.min.x < p.x && p.x < self.max.x && self.min.y < p.y && p.y < self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub name: String,
    /// Meters per normalized unit.
    pub scale_m: f64,
    pub obstacles: Vec<ObstacleRect>,
}

impl Environment {
    pub fn empty(name: impl Into<String>, scale_m: f64) -> Self {
        Self {
            name: name.into(),
            scale_m,
            obstacles: Vec::new(),
        }
    }

    /// Whether the obstacles leave a positive-area part of the domain free.
    ///
    /// Exact: the obstacle edges split the domain into cells, each of which
    /// is either fully covered or fully free.
    pub fn has_free_space(&self) -> bool {
        let mut xs = vec![0.0, 1.0];
        let mut ys = vec![0.0, 1.0];
        for o in &self.obstacles {
            xs.extend([o.min.x, o.max.x]);
            ys.extend([o.min.y, o.max.y]);
        }
        for v in [&mut xs, &mut ys] {
            v.retain(|c| (0.0..=1.0).contains(c));
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        for xw in xs.windows(2) {
            for yw in ys.windows(2) {
                let c = PlanePoint::new(0.5 * (xw[0] + xw[1]), 0.5 * (yw[0] + yw[1]));
                if !self.obstacles.iter().any(|o| o.contains_strict(&c)) {
                    return true;
                }
            }
        }
        false
    }
}

/// Everything known about one estimation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub environment: Environment,
    pub relative: RelativeTrajectory,
    pub anchors_tu: Vec<TimeUnknownAnchor>,
    pub anchors_tk: Vec<TimeKnownAnchor>,
    pub ground_truth: Option<AbsoluteTrajectory>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.relative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.relative.dt()
    }

    pub fn tu_locations(&self) -> Vec<PlanePoint> {
        self.anchors_tu.iter().map(|a| a.location).collect()
    }

    /// Time-unknown locations followed by time-known locations.
    pub fn anchor_locations(&self) -> Vec<PlanePoint> {
        self.anchors_tu
            .iter()
            .map(|a| a.location)
            .chain(self.anchors_tk.iter().map(|a| a.location))
            .collect()
    }

    /// The time-known anchor with the smallest timestep.
    pub fn earliest_tk(&self) -> Option<&TimeKnownAnchor> {
        self.anchors_tk.iter().min_by_key(|a| a.timestep)
    }

    pub fn latest_tk(&self) -> Option<&TimeKnownAnchor> {
        self.anchors_tk.iter().max_by_key(|a| a.timestep)
    }
}

fn check_anchor_location(
    field: String,
    p: &PlanePoint,
    env: &Environment,
    out: &mut Vec<String>,
) {
    if !p.is_finite() {
        out.push(format!("{field}: anchor location not finite"));
    } else if !p.in_unit_square() {
        out.push(format!("{field}: anchor outside domain"));
    } else if env.obstacles.iter().any(|o| o.contains_strict(p)) {
        out.push(format!("{field}: anchor inside obstacle interior"));
    }
}

/// Lists every invariant violation of `session`; empty means well-formed.
pub fn validate_session(session: &Session) -> Vec<String> {
    let mut out = Vec::new();
    let env = &session.environment;
    let t_len = session.relative.len();

    if !(env.scale_m > 0.0 && env.scale_m.is_finite()) {
        out.push(format!("environment.scale_m: must be positive, got {}", env.scale_m));
    }
    for (i, o) in env.obstacles.iter().enumerate() {
        if let Some(v) = o.violation() {
            out.push(format!("environment.obstacles[{i}]: {v}"));
        }
    }
    if !env.has_free_space() {
        out.push("environment.obstacles: obstacles cover the whole domain".into());
    }

    if t_len < 2 {
        out.push(format!("relative: length must be at least 2, got {t_len}"));
    }
    if !(session.relative.dt() > 0.0) {
        out.push("relative.dt: must be positive".into());
    }
    if let Some(i) = session.relative.points().iter().position(|p| !p.is_finite()) {
        out.push(format!("relative[{i}]: point not finite"));
    }

    for (j, a) in session.anchors_tu.iter().enumerate() {
        check_anchor_location(format!("anchors_tu[{j}]"), &a.location, env, &mut out);
    }
    let mut prev_t = 0;
    for (k, a) in session.anchors_tk.iter().enumerate() {
        check_anchor_location(format!("anchors_tk[{k}]"), &a.location, env, &mut out);
        if a.timestep < 1 || a.timestep > t_len {
            out.push(format!(
                "anchors_tk[{k}]: timestep {} outside [1, {t_len}]",
                a.timestep
            ));
        }
        if k > 0 && a.timestep <= prev_t {
            out.push(format!("anchors_tk[{k}]: timesteps not strictly increasing"));
        }
        prev_t = a.timestep;
    }

    if let Some(gt) = &session.ground_truth {
        if gt.len() != t_len {
            out.push(format!(
                "ground_truth: ground_truth length mismatch ({} vs relative {t_len})",
                gt.len()
            ));
        }
        if (gt.dt() - session.relative.dt()).abs() > 1e-12 {
            out.push("ground_truth.dt: differs from relative dt".into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        let pts: Vec<_> = (0..5).map(|i| PlanePoint::new(0.1 * i as f64, 0.0)).collect();
        let gt: Vec<_> = (0..5)
            .map(|i| DomainPoint::new(0.1 + 0.1 * i as f64, 0.1).unwrap())
            .collect();
        Session {
            environment: Environment {
                name: "t".into(),
                scale_m: 10.0,
                obstacles: vec![ObstacleRect::from_coords(0.4, 0.4, 0.6, 0.6).unwrap()],
            },
            relative: RelativeTrajectory::new(pts, 0.5).unwrap(),
            anchors_tu: vec![TimeUnknownAnchor {
                location: PlanePoint::new(0.3, 0.1),
            }],
            anchors_tk: vec![
                TimeKnownAnchor {
                    location: PlanePoint::new(0.1, 0.1),
                    timestep: 1,
                },
                TimeKnownAnchor {
                    location: PlanePoint::new(0.5, 0.1),
                    timestep: 5,
                },
            ],
            ground_truth: Some(AbsoluteTrajectory::new(gt, 0.5)),
        }
    }

    #[test]
    fn well_formed_session_has_no_violations() {
        assert!(validate_session(&session()).is_empty());
    }

    #[test]
    fn anchor_outside_domain_is_reported() {
        let mut s = session();
        s.anchors_tu[0].location = PlanePoint::new(1.5, 0.5);
        let v = validate_session(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("anchor outside domain"), "{v:?}");
    }

    #[test]
    fn ground_truth_length_mismatch_is_reported() {
        let mut s = session();
        let gt = s.ground_truth.take().unwrap();
        s.ground_truth = Some(AbsoluteTrajectory::new(gt.points()[..4].to_vec(), gt.dt()));
        let v = validate_session(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("ground_truth length mismatch"), "{v:?}");
    }

    #[test]
    fn anchor_in_obstacle_and_bad_timesteps() {
        let mut s = session();
        s.anchors_tu[0].location = PlanePoint::new(0.5, 0.5);
        s.anchors_tk[1].timestep = 1;
        let v = validate_session(&s);
        assert!(v.iter().any(|m| m.contains("inside obstacle")));
        assert!(v.iter().any(|m| m.contains("strictly increasing")));
        // validation is pure
        assert_eq!(v, validate_session(&s));
    }

    #[test]
    fn full_coverage_detected() {
        let mut env = Environment::empty("x", 1.0);
        env.obstacles.push(ObstacleRect::from_coords(0.0, 0.0, 0.5, 1.0).unwrap());
        assert!(env.has_free_space());
        env.obstacles.push(ObstacleRect::from_coords(0.5, 0.0, 1.0, 1.0).unwrap());
        assert!(!env.has_free_space());
    }

    #[test]
    fn constructors_reject_bad_points() {
        assert!(DomainPoint::new(f64::NAN, 0.5).is_err());
        assert!(DomainPoint::new(1.0001, 0.5).is_err());
        assert!(DomainPoint::new(1.0, 0.0).is_ok());
        assert!(PlanePoint::try_new(f64::INFINITY, 0.0).is_err());
        assert!(RelativeTrajectory::new(vec![PlanePoint::default()], 1.0).is_err());
        assert!(RelativeTrajectory::new(vec![PlanePoint::default(); 2], 0.0).is_err());
        assert!(ObstacleRect::from_coords(0.5, 0.5, 0.4, 0.6).is_err());
    }
}
