//! Reproducible synthetic stores, shopping walks and drift-corrupted
//! relative trajectories.

use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_valid_space, sample_valid_points_with, segment_collides, Segment};
use crate::model::{
    AbsoluteTrajectory, Environment, ObstacleRect, PlanePoint, RelativeTrajectory, Session, TimeKnownAnchor,
    TimeUnknownAnchor,
};

/// Points sampled for the connectivity check.
pub const CONNECTIVITY_SAMPLES: usize = 500;

// independent random streams derived from one scenario seed
const STREAM_ENVIRONMENT: u64 = 1;
const STREAM_WALK: u64 = 2;
const STREAM_CONNECTIVITY: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftModel {
    /// Per-step standard deviation of the heading random walk, radians.
    pub heading_drift_rate: f64,
    /// Log-normal sigma of the speed factor drawn for each motion segment.
    pub scale_bias: f64,
    /// Per-step displacement noise, normalized units.
    pub white_noise_sigma: f64,
}

impl DriftModel {
    pub const NONE: DriftModel = DriftModel {
        heading_drift_rate: 0.0,
        scale_bias: 0.0,
        white_noise_sigma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.heading_drift_rate) && ok(self.scale_bias) && ok(self.white_noise_sigma) {
            Ok(())
        } else {
            Err(Error::InvalidInput("drift parameters must be finite and >= 0".into()))
        }
    }
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            heading_drift_rate: 0.05,
            scale_bias: 0.3,
            white_noise_sigma: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub shelf_rows: usize,
    pub shelf_cols: usize,
    /// Aisle width between neighbouring shelves, normalized units.
    pub corridor_width: f64,
    /// Free border between the outer shelves and the walls.
    pub margin: f64,
    /// Each shelf side shrinks by up to this fraction of its size.
    pub shelf_jitter: f64,
    /// Number of shelves visited, one time-unknown anchor each.
    pub n_tu: usize,
    pub walk_speed_mps: f64,
    /// Range of the pause at each visited shelf, seconds.
    pub pause_s: [f64; 2],
    pub dt: f64,
    pub scale_m: f64,
    /// Extra waiting at the start point is appended until the walk has at
    /// least this many steps.
    pub min_steps: usize,
    /// Sampled nodes added to the route-planning graph.
    pub route_samples: usize,
    pub seed: u64,
    pub drift: DriftModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            shelf_rows: 2,
            shelf_cols: 4,
            corridor_width: 0.1,
            margin: 0.12,
            shelf_jitter: 0.15,
            n_tu: 4,
            walk_speed_mps: 0.8,
            pause_s: [15.0, 30.0],
            dt: 0.2,
            scale_m: 10.0,
            min_steps: 0,
            route_samples: 300,
            seed: 0,
            drift: DriftModel::default(),
        }
    }
}

impl ScenarioConfig {
    fn shelf_size(&self) -> (f64, f64) {
        let span = 1.0 - 2.0 * self.margin;
        let w = (span - (self.shelf_cols as f64 - 1.0) * self.corridor_width) / self.shelf_cols as f64;
        let h = (span - (self.shelf_rows as f64 - 1.0) * self.corridor_width) / self.shelf_rows as f64;
        (w, h)
    }

    /// Distance kept from shelf edges by anchors and route corners.
    fn clearance(&self) -> f64 {
        0.25 * self.corridor_width.min(self.margin)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleScenario(m.into()));
        if self.shelf_rows == 0 || self.shelf_cols == 0 {
            return bad("shelf grid must have at least one row and column");
        }
        if !(self.corridor_width > 0.0) || !(self.margin > 0.0) {
            return bad("corridor width and margin must be positive");
        }
        let (w, h) = self.shelf_size();
        if !(w > 0.0) || !(h > 0.0) {
            return bad("shelf grid does not fit inside the domain");
        }
        if !(0.0..0.5).contains(&self.shelf_jitter) {
            return bad("shelf_jitter must lie in [0, 0.5)");
        }
        if self.n_tu > self.shelf_rows * self.shelf_cols {
            return bad("more visited shelves than shelves");
        }
        if !(self.walk_speed_mps > 0.0) || !(self.dt > 0.0) || !(self.scale_m > 0.0) {
            return bad("walk speed, dt and scale must be positive");
        }
        let [lo, hi] = self.pause_s;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("pause range must satisfy 0 <= min <= max");
        }
        self.drift.validate()
    }

    /// Walking distance per step in normalized units.
    fn step_length(&self) -> f64 {
        self.walk_speed_mps * self.dt / self.scale_m
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A grid of shelves with randomly shrunk extents; errors if the free space
/// is not connected.
pub fn generate_environment(cfg: &ScenarioConfig) -> Result<Environment> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_ENVIRONMENT);
    let (w, h) = cfg.shelf_size();
    let mut obstacles = Vec::with_capacity(cfg.shelf_rows * cfg.shelf_cols);
    for r in 0..cfg.shelf_rows {
        for c in 0..cfg.shelf_cols {
            let x0 = cfg.margin + c as f64 * (w + cfg.corridor_width);
            let y0 = cfg.margin + r as f64 * (h + cfg.corridor_width);
            let mut shrink = |len: f64| rng.random::<f64>() * cfg.shelf_jitter * len;
            let (l, rt, b, t) = (shrink(w), shrink(w), shrink(h), shrink(h));
            obstacles.push(ObstacleRect::from_coords(x0 + l, y0 + b, x0 + w - rt, y0 + h - t)?);
        }
    }
    let env = Environment {
        name: format!("store-{}", cfg.seed),
        scale_m: cfg.scale_m,
        obstacles,
    };
    let mut check_rng = stream_rng(cfg.seed, STREAM_CONNECTIVITY);
    if !is_connected(&env, CONNECTIVITY_SAMPLES, &mut check_rng)? {
        return Err(Error::InfeasibleScenario("valid space is not connected".into()));
    }
    Ok(env)
}

/// Samples `n` valid points and reports whether the collision-free
/// visibility edges join them into a single component.
pub fn is_connected<R: Rng>(env: &Environment, n: usize, rng: &mut R) -> Result<bool> {
    let pts: Vec<PlanePoint> = sample_valid_points_with(n, env, rng)?
        .into_iter()
        .map(PlanePoint::from)
        .collect();
    let mut uf = UnionFind::<usize>::new(pts.len());
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if !uf.equiv(i, j) && !segment_collides(&Segment::new(pts[i], pts[j]), env) {
                uf.union(i, j);
            }
        }
    }
    Ok((1..pts.len()).all(|i| uf.equiv(0, i)))
}

/// A simulated shopping walk.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWalk {
    pub trajectory: AbsoluteTrajectory,
    pub anchors_tu: Vec<TimeUnknownAnchor>,
    pub anchors_tk: Vec<TimeKnownAnchor>,
}

/// Route planner over obstacle corners, random free points and the
/// requested stops.
struct RoadMap {
    graph: UnGraph<PlanePoint, f64>,
}

impl RoadMap {
    fn new(env: &Environment, clearance: f64, samples: Vec<PlanePoint>) -> Self {
        let mut nodes = Vec::new();
        for o in &env.obstacles {
            for (x, sx) in [(o.min.x, -1.0), (o.max.x, 1.0)] {
                for (y, sy) in [(o.min.y, -1.0), (o.max.y, 1.0)] {
                    let p = PlanePoint::new(x + sx * clearance, y + sy * clearance);
                    if point_in_valid_space(p, env) {
                        nodes.push(p);
                    }
                }
            }
        }
        nodes.extend(samples);
        let mut graph = UnGraph::with_capacity(nodes.len(), 0);
        let ids: Vec<NodeIndex> = nodes.iter().map(|&p| graph.add_node(p)).collect();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if !segment_collides(&Segment::new(nodes[i], nodes[j]), env) {
                    graph.add_edge(ids[i], ids[j], nodes[i].dist(&nodes[j]));
                }
            }
        }
        Self { graph }
    }

    fn connect(&mut self, p: PlanePoint, env: &Environment) -> NodeIndex {
        let existing: Vec<NodeIndex> = self.graph.node_indices().collect();
        let id = self.graph.add_node(p);
        for other in existing {
            let q = self.graph[other];
            if !segment_collides(&Segment::new(p, q), env) {
                self.graph.add_edge(id, other, p.dist(&q));
            }
        }
        id
    }

    fn route(&self, from: NodeIndex, to: NodeIndex) -> Option<Vec<PlanePoint>> {
        let goal = self.graph[to];
        let (_, path) = astar(
            &self.graph,
            from,
            |n| n == to,
            |e| *e.weight(),
            |n| self.graph[n].dist(&goal),
        )?;
        Some(path.into_iter().map(|n| self.graph[n]).collect())
    }
}

/// A point facing one side of `shelf`, `clearance` away from it.
fn shelf_front<R: Rng>(shelf: &ObstacleRect, clearance: f64, rng: &mut R) -> PlanePoint {
    let along = 0.1 + 0.8 * rng.random::<f64>();
    match rng.random_range(0..4) {
        0 => PlanePoint::new(shelf.min.x - clearance, shelf.min.y + along * shelf.height()),
        1 => PlanePoint::new(shelf.max.x + clearance, shelf.min.y + along * shelf.height()),
        2 => PlanePoint::new(shelf.min.x + along * shelf.width(), shelf.min.y - clearance),
        _ => PlanePoint::new(shelf.min.x + along * shelf.width(), shelf.max.y + clearance),
    }
}

/// Appends the walk along `route` (excluding its first point), keeping every
/// route vertex so that each step stays on one collision-free leg.
fn walk_route(route: &[PlanePoint], step: f64, out: &mut Vec<PlanePoint>) {
    for leg in route.windows(2) {
        let n = (leg[0].dist(&leg[1]) / step).ceil().max(1.0) as usize;
        for i in 1..n {
            out.push(leg[0].lerp(&leg[1], i as f64 / n as f64));
        }
        out.push(leg[1]);
    }
}

/// Walks from an entrance point to `n_tu` random shelves, pausing at each,
/// and back to the entrance. Time-known anchors are the first and last steps.
pub fn generate_ground_truth(env: &Environment, cfg: &ScenarioConfig) -> Result<GroundTruthWalk> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_WALK);
    let clearance = cfg.clearance();
    let start = PlanePoint::new(
        cfg.margin + rng.random::<f64>() * (1.0 - 2.0 * cfg.margin),
        0.5 * cfg.margin,
    );
    if !point_in_valid_space(start, env) {
        return Err(Error::InfeasibleScenario("entrance point is blocked".into()));
    }
    let shelves: Vec<usize> = sample_indices(&mut rng, env.obstacles.len(), cfg.n_tu).into_vec();
    let fronts: Vec<PlanePoint> = shelves
        .iter()
        .map(|&i| shelf_front(&env.obstacles[i], clearance, &mut rng))
        .collect();
    if let Some(i) = fronts.iter().position(|&p| !point_in_valid_space(p, env)) {
        return Err(Error::InfeasibleScenario(format!("shelf front {i} is blocked")));
    }

    let samples: Vec<PlanePoint> = sample_valid_points_with(cfg.route_samples, env, &mut rng)?
        .into_iter()
        .map(PlanePoint::from)
        .collect();
    let mut map = RoadMap::new(env, clearance, samples);
    let start_id = map.connect(start, env);
    let front_ids: Vec<NodeIndex> = fronts.iter().map(|&p| map.connect(p, env)).collect();

    let [pause_lo, pause_hi] = cfg.pause_s;
    let step = cfg.step_length();
    let mut points = vec![start];
    let stops: Vec<NodeIndex> = front_ids.iter().copied().chain([start_id]).collect();
    let mut at = start_id;
    for (k, &next) in stops.iter().enumerate() {
        let route = map
            .route(at, next)
            .ok_or_else(|| Error::InfeasibleScenario("no route between stops".into()))?;
        walk_route(&route, step, &mut points);
        if k < front_ids.len() {
            let pause = pause_lo + rng.random::<f64>() * (pause_hi - pause_lo);
            let here = *points.last().unwrap();
            points.extend(std::iter::repeat_n(here, (pause / cfg.dt).round() as usize));
        }
        at = next;
    }
    if points.len() < cfg.min_steps {
        points.resize(cfg.min_steps, start);
    }

    let t_len = points.len();
    let trajectory = AbsoluteTrajectory::try_from_plane(&points, cfg.dt)?;
    Ok(GroundTruthWalk {
        trajectory,
        anchors_tu: fronts.into_iter().map(|location| TimeUnknownAnchor { location }).collect(),
        anchors_tk: vec![
            TimeKnownAnchor {
                location: start,
                timestep: 1,
            },
            TimeKnownAnchor {
                location: start,
                timestep: t_len,
            },
        ],
    })
}

/// Integrates drift-corrupted ground-truth displacements from the origin.
///
/// Displacements are rotated by a random-walk heading error, scaled by a
/// factor drawn once per run of moving steps, and perturbed by white noise.
/// The error is accumulated separately so zero drift reproduces `gt − gt₁`
/// exactly.
pub fn corrupt_to_relative(gt: &AbsoluteTrajectory, drift: &DriftModel, rng_seed: u64) -> Result<RelativeTrajectory> {
    drift.validate()?;
    let g = gt.plane_points();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let origin = g[0];
    let mut out = Vec::with_capacity(g.len());
    out.push(PlanePoint::new(0.0, 0.0));
    let mut error = PlanePoint::new(0.0, 0.0);
    let mut heading = 0.0;
    let mut scale = 1.0;
    let mut moving = false;
    for t in 1..g.len() {
        let d = g[t] - g[t - 1];
        heading += drift.heading_drift_rate * normal();
        let step_moves = d.x != 0.0 || d.y != 0.0;
        if step_moves && !moving {
            scale = (drift.scale_bias * normal()).exp();
        }
        moving = step_moves;
        let (s, c) = heading.sin_cos();
        let rotated = PlanePoint::new(c * d.x - s * d.y, s * d.x + c * d.y) * scale;
        let noise = PlanePoint::new(normal(), normal()) * drift.white_noise_sigma;
        error = error + (rotated + noise - d);
        out.push((g[t] - origin) + error);
    }
    RelativeTrajectory::new(out, gt.dt())
}

/// Environment, walk and corrupted relative trajectory for `cfg.seed`.
pub fn generate_session(cfg: &ScenarioConfig) -> Result<Session> {
    let environment = generate_environment(cfg)?;
    let walk = generate_ground_truth(&environment, cfg)?;
    let relative = corrupt_to_relative(&walk.trajectory, &cfg.drift, cfg.seed)?;
    Ok(Session {
        environment,
        relative,
        anchors_tu: walk.anchors_tu,
        anchors_tk: walk.anchors_tk,
        ground_truth: Some(walk.trajectory),
    })
}

/// `count` sessions from `base` with seeds `first_seed, first_seed + 1, …`.
pub fn generate_suite(base: &ScenarioConfig, first_seed: u64, count: usize) -> Result<Vec<Session>> {
    (0..count as u64)
        .map(|i| {
            generate_session(&ScenarioConfig {
                seed: first_seed + i,
                ..base.clone()
            })
        })
        .collect()
}
