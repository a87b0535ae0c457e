//! Projection of `Q'` onto the obstacle-free space.
//!
//! Vertices are the points of `Q'` followed by points sampled uniformly from
//! the valid space. Two vertices are adjacent when the straight segment
//! between them avoids every obstacle interior. A Viterbi pass then finds the
//! connected vertex sequence minimizing
//! `Σ_t ‖v_t − q'_t‖ + β Σ_{t≥2} ‖v_t − v_{t−1}‖`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_valid_space, sample_valid_points, segment_collides, Segment};
use crate::model::{AbsoluteTrajectory, Environment, PlanePoint};

pub const DEFAULT_N_SAMPLES: usize = 1000;
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViterbiConfig {
    pub n_samples: usize,
    pub beta: f64,
    pub rng_seed: u64,
}

impl Default for ViterbiConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_N_SAMPLES,
            beta: DEFAULT_BETA,
            rng_seed: 0,
        }
    }
}

impl ViterbiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::InvalidInput("n_samples must be >= 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput("beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Undirected graph with sorted adjacency lists; a vertex usable as a
/// Viterbi state carries a self-edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGraph {
    vertices: Vec<PlanePoint>,
    adjacency: Vec<Vec<u32>>,
}

impl ProjectionGraph {
    /// Builds a graph from explicit adjacency lists (sorted and deduplicated
    /// here). Fails if the lists are not symmetric or index out of range.
    pub fn from_adjacency(vertices: Vec<PlanePoint>, mut adjacency: Vec<Vec<u32>>) -> Result<Self> {
        if adjacency.len() != vertices.len() {
            return Err(Error::LengthMismatch {
                expected: vertices.len(),
                actual: adjacency.len(),
            });
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let graph = Self {
            vertices,
            adjacency,
        };
        for (i, list) in graph.adjacency.iter().enumerate() {
            for &j in list {
                let j = j as usize;
                if j >= graph.vertices.len() {
                    return Err(Error::InvalidInput(format!("edge {i}-{j} out of range")));
                }
                if !graph.has_edge(j, i) {
                    return Err(Error::InvalidInput(format!("edge {i}-{j} is not symmetric")));
                }
            }
        }
        Ok(graph)
    }

    pub fn vertices(&self) -> &[PlanePoint] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    pub fn has_self_edge(&self, v: usize) -> bool {
        self.has_edge(v, v)
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }
}

/// Vertices are `qp` followed by `cfg.n_samples` valid samples. Vertices
/// outside the domain or inside an obstacle get no edges at all.
pub fn build_graph(qp: &[PlanePoint], env: &Environment, cfg: &ViterbiConfig) -> Result<ProjectionGraph> {
    cfg.validate()?;
    let samples = sample_valid_points(cfg.n_samples, env, cfg.rng_seed)?;
    let mut vertices = qp.to_vec();
    vertices.extend(samples.iter().map(|p| p.point()));
    let n = vertices.len();
    let usable: Vec<bool> = vertices.iter().map(|&p| point_in_valid_space(p, env)).collect();
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        if !usable[i] {
            continue;
        }
        adjacency[i].push(i as u32);
        for j in i + 1..n {
            if usable[j] && !segment_collides(&Segment::new(vertices[i], vertices[j]), env) {
                adjacency[i].push(j as u32);
                adjacency[j].push(i as u32);
            }
        }
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable();
    }
    Ok(ProjectionGraph {
        vertices,
        adjacency,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub vertices: Vec<usize>,
    pub cost: f64,
}

#[inline]
fn dist(a: PlanePoint, b: PlanePoint) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    (dx * dx + dy * dy).sqrt()
}

/// Cost of a vertex sequence, accumulated in the same order as the
/// dynamic program (so optimal costs compare exactly).
pub fn sequence_cost(sequence: &[usize], qp: &[PlanePoint], vertices: &[PlanePoint], beta: f64) -> f64 {
    let mut cost = 0.0;
    for (t, &v) in sequence.iter().enumerate() {
        if t > 0 {
            cost += beta * dist(vertices[sequence[t - 1]], vertices[v]);
        }
        cost += dist(vertices[v], qp[t]);
    }
    cost
}

/// Minimum-cost connected vertex sequence; ties resolve to lower indices.
pub fn viterbi_project(qp: &[PlanePoint], graph: &ProjectionGraph, cfg: &ViterbiConfig) -> Result<ViterbiPath> {
    let t_len = qp.len();
    let n = graph.len();
    if t_len == 0 {
        return Ok(ViterbiPath {
            vertices: Vec::new(),
            cost: 0.0,
        });
    }
    let verts = graph.vertices();
    let states: Vec<bool> = (0..n).map(|v| graph.has_self_edge(v)).collect();
    let beta = cfg.beta;

    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    for s in 0..n {
        if states[s] {
            prev[s] = dist(verts[s], qp[0]);
        }
    }
    if prev.iter().all(|c| c.is_infinite()) {
        return Err(Error::InfeasibleProjection { timestep: 1 });
    }
    let mut back = vec![u32::MAX; t_len.saturating_sub(1) * n];

    for t in 1..t_len {
        let row = &mut back[(t - 1) * n..t * n];
        let mut any = false;
        for s in 0..n {
            cur[s] = f64::INFINITY;
            if !states[s] {
                continue;
            }
            let vs = verts[s];
            let mut best = f64::INFINITY;
            let mut arg = u32::MAX;
            for &u in graph.neighbors(s) {
                let pu = prev[u as usize];
                if pu == f64::INFINITY {
                    continue;
                }
                let c = pu + beta * dist(verts[u as usize], vs);
                if c < best {
                    best = c;
                    arg = u;
                }
            }
            if arg != u32::MAX {
                cur[s] = best + dist(vs, qp[t]);
                row[s] = arg;
                any = true;
            }
        }
        if !any {
            return Err(Error::InfeasibleProjection { timestep: t + 1 });
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut last = 0;
    for s in 1..n {
        if prev[s] < prev[last] {
            last = s;
        }
    }
    let cost = prev[last];
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[(t - 1) * n + path[t]] as usize;
    }
    Ok(ViterbiPath {
        vertices: path,
        cost,
    })
}

/// Builds the graph for `qp` and returns the projected trajectory.
pub fn project(qp: &[PlanePoint], env: &Environment, cfg: &ViterbiConfig, dt: f64) -> Result<AbsoluteTrajectory> {
    let graph = build_graph(qp, env, cfg)?;
    let path = viterbi_project(qp, &graph, cfg)?;
    let points: Vec<PlanePoint> = path.vertices.iter().map(|&v| graph.vertices()[v]).collect();
    // every state lies in the domain already, so clamping is a no-op
    Ok(AbsoluteTrajectory::from_clamped(&points, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObstacleRect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> PlanePoint {
        PlanePoint::new(x, y)
    }

    /// Exhaustive minimum over all connected sequences of states.
    fn brute_force(qp: &[PlanePoint], g: &ProjectionGraph, beta: f64) -> Option<f64> {
        let n = g.len();
        let t_len = qp.len();
        let mut best: Option<f64> = None;
        let mut seq = vec![0usize; t_len];
        let total = n.pow(t_len as u32);
        for code in 0..total {
            let mut c = code;
            for s in seq.iter_mut() {
                *s = c % n;
                c /= n;
            }
            let ok = seq.iter().all(|&v| g.has_self_edge(v))
                && seq.windows(2).all(|w| g.has_edge(w[0], w[1]));
            if ok {
                let cost = sequence_cost(&seq, qp, g.vertices(), beta);
                best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            }
        }
        best
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<PlanePoint>, ProjectionGraph, f64) {
        let t_len = rng.random_range(1..=5);
        let n = rng.random_range(1..=8);
        let qp: Vec<_> = (0..t_len).map(|_| p(rng.random(), rng.random())).collect();
        let verts: Vec<_> = (0..n).map(|_| p(rng.random(), rng.random())).collect();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            if rng.random_bool(0.85) {
                adj[i].push(i as u32);
            }
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    adj[i].push(j as u32);
                    adj[j].push(i as u32);
                }
            }
        }
        let beta = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) };
        (qp, ProjectionGraph::from_adjacency(verts, adj).unwrap(), beta)
    }

    #[test]
    fn hand_built_instance_matches_enumeration() {
        let verts = vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)];
        // a 4-cycle with self loops, no diagonals
        let adj = vec![vec![0, 1, 3], vec![0, 1, 2], vec![1, 2, 3], vec![0, 2, 3]];
        let g = ProjectionGraph::from_adjacency(verts, adj).unwrap();
        let qp = [p(0.1, 0.1), p(0.9, 0.9), p(0.1, 0.2)];
        let cfg = ViterbiConfig {
            beta: 0.5,
            ..Default::default()
        };
        let path = viterbi_project(&qp, &g, &cfg).unwrap();
        assert_eq!(Some(path.cost), brute_force(&qp, &g, 0.5));
        assert_eq!(path.cost, sequence_cost(&path.vertices, &qp, g.vertices(), 0.5));
        for w in path.vertices.windows(2) {
            assert!(g.has_edge(w[0], w[1]));
        }
    }

    #[test]
    fn random_instances_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        for _ in 0..60 {
            let (qp, g, beta) = random_instance(&mut rng);
            let cfg = ViterbiConfig {
                beta,
                ..Default::default()
            };
            match (viterbi_project(&qp, &g, &cfg), brute_force(&qp, &g, beta)) {
                (Ok(path), Some(best)) => {
                    assert_eq!(path.cost, best);
                    checked += 1;
                }
                (Err(Error::InfeasibleProjection { .. }), None) => {}
                (a, b) => panic!("disagreement: {a:?} vs {b:?}"),
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn no_obstacles_zero_beta_reproduces_input() {
        let env = Environment::empty("e", 10.0);
        let qp: Vec<_> = (0..30).map(|i| p(0.03 * i as f64, 0.5 + 0.01 * i as f64)).collect();
        let cfg = ViterbiConfig {
            n_samples: 50,
            beta: 0.0,
            rng_seed: 1,
        };
        let g = build_graph(&qp, &env, &cfg).unwrap();
        let n = g.len();
        assert_eq!(g.num_edges(), n * n);
        let path = viterbi_project(&qp, &g, &cfg).unwrap();
        assert_eq!(path.cost, 0.0);
        assert_eq!(path.vertices, (0..30).collect::<Vec<_>>());
        let out = project(&qp, &env, &cfg, 0.5).unwrap();
        assert_eq!(out.plane_points(), qp);
    }

    #[test]
    fn wall_separates_vertices() {
        let env = Environment {
            name: "wall".into(),
            scale_m: 10.0,
            obstacles: vec![ObstacleRect::from_coords(0.45, 0.0, 0.55, 0.9).unwrap()],
        };
        let qp = [p(0.2, 0.5), p(0.8, 0.5), p(0.5, 0.5)];
        let cfg = ViterbiConfig {
            n_samples: 200,
            beta: 0.01,
            rng_seed: 4,
        };
        let g = build_graph(&qp, &env, &cfg).unwrap();
        assert!(!g.has_edge(0, 1));
        assert!(g.has_self_edge(0) && g.has_self_edge(1));
        // inside the wall: no edges at all
        assert!(g.neighbors(2).is_empty());
        assert_eq!(g, build_graph(&qp, &env, &cfg).unwrap());
    }

    #[test]
    fn projection_detours_around_obstacle() {
        let env = Environment {
            name: "block".into(),
            scale_m: 10.0,
            obstacles: vec![ObstacleRect::from_coords(0.3, 0.3, 0.7, 0.7).unwrap()],
        };
        let qp: Vec<_> = (0..=40).map(|i| p(0.1 + 0.02 * i as f64, 0.5)).collect();
        let cfg = ViterbiConfig {
            n_samples: 400,
            beta: 0.01,
            rng_seed: 2,
        };
        let out = project(&qp, &env, &cfg, 0.5).unwrap();
        let pts = out.plane_points();
        assert_eq!(pts.len(), qp.len());
        assert!(pts.iter().all(|&q| point_in_valid_space(q, &env)));
        assert!(pts.windows(2).all(|w| !segment_collides(&Segment::new(w[0], w[1]), &env)));
        assert_eq!(out, project(&qp, &env, &cfg, 0.5).unwrap());
    }

    #[test]
    fn cost_not_worse_than_constant_sequences() {
        let env = Environment {
            name: "block".into(),
            scale_m: 10.0,
            obstacles: vec![ObstacleRect::from_coords(0.2, 0.2, 0.5, 0.8).unwrap()],
        };
        let qp: Vec<_> = (0..25).map(|i| p(0.05 + 0.035 * i as f64, 0.1 + 0.03 * i as f64)).collect();
        let cfg = ViterbiConfig {
            n_samples: 100,
            beta: 0.3,
            rng_seed: 5,
        };
        let g = build_graph(&qp, &env, &cfg).unwrap();
        let path = viterbi_project(&qp, &g, &cfg).unwrap();
        for v in 0..g.len() {
            if g.has_self_edge(v) {
                let c = sequence_cost(&vec![v; qp.len()], &qp, g.vertices(), cfg.beta);
                assert!(path.cost <= c);
            }
        }
    }

    #[test]
    fn infeasible_graph_reports_timestep() {
        let verts = vec![p(0.0, 0.0), p(1.0, 1.0)];
        // two states, no edge between them and no self-transition for 1
        let g = ProjectionGraph::from_adjacency(verts.clone(), vec![vec![], vec![]]).unwrap();
        let qp = [p(0.0, 0.0), p(1.0, 1.0)];
        assert!(matches!(
            viterbi_project(&qp, &g, &ViterbiConfig::default()),
            Err(Error::InfeasibleProjection { timestep: 1 })
        ));
        assert!(ProjectionGraph::from_adjacency(verts, vec![vec![1], vec![]]).is_err());
    }
}
