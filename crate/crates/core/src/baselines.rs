//! Comparison methods: an exact path-TSP through the time-unknown anchors,
//! and the relative trajectory pinned to its first time-known anchor.

use crate::discrete_opt::{project, ViterbiConfig};
use crate::error::{Error, Result};
use crate::model::{AbsoluteTrajectory, PlanePoint, Session};

/// Largest waypoint count accepted by the exact solver.
pub const MAX_TSP_WAYPOINTS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct TspTour {
    /// Visit order as indices into the waypoint list.
    pub order: Vec<usize>,
    /// Euclidean length from start through every waypoint to end.
    pub length: f64,
}

impl TspTour {
    pub fn polyline(&self, start: PlanePoint, end: PlanePoint, waypoints: &[PlanePoint]) -> Vec<PlanePoint> {
        let mut out = Vec::with_capacity(self.order.len() + 2);
        out.push(start);
        out.extend(self.order.iter().map(|&i| waypoints[i]));
        out.push(end);
        out
    }
}

/// Shortest Hamiltonian path from `start` to `end` through all `waypoints`.
///
/// Subset dynamic program over "remaining cost to the end", so the visit
/// order can be rebuilt front to back choosing the lowest index among equally
/// short continuations; the result is the lexicographically first optimum.
pub fn solve_path_tsp(start: PlanePoint, end: PlanePoint, waypoints: &[PlanePoint]) -> Result<TspTour> {
    let n = waypoints.len();
    if n > MAX_TSP_WAYPOINTS {
        return Err(Error::TooManyWaypoints {
            max: MAX_TSP_WAYPOINTS,
            got: n,
        });
    }
    if n == 0 {
        return Ok(TspTour {
            order: Vec::new(),
            length: start.dist(&end),
        });
    }
    let d = |a: &PlanePoint, b: &PlanePoint| a.dist(b);
    let full = (1usize << n) - 1;
    // remaining[mask * n + i]: at waypoint i with `mask` visited (i ∈ mask)
    let mut remaining = vec![f64::INFINITY; (full + 1) * n];
    for i in 0..n {
        remaining[full * n + i] = d(&waypoints[i], &end);
    }
    for mask in (1..full).rev() {
        for i in 0..n {
            if mask & (1 << i) == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if mask & (1 << j) == 0 {
                    let c = d(&waypoints[i], &waypoints[j]) + remaining[(mask | 1 << j) * n + j];
                    if c < best {
                        best = c;
                    }
                }
            }
            remaining[mask * n + i] = best;
        }
    }

    let continuation = |from: &PlanePoint, mask: usize, j: usize| {
        d(from, &waypoints[j]) + remaining[(mask | 1 << j) * n + j]
    };
    let length = (0..n)
        .map(|j| continuation(&start, 0, j))
        .fold(f64::INFINITY, f64::min);

    let mut order = Vec::with_capacity(n);
    let mut mask = 0usize;
    let mut from = start;
    let mut target = length;
    while mask != full {
        let j = (0..n)
            .find(|&j| mask & (1 << j) == 0 && continuation(&from, mask, j) == target)
            .expect("an optimal continuation exists");
        mask |= 1 << j;
        target = remaining[mask * n + j];
        from = waypoints[j];
        order.push(j);
    }
    Ok(TspTour { order, length })
}

/// `n` points spaced at equal arc length along `polyline`.
pub fn resample_polyline(polyline: &[PlanePoint], n: usize) -> Vec<PlanePoint> {
    if polyline.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(polyline.len());
    cumulative.push(0.0);
    for w in polyline.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].dist(&w[1]));
    }
    let total = *cumulative.last().unwrap();
    if n == 1 || total == 0.0 {
        return vec![polyline[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < polyline.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let f = if len > 0.0 {
            ((s - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(polyline[seg].lerp(&polyline[seg + 1], f));
    }
    out
}

/// The constant-speed tour from the earliest to the latest time-known
/// anchor through every time-unknown anchor, before projection.
pub fn tsp_interpolation(session: &Session) -> Result<Vec<PlanePoint>> {
    let got = session.anchors_tk.len();
    let (Some(first), Some(last)) = (session.earliest_tk(), session.latest_tk()) else {
        return Err(Error::NotEnoughTimeKnownAnchors { needed: 2, got });
    };
    if got < 2 {
        return Err(Error::NotEnoughTimeKnownAnchors { needed: 2, got });
    }
    let waypoints = session.tu_locations();
    let tour = solve_path_tsp(first.location, last.location, &waypoints)?;
    let poly = tour.polyline(first.location, last.location, &waypoints);
    Ok(resample_polyline(&poly, session.len()))
}

pub fn tsp_baseline(session: &Session, cfg: &ViterbiConfig) -> Result<AbsoluteTrajectory> {
    let dense = tsp_interpolation(session)?;
    project(&dense, &session.environment, cfg, session.dt())
}

/// Translates `Q` so that it passes through the earliest time-known anchor
/// at that anchor's timestep, then clamps to the domain.
pub fn anchored_raw_baseline(session: &Session) -> Result<AbsoluteTrajectory> {
    let anchor = session
        .earliest_tk()
        .ok_or(Error::NotEnoughTimeKnownAnchors { needed: 1, got: 0 })?;
    let q = session.relative.points();
    let idx = anchor.timestep.checked_sub(1).filter(|&i| i < q.len()).ok_or_else(|| {
        Error::InvalidInput(format!("time-known timestep {} out of range", anchor.timestep))
    })?;
    let offset = anchor.location - q[idx];
    let shifted: Vec<PlanePoint> = q.iter().map(|&p| p + offset).collect();
    Ok(AbsoluteTrajectory::from_clamped(&shifted, session.dt()))
}
