//! Collision predicates against axis-aligned obstacles and uniform sampling
//! of the valid space.
//!
//! Obstacles are open sets: points and segments touching an obstacle's
//! boundary are valid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{DomainPoint, Environment, ObstacleRect, PlanePoint};

/// Rejection budget per requested point before sampling gives up.
const MAX_ATTEMPTS_PER_POINT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: PlanePoint,
    pub b: PlanePoint,
}

impl Segment {
    pub fn new(a: PlanePoint, b: PlanePoint) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(&self.b)
    }
}

/// True iff `p` lies in the domain and outside every obstacle interior.
pub fn point_in_valid_space(p: PlanePoint, env: &Environment) -> bool {
    p.in_unit_square() && !env.obstacles.iter().any(|o| o.contains_strict(&p))
}

/// Liang-Barsky clipping against the open rectangle.
fn segment_hits_rect(a: PlanePoint, b: PlanePoint, rect: &ObstacleRect) -> bool {
    // open parameter interval (lo, hi) where the line is strictly inside
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p0, d, min, max) in [
        (a.x, b.x - a.x, rect.min.x, rect.max.x),
        (a.y, b.y - a.y, rect.min.y, rect.max.y),
    ] {
        if d == 0.0 {
            if !(min < p0 && p0 < max) {
                return false;
            }
        } else {
            let t0 = (min - p0) / d;
            let t1 = (max - p0) / d;
            let (t_enter, t_exit) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            lo = lo.max(t_enter);
            hi = hi.min(t_exit);
        }
    }
    // (lo, hi) ∩ [0, 1] non-empty
    lo < hi && lo < 1.0 && hi > 0.0
}

/// True iff the segment passes through the interior of any obstacle.
///
/// A zero-length segment collides iff its point is inside an obstacle.
pub fn segment_collides(s: &Segment, env: &Environment) -> bool {
    // canonical endpoint order keeps the predicate exactly symmetric
    let (a, b) = if (s.a.x, s.a.y) <= (s.b.x, s.b.y) {
        (s.a, s.b)
    } else {
        (s.b, s.a)
    };
    env.obstacles.iter().any(|o| segment_hits_rect(a, b, o))
}

/// Draws `n` points uniformly from the valid space by rejection.
pub fn sample_valid_points(n: usize, env: &Environment, rng_seed: u64) -> Result<Vec<DomainPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_valid_points_with(n, env, &mut rng)
}

pub(crate) fn sample_valid_points_with<R: Rng>(
    n: usize,
    env: &Environment,
    rng: &mut R,
) -> Result<Vec<DomainPoint>> {
    let budget = n.saturating_mul(MAX_ATTEMPTS_PER_POINT).max(MAX_ATTEMPTS_PER_POINT);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= budget {
            return Err(Error::SamplingExhausted {
                attempts,
                accepted: out.len(),
                requested: n,
            });
        }
        attempts += 1;
        let p = PlanePoint::new(rng.random::<f64>(), rng.random::<f64>());
        if point_in_valid_space(p, env) {
            out.push(DomainPoint::clamp(p));
        }
    }
    Ok(out)
}
