//! Seeded sampling of generic phase states and wall data, shared by the
//! verification checks. States are kept away from the singular sets
//! (centers, equator, ideal boundary) so that brackets and ranks are
//! well-conditioned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forces::LagrangeParams;
use crate::integrals::chart_center_clearance;
use crate::projection::CentralProjection;
use crate::quadrics::{QuadricWall, WallKind};
use crate::spaceform::{Point, SpaceForm, SpaceKind, Vector};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generic chart state in a box, with clearance from the Kepler centers.
pub fn random_chart_state(
    rng: &mut ChaCha8Rng,
    space: &SpaceForm,
    params: &LagrangeParams,
) -> (Point, Vector) {
    let n = space.n;
    let box_r = if space.metric_sign() < 0.0 { 0.55 } else { 1.2 };
    loop {
        let mut q = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        for i in 0..n {
            q[i] = rng.gen_range(-box_r..box_r);
            v[i] = rng.gen_range(-1.0..1.0);
        }
        q[n] = -1.0;
        let q = Point(q);
        if chart_center_clearance(space, params, &q) < 0.25 {
            continue;
        }
        let r2: f64 = q.0[..n].iter().map(|x| x * x).sum();
        if r2 < 0.01 {
            continue;
        }
        return (q, Vector(v));
    }
}

/// A generic state of the given geometry: chart states are drawn directly,
/// curved states are pushed across the central projection.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    space: &SpaceForm,
    params: &LagrangeParams,
) -> Result<(Point, Vector)> {
    match space.kind {
        SpaceKind::EuclideanChart(_) => Ok(random_chart_state(rng, space, params)),
        _ => {
            let pair = CentralProjection::for_curved(*space)?;
            let (qt, vt) = random_chart_state(rng, &pair.chart, params);
            let q = pair.project_point(&qt)?;
            let v = pair.push_velocity(&qt, &vt)?;
            Ok((q, v))
        }
    }
}

/// A random point on the wall with a random ambient velocity, for the
/// reflection-commutation checks. Curved walls sample their chart
/// counterpart and project.
pub fn random_wall_point(rng: &mut ChaCha8Rng, wall: &QuadricWall) -> Result<(Point, Vector)> {
    let space = wall.geometry;
    let n = space.n;
    let hyperbolic_chart = space.metric_sign() < 0.0;
    let (chart_wall, pair) = match space.kind {
        SpaceKind::EuclideanChart(_) => (wall.clone(), None),
        _ => (
            wall.project_wall()?,
            Some(CentralProjection::for_curved(space)?),
        ),
    };
    let t_max = if hyperbolic_chart { 0.5 } else { 1.2 };
    let a_axis = chart_wall.a_axis;
    let b_axis = chart_wall.b_axis;
    let (x, r) = match chart_wall.kind {
        WallKind::Spheroid => {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            (a_axis * t.cos(), b_axis * t.sin())
        }
        WallKind::TwoSheetHyperboloid => {
            let t: f64 = rng.gen_range(-t_max..t_max);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (sign * a_axis * t.cosh(), b_axis * t.sinh())
        }
    };
    let mut q = vec![0.0; n + 1];
    q[0] = x;
    if n == 2 {
        q[1] = r;
    } else {
        // Random direction in the transverse block.
        let mut dir: Vec<f64> = (1..n).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let norm: f64 = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-9);
        for d in dir.iter_mut() {
            *d /= norm;
        }
        for (i, d) in dir.iter().enumerate() {
            q[1 + i] = r * d;
        }
    }
    q[n] = -1.0;
    let mut v = vec![0.0; n + 1];
    for vi in v.iter_mut().take(n) {
        *vi = rng.gen_range(-1.0..1.0);
    }
    let q = Point(q);
    let v = Vector(v);
    match pair {
        None => Ok((q, v)),
        Some(pair) => {
            let qc = pair.project_point(&q)?;
            let vc = pair.push_velocity(&q, &v)?;
            Ok((qc, vc))
        }
    }
}

/// Random rotation in the coordinates `2..n` (fixing the focal axis and the
/// last coordinate), as a product of Givens rotations. Applies to any
/// ambient vector of the geometry.
pub fn random_axis_rotation(rng: &mut ChaCha8Rng, n: usize) -> impl Fn(&[f64]) -> Vec<f64> {
    let mut givens = Vec::new();
    for i in 1..n {
        for j in (i + 1)..n {
            givens.push((i, j, rng.gen_range(0.0..std::f64::consts::TAU)));
        }
    }
    move |x: &[f64]| {
        let mut out = x.to_vec();
        for &(i, j, phi) in &givens {
            let (c, s) = (phi.cos(), phi.sin());
            let (xi, xj) = (out[i], out[j]);
            out[i] = c * xi - s * xj;
            out[j] = s * xi + c * xj;
        }
        out
    }
}
