//! Force functions and force fields of the Lagrange problem: a superposition
//! of two Kepler centers placed symmetrically on the first axis and a Hooke
//! center at their midpoint, in all three geometries and any dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::CentralProjection;
use crate::spaceform::{displacement, Point, SpaceForm, SpaceKind, Vector};

/// Chart distance below which a Kepler-center approach counts as collision.
pub const COLLISION_EPS: f64 = 1e-9;

/// Mass and strength parameters of the Lagrange problem. The masses are the
/// chart masses; the curved systems use the derived hatted masses
/// `m_i * sqrt(1 +- a^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeParams {
    pub m1: f64,
    pub m2: f64,
    pub f: f64,
    /// Focal half-separation of the Kepler centers in the chart; must match
    /// the focal parameter of the geometry the system runs in.
    pub a: f64,
}

impl LagrangeParams {
    pub fn new(m1: f64, m2: f64, f: f64, a: f64) -> Self {
        LagrangeParams { m1, m2, f, a }
    }

    pub fn validate_for(&self, space: &SpaceForm) -> Result<()> {
        if self.a != space.a {
            return Err(Error::FocusMismatch {
                expected: space.a,
                got: self.a,
                wall: "<params>".into(),
            });
        }
        if ![self.m1, self.m2, self.f].iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("non-finite Lagrange parameter".into()));
        }
        Ok(())
    }

    /// `m_i * sqrt(1 + sign a^2)` for the given geometry.
    pub fn hatted_masses(&self, space: &SpaceForm) -> (f64, f64) {
        let s = space.first_axis_weight().sqrt();
        (self.m1 * s, self.m2 * s)
    }
}

/// Chart centers `(a, 0, .., -1)`, `(-a, 0, .., -1)`, `(0, .., -1)`.
pub fn chart_centers(space: &SpaceForm) -> [Point; 3] {
    let dim = space.ambient_dim();
    let mut z1 = vec![0.0; dim];
    z1[0] = space.a;
    z1[dim - 1] = -1.0;
    let mut z2 = vec![0.0; dim];
    z2[0] = -space.a;
    z2[dim - 1] = -1.0;
    let mut z0 = vec![0.0; dim];
    z0[dim - 1] = -1.0;
    [Point(z1), Point(z2), Point(z0)]
}

/// Centers of the curved model: the central projections of the chart
/// centers. Returned as `[Z1, Z2, Z0]`.
pub fn curved_centers(space: &SpaceForm) -> Result<[Point; 3]> {
    let pair = CentralProjection::for_curved(*space)?;
    let chart = chart_centers(&pair.chart);
    Ok([
        pair.project_point(&chart[0])?,
        pair.project_point(&chart[1])?,
        pair.project_point(&chart[2])?,
    ])
}

pub fn antipode(z: &Point) -> Point {
    Point(z.0.iter().map(|x| -x).collect())
}

/// Force function of the chart Lagrange problem,
/// `m1/d1 + m2/d2 + f d0^2` with distances in the chart norm.
pub fn force_function_chart(space: &SpaceForm, params: &LagrangeParams, qt: &Point) -> Result<f64> {
    let [z1, z2, z0] = chart_centers(space);
    let d1 = space.norm(&displacement(qt, &z1))?;
    let d2 = space.norm(&displacement(qt, &z2))?;
    let d0 = space.norm(&displacement(qt, &z0))?;
    check_collision(params, d1, d2)?;
    let mut u = params.f * d0 * d0;
    if params.m1 != 0.0 {
        u += params.m1 / d1;
    }
    if params.m2 != 0.0 {
        u += params.m2 / d2;
    }
    Ok(u)
}

fn check_collision(params: &LagrangeParams, d1: f64, d2: f64) -> Result<()> {
    if params.m1 != 0.0 && d1 < COLLISION_EPS {
        return Err(Error::CenterCollision { center: 1, distance: d1 });
    }
    if params.m2 != 0.0 && d2 < COLLISION_EPS {
        return Err(Error::CenterCollision { center: 2, distance: d2 });
    }
    Ok(())
}

/// Chart force field, the metric gradient of the force function:
/// `-m1 |q-Z1|^-3 (q-Z1) - m2 |q-Z2|^-3 (q-Z2) + 2f (q-Z0)`.
pub fn force_chart(space: &SpaceForm, params: &LagrangeParams, qt: &Point) -> Result<Vector> {
    let [z1, z2, z0] = chart_centers(space);
    let w1 = displacement(qt, &z1);
    let w2 = displacement(qt, &z2);
    let w0 = displacement(qt, &z0);
    let d1 = space.norm(&w1)?;
    let d2 = space.norm(&w2)?;
    check_collision(params, d1, d2)?;
    let mut out = w0.scale(2.0 * params.f);
    if params.m1 != 0.0 {
        out = out.axpy(-params.m1 / (d1 * d1 * d1), &w1);
    }
    if params.m2 != 0.0 {
        out = out.axpy(-params.m2 / (d2 * d2 * d2), &w2);
    }
    out.0[space.n] = 0.0;
    Ok(out)
}

/// Force function of the curved Lagrange problem with the hatted masses:
/// sphere `m^ cot t_1 + m^ cot t_2 + f tan^2 t_0`, hyperboloid with
/// `coth` and `tanh^2`. With `whole_sphere` the antipodal centers with
/// sign-flipped masses are added literally (sphere only).
pub fn force_function_curved(
    space: &SpaceForm,
    params: &LagrangeParams,
    q: &Point,
    whole_sphere: bool,
) -> Result<f64> {
    let (m1h, m2h) = params.hatted_masses(space);
    let [z1, z2, z0] = curved_centers(space)?;
    let t1 = space.center_angle(q, &z1)?;
    let t2 = space.center_angle(q, &z2)?;
    let t0 = space.center_angle(q, &z0)?;
    match space.kind {
        SpaceKind::Sphere => {
            let mut u = m1h * cot_checked(t1)? + m2h * cot_checked(t2)? + params.f * tan_sq_checked(t0)?;
            if whole_sphere {
                let t1p = space.center_angle(q, &antipode(&z1))?;
                let t2p = space.center_angle(q, &antipode(&z2))?;
                let t0p = space.center_angle(q, &antipode(&z0))?;
                u -= m1h * cot_checked(t1p)?
                    + m2h * cot_checked(t2p)?
                    + params.f * tan_sq_checked(t0p)?;
            }
            Ok(u)
        }
        SpaceKind::Hyperboloid => {
            if whole_sphere {
                return Err(Error::Invalid(
                    "the whole-sphere extension exists on the sphere only".into(),
                ));
            }
            Ok(m1h * coth_checked(t1)? + m2h * coth_checked(t2)? + params.f * t0.tanh().powi(2))
        }
        SpaceKind::EuclideanChart(_) => Err(Error::Invalid(
            "force_function_curved expects a curved geometry".into(),
        )),
    }
}

fn cot_checked(t: f64) -> Result<f64> {
    let s = t.sin();
    if s.abs() < 1e-12 {
        return Err(Error::SingularEvaluation { what: "cot at a Kepler center or its antipode" });
    }
    Ok(t.cos() / s)
}

fn coth_checked(t: f64) -> Result<f64> {
    if t.abs() < 1e-12 {
        return Err(Error::SingularEvaluation { what: "coth at a Kepler center" });
    }
    Ok(1.0 / t.tanh())
}

fn tan_sq_checked(t: f64) -> Result<f64> {
    let c = t.cos();
    if c.abs() < 1e-12 {
        return Err(Error::SingularEvaluation { what: "tan^2 at the equator" });
    }
    let tan = t.sin() / c;
    Ok(tan * tan)
}

/// Force field of the curved system, evaluated along the paper's projective
/// construction: lift to the chart, take `|q_tilde|^3 F_W(q_tilde)`, and
/// project onto the tangent space. The closed-form gradient of the cot/tan
/// force function is kept as a test oracle only.
pub fn force_curved(space: &SpaceForm, params: &LagrangeParams, q: &Point) -> Result<Vector> {
    if params.m1 == 0.0 && params.m2 == 0.0 && params.f == 0.0 {
        // Free motion is defined on the whole model, beyond the reach of
        // the chart lift.
        return Ok(Vector::zeros(space.ambient_dim()));
    }
    let pair = CentralProjection::for_curved(*space)?;
    let qt = pair.lift_point(q)?;
    let fw = force_chart(&pair.chart, params, &qt)?;
    let r = match space.kind {
        SpaceKind::Sphere => pair.chart.projection_form(&qt.0, &qt.0).sqrt(),
        SpaceKind::Hyperboloid => (-pair.chart.projection_form(&qt.0, &qt.0)).sqrt(),
        SpaceKind::EuclideanChart(_) => unreachable!(),
    };
    space.tangent_project(q, &fw.scale(r * r * r))
}
