//! First integrals of the Lagrange billiards, their evaluation in every
//! geometry, drift reports along trajectories, numerical Poisson brackets,
//! and Jacobian-rank independence checks.

mod bracket;

pub use bracket::{jacobian_rank, pairwise_brackets, poisson_bracket, LocalChart};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::forces::{
    chart_centers, force_function_chart, force_function_curved, LagrangeParams, COLLISION_EPS,
};
use crate::spaceform::{displacement, ChartTarget, Point, SpaceForm, SpaceKind, Vector};

/// A first integral bound to a geometry through [`eval`].
///
/// The chart energy evaluated on the curved model (`E_sp_hat`) and the
/// curved energy expressed in the chart (`E_sph_chart`) are independent
/// closed forms, not compositions with the projection; their agreement with
/// the transported counterparts is a verified property, not a construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FirstIntegral {
    /// Mechanical energy of the chart system (`E_sp`).
    ChartEnergy,
    /// Spherical energy written in chart coordinates (`E_sph_chart`);
    /// defined for sphere-target charts.
    CurvedEnergyInChart,
    /// Energy of the curved system (`E_sph` on the sphere, `E_hyp` on the
    /// hyperboloid).
    CurvedEnergy,
    /// Chart energy written in the ambient coordinates of the curved model
    /// (`E_sp_hat`).
    ChartEnergyOnCurved,
    /// Angular momentum component `L_ij = q_i v_j - v_i q_j`, 1-based,
    /// `i < j <= n`; conserved for `2 <= i < j`.
    AngularMomentum { i: usize, j: usize },
    /// `C_k = sum of L_ij^2 over 2 <= i < j <= k`, `3 <= k <= n`.
    Casimir { k: usize },
}

impl FirstIntegral {
    /// Identifier used in reports and CSV headers; hatted names on the
    /// curved models where the quantity is a projection.
    pub fn id(&self, space: &SpaceForm) -> String {
        let curved = space.is_curved();
        match self {
            FirstIntegral::ChartEnergy => "E_sp".into(),
            FirstIntegral::CurvedEnergyInChart => "E_sph_chart".into(),
            FirstIntegral::CurvedEnergy => match space.kind {
                SpaceKind::Hyperboloid => "E_hyp".into(),
                _ => "E_sph".into(),
            },
            FirstIntegral::ChartEnergyOnCurved => "E_sp_hat".into(),
            FirstIntegral::AngularMomentum { i, j } => {
                if curved {
                    format!("L_hat_{i}_{j}")
                } else {
                    format!("L_{i}_{j}")
                }
            }
            FirstIntegral::Casimir { k } => {
                if curved {
                    format!("C_hat_{k}")
                } else {
                    format!("C_{k}")
                }
            }
        }
    }

    /// Parse any of the report identifiers, hatted or not.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "E_sp" => return Some(FirstIntegral::ChartEnergy),
            "E_sph_chart" => return Some(FirstIntegral::CurvedEnergyInChart),
            "E_sph" | "E_hyp" | "E_curved" => return Some(FirstIntegral::CurvedEnergy),
            "E_sp_hat" => return Some(FirstIntegral::ChartEnergyOnCurved),
            _ => {}
        }
        let rest = s.strip_prefix("L_hat_").or_else(|| s.strip_prefix("L_"));
        if let Some(rest) = rest {
            let mut it = rest.split('_');
            let i = it.next()?.parse().ok()?;
            let j = it.next()?.parse().ok()?;
            if it.next().is_some() {
                return None;
            }
            return Some(FirstIntegral::AngularMomentum { i, j });
        }
        let rest = s.strip_prefix("C_hat_").or_else(|| s.strip_prefix("C_"));
        if let Some(rest) = rest {
            return Some(FirstIntegral::Casimir { k: rest.parse().ok()? });
        }
        None
    }
}

impl Serialize for FirstIntegral {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let token = match self {
            FirstIntegral::ChartEnergy => "E_sp".to_string(),
            FirstIntegral::CurvedEnergyInChart => "E_sph_chart".to_string(),
            FirstIntegral::CurvedEnergy => "E_curved".to_string(),
            FirstIntegral::ChartEnergyOnCurved => "E_sp_hat".to_string(),
            FirstIntegral::AngularMomentum { i, j } => format!("L_{i}_{j}"),
            FirstIntegral::Casimir { k } => format!("C_{k}"),
        };
        ser.serialize_str(&token)
    }
}

impl<'de> Deserialize<'de> for FirstIntegral {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        FirstIntegral::parse(&s)
            .ok_or_else(|| D::Error::custom(format!("unknown first integral `{s}`")))
    }
}

/// The geometry's standard commuting family: the two energies plus the
/// angular-momentum block (`L_23` in dimension 3, the nested `C_k` above).
pub fn standard_family(space: &SpaceForm) -> Vec<FirstIntegral> {
    let mut out = Vec::new();
    match space.kind {
        SpaceKind::EuclideanChart(ChartTarget::Sphere) => {
            out.push(FirstIntegral::ChartEnergy);
            out.push(FirstIntegral::CurvedEnergyInChart);
        }
        SpaceKind::EuclideanChart(ChartTarget::Hyperboloid) => {
            out.push(FirstIntegral::ChartEnergy);
        }
        SpaceKind::Sphere | SpaceKind::Hyperboloid => {
            out.push(FirstIntegral::CurvedEnergy);
            out.push(FirstIntegral::ChartEnergyOnCurved);
        }
    }
    if space.n == 3 {
        out.push(FirstIntegral::AngularMomentum { i: 2, j: 3 });
    } else {
        for k in 3..=space.n {
            out.push(FirstIntegral::Casimir { k });
        }
    }
    out
}

/// Evaluate a first integral at a phase state of the given geometry.
pub fn eval(
    space: &SpaceForm,
    params: &LagrangeParams,
    integral: &FirstIntegral,
    q: &Point,
    v: &Vector,
) -> Result<f64> {
    match integral {
        FirstIntegral::ChartEnergy => chart_energy(space, params, q, v),
        FirstIntegral::CurvedEnergyInChart => curved_energy_in_chart(space, params, q, v),
        FirstIntegral::CurvedEnergy => curved_energy(space, params, q, v),
        FirstIntegral::ChartEnergyOnCurved => chart_energy_on_curved(space, params, q, v),
        FirstIntegral::AngularMomentum { i, j } => angular_momentum(space, q, v, *i, *j),
        FirstIntegral::Casimir { k } => casimir(space, q, v, *k),
    }
}

fn chart_energy(space: &SpaceForm, params: &LagrangeParams, q: &Point, v: &Vector) -> Result<f64> {
    if !space.is_chart() {
        return Err(Error::Invalid("E_sp is a chart quantity".into()));
    }
    let kinetic = 0.5 * space.inner(v, v)?;
    Ok(kinetic - force_function_chart(space, params, q)?)
}

fn curved_energy(space: &SpaceForm, params: &LagrangeParams, q: &Point, v: &Vector) -> Result<f64> {
    if !space.is_curved() {
        return Err(Error::Invalid("the curved energy needs a curved state".into()));
    }
    let kinetic = 0.5 * space.inner(v, v)?;
    Ok(kinetic - force_function_curved(space, params, q, false)?)
}

/// `E_sph` written in the chart: the compact kinetic form
/// `(sum vdot_i^2 + sum (q_i v_j - q_j v_i)^2)/2` and the closed-form
/// potential with the hatted masses.
fn curved_energy_in_chart(
    space: &SpaceForm,
    params: &LagrangeParams,
    q: &Point,
    v: &Vector,
) -> Result<f64> {
    if space.kind != SpaceKind::EuclideanChart(ChartTarget::Sphere) {
        return Err(Error::Invalid(
            "E_sph_chart is defined on the sphere-target chart".into(),
        ));
    }
    let n = space.n;
    let mut kinetic = 0.0;
    for i in 0..n {
        kinetic += v.0[i] * v.0[i];
        for j in (i + 1)..n {
            let l = q.0[i] * v.0[j] - q.0[j] * v.0[i];
            kinetic += l * l;
        }
    }
    kinetic *= 0.5;

    let a = space.a;
    let w = space.first_axis_weight();
    let (m1h, m2h) = params.hatted_masses(space);
    let r2: f64 = q.0[..n].iter().map(|x| x * x).sum();
    let transverse: f64 = q.0[1..n].iter().map(|x| x * x).sum();
    let d1 = (q.0[0] - a) * (q.0[0] - a) + w * transverse;
    let d2 = (q.0[0] + a) * (q.0[0] + a) + w * transverse;
    if (params.m1 != 0.0 && d1.sqrt() < COLLISION_EPS)
        || (params.m2 != 0.0 && d2.sqrt() < COLLISION_EPS)
    {
        return Err(Error::SingularEvaluation { what: "E_sph_chart at a Kepler center" });
    }
    let mut u = params.f * r2;
    if m1h != 0.0 {
        u += m1h * (1.0 + a * q.0[0]) / d1.sqrt();
    }
    if m2h != 0.0 {
        u += m2h * (1.0 - a * q.0[0]) / d2.sqrt();
    }
    Ok(kinetic - u)
}

/// `E_sp` written in the ambient coordinates of the curved model:
/// kinetic `((q_{n+1} v_1 - q_1 v_{n+1})^2/(1 +- a^2) + ...)/2` and the
/// chart potential evaluated at the lifted coordinates, with the unhatted
/// masses.
fn chart_energy_on_curved(
    space: &SpaceForm,
    params: &LagrangeParams,
    q: &Point,
    v: &Vector,
) -> Result<f64> {
    if !space.is_curved() {
        return Err(Error::Invalid("E_sp_hat needs a curved state".into()));
    }
    let n = space.n;
    let last = q.0[n];
    if last.abs() < 1e-12 {
        return Err(Error::SingularEvaluation { what: "E_sp_hat at the equator" });
    }
    let w = space.first_axis_weight();
    let mut kinetic = 0.0;
    for i in 0..n {
        let wi = last * v.0[i] - q.0[i] * v.0[n];
        kinetic += if i == 0 { wi * wi / w } else { wi * wi };
    }
    kinetic *= 0.5;

    let a = space.a;
    let u1 = -q.0[0] / last;
    let transverse: f64 = q.0[1..n].iter().map(|x| (x / last) * (x / last)).sum();
    let hooke = u1 * u1 / w + transverse;
    let d1 = ((u1 - a) * (u1 - a) / w + transverse).sqrt();
    let d2 = ((u1 + a) * (u1 + a) / w + transverse).sqrt();
    if (params.m1 != 0.0 && d1 < COLLISION_EPS) || (params.m2 != 0.0 && d2 < COLLISION_EPS) {
        return Err(Error::SingularEvaluation { what: "E_sp_hat at a Kepler center" });
    }
    let mut u = params.f * hooke;
    if params.m1 != 0.0 {
        u += params.m1 / d1;
    }
    if params.m2 != 0.0 {
        u += params.m2 / d2;
    }
    Ok(kinetic - u)
}

/// `L_ij = q_i v_j - v_i q_j` with 1-based indices `i < j <= n`; the same
/// ambient expression in every geometry.
pub fn angular_momentum(space: &SpaceForm, q: &Point, v: &Vector, i: usize, j: usize) -> Result<f64> {
    if i == 0 || j == 0 || i >= j || j > space.n {
        return Err(Error::IndexOutOfRange { i, j, n: space.n });
    }
    let (i, j) = (i - 1, j - 1);
    Ok(q.0[i] * v.0[j] - v.0[i] * q.0[j])
}

/// `C_k = sum_{2 <= i < j <= k} L_ij^2`, `3 <= k <= n`.
pub fn casimir(space: &SpaceForm, q: &Point, v: &Vector, k: usize) -> Result<f64> {
    if k < 3 || k > space.n {
        return Err(Error::IndexOutOfRange { i: k, j: k, n: space.n });
    }
    let mut sum = 0.0;
    for i in 2..=k {
        for j in (i + 1)..=k {
            let l = angular_momentum(space, q, v, i, j)?;
            sum += l * l;
        }
    }
    Ok(sum)
}

/// Distance from a chart point to the nearest effective Kepler center; used
/// by callers sampling away from the singular set.
pub fn chart_center_clearance(space: &SpaceForm, params: &LagrangeParams, q: &Point) -> f64 {
    let [z1, z2, _] = chart_centers(space);
    let mut best = f64::INFINITY;
    if params.m1 != 0.0 {
        best = best.min(space.norm(&displacement(q, &z1)).unwrap_or(f64::INFINITY));
    }
    if params.m2 != 0.0 {
        best = best.min(space.norm(&displacement(q, &z2)).unwrap_or(f64::INFINITY));
    }
    best
}

/// Per-integral drift along a trajectory and jump at each reflection.
#[derive(Clone, Debug, Serialize)]
pub struct DriftRow {
    pub id: String,
    pub initial: f64,
    /// max over samples of `|F(t) - F(0)| / max(1, |F(0)|)`.
    pub max_drift: f64,
    /// max over events of `|F(q, v_out) - F(q, v_in)| / max(1, |F(0)|)`.
    pub max_event_jump: f64,
    pub event_jumps: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
}

impl DriftReport {
    pub fn max_drift(&self) -> f64 {
        self.rows.iter().map(|r| r.max_drift).fold(0.0, f64::max)
    }

    pub fn max_event_jump(&self) -> f64 {
        self.rows.iter().map(|r| r.max_event_jump).fold(0.0, f64::max)
    }
}

/// Evaluate the listed integrals along a trajectory: relative drift at every
/// sample and the in/out jump at every reflection.
pub fn drift_report(
    space: &SpaceForm,
    params: &LagrangeParams,
    traj: &Trajectory,
    integrals: &[FirstIntegral],
) -> Result<DriftReport> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| Error::Invalid("empty trajectory".into()))?;
    let mut rows = Vec::with_capacity(integrals.len());
    for integral in integrals {
        let f0 = eval(space, params, integral, &first.q, &first.v)?;
        let scale = f0.abs().max(1.0);
        let mut max_drift = 0.0f64;
        for s in &traj.samples {
            let f = eval(space, params, integral, &s.q, &s.v)?;
            max_drift = max_drift.max((f - f0).abs() / scale);
        }
        let mut event_jumps = Vec::with_capacity(traj.events.len());
        for e in &traj.events {
            let before = eval(space, params, integral, &e.q_hit, &e.v_in)?;
            let after = eval(space, params, integral, &e.q_hit, &e.v_out)?;
            event_jumps.push((after - before).abs() / scale);
        }
        let max_event_jump = event_jumps.iter().copied().fold(0.0, f64::max);
        rows.push(DriftRow {
            id: integral.id(space),
            initial: f0,
            max_drift,
            max_event_jump,
            event_jumps,
        });
    }
    Ok(DriftReport { rows })
}
