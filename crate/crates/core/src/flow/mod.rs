//! Newton flow in each geometry, wall-crossing detection on dense output,
//! metric-correct elastic reflections, and the simulation driver.

mod dopri5;

pub use dopri5::DenseSegment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::{force_chart, force_curved, LagrangeParams};
use crate::projection::CentralProjection;
use crate::quadrics::{validate_confocal, QuadricWall};
use crate::spaceform::{Point, SpaceForm, SpaceKind, Vector, EQUATOR_EPS};

/// Position, velocity, and time. In the chart the time is the chart time
/// `t`; on the curved models it is the reparametrized time `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Point,
    pub v: Vector,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Point, v: Vector) -> Self {
        PhaseState { q, v, t: 0.0 }
    }
}

/// One wall hit: time, snapped hit point, incoming and outgoing velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEvent {
    pub t_hit: f64,
    pub q_hit: Point,
    pub v_in: Vector,
    pub v_out: Vector,
    pub wall_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    ReflectionLimit,
    Collision,
    Grazing,
    Singular,
}

/// One dense-output sample of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: Point,
    pub v: Vector,
    /// Accumulated curved time along a chart run, when tracked.
    pub tau: Option<f64>,
}

/// A simulated run: samples at every accepted step and event, the reflection
/// events, and how the run ended.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub space: SpaceForm,
    pub samples: Vec<Sample>,
    pub events: Vec<ReflectionEvent>,
    pub status: Termination,
    /// Extra detail for collision/grazing/singular terminations.
    pub note: Option<String>,
}

impl Trajectory {
    /// Cubic Hermite interpolation of the position at time `t` between the
    /// recorded samples (the velocity is the exact derivative there).
    pub fn position_at(&self, t: f64) -> Option<Vec<f64>> {
        let samples = &self.samples;
        if samples.is_empty() {
            return None;
        }
        if t <= samples[0].t {
            return Some(samples[0].q.0.clone());
        }
        let last = samples.last().unwrap();
        if t >= last.t {
            return Some(last.q.0.clone());
        }
        let idx = samples.partition_point(|s| s.t <= t);
        let (s0, s1) = (&samples[idx - 1], &samples[idx]);
        let h = s1.t - s0.t;
        if h <= 0.0 {
            return Some(s1.q.0.clone());
        }
        let th = (t - s0.t) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        Some(
            (0..s0.q.dim())
                .map(|i| {
                    h00 * s0.q.0[i]
                        + h10 * h * s0.v.0[i]
                        + h01 * s1.q.0[i]
                        + h11 * h * s1.v.0[i]
                })
                .collect(),
        )
    }

    /// Final time reached.
    pub fn t_end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// When to stop a run; at least one bound must be finite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCondition {
    pub t_max: f64,
    pub max_reflections: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-14,
            h_max: 0.5,
            max_steps: 4_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default)]
    pub integrator: IntegratorOptionsOpt,
    /// Track the curved time `tau` along a chart run as a quadrature state.
    #[serde(default)]
    pub track_tau: bool,
}

/// Serde-friendly optional integrator knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptionsOpt {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub h_max: Option<f64>,
}

impl Default for IntegratorOptionsOpt {
    fn default() -> Self {
        IntegratorOptionsOpt { rtol: None, atol: None, h_max: None }
    }
}

impl IntegratorOptionsOpt {
    pub fn resolve(&self) -> IntegratorOptions {
        let mut o = IntegratorOptions::default();
        if let Some(r) = self.rtol {
            o.rtol = r;
        }
        if let Some(a) = self.atol {
            o.atol = a;
        }
        if let Some(h) = self.h_max {
            o.h_max = h;
        }
        o
    }
}

/// Right-hand side of the Newton equations for one geometry, over the flat
/// state `[q, v]` (plus a trailing `tau` slot for chart runs that track the
/// curved time).
pub(crate) struct Dynamics {
    space: SpaceForm,
    params: LagrangeParams,
    track_tau: bool,
}

impl Dynamics {
    pub(crate) fn new(space: SpaceForm, params: LagrangeParams, track_tau: bool) -> Result<Self> {
        params.validate_for(&space)?;
        if track_tau && !space.is_chart() {
            return Err(Error::Invalid("tau tracking applies to chart runs only".into()));
        }
        Ok(Dynamics { space, params, track_tau })
    }

    fn dim(&self) -> usize {
        self.space.ambient_dim()
    }

    fn state_len(&self) -> usize {
        2 * self.dim() + usize::from(self.track_tau)
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        let q = Point(y[..dim].to_vec());
        let v = &y[dim..2 * dim];
        dy[..dim].copy_from_slice(v);
        let acc = match self.space.kind {
            SpaceKind::EuclideanChart(_) => force_chart(&self.space, &self.params, &q)?,
            _ => {
                let f = force_curved(&self.space, &self.params, &q)?;
                // Constraint curvature term: the normal part of q'' follows
                // from differentiating the surface equation twice.
                let c = -self.space.metric_sign() * self.space.projection_form(v, v);
                Vector(
                    f.0.iter()
                        .zip(&q.0)
                        .map(|(fi, qi)| fi + c * qi)
                        .collect(),
                )
            }
        };
        dy[dim..2 * dim].copy_from_slice(&acc.0);
        if self.track_tau {
            let r2 = match self.space.metric_sign() {
                s if s > 0.0 => self.space.projection_form(&y[..dim], &y[..dim]),
                _ => {
                    let m = self.space.projection_form(&y[..dim], &y[..dim]);
                    if m >= 0.0 {
                        return Err(Error::OutsideKleinBall(m + 1.0));
                    }
                    -m
                }
            };
            dy[2 * dim] = 1.0 / r2;
        }
        Ok(())
    }

    fn pack(&self, state: &PhaseState) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.state_len());
        y.extend_from_slice(&state.q.0);
        y.extend_from_slice(&state.v.0);
        if self.track_tau {
            y.push(0.0);
        }
        y
    }

    fn unpack(&self, t: f64, y: &[f64]) -> PhaseState {
        let dim = self.dim();
        PhaseState {
            q: Point(y[..dim].to_vec()),
            v: Vector(y[dim..2 * dim].to_vec()),
            t,
        }
    }
}

/// One fixed-size Dormand-Prince 5(4) step, with the curved state
/// renormalized back to the surface afterwards. Step-size control and event
/// handling live in [`simulate`].
pub fn step(
    space: &SpaceForm,
    params: &LagrangeParams,
    state: &PhaseState,
    h: f64,
) -> Result<PhaseState> {
    if h <= 0.0 {
        return Err(Error::Invalid("step size must be positive".into()));
    }
    let dyn_ = Dynamics::new(*space, *params, false)?;
    let mut y = dyn_.pack(state);
    let dim = dyn_.dim();
    if space.is_curved() {
        let (q, v) = y.split_at_mut(dim);
        space.renormalize(q, v)?;
    }
    let mut k1 = vec![0.0; y.len()];
    dyn_.rhs(&y, &mut k1)?;
    let opts = IntegratorOptions::default();
    let scale = |_i: usize, a: f64, b: f64| opts.atol + opts.rtol * a.abs().max(b.abs());
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| dyn_.rhs(y, dy);
    let attempt = dopri5::try_step(&mut rhs, state.t, &y, &k1, h, &scale)?;
    let mut y_new = attempt.y_new;
    if space.is_curved() {
        let (q, v) = y_new.split_at_mut(dim);
        space.renormalize(q, v)?;
    }
    Ok(dyn_.unpack(state.t + h, &y_new))
}

/// Elastic reflection of `v` at the wall point `q`: the metric-normal
/// component is negated, the tangential component is kept.
pub fn reflect(wall: &QuadricWall, q: &Point, v: &Vector) -> Result<Vector> {
    let space = wall.geometry;
    let n = wall.normal(q)?;
    let vn = space.inner(v, &n)?;
    let nn = space.inner(&n, &n)?;
    let vv = space.inner(v, v)?;
    if nn <= 0.0 {
        return Err(Error::DegenerateNormal);
    }
    let cosine = vn.abs() / (vv.abs().sqrt() * nn.sqrt());
    if cosine < 1e-10 {
        return Err(Error::GrazingHit(cosine));
    }
    Ok(v.axpy(-2.0 * vn / nn, &n))
}

/// Earliest zero of the wall's implicit value along a dense-output segment,
/// located by a sign-change scan on 8 sub-samples, bisection, and a Newton
/// polish; the returned point is snapped onto the wall.
pub fn detect_crossing(wall: &QuadricWall, seg: &DenseSegment) -> Option<(f64, Point)> {
    let dim = wall.geometry.ambient_dim();
    let brackets = scan_brackets(wall, seg, dim);
    let (lo, hi) = *brackets.first()?;
    let t = refine_crossing(wall, seg, dim, lo, hi);
    let y = seg.eval(t);
    let q = snap_to_wall(wall, &y[..dim]);
    Some((t, q))
}

const SUBSAMPLES: usize = 8;

fn scan_brackets(wall: &QuadricWall, seg: &DenseSegment, dim: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t_prev = seg.t0;
    let mut g_prev = wall.implicit_raw(&seg.eval_theta(0.0)[..dim]);
    for j in 1..=SUBSAMPLES {
        let th = j as f64 / SUBSAMPLES as f64;
        let t = seg.t0 + th * seg.h;
        let g = wall.implicit_raw(&seg.eval_theta(th)[..dim]);
        if g_prev * g < 0.0 || (g == 0.0 && g_prev != 0.0) {
            out.push((t_prev, t));
        }
        t_prev = t;
        g_prev = g;
    }
    out
}

fn refine_crossing(wall: &QuadricWall, seg: &DenseSegment, dim: usize, mut lo: f64, mut hi: f64) -> f64 {
    let g = |t: f64| wall.implicit_raw(&seg.eval(t)[..dim]);
    let mut g_lo = g(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return mid;
        }
        if g_lo * g_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    // Newton polish on the interpolant; dg/dt = grad g . v.
    let mut t = 0.5 * (lo + hi);
    for _ in 0..10 {
        let y = seg.eval(t);
        let val = wall.implicit_raw(&y[..dim]);
        if val.abs() < 1e-12 {
            break;
        }
        let grad = wall.implicit_gradient_raw(&y[..dim]);
        let slope: f64 = grad.iter().zip(&y[dim..2 * dim]).map(|(a, b)| a * b).sum();
        if slope.abs() < 1e-300 {
            break;
        }
        let t_next = t - val / slope;
        if !(seg.t0..=seg.t0 + seg.h).contains(&t_next) {
            break;
        }
        t = t_next;
    }
    t
}

/// One Newton projection step onto the wall's zero set, along the
/// (surface-tangent, for curved geometries) gradient direction.
fn snap_to_wall(wall: &QuadricWall, q_raw: &[f64]) -> Point {
    let space = wall.geometry;
    let mut q = q_raw.to_vec();
    if space.is_curved() {
        let mut dummy = vec![0.0; q.len()];
        let _ = space.renormalize(&mut q, &mut dummy);
    }
    let grad = wall.implicit_gradient_raw(&q);
    let dir = if space.is_curved() {
        space.tangent_project_raw(&q, &grad)
    } else {
        let mut g = grad.clone();
        g[space.n] = 0.0;
        g
    };
    let val = wall.implicit_raw(&q);
    let pairing: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
    if pairing.abs() > 1e-300 {
        let c = -val / pairing;
        for (qi, di) in q.iter_mut().zip(&dir) {
            *qi += c * di;
        }
    }
    if space.is_curved() {
        let mut dummy = vec![0.0; q.len()];
        let _ = space.renormalize(&mut q, &mut dummy);
    }
    Point(q)
}

/// Post-reflection offset along the outgoing velocity, guarding against
/// immediate re-detection of the same wall.
const REDETECT_NUDGE: f64 = 1e-12;

/// Integrate the billiard: smooth arcs alternating with elastic reflections
/// at the walls, until the stop condition, a collision, a grazing hit, or a
/// singularity ends the run.
pub fn simulate(
    space: &SpaceForm,
    params: &LagrangeParams,
    walls: &[QuadricWall],
    state0: &PhaseState,
    stop: &StopCondition,
    opts: &SimOptions,
) -> Result<Trajectory> {
    validate_confocal(space, walls)?;
    let dyn_ = Dynamics::new(*space, *params, opts.track_tau)?;
    let integ = opts.integrator.resolve();
    let dim = dyn_.dim();
    if state0.q.dim() != dim || state0.v.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: state0.q.dim() });
    }

    let mut y = dyn_.pack(state0);
    if space.is_curved() {
        let (q, v) = y.split_at_mut(dim);
        space.renormalize(q, v)?;
    }
    for wall in walls {
        if wall.implicit_raw(&y[..dim]) >= 0.0 {
            return Err(Error::Invalid(format!(
                "initial state is not strictly inside wall `{}`",
                wall.id
            )));
        }
    }

    let mut t = state0.t;
    let t_end = stop.t_max;
    let max_refl = stop.max_reflections.unwrap_or(usize::MAX);

    let mut traj = Trajectory {
        space: *space,
        samples: Vec::new(),
        events: Vec::new(),
        status: Termination::TimeLimit,
        note: None,
    };
    let record = |traj: &mut Trajectory, t: f64, y: &[f64], track_tau: bool| {
        traj.samples.push(Sample {
            t,
            q: Point(y[..dim].to_vec()),
            v: Vector(y[dim..2 * dim].to_vec()),
            tau: track_tau.then(|| y[2 * dim]),
        });
    };
    record(&mut traj, t, &y, opts.track_tau);

    let mut k1 = vec![0.0; y.len()];
    let mut rhs_closure = |_t: f64, y: &[f64], dy: &mut [f64]| dyn_.rhs(y, dy);
    if let Err(e) = rhs_closure(t, &y, &mut k1) {
        traj.status = classify(&e);
        traj.note = Some(e.to_string());
        return Ok(traj);
    }
    let scale = |_i: usize, a: f64, b: f64| integ.atol + integ.rtol * a.abs().max(b.abs());
    let mut h = dopri5::initial_step(
        &mut rhs_closure,
        t,
        &y,
        &k1,
        integ.rtol,
        integ.atol,
        integ.h_max,
    )?
    .max(integ.h_min);

    let mut accepted = 0usize;
    let mut rejected_last = false;
    'outer: while t < t_end {
        if accepted >= integ.max_steps {
            return Err(Error::StepBudgetExceeded(accepted));
        }
        let h_try = h.min(t_end - t).max(integ.h_min);
        let attempt = match dopri5::try_step(&mut rhs_closure, t, &y, &k1, h_try, &scale) {
            Ok(a) => a,
            Err(e) => {
                // A stage hit a singularity; shrink toward it.
                h = 0.5 * h_try;
                rejected_last = true;
                if h < integ.h_min {
                    traj.status = classify(&e);
                    traj.note = Some(e.to_string());
                    break 'outer;
                }
                continue;
            }
        };
        if attempt.err > 1.0 {
            h = dopri5::next_step_size(h_try, attempt.err, true);
            rejected_last = true;
            if h < integ.h_min {
                traj.status = stall_status(space, params, &y[..dim]);
                traj.note = Some(format!("step rejection cascade below h_min at t = {t}"));
                break 'outer;
            }
            continue;
        }

        // Wall crossings on the dense output of the accepted step.
        let mut earliest: Option<(f64, usize)> = None;
        for (w_idx, wall) in walls.iter().enumerate() {
            let brackets = scan_brackets(wall, &attempt.dense, dim);
            if brackets.len() > 1 {
                // Multiple roots in one step: halve and re-search.
                h = 0.5 * h_try;
                rejected_last = true;
                if h < integ.h_min {
                    traj.status = Termination::Singular;
                    traj.note = Some("unresolvable wall-crossing cluster".into());
                    break 'outer;
                }
                continue 'outer;
            }
            if let Some(&(lo, hi)) = brackets.first() {
                let t_hit = refine_crossing(wall, &attempt.dense, dim, lo, hi);
                if earliest.map_or(true, |(tb, _)| t_hit < tb) {
                    earliest = Some((t_hit, w_idx));
                }
            }
        }

        if let Some((t_hit, w_idx)) = earliest {
            let wall = &walls[w_idx];
            let y_hit = attempt.dense.eval(t_hit);
            let q_hit = snap_to_wall(wall, &y_hit[..dim]);
            let mut v_in = Vector(y_hit[dim..2 * dim].to_vec());
            if space.is_curved() {
                v_in = Vector(space.tangent_project_raw(&q_hit.0, &v_in.0));
            }
            if !wall.admits_hit(&q_hit) {
                // Masked or wrong sheet: pass through; accept the full step.
                advance(&mut y, &mut t, &mut k1, &attempt, space, dim, &dyn_)?;
                record(&mut traj, t, &y, opts.track_tau);
                accepted += 1;
                h = dopri5::next_step_size(h_try, attempt.err, rejected_last);
                rejected_last = false;
                if let Some(status) = position_guard(space, params, &y[..dim]) {
                    traj.status = status;
                    traj.note = Some("left the admissible region".into());
                    break 'outer;
                }
                continue;
            }
            let v_out = match reflect(wall, &q_hit, &v_in) {
                Ok(v) => v,
                Err(e @ Error::GrazingHit(_)) => {
                    traj.status = Termination::Grazing;
                    traj.note = Some(e.to_string());
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            traj.events.push(ReflectionEvent {
                t_hit,
                q_hit: q_hit.clone(),
                v_in: v_in.clone(),
                v_out: v_out.clone(),
                wall_id: wall.id.clone(),
            });

            // Restart just off the wall along the outgoing velocity.
            let mut y_next = y_hit.clone();
            for i in 0..dim {
                y_next[i] = q_hit.0[i] + REDETECT_NUDGE * v_out.0[i];
                y_next[dim + i] = v_out.0[i];
            }
            if space.is_curved() {
                let (q, v) = y_next.split_at_mut(dim);
                if space.renormalize(q, v).is_err() {
                    traj.status = Termination::Singular;
                    break 'outer;
                }
            }
            y = y_next;
            t = t_hit;
            record(&mut traj, t, &y, opts.track_tau);
            if let Err(e) = rhs_closure(t, &y, &mut k1) {
                traj.status = classify(&e);
                traj.note = Some(e.to_string());
                break 'outer;
            }
            accepted += 1;
            rejected_last = false;
            if traj.events.len() >= max_refl {
                traj.status = Termination::ReflectionLimit;
                break 'outer;
            }
            continue;
        }

        // Plain accepted step.
        advance(&mut y, &mut t, &mut k1, &attempt, space, dim, &dyn_)?;
        record(&mut traj, t, &y, opts.track_tau);
        accepted += 1;
        h = dopri5::next_step_size(h_try, attempt.err, rejected_last);
        rejected_last = false;
        if let Some(status) = position_guard(space, params, &y[..dim]) {
            traj.status = status;
            traj.note = Some("left the admissible region".into());
            break 'outer;
        }
    }

    Ok(traj)
}

/// Commit an accepted step: renormalize curved states and refresh the slope.
fn advance(
    y: &mut Vec<f64>,
    t: &mut f64,
    k1: &mut Vec<f64>,
    attempt: &dopri5::StepAttempt,
    space: &SpaceForm,
    dim: usize,
    dyn_: &Dynamics,
) -> Result<()> {
    *y = attempt.y_new.clone();
    *t = attempt.dense.t1();
    if space.is_curved() {
        let (q, v) = y.split_at_mut(dim);
        space.renormalize(q, v)?;
        dyn_.rhs(y, k1)?;
    } else {
        *k1 = attempt.k_new.clone();
    }
    Ok(())
}

/// Geometry-specific guards: the hemisphere and the Klein ball have an
/// equator/ideal boundary the correspondence does not extend across. A free
/// particle on the sphere moves on the whole model and is exempt.
fn position_guard(space: &SpaceForm, params: &LagrangeParams, q: &[f64]) -> Option<Termination> {
    let free = params.m1 == 0.0 && params.m2 == 0.0 && params.f == 0.0;
    match space.kind {
        SpaceKind::Sphere if !free => {
            (q[space.n] >= -EQUATOR_EPS).then_some(Termination::Singular)
        }
        SpaceKind::EuclideanChart(crate::spaceform::ChartTarget::Hyperboloid) => {
            let r2: f64 = q[..space.n].iter().map(|x| x * x).sum();
            (r2 >= 1.0).then_some(Termination::Singular)
        }
        _ => None,
    }
}

/// A step-size collapse right next to an effective Kepler center is a
/// collision; anywhere else it is a stiffness/singularity report.
fn stall_status(space: &SpaceForm, params: &LagrangeParams, q: &[f64]) -> Termination {
    let clearance = match space.kind {
        SpaceKind::EuclideanChart(_) => {
            crate::integrals::chart_center_clearance(space, params, &Point(q.to_vec()))
        }
        _ => CentralProjection::for_curved(*space)
            .ok()
            .and_then(|pair| pair.lift_point(&Point(q.to_vec())).ok().map(|qt| (pair, qt)))
            .map(|(pair, qt)| {
                crate::integrals::chart_center_clearance(&pair.chart, params, &qt)
            })
            .unwrap_or(f64::INFINITY),
    };
    if clearance < 1e-6 {
        Termination::Collision
    } else {
        Termination::Singular
    }
}

fn classify(e: &Error) -> Termination {
    match e {
        Error::CenterCollision { .. } => Termination::Collision,
        Error::GrazingHit(_) => Termination::Grazing,
        _ => Termination::Singular,
    }
}

/// Maximum pointwise deviation between a chart run and the curved run from
/// the corresponded initial data, after matching the curved time `tau`
/// accumulated along the chart trajectory (no walls).
pub fn correspondence_deviation(
    chart: &SpaceForm,
    params: &LagrangeParams,
    state0: &PhaseState,
    t_end: f64,
    opts: &IntegratorOptionsOpt,
) -> Result<f64> {
    let pair = CentralProjection::for_chart(*chart)?;
    let sim_opts = SimOptions { integrator: *opts, track_tau: true };
    let stop = StopCondition { t_max: t_end, max_reflections: None };
    let chart_traj = simulate(chart, params, &[], state0, &stop, &sim_opts)?;
    if chart_traj.status != Termination::TimeLimit {
        return Err(Error::Invalid(format!(
            "chart run ended early: {:?}",
            chart_traj.status
        )));
    }

    let q0 = pair.project_point(&state0.q)?;
    let v0 = pair.push_velocity(&state0.q, &state0.v)?;
    let tau_end = chart_traj
        .samples
        .last()
        .and_then(|s| s.tau)
        .ok_or_else(|| Error::Invalid("tau was not tracked".into()))?;
    let curved_state = PhaseState { q: q0, v: v0, t: 0.0 };
    let curved_traj = simulate(
        &pair.curved,
        params,
        &[],
        &curved_state,
        &StopCondition { t_max: tau_end, max_reflections: None },
        &SimOptions { integrator: *opts, track_tau: false },
    )?;
    if curved_traj.status != Termination::TimeLimit {
        return Err(Error::Invalid(format!(
            "curved run ended early: {:?}",
            curved_traj.status
        )));
    }

    let mut max_dev: f64 = 0.0;
    for s in &chart_traj.samples {
        let tau = s.tau.expect("tau tracked");
        if tau > tau_end {
            break;
        }
        let projected = pair.project_point(&s.q)?;
        let Some(curved_q) = curved_traj.position_at(tau) else { continue };
        let dev = projected
            .0
            .iter()
            .zip(&curved_q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        max_dev = max_dev.max(dev);
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrics::WallKind;
    use crate::spaceform::ChartTarget;
    use approx::assert_abs_diff_eq;

    fn chart(a: f64) -> SpaceForm {
        SpaceForm::euclidean_chart(ChartTarget::Sphere, 3, a).unwrap()
    }

    fn free_params(space: &SpaceForm) -> LagrangeParams {
        LagrangeParams::new(0.0, 0.0, 0.0, space.a)
    }

    #[test]
    fn zero_force_step_is_a_straight_line() {
        let space = chart(0.0);
        let state = PhaseState::new(
            Point(vec![0.1, 0.2, 0.0, -1.0]),
            Vector(vec![1.0, -0.5, 0.25, 0.0]),
        );
        let out = step(&space, &free_params(&space), &state, 0.125).unwrap();
        assert_abs_diff_eq!(out.q.0[0], 0.1 + 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(out.q.0[1], 0.2 - 0.0625, epsilon = 1e-15);
        assert_eq!(out.v, state.v);
    }

    #[test]
    fn free_motion_on_the_sphere_is_a_great_circle() {
        let space = SpaceForm::sphere(3, 0.0).unwrap();
        let q = Point(vec![0.0, 0.0, 0.0, -1.0]);
        let v = Vector(vec![0.7, -0.2, 0.4, 0.0]);
        let speed0 = space.norm(&v).unwrap();
        let mut state = PhaseState::new(q, v);
        for _ in 0..1000 {
            state = step(&space, &free_params(&space), &state, 0.01).unwrap();
        }
        let radius: f64 = state.q.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(radius, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(space.norm(&state.v).unwrap(), speed0, epsilon = 1e-10);
        // Great-circle position: q(t) = cos(|v|t) q0 + sin(|v|t) v0/|v|.
        let angle = speed0 * 10.0;
        assert_abs_diff_eq!(state.q.0[3], -angle.cos(), epsilon = 1e-8);
    }

    #[test]
    fn circular_kepler_orbit_keeps_its_radius() {
        let space = chart(0.0);
        let params = LagrangeParams::new(1.0, 0.0, 0.0, 0.0);
        let state = PhaseState::new(
            Point(vec![1.0, 0.0, 0.0, -1.0]),
            Vector(vec![0.0, 1.0, 0.0, 0.0]),
        );
        let stop = StopCondition { t_max: std::f64::consts::TAU, max_reflections: None };
        let traj = simulate(&space, &params, &[], &state, &stop, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Termination::TimeLimit);
        for s in &traj.samples {
            let r: f64 = s.q.0[..3].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-8);
        }
        // One full period returns to the start.
        let last = traj.samples.last().unwrap();
        assert_abs_diff_eq!(last.q.0[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(last.q.0[1], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn reflect_on_a_round_wall_flips_the_radial_component() {
        let wall =
            QuadricWall::new(chart(0.0), WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
        let q = Point(vec![1.0, 0.0, 0.0, -1.0]);
        let v = Vector(vec![-1.0, 0.5, 0.2, 0.0]);
        let out = reflect(&wall, &q, &v).unwrap();
        assert_abs_diff_eq!(out.0[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.0[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out.0[2], 0.2, epsilon = 1e-14);
    }

    #[test]
    fn reflection_is_an_involution_and_an_isometry() {
        let space = chart(1.0);
        let wall =
            QuadricWall::new(space, WallKind::Spheroid, 3.0_f64.sqrt(), 1.0, "w").unwrap();
        let q = {
            let x = 0.9_f64;
            let y = (1.0 - x * x / 3.0).sqrt();
            Point(vec![x, y, 0.0, -1.0])
        };
        let v = Vector(vec![0.3, -0.8, 0.2, 0.0]);
        let v1 = reflect(&wall, &q, &v).unwrap();
        let v2 = reflect(&wall, &q, &v1).unwrap();
        for (a, b) in v2.0.iter().zip(&v.0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        let n0 = space.norm(&v).unwrap();
        let n1 = space.norm(&v1).unwrap();
        assert!((n1 - n0).abs() / n0 < 1e-14);
    }

    #[test]
    fn reflection_matches_the_tangent_normal_decomposition() {
        // Independent route: decompose v = v_t + v_n against the displayed
        // chart normal (x (1+a^2)/A^2, y/B^2, 0) at a z = 0 point and negate
        // the normal part; the z-velocity must pass through unchanged.
        let space = chart(1.0);
        let a2 = 3.0_f64;
        let wall = QuadricWall::new(space, WallKind::Spheroid, a2.sqrt(), 1.0, "w").unwrap();
        let x = 1.2_f64;
        let y = (1.0 - x * x / a2).sqrt();
        let q = Point(vec![x, y, 0.0, -1.0]);
        let v = Vector(vec![0.4, -0.9, 0.35, 0.0]);
        let n = Vector(vec![x * 2.0 / a2, y, 0.0, 0.0]);
        let vn = space.inner(&v, &n).unwrap() / space.inner(&n, &n).unwrap();
        let v_n = n.scale(vn);
        let expected = v.axpy(-2.0, &v_n);
        let got = reflect(&wall, &q, &v).unwrap();
        for (a, b) in got.0.iter().zip(&expected.0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(got.0[2], v.0[2], epsilon = 1e-15);
        assert!(
            (space.norm(&got).unwrap() - space.norm(&v).unwrap()).abs()
                / space.norm(&v).unwrap()
                < 1e-14
        );
    }

    #[test]
    fn grazing_hits_are_flagged() {
        let wall = QuadricWall::new(chart(0.0), WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
        let q = Point(vec![1.0, 0.0, 0.0, -1.0]);
        let v = Vector(vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(reflect(&wall, &q, &v), Err(Error::GrazingHit(_))));
    }

    #[test]
    fn straight_segment_crossing_is_located_exactly() {
        let space = chart(0.0);
        let wall = QuadricWall::new(space, WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
        let dyn_ = Dynamics::new(space, free_params(&space), false).unwrap();
        let y = vec![2.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0];
        let mut k1 = vec![0.0; 8];
        dyn_.rhs(&y, &mut k1).unwrap();
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| dyn_.rhs(y, dy);
        let scale = |_i: usize, _a: f64, _b: f64| 1.0;
        let attempt = dopri5::try_step(&mut rhs, 0.0, &y, &k1, 1.5, &scale).unwrap();
        let (t_hit, q_hit) = detect_crossing(&wall, &attempt.dense).unwrap();
        assert_abs_diff_eq!(t_hit, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q_hit.0[0], 1.0, epsilon = 1e-12);
        assert!(wall.implicit_value(&q_hit).abs() < 1e-12);
    }

    #[test]
    fn interior_segment_reports_no_crossing() {
        let space = chart(0.0);
        let wall = QuadricWall::new(space, WallKind::Spheroid, 2.0, 2.0, "w").unwrap();
        let dyn_ = Dynamics::new(space, free_params(&space), false).unwrap();
        let y = vec![0.0, 0.0, 0.0, -1.0, 0.3, 0.1, 0.0, 0.0];
        let mut k1 = vec![0.0; 8];
        dyn_.rhs(&y, &mut k1).unwrap();
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| dyn_.rhs(y, dy);
        let scale = |_i: usize, _a: f64, _b: f64| 1.0;
        let attempt = dopri5::try_step(&mut rhs, 0.0, &y, &k1, 1.0, &scale).unwrap();
        assert!(detect_crossing(&wall, &attempt.dense).is_none());
    }

    #[test]
    fn crossing_matches_the_quadratic_root() {
        // Free flight from q0 with velocity v crosses the spheroid where
        // |q0 + t v| solves a quadratic; compare against the closed form.
        let space = chart(0.5);
        let wall = QuadricWall::new(space, WallKind::Spheroid, 1.5_f64.sqrt(), 1.0, "w").unwrap();
        let q0 = [0.2, -0.3, 0.1];
        let v = [0.55, 0.4, -0.3];
        let a2 = 1.5;
        // Quadratic in t for x^2/A^2 + y^2 + z^2 = 1.
        let ca = v[0] * v[0] / a2 + v[1] * v[1] + v[2] * v[2];
        let cb = 2.0 * (q0[0] * v[0] / a2 + q0[1] * v[1] + q0[2] * v[2]);
        let cc = q0[0] * q0[0] / a2 + q0[1] * q0[1] + q0[2] * q0[2] - 1.0;
        let t_exact = (-cb + f64::sqrt(cb * cb - 4.0 * ca * cc)) / (2.0 * ca);

        let dyn_ = Dynamics::new(space, free_params(&space), false).unwrap();
        let y = vec![q0[0], q0[1], q0[2], -1.0, v[0], v[1], v[2], 0.0];
        let mut k1 = vec![0.0; 8];
        dyn_.rhs(&y, &mut k1).unwrap();
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| dyn_.rhs(y, dy);
        let scale = |_i: usize, _a: f64, _b: f64| 1.0;
        let h = t_exact + 0.3;
        let attempt = dopri5::try_step(&mut rhs, 0.0, &y, &k1, h, &scale).unwrap();
        let (t_hit, _) = detect_crossing(&wall, &attempt.dense).unwrap();
        assert_abs_diff_eq!(t_hit, t_exact, epsilon = 1e-12);
    }

    #[test]
    fn free_particle_with_no_walls_is_one_smooth_arc() {
        let space = chart(0.0);
        let state = PhaseState::new(
            Point(vec![0.0, 0.0, 0.0, -1.0]),
            Vector(vec![0.2, 0.1, 0.0, 0.0]),
        );
        let stop = StopCondition { t_max: 3.0, max_reflections: Some(10) };
        let traj =
            simulate(&space, &free_params(&space), &[], &state, &stop, &SimOptions::default())
                .unwrap();
        assert_eq!(traj.status, Termination::TimeLimit);
        assert!(traj.events.is_empty());
        assert_abs_diff_eq!(traj.t_end(), 3.0, epsilon = 1e-12);
        // Times strictly increase.
        for w in traj.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn free_billiard_in_a_round_sphere_conserves_speed() {
        let space = chart(0.0);
        let wall = QuadricWall::new(space, WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
        let state = PhaseState::new(
            Point(vec![0.1, -0.2, 0.0, -1.0]),
            Vector(vec![0.6, 0.45, 0.3, 0.0]),
        );
        let speed0 = space.norm(&state.v).unwrap();
        let stop = StopCondition { t_max: 1e6, max_reflections: Some(100) };
        let traj =
            simulate(&space, &free_params(&space), &[wall], &state, &stop, &SimOptions::default())
                .unwrap();
        assert_eq!(traj.status, Termination::ReflectionLimit);
        assert_eq!(traj.events.len(), 100);
        for s in &traj.samples {
            let speed = space.norm(&s.v).unwrap();
            assert!((speed - speed0).abs() / speed0 < 1e-12);
        }
        for e in &traj.events {
            // v_in + v_out is tangent to the wall at the hit point.
            let n = wall_normal_at(&traj, e);
            let sum = e.v_in.add(&e.v_out);
            let pairing = space.inner(&sum, &n).unwrap();
            assert!(pairing.abs() < 1e-9 * space.norm(&n).unwrap());
        }
        fn wall_normal_at(traj: &Trajectory, e: &ReflectionEvent) -> Vector {
            let wall = QuadricWall::new(traj.space, WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
            wall.normal(&e.q_hit).unwrap()
        }
    }

    #[test]
    fn attracting_hooke_inside_a_sphere_wall_conserves_energy() {
        let space = chart(0.0);
        let params = LagrangeParams::new(0.0, 0.0, -0.5, 0.0);
        let wall = QuadricWall::new(space, WallKind::Spheroid, 1.0, 1.0, "w").unwrap();
        let state = PhaseState::new(
            Point(vec![0.3, 0.0, 0.1, -1.0]),
            Vector(vec![0.1, 1.5, 0.0, 0.0]),
        );
        let energy = |q: &Point, v: &Vector| {
            let k = 0.5 * space.inner(v, v).unwrap();
            let r2: f64 = q.0[..3].iter().map(|x| x * x).sum();
            k - (-0.5) * r2
        };
        let e0 = energy(&state.q, &state.v);
        let stop = StopCondition { t_max: 1e6, max_reflections: Some(100) };
        let traj = simulate(&space, &params, &[wall], &state, &stop, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Termination::ReflectionLimit);
        for s in &traj.samples {
            assert!((energy(&s.q, &s.v) - e0).abs() / e0.abs() < 1e-8);
        }
    }

    #[test]
    fn projection_and_reflection_commute() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for target in [ChartTarget::Sphere, ChartTarget::Hyperboloid] {
            let space = SpaceForm::euclidean_chart(target, 3, 0.5).unwrap();
            let pair = CentralProjection::for_chart(space).unwrap();
            for kind in [WallKind::Spheroid, WallKind::TwoSheetHyperboloid] {
                let (a_axis, t_max) = match (target, kind) {
                    (ChartTarget::Sphere, WallKind::Spheroid) => (1.5_f64.sqrt(), 1.5),
                    (ChartTarget::Sphere, WallKind::TwoSheetHyperboloid) => (0.3, 1.0),
                    (ChartTarget::Hyperboloid, WallKind::Spheroid) => (0.52_f64.sqrt(), 1.5),
                    (ChartTarget::Hyperboloid, WallKind::TwoSheetHyperboloid) => (0.3, 0.55),
                };
                let b_axis = match kind {
                    WallKind::Spheroid => {
                        crate::quadrics::solve_b_axis(kind, 0.5, a_axis, &space).unwrap()
                    }
                    WallKind::TwoSheetHyperboloid => {
                        crate::quadrics::solve_b_axis(kind, 0.5, a_axis, &space).unwrap()
                    }
                };
                let wall = QuadricWall::new(space, kind, a_axis, b_axis, "w").unwrap();
                let curved_wall = wall.project_wall().unwrap();
                for p in wall.sample_points(25, t_max).unwrap() {
                    let v = Vector(vec![
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        0.0,
                    ]);
                    let Ok(v_out) = reflect(&wall, &p, &v) else { continue };
                    let q = pair.project_point(&p).unwrap();
                    let pushed_in = pair.push_velocity(&p, &v).unwrap();
                    let pushed_out = pair.push_velocity(&p, &v_out).unwrap();
                    let curved_out = reflect(&curved_wall, &q, &pushed_in).unwrap();
                    let scale = curved_out
                        .0
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt()
                        .max(1.0);
                    for (a, b) in pushed_out.0.iter().zip(&curved_out.0) {
                        assert!(
                            (a - b).abs() < 1e-10 * scale,
                            "{target:?} {kind:?}: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn chart_and_curved_runs_correspond_after_time_matching() {
        let params = LagrangeParams::new(1.0, 0.8, -0.3, 0.5);
        let sphere_chart = chart(0.5);
        let state = PhaseState::new(
            Point(vec![0.3, 0.4, 0.1, -1.0]),
            Vector(vec![0.2, -0.3, 0.4, 0.0]),
        );
        let dev = correspondence_deviation(
            &sphere_chart,
            &params,
            &state,
            5.0,
            &IntegratorOptionsOpt::default(),
        )
        .unwrap();
        assert!(dev < 1e-6, "sphere-branch deviation {dev}");

        let hyp_chart = SpaceForm::euclidean_chart(ChartTarget::Hyperboloid, 3, 0.5).unwrap();
        let state = PhaseState::new(
            Point(vec![0.1, 0.25, 0.05, -1.0]),
            Vector(vec![0.1, -0.05, 0.12, 0.0]),
        );
        let dev = correspondence_deviation(
            &hyp_chart,
            &params,
            &state,
            5.0,
            &IntegratorOptionsOpt::default(),
        )
        .unwrap();
        assert!(dev < 1e-6, "hyperbolic-branch deviation {dev}");
    }

    #[test]
    fn collision_terminates_the_run() {
        let space = chart(0.0);
        let params = LagrangeParams::new(1.0, 0.0, 0.0, 0.0);
        // Head straight into the center at the origin.
        let state = PhaseState::new(
            Point(vec![1.0, 0.0, 0.0, -1.0]),
            Vector(vec![-1.0, 0.0, 0.0, 0.0]),
        );
        let stop = StopCondition { t_max: 10.0, max_reflections: None };
        let traj = simulate(&space, &params, &[], &state, &stop, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Termination::Collision);
    }

    #[test]
    fn hyperbolic_chart_exit_is_singular() {
        let space = SpaceForm::euclidean_chart(ChartTarget::Hyperboloid, 3, 0.0).unwrap();
        let state = PhaseState::new(
            Point(vec![0.0, 0.0, 0.0, -1.0]),
            Vector(vec![0.5, 0.0, 0.0, 0.0]),
        );
        let stop = StopCondition { t_max: 10.0, max_reflections: None };
        let traj =
            simulate(&space, &free_params(&space), &[], &state, &stop, &SimOptions::default())
                .unwrap();
        assert_eq!(traj.status, Termination::Singular);
    }

    #[test]
    fn renormalization_keeps_the_constraint_tight() {
        let space = SpaceForm::sphere(3, 0.5).unwrap();
        let params = LagrangeParams::new(1.0, 0.8, -0.3, 0.5);
        let pair = CentralProjection::for_curved(space).unwrap();
        let q0 = pair.project_point(&Point(vec![0.2, 0.7, 0.0, -1.0])).unwrap();
        let v0 = pair
            .push_velocity(&Point(vec![0.2, 0.7, 0.0, -1.0]), &Vector(vec![0.3, -0.1, 0.5, 0.0]))
            .unwrap();
        let state = PhaseState::new(q0, v0);
        let stop = StopCondition { t_max: 5.0, max_reflections: None };
        let traj = simulate(&space, &params, &[], &state, &stop, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Termination::TimeLimit);
        for s in &traj.samples {
            assert!(space.surface_residual(&s.q).unwrap().abs() < 1e-12);
            let pairing = space.projection_form(&s.v.0, &s.q.0);
            assert!(pairing.abs() < 1e-12);
        }
    }
}
