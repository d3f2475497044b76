//! Numerical Poisson brackets and Jacobian ranks.
//!
//! The canonical bracket is computed on a local intrinsic chart of the
//! configuration space: the chart coordinates themselves in the flat case,
//! the gnomonic chart for the hemisphere, and the Klein chart for the
//! hyperboloid sheet. Velocities convert to momenta with the pulled-back
//! metric `p = G(u) udot`; the bracket and the gradients are then estimated
//! by scaled central differences.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::forces::LagrangeParams;
use crate::spaceform::{Point, SpaceForm, SpaceKind, Vector, EQUATOR_EPS};

use super::{eval, FirstIntegral};

/// Relative finite-difference step, scaled per coordinate.
const FD_STEP: f64 = 1e-5;

/// Relative singular-value threshold of the numerical rank.
const RANK_TOL: f64 = 1e-8;

/// Intrinsic coordinates `(u, udot)` on the configuration space, with the
/// metric matrix needed for the momentum map.
#[derive(Clone, Copy, Debug)]
pub struct LocalChart {
    space: SpaceForm,
}

impl LocalChart {
    pub fn new(space: SpaceForm) -> Self {
        LocalChart { space }
    }

    pub fn name(&self) -> &'static str {
        match self.space.kind {
            SpaceKind::EuclideanChart(_) => "cartesian",
            SpaceKind::Sphere => "gnomonic",
            SpaceKind::Hyperboloid => "klein",
        }
    }

    pub fn dim(&self) -> usize {
        self.space.n
    }

    /// `(u, udot)` of a phase state; fails near the equator on the curved
    /// models where the central chart degenerates.
    pub fn to_coords(&self, q: &Point, v: &Vector) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.space.n;
        match self.space.kind {
            SpaceKind::EuclideanChart(_) => {
                Ok((q.0[..n].to_vec(), v.0[..n].to_vec()))
            }
            _ => {
                let last = q.0[n];
                if last >= -EQUATOR_EPS {
                    return Err(Error::EquatorSingular(last));
                }
                let u: Vec<f64> = (0..n).map(|i| -q.0[i] / last).collect();
                let udot: Vec<f64> = (0..n)
                    .map(|i| -v.0[i] / last + q.0[i] * v.0[n] / (last * last))
                    .collect();
                Ok((u, udot))
            }
        }
    }

    /// Rebuild the ambient phase state from chart coordinates.
    pub fn from_coords(&self, u: &[f64], udot: &[f64]) -> Result<(Point, Vector)> {
        let n = self.space.n;
        match self.space.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut q = u.to_vec();
                q.push(-1.0);
                let mut v = udot.to_vec();
                v.push(0.0);
                Ok((Point(q), Vector(v)))
            }
            _ => {
                let sign = self.space.metric_sign();
                let r2: f64 = u.iter().map(|x| x * x).sum();
                let s2 = 1.0 + sign * r2;
                if s2 <= 0.0 {
                    return Err(Error::OutsideKleinBall(r2));
                }
                let s = s2.sqrt();
                let mut q: Vec<f64> = u.iter().map(|x| x / s).collect();
                q.push(-1.0 / s);
                // v = sum udot_i dq/du_i with
                // dq/du_i = (e_i, 0)/s - sign u_i (u, -1)/s^3.
                let u_dot_ud: f64 = u.iter().zip(udot).map(|(a, b)| a * b).sum();
                let mut v: Vec<f64> = (0..n)
                    .map(|i| udot[i] / s - sign * u_dot_ud * u[i] / (s2 * s))
                    .collect();
                v.push(sign * u_dot_ud / (s2 * s));
                Ok((Point(q), Vector(v)))
            }
        }
    }

    /// Momentum `p = G(u) udot` of the pulled-back metric.
    pub fn momentum(&self, u: &[f64], udot: &[f64]) -> Vec<f64> {
        match self.space.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut p = udot.to_vec();
                p[0] /= self.space.first_axis_weight();
                p
            }
            _ => {
                let sign = self.space.metric_sign();
                let r2: f64 = u.iter().map(|x| x * x).sum();
                let s2 = 1.0 + sign * r2;
                let u_dot_ud: f64 = u.iter().zip(udot).map(|(a, b)| a * b).sum();
                u.iter()
                    .zip(udot)
                    .map(|(ui, udi)| udi / s2 - sign * u_dot_ud * ui / (s2 * s2))
                    .collect()
            }
        }
    }

    /// Velocity `udot = G(u)^{-1} p`; for the central charts the inverse is
    /// `s^2 (I + sign u u^T)`.
    pub fn velocity(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        match self.space.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut ud = p.to_vec();
                ud[0] *= self.space.first_axis_weight();
                ud
            }
            _ => {
                let sign = self.space.metric_sign();
                let r2: f64 = u.iter().map(|x| x * x).sum();
                let s2 = 1.0 + sign * r2;
                let u_dot_p: f64 = u.iter().zip(p).map(|(a, b)| a * b).sum();
                u.iter()
                    .zip(p)
                    .map(|(ui, pi)| s2 * (pi + sign * u_dot_p * ui))
                    .collect()
            }
        }
    }
}

fn eval_in_momentum_coords(
    chart: &LocalChart,
    space: &SpaceForm,
    params: &LagrangeParams,
    integral: &FirstIntegral,
    z: &[f64],
) -> Result<f64> {
    let n = chart.dim();
    let (u, p) = z.split_at(n);
    let udot = chart.velocity(u, p);
    let (q, v) = chart.from_coords(u, &udot)?;
    eval(space, params, integral, &q, &v)
}

fn eval_in_velocity_coords(
    chart: &LocalChart,
    space: &SpaceForm,
    params: &LagrangeParams,
    integral: &FirstIntegral,
    z: &[f64],
) -> Result<f64> {
    let n = chart.dim();
    let (u, udot) = z.split_at(n);
    let (q, v) = chart.from_coords(u, udot)?;
    eval(space, params, integral, &q, &v)
}

fn central_gradient(
    z: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; z.len()];
    let mut zp = z.to_vec();
    for i in 0..z.len() {
        let h = FD_STEP * (1.0 + z[i].abs());
        zp[i] = z[i] + h;
        let fp = f(&zp)?;
        zp[i] = z[i] - h;
        let fm = f(&zp)?;
        zp[i] = z[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Canonical Poisson bracket `{F, G}` at a state, computed numerically in
/// the geometry's local chart with `p = g(v, .)`.
pub fn poisson_bracket(
    space: &SpaceForm,
    params: &LagrangeParams,
    f: &FirstIntegral,
    g: &FirstIntegral,
    q: &Point,
    v: &Vector,
) -> Result<f64> {
    let chart = LocalChart::new(*space);
    let n = chart.dim();
    let (u, udot) = chart.to_coords(q, v)?;
    let p = chart.momentum(&u, &udot);
    let mut z = u;
    z.extend_from_slice(&p);
    let grad_f = central_gradient(&z, |z| eval_in_momentum_coords(&chart, space, params, f, z))?;
    let grad_g = central_gradient(&z, |z| eval_in_momentum_coords(&chart, space, params, g, z))?;
    let mut sum = 0.0;
    for i in 0..n {
        sum += grad_f[i] * grad_g[n + i] - grad_f[n + i] * grad_g[i];
    }
    Ok(sum)
}

/// All pairwise brackets of a family at one state, with each gradient
/// computed once. Returns `((index_f, index_g), value)` for `f < g`.
pub fn pairwise_brackets(
    space: &SpaceForm,
    params: &LagrangeParams,
    family: &[FirstIntegral],
    q: &Point,
    v: &Vector,
) -> Result<Vec<((usize, usize), f64)>> {
    let chart = LocalChart::new(*space);
    let n = chart.dim();
    let (u, udot) = chart.to_coords(q, v)?;
    let p = chart.momentum(&u, &udot);
    let mut z = u;
    z.extend_from_slice(&p);
    let mut grads = Vec::with_capacity(family.len());
    for f in family {
        grads.push(central_gradient(&z, |z| {
            eval_in_momentum_coords(&chart, space, params, f, z)
        })?);
    }
    let mut out = Vec::new();
    for a in 0..family.len() {
        for b in (a + 1)..family.len() {
            let mut sum = 0.0;
            for i in 0..n {
                sum += grads[a][i] * grads[b][n + i] - grads[a][n + i] * grads[b][i];
            }
            out.push(((a, b), sum));
        }
    }
    Ok(out)
}

/// Numerical rank of the stacked gradient matrix of the integrals in the
/// `(q, v)` chart coordinates: singular values above `1e-8` of the largest.
pub fn jacobian_rank(
    space: &SpaceForm,
    params: &LagrangeParams,
    integrals: &[FirstIntegral],
    q: &Point,
    v: &Vector,
) -> Result<usize> {
    let chart = LocalChart::new(*space);
    let (u, udot) = chart.to_coords(q, v)?;
    let mut z = u;
    z.extend_from_slice(&udot);
    let mut rows = Vec::with_capacity(integrals.len());
    for integral in integrals {
        rows.push(central_gradient(&z, |z| {
            eval_in_velocity_coords(&chart, space, params, integral, z)
        })?);
    }
    let mat = DMatrix::from_fn(rows.len(), z.len(), |r, c| rows[r][c]);
    let svd = mat.svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return Ok(0);
    }
    Ok(svd
        .singular_values
        .iter()
        .filter(|s| **s > RANK_TOL * max_sv)
        .count())
}
