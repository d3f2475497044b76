//! The three ambient geometries and their bilinear forms.
//!
//! Every point and vector is stored in ambient coordinates of length `n + 1`,
//! for the flat chart as well as for the curved models. The chart is the
//! affine slice `{ q_{n+1} = -1 }`; the sphere is the unit sphere of
//! `R^{n+1}`; hyperbolic space is the lower sheet (`q_{n+1} < 0`) of the unit
//! hyperboloid in Minkowski space `R^{n,1}`. Storing everything ambiently
//! makes the central projection a pure coordinate map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the "point lies on the surface" checks.
pub const SURFACE_TOL: f64 = 1e-10;

/// Cutoff below which the last coordinate counts as "on the equator".
pub const EQUATOR_EPS: f64 = 1e-12;

/// A position in ambient coordinates (length `n + 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(pub Vec<f64>);

/// A displacement or velocity in ambient coordinates (length `n + 1`).
///
/// At a point of a curved space a velocity must be tangent there; the flat
/// chart keeps the last coordinate of every vector at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

impl Point {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Vector) -> Vector {
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }
}

/// `p - q` as a displacement vector.
pub fn displacement(p: &Point, q: &Point) -> Vector {
    Vector(p.0.iter().zip(&q.0).map(|(a, b)| a - b).collect())
}

/// `p + v`.
pub fn translate(p: &Point, v: &Vector) -> Point {
    Point(p.0.iter().zip(&v.0).map(|(a, b)| a + b).collect())
}

/// Which curved model a flat chart corresponds to under central projection.
///
/// The target fixes the sign in the chart norm: `1 + a^2` for the sphere
/// branch, `1 - a^2` for the hyperbolic branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartTarget {
    Sphere,
    Hyperboloid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Flat affine slice `{ q_{n+1} = -1 }` with the anisotropic norm whose
    /// first coordinate is divided by `1 + a^2` (sphere target) or
    /// `1 - a^2` (hyperboloid target).
    EuclideanChart(ChartTarget),
    Sphere,
    Hyperboloid,
}

/// An ambient geometry: which model, intrinsic dimension `n >= 2`, and the
/// focal parameter `a` that pins the Kepler centers and the chart norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceForm {
    pub kind: SpaceKind,
    pub n: usize,
    pub a: f64,
}

impl SpaceForm {
    pub fn euclidean_chart(target: ChartTarget, n: usize, a: f64) -> Result<Self> {
        Self::validated(SpaceKind::EuclideanChart(target), n, a)
    }

    pub fn sphere(n: usize, a: f64) -> Result<Self> {
        Self::validated(SpaceKind::Sphere, n, a)
    }

    pub fn hyperboloid(n: usize, a: f64) -> Result<Self> {
        Self::validated(SpaceKind::Hyperboloid, n, a)
    }

    fn validated(kind: SpaceKind, n: usize, a: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid(format!("dimension n must be >= 2, got {n}")));
        }
        if !a.is_finite() {
            return Err(Error::Invalid(format!("focal parameter must be finite, got {a}")));
        }
        let hyperbolic = matches!(
            kind,
            SpaceKind::Hyperboloid | SpaceKind::EuclideanChart(ChartTarget::Hyperboloid)
        );
        if hyperbolic && a * a >= 1.0 {
            return Err(Error::FocalParameterTooLarge(a));
        }
        Ok(SpaceForm { kind, n, a })
    }

    pub fn ambient_dim(&self) -> usize {
        self.n + 1
    }

    pub fn is_chart(&self) -> bool {
        matches!(self.kind, SpaceKind::EuclideanChart(_))
    }

    pub fn is_curved(&self) -> bool {
        !self.is_chart()
    }

    /// `+1` on the sphere branch, `-1` on the hyperbolic branch. The chart
    /// norm divides its first coordinate by `1 + sign * a^2`.
    pub fn metric_sign(&self) -> f64 {
        match self.kind {
            SpaceKind::Sphere | SpaceKind::EuclideanChart(ChartTarget::Sphere) => 1.0,
            SpaceKind::Hyperboloid | SpaceKind::EuclideanChart(ChartTarget::Hyperboloid) => -1.0,
        }
    }

    /// `1 + sign * a^2`, the denominator of the first chart coordinate.
    pub fn first_axis_weight(&self) -> f64 {
        1.0 + self.metric_sign() * self.a * self.a
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// The kinetic bilinear form of the geometry.
    ///
    /// Chart: `u_1 v_1 / (1 +- a^2) + sum_{i=2}^n u_i v_i` (the last ambient
    /// coordinate does not enter). Sphere: the ambient dot product.
    /// Hyperboloid: the Minkowski form.
    pub fn inner(&self, u: &Vector, v: &Vector) -> Result<f64> {
        self.check_dim(u.dim())?;
        self.check_dim(v.dim())?;
        Ok(self.inner_raw(&u.0, &v.0))
    }

    pub(crate) fn inner_raw(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut s = u[0] * v[0] / self.first_axis_weight();
                for i in 1..self.n {
                    s += u[i] * v[i];
                }
                s
            }
            SpaceKind::Sphere => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            SpaceKind::Hyperboloid => minkowski_raw(u, v),
        }
    }

    /// Metric norm; `norm^2 = |inner(v, v)|` so that timelike Minkowski
    /// vectors (positions on the hyperboloid) also get a nonnegative value.
    pub fn norm(&self, v: &Vector) -> Result<f64> {
        let q = self.inner(v, v)?;
        Ok(q.abs().sqrt())
    }

    /// The ambient bilinear form the central projection is built from:
    /// plain dot product on the sphere branch, Minkowski on the hyperbolic
    /// branch. Unlike [`SpaceForm::inner`] this always runs over all
    /// `n + 1` coordinates with unit weights.
    pub fn projection_form(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.metric_sign() {
            s if s > 0.0 => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            _ => minkowski_raw(u, v),
        }
    }

    /// Residual of the defining equation of the surface at `q`; zero on the
    /// surface. The chart residual is `q_{n+1} + 1`.
    pub fn surface_residual(&self, q: &Point) -> Result<f64> {
        self.check_dim(q.dim())?;
        let c = &q.0;
        Ok(match self.kind {
            SpaceKind::EuclideanChart(_) => c[self.n] + 1.0,
            SpaceKind::Sphere => c.iter().map(|x| x * x).sum::<f64>() - 1.0,
            SpaceKind::Hyperboloid => minkowski_raw(c, c) + 1.0,
        })
    }

    pub fn check_on_surface(&self, q: &Point) -> Result<()> {
        let r = self.surface_residual(q)?;
        if r.abs() > SURFACE_TOL {
            return Err(Error::OffSurface { residual: r });
        }
        if self.kind == SpaceKind::Hyperboloid && q.0[self.n] >= 0.0 {
            return Err(Error::OffSurface { residual: q.0[self.n] });
        }
        Ok(())
    }

    /// Project `w` onto the tangent space at `q`.
    ///
    /// Sphere: `w - <w,q> q`. Hyperboloid: `w + <w,q>_M q` (the position is a
    /// unit timelike vector). Chart: zero the last ambient coordinate.
    pub fn tangent_project(&self, q: &Point, w: &Vector) -> Result<Vector> {
        self.check_dim(q.dim())?;
        self.check_dim(w.dim())?;
        match self.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut out = w.0.clone();
                out[self.n] = 0.0;
                Ok(Vector(out))
            }
            SpaceKind::Sphere | SpaceKind::Hyperboloid => {
                self.check_on_surface(q)?;
                Ok(Vector(self.tangent_project_raw(&q.0, &w.0)))
            }
        }
    }

    pub(crate) fn tangent_project_raw(&self, q: &[f64], w: &[f64]) -> Vec<f64> {
        match self.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut out = w.to_vec();
                out[self.n] = 0.0;
                out
            }
            SpaceKind::Sphere => {
                let c: f64 = q.iter().zip(w).map(|(a, b)| a * b).sum();
                q.iter().zip(w).map(|(qi, wi)| wi - c * qi).collect()
            }
            SpaceKind::Hyperboloid => {
                let c = minkowski_raw(q, w);
                q.iter().zip(w).map(|(qi, wi)| wi + c * qi).collect()
            }
        }
    }

    /// Central angle between two points of a curved model: `cos t = <q, Z>`
    /// on the sphere, `cosh t = -<q, Z>_M` on the hyperboloid.
    pub fn center_angle(&self, q: &Point, z: &Point) -> Result<f64> {
        self.check_dim(q.dim())?;
        self.check_dim(z.dim())?;
        match self.kind {
            SpaceKind::EuclideanChart(_) => Err(Error::Invalid(
                "center_angle is defined on the curved models only".into(),
            )),
            SpaceKind::Sphere => {
                self.check_on_surface(q)?;
                self.check_on_surface(z)?;
                let c: f64 = q.0.iter().zip(&z.0).map(|(a, b)| a * b).sum();
                if c.abs() > 1.0 + SURFACE_TOL {
                    return Err(Error::Invalid(format!(
                        "spherical cosine out of range: {c}"
                    )));
                }
                Ok(c.clamp(-1.0, 1.0).acos())
            }
            SpaceKind::Hyperboloid => {
                self.check_on_surface(q)?;
                self.check_on_surface(z)?;
                let c = -minkowski_raw(&q.0, &z.0);
                // Round-off can push the cosh just below 1 when q == z.
                Ok(c.max(1.0).acosh())
            }
        }
    }

    /// Rescale `q` back onto the surface along its ray and retangentialize
    /// `v`; the identity on the chart. Used by the integrator after every
    /// accepted step.
    pub fn renormalize(&self, q: &mut [f64], v: &mut [f64]) -> Result<()> {
        match self.kind {
            SpaceKind::EuclideanChart(_) => Ok(()),
            SpaceKind::Sphere => {
                let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < EQUATOR_EPS {
                    return Err(Error::OffSurface { residual: -1.0 });
                }
                for x in q.iter_mut() {
                    *x /= norm;
                }
                let c: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q.iter()) {
                    *vi -= c * qi;
                }
                Ok(())
            }
            SpaceKind::Hyperboloid => {
                let m = minkowski_raw(q, q);
                if m >= -EQUATOR_EPS {
                    return Err(Error::OffSurface { residual: m + 1.0 });
                }
                let norm = (-m).sqrt();
                for x in q.iter_mut() {
                    *x /= norm;
                }
                let c = minkowski_raw(q, v);
                for (vi, qi) in v.iter_mut().zip(q.iter()) {
                    *vi += c * qi;
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn minkowski_raw(u: &[f64], v: &[f64]) -> f64 {
    let last = u.len() - 1;
    let mut s = 0.0;
    for i in 0..last {
        s += u[i] * v[i];
    }
    s - u[last] * v[last]
}
