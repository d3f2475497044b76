//! Confocal quadric reflection walls: spheroids and circular two-sheeted
//! hyperboloids whose foci are the Kepler centers, in the chart and on the
//! curved models.
//!
//! Chart walls are the affine quadrics `q1^2/A^2 +- sum q_i^2/B^2 = 1`;
//! curved walls are the intersections of the homogeneous cone
//! `q1^2/A^2 +- sum q_i^2/B^2 - q_{n+1}^2 = 0` with the sphere or the
//! hyperboloid sheet — exactly the central projections of the chart walls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::CentralProjection;
use crate::spaceform::{Point, SpaceForm, SpaceKind, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallKind {
    Spheroid,
    TwoSheetHyperboloid,
}

/// Which sheet of a two-sheeted hyperboloid acts as a wall; spheroids ignore
/// the field. Selection is by the sign of the first coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sheet {
    Positive,
    Negative,
    #[default]
    Both,
}

/// Axis-aligned coordinate window restricting a wall to an open subset: a
/// crossing whose hit point falls outside the window is ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordWindow {
    /// 1-based ambient coordinate index.
    pub coord: usize,
    pub min: f64,
    pub max: f64,
}

impl CoordWindow {
    pub fn admits(&self, q: &Point) -> bool {
        let i = self.coord - 1;
        i < q.dim() && q.0[i] >= self.min && q.0[i] <= self.max
    }
}

/// A confocal quadric reflection wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadricWall {
    pub geometry: SpaceForm,
    pub kind: WallKind,
    /// Semi-axis along the focal axis.
    pub a_axis: f64,
    /// Transverse semi-axis.
    pub b_axis: f64,
    #[serde(default)]
    pub sheet: Sheet,
    #[serde(default)]
    pub window: Option<CoordWindow>,
    pub id: String,
}

/// Focal parameter of the wall `q1^2/A^2 +- sum/B^2 = 1` in the geometry's
/// chart metric: the foci sit at `(+-a, 0, .., -1)`.
///
/// With `s = +-1` the metric sign, the relations are
/// `a^2 = (A^2 - B^2)/(1 + s B^2)` for a spheroid and
/// `a^2 = (A^2 + B^2)/(1 - s B^2)` for a two-sheeted hyperboloid.
pub fn focal_parameter(kind: WallKind, a_axis: f64, b_axis: f64, space: &SpaceForm) -> Result<f64> {
    if !(a_axis > 0.0 && b_axis > 0.0) {
        return Err(Error::NoFocalParameter { a_axis, b_axis });
    }
    let s = space.metric_sign();
    let a2 = match kind {
        WallKind::Spheroid => {
            (a_axis * a_axis - b_axis * b_axis) / (1.0 + s * b_axis * b_axis)
        }
        WallKind::TwoSheetHyperboloid => {
            (a_axis * a_axis + b_axis * b_axis) / (1.0 - s * b_axis * b_axis)
        }
    };
    if !a2.is_finite() || a2 < 0.0 {
        return Err(Error::NoFocalParameter { a_axis, b_axis });
    }
    if s < 0.0 && a2 >= 1.0 {
        return Err(Error::FocalParameterTooLarge(a2.sqrt()));
    }
    Ok(a2.sqrt())
}

/// Solve the focal relation for the transverse semi-axis given `(kind, a, A)`.
pub fn solve_b_axis(kind: WallKind, a: f64, a_axis: f64, space: &SpaceForm) -> Result<f64> {
    let s = space.metric_sign();
    let w = 1.0 + s * a * a;
    let b2 = match kind {
        WallKind::Spheroid => (a_axis * a_axis - a * a) / w,
        WallKind::TwoSheetHyperboloid => (a * a - a_axis * a_axis) / w,
    };
    if !(b2 > 0.0) {
        return Err(Error::NoFocalParameter { a_axis, b_axis: f64::NAN });
    }
    Ok(b2.sqrt())
}

impl QuadricWall {
    pub fn new(
        geometry: SpaceForm,
        kind: WallKind,
        a_axis: f64,
        b_axis: f64,
        id: impl Into<String>,
    ) -> Result<Self> {
        let wall = QuadricWall {
            geometry,
            kind,
            a_axis,
            b_axis,
            sheet: Sheet::Both,
            window: None,
            id: id.into(),
        };
        wall.focal_parameter()?;
        Ok(wall)
    }

    pub fn with_sheet(mut self, sheet: Sheet) -> Self {
        self.sheet = sheet;
        self
    }

    pub fn focal_parameter(&self) -> Result<f64> {
        focal_parameter(self.kind, self.a_axis, self.b_axis, &self.geometry)
    }

    /// The two foci in this wall's geometry.
    pub fn foci(&self) -> Result<[Point; 2]> {
        let a = self.focal_parameter()?;
        let dim = self.geometry.ambient_dim();
        let mk = |x: f64| {
            let mut c = vec![0.0; dim];
            c[0] = x;
            c[dim - 1] = -1.0;
            Point(c)
        };
        match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => Ok([mk(a), mk(-a)]),
            _ => {
                let pair = CentralProjection::for_curved(self.geometry)?;
                Ok([
                    pair.project_point(&mk(a))?,
                    pair.project_point(&mk(-a))?,
                ])
            }
        }
    }

    /// Signed implicit value; zero on the wall, negative on the side of the
    /// billiard domain (the side containing the centers).
    pub fn implicit_value(&self, q: &Point) -> f64 {
        self.implicit_raw(&q.0)
    }

    pub(crate) fn implicit_raw(&self, q: &[f64]) -> f64 {
        let n = self.geometry.n;
        let a2 = self.a_axis * self.a_axis;
        let b2 = self.b_axis * self.b_axis;
        let kappa = match self.kind {
            WallKind::Spheroid => 1.0,
            WallKind::TwoSheetHyperboloid => -1.0,
        };
        let mut transverse = 0.0;
        for qi in &q[1..n] {
            transverse += qi * qi;
        }
        match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => {
                let v = q[0] * q[0] / a2 + kappa * transverse / b2 - 1.0;
                match self.kind {
                    WallKind::Spheroid => v,
                    // Between the sheets the value is negative.
                    WallKind::TwoSheetHyperboloid => v,
                }
            }
            _ => q[0] * q[0] / a2 + kappa * transverse / b2 - q[n] * q[n],
        }
    }

    /// Whether a point on the quadric belongs to the selected sheet and the
    /// optional coordinate window.
    pub fn admits_hit(&self, q: &Point) -> bool {
        let on_sheet = match (self.kind, self.sheet) {
            (WallKind::Spheroid, _) | (_, Sheet::Both) => true,
            (_, Sheet::Positive) => q.0[0] > 0.0,
            (_, Sheet::Negative) => q.0[0] < 0.0,
        };
        on_sheet && self.window.map_or(true, |w| w.admits(q))
    }

    /// Ambient coordinate gradient of the implicit function (chart) or the
    /// cone form (curved).
    pub(crate) fn implicit_gradient_raw(&self, q: &[f64]) -> Vec<f64> {
        let n = self.geometry.n;
        let a2 = self.a_axis * self.a_axis;
        let b2 = self.b_axis * self.b_axis;
        let kappa = match self.kind {
            WallKind::Spheroid => 1.0,
            WallKind::TwoSheetHyperboloid => -1.0,
        };
        let mut g = vec![0.0; n + 1];
        g[0] = 2.0 * q[0] / a2;
        for i in 1..n {
            g[i] = 2.0 * kappa * q[i] / b2;
        }
        if self.geometry.is_curved() {
            g[n] = -2.0 * q[n];
        }
        g
    }

    /// Metric normal of the wall at `q`: the chart-metric gradient in the
    /// chart, and the ambient-form gradient of the cone projected onto the
    /// tangent space on the curved models.
    pub fn normal(&self, q: &Point) -> Result<Vector> {
        let grad = self.implicit_gradient_raw(&q.0);
        let normal = match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => {
                let mut g = grad;
                g[0] *= self.geometry.first_axis_weight();
                g
            }
            SpaceKind::Sphere => {
                self.geometry.tangent_project_raw(&q.0, &grad)
            }
            SpaceKind::Hyperboloid => {
                // Raise the index with the Minkowski form: flip the last slot.
                let mut g = grad;
                let n = self.geometry.n;
                g[n] = -g[n];
                self.geometry.tangent_project_raw(&q.0, &g)
            }
        };
        let mag = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
        if mag < 1e-14 {
            return Err(Error::DegenerateNormal);
        }
        Ok(Vector(normal))
    }

    /// Transport the wall across the central projection, keeping `(kind, A, B)`.
    pub fn project_wall(&self) -> Result<QuadricWall> {
        let geometry = match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => CentralProjection::for_chart(self.geometry)?.curved,
            _ => CentralProjection::for_curved(self.geometry)?.chart,
        };
        Ok(QuadricWall {
            geometry,
            ..self.clone()
        })
    }

    /// Constant of the focal definition (sum of distances for a spheroid,
    /// absolute difference for a hyperboloid), computed at the axis vertex.
    pub fn focal_constant(&self) -> Result<f64> {
        let vertex = self.vertex()?;
        let [f1, f2] = self.foci()?;
        let (d1, d2) = (self.distance(&vertex, &f1)?, self.distance(&vertex, &f2)?);
        Ok(match self.kind {
            WallKind::Spheroid => d1 + d2,
            WallKind::TwoSheetHyperboloid => (d1 - d2).abs(),
        })
    }

    fn vertex(&self) -> Result<Point> {
        let dim = self.geometry.ambient_dim();
        let mut c = vec![0.0; dim];
        c[0] = self.a_axis;
        c[dim - 1] = -1.0;
        let chart_vertex = Point(c);
        match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => Ok(chart_vertex),
            _ => CentralProjection::for_curved(self.geometry)?.project_point(&chart_vertex),
        }
    }

    /// Distance in the wall's own geometry: the chart norm of the difference
    /// in the chart, the geodesic center angle on the curved models.
    fn distance(&self, p: &Point, q: &Point) -> Result<f64> {
        match self.geometry.kind {
            SpaceKind::EuclideanChart(_) => {
                self.geometry.norm(&crate::spaceform::displacement(p, q))
            }
            _ => self.geometry.center_angle(p, q),
        }
    }

    /// Deviation of `q` from the focal sum/difference definition; near zero
    /// for points on the wall.
    pub fn focal_distance_residual(&self, q: &Point) -> Result<f64> {
        let [f1, f2] = self.foci()?;
        let (d1, d2) = (self.distance(q, &f1)?, self.distance(q, &f2)?);
        let value = match self.kind {
            WallKind::Spheroid => d1 + d2,
            WallKind::TwoSheetHyperboloid => (d1 - d2).abs(),
        };
        Ok(value - self.focal_constant()?)
    }

    /// Sample `count` points on the wall, spread deterministically over the
    /// symmetry angles; for curved geometries the chart samples are
    /// projected. Two-sheeted walls stay within the reach `t <= t_max` of
    /// the vertex parameter (needed to remain inside the Klein ball).
    pub fn sample_points(&self, count: usize, t_max: f64) -> Result<Vec<Point>> {
        let n = self.geometry.n;
        let chart_like = matches!(self.geometry.kind, SpaceKind::EuclideanChart(_));
        let pair = if chart_like {
            None
        } else {
            Some(CentralProjection::for_curved(self.geometry)?)
        };
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let u = (k as f64 + 0.5) / count as f64;
            let (x, r) = match self.kind {
                WallKind::Spheroid => {
                    let t = u * std::f64::consts::TAU;
                    (self.a_axis * t.cos(), self.b_axis * t.sin())
                }
                WallKind::TwoSheetHyperboloid => {
                    let t = (2.0 * u - 1.0) * t_max;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    (sign * self.a_axis * t.cosh(), self.b_axis * t.sinh())
                }
            };
            // Spread the transverse radius over the coordinates 2..n.
            let mut c = vec![0.0; n + 1];
            c[0] = x;
            let phi = 2.399963229728653 * k as f64; // golden-angle spread
            if n == 2 {
                c[1] = r;
            } else {
                c[1] = r * phi.cos();
                c[2] = r * phi.sin();
            }
            c[n] = -1.0;
            let p = Point(c);
            match &pair {
                None => out.push(p),
                Some(pair) => out.push(pair.project_point(&p)?),
            }
        }
        Ok(out)
    }
}

/// Validate that every wall of a combination shares the geometry's focal
/// parameter; confocality is what the conservation theorems require.
pub fn validate_confocal(space: &SpaceForm, walls: &[QuadricWall]) -> Result<()> {
    for wall in walls {
        if wall.geometry != *space {
            return Err(Error::Invalid(format!(
                "wall `{}` lives in {:?}, expected {:?}",
                wall.id, wall.geometry, space
            )));
        }
        let a = wall.focal_parameter()?;
        if (a - space.a.abs()).abs() > 1e-9 {
            return Err(Error::FocusMismatch {
                expected: space.a,
                got: a,
                wall: wall.id.clone(),
            });
        }
    }
    Ok(())
}
