//! Central projection between the flat chart and the hemisphere or the
//! hyperboloid sheet, with the velocity push-forward of the associated time
//! reparametrization `d/dtau = |q|^2 d/dt`.

use crate::error::{Error, Result};
use crate::spaceform::{ChartTarget, Point, SpaceForm, SpaceKind, Vector, EQUATOR_EPS};

/// A chart/curved pair related by central projection from the origin.
///
/// The chart determines everything: its target picks the curved model, and
/// dimension and focal parameter carry over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentralProjection {
    pub chart: SpaceForm,
    pub curved: SpaceForm,
}

impl CentralProjection {
    pub fn for_chart(chart: SpaceForm) -> Result<Self> {
        let target = match chart.kind {
            SpaceKind::EuclideanChart(t) => t,
            _ => {
                return Err(Error::Invalid(
                    "central projection must start from a Euclidean chart".into(),
                ))
            }
        };
        let curved = match target {
            ChartTarget::Sphere => SpaceForm::sphere(chart.n, chart.a)?,
            ChartTarget::Hyperboloid => SpaceForm::hyperboloid(chart.n, chart.a)?,
        };
        Ok(CentralProjection { chart, curved })
    }

    /// Pair for a curved model: the chart lies on the other side.
    pub fn for_curved(curved: SpaceForm) -> Result<Self> {
        let target = match curved.kind {
            SpaceKind::Sphere => ChartTarget::Sphere,
            SpaceKind::Hyperboloid => ChartTarget::Hyperboloid,
            SpaceKind::EuclideanChart(_) => {
                return Err(Error::Invalid(
                    "for_curved expects a sphere or hyperboloid".into(),
                ))
            }
        };
        let chart = SpaceForm::euclidean_chart(target, curved.n, curved.a)?;
        Ok(CentralProjection { chart, curved })
    }

    fn check_chart_point(&self, qt: &Point) -> Result<()> {
        if qt.dim() != self.chart.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.chart.ambient_dim(),
                got: qt.dim(),
            });
        }
        let last = qt.0[self.chart.n];
        if (last + 1.0).abs() > 1e-9 {
            return Err(Error::OffSurface { residual: last + 1.0 });
        }
        Ok(())
    }

    /// Norm of a chart point under the projection form (Euclidean or
    /// Minkowski-timelike). Strictly positive on the chart slice; errors for
    /// hyperbolic points outside the Klein ball.
    fn chart_radius(&self, qt: &Point) -> Result<f64> {
        let q2 = self.chart.projection_form(&qt.0, &qt.0);
        match self.chart.metric_sign() {
            s if s > 0.0 => Ok(q2.sqrt()),
            _ => {
                if q2 >= 0.0 {
                    // |u|^2 >= 1: the point is not timelike.
                    Err(Error::OutsideKleinBall(q2 + 1.0))
                } else {
                    Ok((-q2).sqrt())
                }
            }
        }
    }

    /// `q = q_tilde / |q_tilde|`: radial projection onto the hemisphere or
    /// the lower hyperboloid sheet.
    pub fn project_point(&self, qt: &Point) -> Result<Point> {
        self.check_chart_point(qt)?;
        let r = self.chart_radius(qt)?;
        Ok(Point(qt.0.iter().map(|x| x / r).collect()))
    }

    /// Inverse of [`project_point`](Self::project_point): rescale so the last
    /// coordinate is `-1`. Fails close to the equator.
    pub fn lift_point(&self, q: &Point) -> Result<Point> {
        if q.dim() != self.curved.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.curved.ambient_dim(),
                got: q.dim(),
            });
        }
        let last = q.0[self.curved.n];
        if last >= -EQUATOR_EPS {
            return Err(Error::EquatorSingular(last));
        }
        let scale = -1.0 / last;
        Ok(Point(q.0.iter().map(|x| x * scale).collect()))
    }

    /// Push a chart velocity to the curved model:
    /// `q' = qdot |q| - (d|q|/dt) q`, the `tau`-velocity of the projected
    /// curve. The result is tangent at the projected point.
    pub fn push_velocity(&self, qt: &Point, qt_dot: &Vector) -> Result<Vector> {
        self.check_chart_point(qt)?;
        if qt_dot.dim() != self.chart.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.chart.ambient_dim(),
                got: qt_dot.dim(),
            });
        }
        let r = self.chart_radius(qt)?;
        // d|q|/dt; the Minkowski-timelike radius differentiates with a flip.
        let pair = self.chart.projection_form(&qt.0, &qt_dot.0);
        let rdot = self.chart.metric_sign() * pair / r;
        Ok(Vector(
            qt.0.iter()
                .zip(&qt_dot.0)
                .map(|(q, qd)| qd * r - rdot * q)
                .collect(),
        ))
    }

    /// Inverse of [`push_velocity`](Self::push_velocity): recover the chart
    /// `t`-velocity from a tangent `tau`-velocity on the curved model.
    /// In coordinates `qdot = -q_{n+1} q' + q'_{n+1} q`, the same expression
    /// for both targets.
    pub fn pull_velocity(&self, q: &Point, qp: &Vector) -> Result<Vector> {
        if q.dim() != self.curved.ambient_dim() || qp.dim() != self.curved.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.curved.ambient_dim(),
                got: q.dim().max(qp.dim()),
            });
        }
        let last = q.0[self.curved.n];
        if last >= -EQUATOR_EPS {
            return Err(Error::EquatorSingular(last));
        }
        let vlast = qp.0[self.curved.n];
        Ok(Vector(
            q.0.iter()
                .zip(&qp.0)
                .map(|(qi, vi)| -last * vi + vlast * qi)
                .collect(),
        ))
    }

    /// `dt/dtau = |q_tilde|^2`, the time-change factor at a chart point.
    pub fn time_rescale_factor(&self, qt: &Point) -> Result<f64> {
        self.check_chart_point(qt)?;
        let r = self.chart_radius(qt)?;
        Ok(r * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sphere_pair() -> CentralProjection {
        CentralProjection::for_chart(
            SpaceForm::euclidean_chart(ChartTarget::Sphere, 3, 0.5).unwrap(),
        )
        .unwrap()
    }

    fn hyperbolic_pair() -> CentralProjection {
        CentralProjection::for_chart(
            SpaceForm::euclidean_chart(ChartTarget::Hyperboloid, 3, 0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn pole_is_a_fixed_point() {
        let pole = Point(vec![0.0, 0.0, 0.0, -1.0]);
        for pair in [sphere_pair(), hyperbolic_pair()] {
            assert_eq!(pair.project_point(&pole).unwrap(), pole);
            assert_eq!(pair.lift_point(&pole).unwrap(), pole);
        }
    }

    #[test]
    fn sphere_projection_normalizes() {
        let pair = sphere_pair();
        let q = pair.project_point(&Point(vec![1.0, 0.0, 0.0, -1.0])).unwrap();
        let r = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(q.0[0], r, epsilon = 1e-15);
        assert_abs_diff_eq!(q.0[3], -r, epsilon = 1e-15);
        let back = pair.lift_point(&q).unwrap();
        assert_abs_diff_eq!(back.0[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hyperbolic_projection_lands_on_the_sheet() {
        let pair = hyperbolic_pair();
        let q = pair.project_point(&Point(vec![0.6, 0.0, 0.0, -1.0])).unwrap();
        assert_abs_diff_eq!(q.0[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q.0[3], -1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pair.curved.surface_residual(&q).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn klein_ball_boundary_is_rejected() {
        let pair = hyperbolic_pair();
        assert!(matches!(
            pair.project_point(&Point(vec![1.0, 0.3, 0.0, -1.0])),
            Err(Error::OutsideKleinBall(_))
        ));
    }

    #[test]
    fn equator_is_rejected_on_lift() {
        let pair = sphere_pair();
        assert!(matches!(
            pair.lift_point(&Point(vec![1.0, 0.0, 0.0, 0.0])),
            Err(Error::EquatorSingular(_))
        ));
    }

    #[test]
    fn push_is_identity_at_the_pole() {
        for pair in [sphere_pair(), hyperbolic_pair()] {
            let v = pair
                .push_velocity(
                    &Point(vec![0.0, 0.0, 0.0, -1.0]),
                    &Vector(vec![1.0, 0.0, 0.0, 0.0]),
                )
                .unwrap();
            assert_eq!(v.0, vec![1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn radial_directions_are_annihilated() {
        for pair in [sphere_pair(), hyperbolic_pair()] {
            let qt = Point(vec![0.4, 0.2, 0.1, -1.0]);
            let radial = Vector(qt.0.iter().map(|x| 0.7 * x).collect());
            let v = pair.push_velocity(&qt, &radial).unwrap();
            for x in &v.0 {
                assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn time_rescale_examples() {
        let pair = sphere_pair();
        assert_eq!(
            pair.time_rescale_factor(&Point(vec![0.0, 0.0, 0.0, -1.0])).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            pair.time_rescale_factor(&Point(vec![1.0, 0.0, 0.0, -1.0])).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        let hyp = hyperbolic_pair();
        assert_abs_diff_eq!(
            hyp.time_rescale_factor(&Point(vec![0.6, 0.0, 0.0, -1.0])).unwrap(),
            0.64,
            epsilon = 1e-15
        );
    }

    fn chart_state(dir: &[f64], vel: &[f64]) -> (Point, Vector) {
        let mut q = dir.to_vec();
        q.push(-1.0);
        let mut v = vel.to_vec();
        v.push(0.0);
        (Point(q), Vector(v))
    }

    proptest! {
        #[test]
        fn lift_project_round_trip(
            dir in proptest::collection::vec(-2.0_f64..2.0, 3),
            hyperbolic in proptest::bool::ANY,
        ) {
            let (pair, dir) = if hyperbolic {
                let n: f64 = dir.iter().map(|x| x * x).sum();
                prop_assume!(n < 0.9);
                (hyperbolic_pair(), dir)
            } else {
                (sphere_pair(), dir)
            };
            let (qt, _) = chart_state(&dir, &[0.0; 3]);
            let q = pair.project_point(&qt).unwrap();
            prop_assert!(pair.curved.surface_residual(&q).unwrap().abs() < 1e-12);
            let back = pair.lift_point(&q).unwrap();
            for (x, y) in back.0.iter().zip(&qt.0) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let there = pair.project_point(&back).unwrap();
            for (x, y) in there.0.iter().zip(&q.0) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn push_then_pull_returns_the_chart_velocity(
            dir in proptest::collection::vec(-2.0_f64..2.0, 3),
            vel in proptest::collection::vec(-2.0_f64..2.0, 3),
            hyperbolic in proptest::bool::ANY,
        ) {
            let (pair, dir) = if hyperbolic {
                let n: f64 = dir.iter().map(|x| x * x).sum();
                prop_assume!(n < 0.9);
                (hyperbolic_pair(), dir)
            } else {
                (sphere_pair(), dir)
            };
            let (qt, vt) = chart_state(&dir, &vel);
            let q = pair.project_point(&qt).unwrap();
            let vp = pair.push_velocity(&qt, &vt).unwrap();
            // Tangency of the pushed velocity.
            let pairing = pair.curved.projection_form(&vp.0, &q.0);
            prop_assert!(pairing.abs() < 1e-12 * (1.0 + pair.curved.projection_form(&vp.0, &vp.0).abs()));
            let back = pair.pull_velocity(&q, &vp).unwrap();
            for (x, y) in back.0.iter().zip(&vt.0) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn pull_then_push_returns_the_curved_velocity(
            dir in proptest::collection::vec(-1.5_f64..1.5, 3),
            vel in proptest::collection::vec(-2.0_f64..2.0, 4),
        ) {
            let pair = sphere_pair();
            let (qt, _) = chart_state(&dir, &[0.0; 3]);
            let q = pair.project_point(&qt).unwrap();
            let vp = pair.curved.tangent_project(&q, &Vector(vel)).unwrap();
            let vt = pair.pull_velocity(&q, &vp).unwrap();
            let again = pair.push_velocity(&qt, &vt).unwrap();
            for (x, y) in again.0.iter().zip(&vp.0) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
