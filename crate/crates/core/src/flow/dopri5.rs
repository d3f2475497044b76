//! Dormand-Prince 5(4) step kernel with the classical 4th-order continuous
//! extension, as in Hairer-Norsett-Wanner's `dopri5`.

use crate::error::Result;

// Butcher tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

// e = b5 - b4, the embedded error weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One attempted step: the 5th-order solution, the scaled error norm, and
/// the FSAL slope at the new point.
pub struct StepAttempt {
    pub y_new: Vec<f64>,
    pub err: f64,
    pub k_new: Vec<f64>,
    pub dense: DenseSegment,
}

/// Continuous 4th-order interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Clone, Debug)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Evaluate the interpolant at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let theta = (t - self.t0) / self.h;
        self.eval_theta(theta)
    }

    pub fn eval_theta(&self, theta: f64) -> Vec<f64> {
        let th1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        (0..r1.len())
            .map(|i| {
                r1[i] + theta * (r2[i] + th1 * (r3[i] + theta * (r4[i] + th1 * r5[i])))
            })
            .collect()
    }
}

/// Attempt one DOPRI5 step of size `h` from `(t, y)` with the slope `k1`
/// already evaluated there. `rhs` may fail (collision, singular set); the
/// failure is propagated for the driver to decide on.
pub fn try_step<F>(rhs: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64, scale: &dyn Fn(usize, f64, f64) -> f64) -> Result<StepAttempt>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut yt = vec![0.0; n];

    for i in 0..n {
        yt[i] = y[i] + h * A21 * k1[i];
    }
    rhs(t + C2 * h, &yt, &mut k2)?;
    for i in 0..n {
        yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    rhs(t + C3 * h, &yt, &mut k3)?;
    for i in 0..n {
        yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    rhs(t + C4 * h, &yt, &mut k4)?;
    for i in 0..n {
        yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    rhs(t + C5 * h, &yt, &mut k5)?;
    for i in 0..n {
        yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    rhs(t + h, &yt, &mut k6)?;
    let mut y_new = vec![0.0; n];
    for i in 0..n {
        y_new[i] =
            y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    rhs(t + h, &y_new, &mut k7)?;

    let mut err_sq = 0.0;
    for i in 0..n {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = scale(i, y[i], y_new[i]);
        let r = e / sc;
        err_sq += r * r;
    }
    let err = (err_sq / n as f64).sqrt();

    // Continuous extension.
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    let mut r4 = vec![0.0; n];
    let mut r5 = vec![0.0; n];
    for i in 0..n {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        r1[i] = y[i];
        r2[i] = ydiff;
        r3[i] = bspl;
        r4[i] = ydiff - h * k7[i] - bspl;
        r5[i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }

    Ok(StepAttempt {
        y_new,
        err,
        k_new: k7,
        dense: DenseSegment {
            t0: t,
            h,
            rcont: [r1, r2, r3, r4, r5],
        },
    })
}

/// Initial step-size guess in the spirit of Hairer's `hinit`.
pub fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    k1: &[f64],
    rtol: f64,
    atol: f64,
    h_max: f64,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let sc = |yi: f64| atol + rtol * yi.abs();
    let d0 = (y0.iter().map(|&v| (v / sc(v)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (k1
        .iter()
        .zip(y0)
        .map(|(&f, &v)| (f / sc(v)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(h_max);
    // One explicit Euler probe to estimate the second derivative.
    let mut y1 = vec![0.0; n];
    for i in 0..n {
        y1[i] = y0[i] + h0 * k1[i];
    }
    let mut k2 = vec![0.0; n];
    if rhs(t0 + h0, &y1, &mut k2).is_err() {
        return Ok((h0 * 1e-2).max(1e-10));
    }
    let d2 = (k2
        .iter()
        .zip(k1)
        .zip(y0)
        .map(|((&f2, &f1), &v)| (((f2 - f1) / h0) / sc(v)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    Ok(h1.min(100.0 * h0).min(h_max))
}

/// Standard step-size controller factors.
pub fn next_step_size(h: f64, err: f64, rejected: bool) -> f64 {
    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    let fac_max = if rejected { 1.0 } else { 5.0 };
    let fac = if err == 0.0 {
        fac_max
    } else {
        (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, fac_max)
    };
    h * fac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_on_a_linear_flow() {
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = 0.0;
            Ok(())
        };
        let y = [1.0, 2.0];
        let mut k1 = [0.0; 2];
        rhs(0.0, &y, &mut k1).unwrap();
        let scale = |_i: usize, a: f64, b: f64| 1e-12 + 1e-10 * a.abs().max(b.abs());
        let step = try_step(&mut rhs, 0.0, &y, &k1, 0.5, &scale).unwrap();
        assert_abs_diff_eq!(step.y_new[0], 2.0, epsilon = 1e-15);
        assert_eq!(step.err, 0.0);
        // Dense output is exact for a straight line.
        let mid = step.dense.eval(0.25);
        assert_abs_diff_eq!(mid[0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn fifth_order_on_the_exponential() {
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0];
            Ok(())
        };
        let y = [1.0];
        let mut k1 = [0.0];
        rhs(0.0, &y, &mut k1).unwrap();
        let scale = |_i: usize, _a: f64, _b: f64| 1.0;
        let h = 0.1;
        let step = try_step(&mut rhs, 0.0, &y, &k1, h, &scale).unwrap();
        assert_abs_diff_eq!(step.y_new[0], h.exp(), epsilon = 1e-8);
        // Interpolant endpoints match.
        assert_abs_diff_eq!(step.dense.eval(0.0)[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step.dense.eval(h)[0], step.y_new[0], epsilon = 1e-15);
        // Midpoint of the interpolant is 4th-order accurate.
        assert_abs_diff_eq!(step.dense.eval(0.05)[0], (0.05_f64).exp(), epsilon = 1e-7);
    }
}
