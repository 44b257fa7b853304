//! Adaptive Dormand-Prince 5(4) with first-same-as-last stages.
//!
//! Fields are autonomous, so the stage times are not needed.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Abort once the leading `center.len()` state components leave this ball.
    pub escape: Option<(DVector<f64>, f64)>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, escape: None, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: Vec<f64>,
    pub steps: usize,
    /// Sum over accepted steps of the max-norm local error estimate.
    pub est_error: f64,
}

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

// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn rms_scaled(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, b)| (a / b).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

/// Integrates `dy/ds = rhs(y)` from `s = 0` to `s = duration` (either sign).
pub fn integrate<F>(mut rhs: F, y0: &[f64], duration: f64, opts: &IntegratorOptions) -> Result<Solution>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    if duration == 0.0 || dim == 0 {
        return Ok(Solution { state: y, steps: 0, est_error: 0.0 });
    }
    let dir = duration.signum();
    let span = duration.abs();

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut scale = vec![0.0; dim];

    rhs(&y, &mut k1);

    // initial step size
    for i in 0..dim {
        scale[i] = opts.atol + opts.rtol * y[i].abs();
    }
    let d0 = rms_scaled(&y, &scale);
    let d1 = rms_scaled(&k1, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for i in 0..dim {
        tmp[i] = y[i] + dir * h0 * k1[i];
    }
    rhs(&tmp, &mut k2);
    for i in 0..dim {
        err[i] = k2[i] - k1[i];
    }
    let d2 = rms_scaled(&err, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    let mut h = (100.0 * h0).min(h1).min(span);

    let mut s = 0.0;
    let mut steps = 0usize;
    let mut attempts = 0usize;
    let mut est_error = 0.0;
    let mut last_rejected = false;

    while s < span {
        if attempts >= opts.max_steps || h < 1e-13 * span {
            return Err(Error::StepUnderflow { at: dir * s });
        }
        attempts += 1;
        let last = s + h >= span;
        if last {
            h = span - s;
        }
        let hs = dir * h;

        for i in 0..dim {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(&tmp, &mut k4);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(&tmp, &mut k5);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(&tmp, &mut k6);
        for i in 0..dim {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(&y_new, &mut k7);
        for i in 0..dim {
            err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            scale[i] = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        }
        let e = rms_scaled(&err, &scale);
        if !e.is_finite() {
            h *= 0.2;
            last_rejected = true;
            continue;
        }
        if e <= 1.0 {
            s = if last { span } else { s + h };
            steps += 1;
            est_error += err.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if let Some((center, radius)) = &opts.escape {
                let n = center.len();
                let d = y[..n].iter().zip(center.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if d > *radius {
                    return Err(Error::DomainEscape { at: dir * s, distance: d, limit: *radius });
                }
            }
            let mut factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
        } else {
            h *= (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
            last_rejected = true;
        }
    }
    Ok(Solution { state: y, steps, est_error })
}
