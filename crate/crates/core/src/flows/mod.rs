//! Local flows `G_i(t)[x]`, the composed map `G(p)` and its inverse `H(p)`.
//!
//! `G(p) = G_1(t_1) o ... o G_m(t_m)` applies `G_m` first and `G_1` last;
//! `H(p) = G_m(-t_m) o ... o G_1(-t_1)` undoes it. Spatial Jacobians come
//! from the variational equation `dJ/ds = Dg(y) J` integrated alongside the
//! trajectory and are chained stage by stage.

mod rk;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{Generator, VectorFieldSystem};
use crate::sampling::{ball_points, box_points, derive_seed};

pub use rk::{integrate, IntegratorOptions, Solution};

/// Ratio of the escape radius to `3 gamma`.
pub const ESCAPE_MARGIN: f64 = 1.1;

/// Result of integrating a flow map at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub value: DVector<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    pub steps_taken: usize,
    pub est_error: f64,
}

impl FlowPoint {
    fn identity(x: &DVector<f64>, want_jacobian: bool) -> Self {
        let n = x.len();
        Self {
            value: x.clone(),
            jacobian: want_jacobian.then(|| DMatrix::identity(n, n)),
            steps_taken: 0,
            est_error: 0.0,
        }
    }

    /// Post-composes `self` with another stage evaluated at `self.value`.
    fn then(self, next: FlowPoint) -> FlowPoint {
        let jacobian = match (next.jacobian, self.jacobian) {
            (Some(a), Some(b)) => Some(a * b),
            _ => None,
        };
        FlowPoint {
            value: next.value,
            jacobian,
            steps_taken: self.steps_taken + next.steps_taken,
            est_error: self.est_error + next.est_error,
        }
    }
}

pub(crate) fn options_for(sys: &VectorFieldSystem) -> IntegratorOptions {
    IntegratorOptions {
        escape: Some((sys.center().clone(), ESCAPE_MARGIN * 3.0 * sys.radius())),
        ..IntegratorOptions::default()
    }
}

fn flow_with(
    sys: &VectorFieldSystem,
    g: Generator,
    t: f64,
    x: &DVector<f64>,
    want_jacobian: bool,
    opts: &IntegratorOptions,
) -> Result<FlowPoint> {
    if x.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: x.len() });
    }
    // validates the generator index before integrating
    sys.eval(g, x)?;
    if t == 0.0 {
        return Ok(FlowPoint::identity(x, want_jacobian));
    }
    let n = sys.dim();
    let mut y0 = x.as_slice().to_vec();
    if want_jacobian {
        y0.extend(DMatrix::<f64>::identity(n, n).iter());
    }
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let point = DVector::from_column_slice(&y[..n]);
        let v = sys.eval(g, &point).expect("generator validated");
        dy[..n].copy_from_slice(v.as_slice());
        if want_jacobian {
            let dg = sys.jacobian(g, &point).expect("generator validated");
            let j = DMatrix::from_column_slice(n, n, &y[n..]);
            dy[n..].copy_from_slice((dg * j).as_slice());
        }
    };
    let sol = integrate(rhs, &y0, t, opts)?;
    Ok(FlowPoint {
        value: DVector::from_column_slice(&sol.state[..n]),
        jacobian: want_jacobian.then(|| DMatrix::from_column_slice(n, n, &sol.state[n..])),
        steps_taken: sol.steps,
        est_error: sol.est_error,
    })
}

/// Solves `dy/ds = g(y)`, `y(0) = x` up to `s = t`.
pub fn flow(sys: &VectorFieldSystem, g: Generator, t: f64, x: &DVector<f64>, want_jacobian: bool) -> Result<FlowPoint> {
    sys.require_in_ball(x, ESCAPE_MARGIN * 3.0)?;
    flow_with(sys, g, t, x, want_jacobian, &options_for(sys))
}

pub(crate) fn compose_raw(
    sys: &VectorFieldSystem,
    p: &[f64],
    lambda: &DVector<f64>,
    want_jacobian: bool,
) -> Result<FlowPoint> {
    let opts = options_for(sys);
    let mut acc = FlowPoint::identity(lambda, want_jacobian);
    for i in (0..sys.count()).rev() {
        let stage = flow_with(sys, Generator::Field(i), p[i], &acc.value, want_jacobian, &opts)?;
        acc = acc.then(stage);
    }
    Ok(acc)
}

pub(crate) fn inverse_raw(
    sys: &VectorFieldSystem,
    p: &[f64],
    x: &DVector<f64>,
    want_jacobian: bool,
) -> Result<FlowPoint> {
    let opts = options_for(sys);
    let mut acc = FlowPoint::identity(x, want_jacobian);
    for i in 0..sys.count() {
        let stage = flow_with(sys, Generator::Field(i), -p[i], &acc.value, want_jacobian, &opts)?;
        acc = acc.then(stage);
    }
    Ok(acc)
}

/// `G(p)[lambda] = G_1(t_1) o ... o G_m(t_m)[lambda]`.
pub fn compose_g(sys: &VectorFieldSystem, p: &[f64], lambda: &DVector<f64>, want_jacobian: bool) -> Result<FlowPoint> {
    sys.require_in_box(p)?;
    sys.require_in_ball(lambda, ESCAPE_MARGIN * 3.0)?;
    compose_raw(sys, p, lambda, want_jacobian)
}

/// `H(p)[x] = G_m(-t_m) o ... o G_1(-t_1)[x]`, the inverse of [`compose_g`].
pub fn inverse_h(sys: &VectorFieldSystem, p: &[f64], x: &DVector<f64>, want_jacobian: bool) -> Result<FlowPoint> {
    sys.require_in_box(p)?;
    sys.require_in_ball(x, ESCAPE_MARGIN * 3.0)?;
    inverse_raw(sys, p, x, want_jacobian)
}

pub(crate) fn drift_raw(sys: &VectorFieldSystem, t: f64, x: &DVector<f64>, want_jacobian: bool) -> Result<FlowPoint> {
    flow_with(sys, Generator::Drift, t, x, want_jacobian, &options_for(sys))
}

/// Worst displacement found by [`displacement_check`].
#[derive(Debug, Clone, Serialize)]
pub struct DisplacementReport {
    pub threshold: f64,
    pub worst_displacement: f64,
    /// `threshold - worst_displacement`; negative on failure.
    pub worst_margin: f64,
    pub worst_generator: Option<String>,
    pub worst_time: f64,
    pub worst_point: Vec<f64>,
    pub samples: usize,
    pub drift_included: bool,
    pub error: Option<String>,
    pub pass: bool,
}

/// Number of `(x, t)` sample pairs used by [`displacement_check`].
pub const DISPLACEMENT_SAMPLES: usize = 200;

/// Checks `|G_i(t_i)[x] - x| <= gamma / (2m)` over `x in B(x*, 3 gamma)` and
/// `|t_i| <= a_i`; with a drift the bound is `gamma / (2(m+1))` and `G_0` is
/// included over `|t| <= horizon`. Each sample also tries the box endpoints.
pub fn displacement_check(sys: &VectorFieldSystem, horizon: f64, seed: u64) -> DisplacementReport {
    let m = sys.count();
    let drift = sys.has_drift();
    let threshold = if drift { sys.radius() / (2.0 * (m as f64 + 1.0)) } else { sys.radius() / (2.0 * m as f64) };
    let points = ball_points(sys.center(), 3.0 * sys.radius(), DISPLACEMENT_SAMPLES, derive_seed(seed, 11));
    let mut bounds = sys.half_widths().to_vec();
    if drift {
        bounds.push(horizon.abs().max(f64::MIN_POSITIVE));
    }
    let times = box_points(&bounds, DISPLACEMENT_SAMPLES, derive_seed(seed, 12));
    let opts = IntegratorOptions::default();

    let mut report = DisplacementReport {
        threshold,
        worst_displacement: 0.0,
        worst_margin: threshold,
        worst_generator: None,
        worst_time: 0.0,
        worst_point: sys.center().as_slice().to_vec(),
        samples: DISPLACEMENT_SAMPLES,
        drift_included: drift,
        error: None,
        pass: true,
    };
    let generators: Vec<Generator> = (0..m).map(Generator::Field).chain(drift.then_some(Generator::Drift)).collect();
    'outer: for (x, ts) in points.iter().zip(&times) {
        for (slot, &g) in generators.iter().enumerate() {
            let bound = bounds[slot];
            for t in [ts[slot], bound, -bound] {
                match flow_with(sys, g, t, x, false, &opts) {
                    Ok(fp) => {
                        let d = (fp.value - x).norm();
                        if d > report.worst_displacement {
                            report.worst_displacement = d;
                            report.worst_generator = Some(generator_label(g));
                            report.worst_time = t;
                            report.worst_point = x.as_slice().to_vec();
                        }
                    }
                    Err(e) => {
                        report.error = Some(e.to_string());
                        report.worst_generator = Some(generator_label(g));
                        report.worst_time = t;
                        report.worst_point = x.as_slice().to_vec();
                        break 'outer;
                    }
                }
            }
        }
    }
    report.worst_margin = threshold - report.worst_displacement;
    report.pass = report.error.is_none() && report.worst_displacement <= threshold;
    report
}

pub(crate) fn generator_label(g: Generator) -> String {
    match g {
        Generator::Drift => "g0".to_string(),
        Generator::Field(i) => format!("g{}", i + 1),
    }
}
