//! Solving `x(t, lambda) = x` for `lambda = psi(t, x)` by contraction.
//!
//! `V(t, x; lambda) = H(u(t, lambda))[x]`, or `H(u(t, lambda))[G_0(-t) x]`
//! with a drift. At every grid time the fixed point is taken at the left
//! limit, `psi(t-) = V(t-, x; psi(t-))`, and then pushed through the jump:
//! `psi(t) = V(t, x; psi(t-))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebra::{spectral_norm, CoordinateAlgebra};
use crate::controls::{AdmissibleControl, GridNode, TimeGrid};
use crate::error::{Error, Result};
use crate::fields::{Generator, VectorFieldSystem};
use crate::flows::{drift_raw, inverse_raw};
use crate::jumpflow::trajectory_point;
use crate::sampling::{derive_seed, QuasiRandom};

/// Inflation applied to the sampled constants before the gate.
pub const SAFETY_FACTOR: f64 = 1.2;
/// `rho` must not exceed this for the iteration to run.
pub const RHO_LIMIT: f64 = 0.5;
pub const CONSTANT_SAMPLES: usize = 1024;
pub const ITERATION_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 60;
/// Central-difference step for `d V / d lambda`.
pub const LAMBDA_STEP: f64 = 1e-5;

/// Sampled contraction data. `rho` already includes [`SAFETY_FACTOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionConstants {
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub rho: f64,
    pub samples: usize,
    pub gate_pass: bool,
}

impl ContractionConstants {
    /// `C_1 C_2 K_1` without the safety inflation.
    pub fn raw_rho(&self) -> f64 {
        self.c1 * self.c2 * self.k1
    }
}

/// Radius used for the `C_1` samples and the drift-shifted query points.
pub fn drift_radius(sys: &VectorFieldSystem) -> f64 {
    sys.radius() * (1.0 + 1.0 / (2.0 * (sys.count() as f64 + 1.0)))
}

fn box_corners(half_widths: &[f64]) -> Vec<Vec<f64>> {
    let m = half_widths.len();
    if m > 12 {
        return Vec::new();
    }
    (0..1usize << m)
        .map(|mask| half_widths.iter().enumerate().map(|(i, a)| if mask >> i & 1 == 1 { *a } else { -*a }).collect())
        .collect()
}

/// Estimates `C_1 = max |d_x z(p; x) g_i(x)|` over the box times a ball and
/// `C_2 = max |A(p)|` over the box, then `rho = 1.2 C_1 C_2 K_1`.
pub fn estimate_constants(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    drift: bool,
    seed: u64,
) -> Result<ContractionConstants> {
    let m = sys.count();
    let n = sys.dim();
    let radius = if drift { 2.0 * sys.radius() } else { sys.radius() };
    let mut qr = QuasiRandom::new(m + n + 1, derive_seed(seed, 31));
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let mut accepted = 0;
    while accepted < CONSTANT_SAMPLES {
        let q = qr.next_point();
        let p: Vec<f64> = (0..m).map(|i| (2.0 * q[i] - 1.0) * sys.half_widths()[i]).collect();
        // uniform direction-free point in the ball: cube point rejected outside
        let d = DVector::from_fn(n, |j, _| 2.0 * q[m + j] - 1.0);
        if d.norm() > 1.0 {
            continue;
        }
        let x = sys.center() + d * radius;
        accepted += 1;
        let jz = inverse_raw(sys, &p, &x, true)?.jacobian.expect("jacobian requested");
        for i in 0..m {
            c1 = c1.max((&jz * sys.eval(Generator::Field(i), &x)?).norm());
        }
        c2 = c2.max(spectral_norm(&alg.a_matrix(&p)?));
    }
    for corner in box_corners(sys.half_widths()) {
        c2 = c2.max(spectral_norm(&alg.a_matrix(&corner)?));
    }
    let k1 = u.k1();
    let rho = SAFETY_FACTOR * c1 * c2 * k1;
    Ok(ContractionConstants { c1, c2, k1, rho, samples: accepted, gate_pass: rho <= RHO_LIMIT })
}

/// `w = x`, or `G_0(-t) x` in the drift case, checked against the enlarged ball.
pub fn shifted_query(sys: &VectorFieldSystem, t: f64, x: &DVector<f64>, drift: bool) -> Result<DVector<f64>> {
    if !drift {
        return Ok(x.clone());
    }
    let y0 = drift_raw(sys, -t, x, false)?.value;
    let distance = sys.distance_from_center(&y0);
    let limit = drift_radius(sys);
    if distance > limit * (1.0 + 1e-12) {
        return Err(Error::OutsideDomain { distance, limit });
    }
    Ok(y0)
}

/// `V(t, x; lambda)`; `left` selects `u(t-, lambda)`.
pub fn v_map(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    t: f64,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    drift: bool,
    left: bool,
) -> Result<DVector<f64>> {
    sys.require_in_ball(x, 1.0)?;
    let w = shifted_query(sys, t, x, drift)?;
    let p = if left { u.eval_left(t, lambda)? } else { u.eval(t, lambda)? };
    sys.require_in_box(&p)?;
    Ok(inverse_raw(sys, &p, &w, false)?.value)
}

/// Central-difference `d V / d lambda` at a shifted query point `w`.
fn v_lambda_jacobian(
    sys: &VectorFieldSystem,
    control: &dyn Fn(&DVector<f64>) -> Vec<f64>,
    w: &DVector<f64>,
    lambda: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = lambda.len();
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut lp = lambda.clone();
        lp[c] += step;
        let mut lm = lambda.clone();
        lm[c] -= step;
        let vp = inverse_raw(sys, &control(&lp), w, false)?.value;
        let vm = inverse_raw(sys, &control(&lm), w, false)?.value;
        out.set_column(c, &((vp - vm) / (2.0 * step)));
    }
    Ok(out)
}

/// `d V / d lambda` at `(t, x, lambda)` by central differences with `step`.
pub fn v_map_lambda_jacobian(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    t: f64,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    drift: bool,
    step: f64,
) -> Result<DMatrix<f64>> {
    let w = shifted_query(sys, t, x, drift)?;
    let control = |l: &DVector<f64>| u.eval(t, l).expect("time checked by shifted query");
    u.eval(t, lambda)?;
    v_lambda_jacobian(sys, &control, &w, lambda, step)
}

/// Fixed point of one frozen control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub lambda: DVector<f64>,
    /// Index `k` of the first iterate with `|lambda_{k+1} - lambda_k| <= tol`.
    pub iterations: usize,
    /// `|lambda_{k+1} - lambda_k|` for every step taken.
    pub increments: Vec<f64>,
}

fn iterate(
    sys: &VectorFieldSystem,
    control: &dyn Fn(&DVector<f64>) -> Vec<f64>,
    w: &DVector<f64>,
    x: &DVector<f64>,
    t: f64,
) -> Result<FixedPoint> {
    let mut lambda = x.clone();
    let mut increments = Vec::new();
    for k in 0..MAX_ITERATIONS {
        let p = control(&lambda);
        sys.require_in_box(&p)?;
        let next = inverse_raw(sys, &p, w, false)?.value;
        let inc = (&next - &lambda).norm();
        increments.push(inc);
        lambda = next;
        if inc <= ITERATION_TOL {
            return Ok(FixedPoint { lambda, iterations: k, increments });
        }
    }
    Err(Error::NonConvergence { t, iterations: MAX_ITERATIONS, increment: increments.last().copied().unwrap_or(0.0) })
}

/// `psi(t-, x)` and `psi(t, x)` at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiPoint {
    pub left: FixedPoint,
    pub value: DVector<f64>,
}

/// Solves at an arbitrary `t in [0, T]`; at `t = 0` the left limit is `u(0)`.
pub fn psi_at(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    constants: &ContractionConstants,
    t: f64,
    x: &DVector<f64>,
    drift: bool,
) -> Result<PsiPoint> {
    if !constants.gate_pass {
        return Err(Error::GateRefused { rho: constants.rho });
    }
    sys.require_in_ball(x, 1.0)?;
    let w = shifted_query(sys, t, x, drift)?;
    u.eval(t, x)?;
    let k_left = match u.breakpoint_index(t) {
        Some(k) => k - 1,
        None => u.interval_of(t)?,
    };
    let k_right = u.interval_of(t)?;
    let left_control = |l: &DVector<f64>| u.eval_on(k_left, t, l);
    let left = iterate(sys, &left_control, &w, x, t)?;
    let p = u.eval_on(k_right, t, &left.lambda);
    sys.require_in_box(&p)?;
    let value = inverse_raw(sys, &p, &w, false)?.value;
    Ok(PsiPoint { left, value })
}

/// `psi` along the control grid for one query point.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub x: DVector<f64>,
    pub nodes: Vec<GridNode>,
    pub psi: Vec<DVector<f64>>,
    pub psi_left: Vec<DVector<f64>>,
    pub iterations: Vec<usize>,
    pub increments: Vec<Vec<f64>>,
    /// `|x(t-, psi(t-)) - x|` per node.
    pub round_trip: Vec<f64>,
    pub constants: ContractionConstants,
    pub converged: bool,
    /// `d_x psi` on nodes interior to continuity intervals.
    pub jacobians: Option<Vec<Option<DMatrix<f64>>>>,
}

impl InversionResult {
    pub fn max_round_trip(&self) -> f64 {
        self.round_trip.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_displacement(&self) -> f64 {
        self.psi.iter().chain(&self.psi_left).map(|p| (p - &self.x).norm()).fold(0.0, f64::max)
    }
}

/// Runs the contraction at every node; nodes straight after a breakpoint
/// reuse the fixed point of the left-limit node.
#[allow(clippy::too_many_arguments)]
pub fn solve_psi(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    constants: &ContractionConstants,
    x: &DVector<f64>,
    drift: bool,
    cells: usize,
    want_jacobian: bool,
) -> Result<InversionResult> {
    if !constants.gate_pass {
        return Err(Error::GateRefused { rho: constants.rho });
    }
    sys.require_in_ball(x, 1.0)?;
    if drift && !sys.has_drift() {
        return Err(Error::NoDrift);
    }
    let grid = TimeGrid::for_control(u, cells)?;
    let nodes = grid.nodes().to_vec();
    let mut psi = Vec::with_capacity(nodes.len());
    let mut psi_left: Vec<DVector<f64>> = Vec::with_capacity(nodes.len());
    let mut iterations = Vec::with_capacity(nodes.len());
    let mut increments = Vec::with_capacity(nodes.len());
    let mut round_trip = Vec::with_capacity(nodes.len());
    let mut jacobians = want_jacobian.then(Vec::new);
    for (idx, node) in nodes.iter().enumerate() {
        let w = shifted_query(sys, node.t, x, drift)?;
        let after_jump = idx > 0 && nodes[idx - 1].left;
        let left = if after_jump {
            FixedPoint { lambda: psi_left[idx - 1].clone(), iterations: 0, increments: Vec::new() }
        } else {
            let control = |l: &DVector<f64>| u.eval_node(node, l);
            iterate(sys, &control, &w, x, node.t)?
        };
        let p = u.eval_node(node, &left.lambda);
        sys.require_in_box(&p)?;
        let value = inverse_raw(sys, &p, &w, false)?.value;

        let left_node = GridNode { interval: if after_jump { node.interval - 1 } else { node.interval }, ..*node };
        let p_left = u.eval_node(&left_node, &left.lambda);
        let back = trajectory_point(sys, node.t, &p_left, &left.lambda, drift)?;
        round_trip.push((back - x).norm());

        if let Some(jacs) = jacobians.as_mut() {
            let interior = !node.left && !after_jump;
            jacs.push(if interior { Some(psi_jacobian(sys, u, node, x, &value, drift)?) } else { None });
        }
        iterations.push(left.iterations);
        increments.push(left.increments);
        psi_left.push(left.lambda);
        psi.push(value);
    }
    let converged = true;
    Ok(InversionResult {
        x: x.clone(),
        nodes,
        psi,
        psi_left,
        iterations,
        increments,
        round_trip,
        constants: *constants,
        converged,
        jacobians,
    })
}

/// `d_x psi = [I - d_lambda V]^{-1} d_x V` at `lambda = psi(t, x)`.
fn psi_jacobian(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    node: &GridNode,
    x: &DVector<f64>,
    psi: &DVector<f64>,
    drift: bool,
) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let w = shifted_query(sys, node.t, x, drift)?;
    let p = u.eval_node(node, psi);
    let mut dxv = inverse_raw(sys, &p, &w, true)?.jacobian.expect("jacobian requested");
    if drift {
        let dg0 = drift_raw(sys, -node.t, x, true)?.jacobian.expect("jacobian requested");
        dxv *= dg0;
    }
    let control = |l: &DVector<f64>| u.eval_node(node, l);
    let dlv = v_lambda_jacobian(sys, &control, &w, psi, LAMBDA_STEP)?;
    let resolvent = DMatrix::<f64>::identity(n, n) - dlv;
    resolvent.lu().solve(&dxv).ok_or(Error::SingularResolvent { t: node.t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{Cubic, Jump, Shape};
    use crate::fields::{Builtin, PolynomialField};
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn translations() -> VectorFieldSystem {
        Builtin::Translations { dim: 2 }.build(DVector::zeros(2), 1.0, vec![0.1; 2]).unwrap()
    }

    fn ridge_control(k1: f64) -> AdmissibleControl {
        AdmissibleControl::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, 0.0, 0.05, 0.0])],
                vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, -0.02, 0.0, 0.0])],
            ],
            vec![Shape::Ridge { direction: vec![1.0, 0.0], center: vec![0.0, 0.0] }, Shape::Constant],
            vec![Jump { at: 0.5, delta: vec![-0.02, 0.03] }],
            k1,
            2,
        )
        .unwrap()
    }

    #[test]
    fn translations_constants() {
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let c = estimate_constants(&sys, &alg, &ridge_control(0.2), false, 42).unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-12);
        assert!((c.c2 - 1.0).abs() < 1e-12);
        assert!((c.rho - 0.24).abs() < 1e-12);
        assert!(c.gate_pass);
        let zero = estimate_constants(&sys, &alg, &AdmissibleControl::zero(2, 2, 1.0).unwrap(), false, 42).unwrap();
        assert_eq!(zero.rho, 0.0);
        let big = estimate_constants(&sys, &alg, &ridge_control(0.5), false, 42).unwrap();
        assert!(big.rho > 0.5 && !big.gate_pass);
        assert!(matches!(
            solve_psi(&sys, &ridge_control(0.5), &big, &v(&[0.1, 0.1]), false, 10, false),
            Err(Error::GateRefused { .. })
        ));
    }

    #[test]
    fn v_map_closed_forms() {
        let sys = translations();
        let u = ridge_control(0.2);
        let x = v(&[0.2, -0.3]);
        let l = v(&[0.4, 0.1]);
        assert_eq!(v_map(&sys, &u, 0.0, &x, &l, false, false).unwrap(), x);
        let uv = u.eval(0.7, &l).unwrap();
        let got = v_map(&sys, &u, 0.7, &x, &l, false, false).unwrap();
        assert!((got - v(&[0.2 - uv[0], -0.3 - uv[1]])).norm() < 1e-15);

        let drifted = translations().with_drift(Arc::new(PolynomialField::constant(&[0.0, 0.2]))).unwrap();
        let got = v_map(&drifted, &u, 0.7, &x, &l, true, false).unwrap();
        assert!((got - v(&[0.2 - uv[0], -0.3 - 0.14 - uv[1]])).norm() < 1e-15);
    }

    #[test]
    fn lambda_independent_converges_in_one_step() {
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, 0.0, -0.05, 0.0])]],
            vec![Shape::Constant; 2],
            vec![],
            0.0,
            2,
        )
        .unwrap();
        let c = estimate_constants(&sys, &alg, &u, false, 1).unwrap();
        let x = v(&[0.3, 0.2]);
        let r = solve_psi(&sys, &u, &c, &x, false, 20, false).unwrap();
        assert_eq!(r.psi[0], x);
        assert_eq!(r.iterations[0], 0);
        for (node, (psi, &its)) in r.nodes.iter().zip(r.psi.iter().zip(&r.iterations)).skip(1) {
            let uv = u.eval(node.t, &x).unwrap();
            assert!((psi - v(&[0.3 - uv[0], 0.2 - uv[1]])).norm() < 1e-15);
            assert_eq!(its, 1);
        }
    }

    #[test]
    fn heisenberg_contraction() {
        let sys = Builtin::Heisenberg.build(DVector::zeros(3), 1.0, vec![0.05; 3]).unwrap();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = AdmissibleControl::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, 0.0, 0.04, 0.0]), Cubic([0.0, 0.02, 0.0, 0.0])],
                vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, -0.04, 0.0, 0.0]), Cubic::default()],
            ],
            vec![
                Shape::Ridge { direction: vec![0.6, 0.8, 0.0], center: vec![0.0, 0.0, 0.0] },
                Shape::Constant,
                Shape::Constant,
            ],
            vec![Jump { at: 0.5, delta: vec![0.01, 0.02, 0.0] }],
            0.2,
            3,
        )
        .unwrap();
        assert!(u.validate(&sys, 1).pass);
        let c = estimate_constants(&sys, &alg, &u, false, 7).unwrap();
        assert!(c.gate_pass, "{c:?}");
        let x = v(&[0.3, -0.5, 0.4]);
        let r = solve_psi(&sys, &u, &c, &x, false, 40, true).unwrap();
        assert!(r.max_round_trip() <= 1e-9);
        assert!(r.max_displacement() <= 1.0);
        for inc in &r.increments {
            for (k, d) in inc.iter().enumerate() {
                assert!(*d <= c.rho.powi(k as i32) * inc[0] * (1.0 + 1e-6));
            }
        }
        // resolvent Jacobian against finite differences of psi
        let jacs = r.jacobians.as_ref().unwrap();
        let idx = 13;
        let jac = jacs[idx].as_ref().unwrap();
        let t = r.nodes[idx].t;
        let h = 1e-5;
        for col in 0..3 {
            let mut xp = x.clone();
            xp[col] += h;
            let mut xm = x.clone();
            xm[col] -= h;
            let fd = (psi_at(&sys, &u, &c, t, &xp, false).unwrap().value
                - psi_at(&sys, &u, &c, t, &xm, false).unwrap().value)
                / (2.0 * h);
            assert!((fd - jac.column(col)).norm() <= 1e-5 * jac.norm(), "{col}");
        }
        // pointwise solve agrees with the grid solve
        let p = psi_at(&sys, &u, &c, t, &x, false).unwrap();
        assert!((p.value - &r.psi[idx]).norm() < 1e-12);
    }

    #[test]
    fn drift_shift_and_domain() {
        let sys =
            Builtin::HeisenbergDrift { a: 0.02, b: 0.01, c: 0.0 }.build(DVector::zeros(3), 1.0, vec![0.03; 3]).unwrap();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = AdmissibleControl::zero(3, 3, 1.0).unwrap();
        let c = estimate_constants(&sys, &alg, &u, true, 3).unwrap();
        let x = v(&[0.5, 0.2, -0.1]);
        let r = solve_psi(&sys, &u, &c, &x, true, 10, false).unwrap();
        // psi = G_0(-t) x when u = 0
        for (node, psi) in r.nodes.iter().zip(&r.psi) {
            let y0 = drift_raw(&sys, -node.t, &x, false).unwrap().value;
            assert!((psi - y0).norm() < 1e-14);
        }
        assert!(r.max_round_trip() < 1e-12);
        assert!(matches!(
            v_map(&sys, &u, 0.5, &v(&[2.0, 0.0, 0.0]), &x, true, false),
            Err(Error::OutsideDomain { .. })
        ));
    }
}
