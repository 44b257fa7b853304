//! Finite-difference residuals of the Hamilton-Jacobi identities satisfied
//! by `z(p; x) = H(p)[x]`, by `V(t, x; lambda)` (integrated form with jumps)
//! and by `psi(t, x)`, plus the sampled gradient bound on `V`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{spectral_norm, CoordinateAlgebra};
use crate::controls::{AdmissibleControl, TimeGrid};
use crate::error::{Error, Result};
use crate::fields::{Generator, VectorFieldSystem};
use crate::flows::{drift_raw, inverse_raw};
use crate::inversion::{psi_at, shifted_query, v_map, v_map_lambda_jacobian, ContractionConstants};
use crate::jumpflow::{evolve, ode_residual};
use crate::sampling::{ball_points, derive_seed, QuasiRandom};
use crate::stieltjes::{beta_derivative, integrate_alpha};

/// Every step size and threshold used by the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `d_p z` step, relative to the box half-width.
    pub z_step: f64,
    pub z_threshold: f64,
    pub jump_threshold: f64,
    pub ode_threshold: f64,
    pub psi_time_step: f64,
    pub psi_space_step: f64,
    pub psi_threshold: f64,
    pub gradient_step: f64,
    /// Lower bound for the gradient threshold when `C_1 C_2 K_1` vanishes.
    pub gradient_floor: f64,
    pub round_trip: f64,
    /// Cells per continuity interval on the base grid.
    pub cells: usize,
    /// Number of grid doublings in refinement studies.
    pub refinements: usize,
    /// Residuals below this are treated as round-off in rate checks.
    pub roundoff_floor: f64,
    /// Largest residual ratio accepted as "halving" under grid doubling.
    pub halving_ratio: f64,
    pub first_order_band: (f64, f64),
    /// Sample points stay this fraction of the radius inside the ball.
    pub sample_margin: f64,
    pub z_samples: usize,
    pub jump_samples: usize,
    pub psi_samples: usize,
    pub gradient_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            z_step: 1e-5,
            z_threshold: 1e-4,
            jump_threshold: 5e-3,
            ode_threshold: 5e-3,
            psi_time_step: 1e-5,
            psi_space_step: 1e-5,
            psi_threshold: 1e-3,
            gradient_step: 1e-5,
            gradient_floor: 1e-7,
            round_trip: 1e-9,
            cells: 200,
            refinements: 2,
            roundoff_floor: 1e-12,
            halving_ratio: 0.6,
            first_order_band: (0.4, 0.6),
            sample_margin: 0.05,
            z_samples: 50,
            jump_samples: 8,
            psi_samples: 20,
            gradient_samples: 200,
        }
    }
}

impl Tolerances {
    /// Multiplies every pass threshold (not the steps) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            z_threshold: self.z_threshold * factor,
            jump_threshold: self.jump_threshold * factor,
            ode_threshold: self.ode_threshold * factor,
            psi_threshold: self.psi_threshold * factor,
            gradient_floor: self.gradient_floor * factor,
            round_trip: self.round_trip * factor,
            ..self.clone()
        }
    }

    pub fn refinement_cells(&self) -> Vec<usize> {
        (0..=self.refinements).map(|k| self.cells << k).collect()
    }
}

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub identity: String,
    pub samples: String,
    pub sample_count: usize,
    pub max_residual: f64,
    pub threshold: f64,
    pub steps: BTreeMap<String, f64>,
    pub rate_estimate: Option<f64>,
    pub per_sample: Vec<f64>,
    pub verdict: bool,
}

impl ResidualReport {
    fn new(identity: &str, samples: String, per_sample: Vec<f64>, threshold: f64, steps: &[(&str, f64)]) -> Self {
        let max_residual = per_sample.iter().cloned().fold(0.0, f64::max);
        Self {
            identity: identity.to_string(),
            samples,
            sample_count: per_sample.len(),
            max_residual,
            threshold,
            steps: steps.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            rate_estimate: None,
            verdict: max_residual <= threshold && per_sample.iter().all(|r| r.is_finite()),
            per_sample,
        }
    }
}

/// Residuals on a sequence of doubled grids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub cells: Vec<usize>,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub floor: f64,
}

impl RefinementStudy {
    pub fn run(cells: &[usize], floor: f64, mut residual: impl FnMut(usize) -> Result<f64>) -> Result<Self> {
        let residuals = cells.iter().map(|&c| residual(c)).collect::<Result<Vec<_>>>()?;
        let ratios = residuals.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
        Ok(Self { cells: cells.to_vec(), residuals, ratios, floor })
    }

    /// Ratios that count: the coarser residual is above the round-off floor.
    fn active(&self) -> impl Iterator<Item = f64> + '_ {
        self.ratios.iter().zip(&self.residuals).filter(|(_, r)| **r > self.floor).map(|(q, _)| *q)
    }

    pub fn all_within(&self, lo: f64, hi: f64) -> bool {
        self.active().all(|q| (lo..=hi).contains(&q))
    }

    /// Mean observed order `-log2(ratio)` over the active refinements.
    pub fn order(&self) -> Option<f64> {
        let orders: Vec<f64> = self.active().map(|q| -q.log2()).collect();
        (!orders.is_empty()).then(|| orders.iter().sum::<f64>() / orders.len() as f64)
    }
}

/// Quasi-random `(p, x)` pairs in the box times the shrunken ball.
pub fn box_ball_samples(
    sys: &VectorFieldSystem,
    radius: f64,
    count: usize,
    seed: u64,
) -> Vec<(Vec<f64>, DVector<f64>)> {
    let m = sys.count();
    let mut qr = QuasiRandom::new(m, derive_seed(seed, 41));
    let xs = ball_points(sys.center(), radius, count, derive_seed(seed, 42));
    xs.into_iter()
        .map(|x| {
            let q = qr.next_point();
            let p = q.iter().zip(sys.half_widths()).map(|(q, a)| (2.0 * q - 1.0) * a).collect();
            (p, x)
        })
        .collect()
}

/// Times at least `margin` away from every breakpoint.
pub fn interior_times(u: &AdmissibleControl, count: usize, margin: f64, seed: u64) -> Vec<f64> {
    let mut qr = QuasiRandom::new(2, derive_seed(seed, 43));
    let bps = u.breakpoints();
    (0..count)
        .map(|_| {
            let q = qr.next_point();
            let k = ((q[0] * u.intervals() as f64) as usize).min(u.intervals() - 1);
            let (a, b) = (bps[k] + margin, bps[k + 1] - margin);
            a + (b - a) * q[1]
        })
        .collect()
}

/// `|d_p z + d_x z {g_1(x), ..., g_m(x)} A(p)|` with central differences in `p`.
pub fn hj_residual_z(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    samples: &[(Vec<f64>, DVector<f64>)],
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let m = sys.count();
    let mut per_sample = Vec::with_capacity(samples.len());
    for (p, x) in samples {
        sys.require_in_box(p)?;
        sys.require_in_ball(x, 1.0)?;
        let z = inverse_raw(sys, p, x, true)?;
        let jz = z.jacobian.expect("jacobian requested");
        let mut dp = DMatrix::zeros(sys.dim(), m);
        for i in 0..m {
            let h = tol.z_step * sys.half_widths()[i];
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            let col = (inverse_raw(sys, &pp, x, false)?.value - inverse_raw(sys, &pm, x, false)?.value) / (2.0 * h);
            dp.set_column(i, &col);
        }
        let lhs = dp + jz * sys.frame(x) * alg.a_matrix(p)?;
        per_sample.push(lhs.norm());
    }
    Ok(ResidualReport::new(
        "hj_z",
        format!("{} (p, x) pairs in box x ball", samples.len()),
        per_sample,
        tol.z_threshold,
        &[("z_step", tol.z_step)],
    ))
}

/// Worst integrated-form and jump-relation defect of `V(., x; lambda)` for one `x`.
fn jump_residual_one(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    lambda: &DVector<f64>,
    x: &DVector<f64>,
    drift: bool,
    cells: usize,
) -> Result<f64> {
    let path = integrate_alpha(alg, u, lambda, drift, cells)?;
    let grid = path.grid();
    let nodes = grid.nodes();
    let frame = sys.frame(x);
    let g0 = if drift { Some(sys.eval(Generator::Drift, x)?) } else { None };
    let mut values = Vec::with_capacity(nodes.len());
    let mut jacs = Vec::with_capacity(nodes.len());
    for node in nodes {
        let w = shifted_query(sys, node.t, x, drift)?;
        let p = u.eval_node(node, lambda);
        sys.require_in_box(&p)?;
        let fp = inverse_raw(sys, &p, &w, true)?;
        let mut j = fp.jacobian.expect("jacobian requested");
        if drift {
            j *= drift_raw(sys, -node.t, x, true)?.jacobian.expect("jacobian requested");
        }
        values.push(fp.value);
        jacs.push(j);
    }
    let beta = path.beta();
    let mut worst: f64 = 0.0;
    for &(first, last) in grid.spans() {
        let mut integral = DVector::zeros(sys.dim());
        for l in first..last {
            let mut incr = &frame * (&beta[l + 1] - &beta[l]);
            if let Some(g0) = &g0 {
                incr += g0 * (nodes[l + 1].t - nodes[l].t);
            }
            integral += (&jacs[l] + &jacs[l + 1]) * incr * 0.5;
            worst = worst.max((&values[l + 1] - &values[first] + &integral).norm());
        }
    }
    // jump relation, recomputed independently at every interior breakpoint
    for k in 1..u.intervals() {
        let t = u.breakpoints()[k];
        let (_, end) = grid.spans()[k - 1];
        let stored = &values[end + 1] - &values[end];
        let right = v_map(sys, u, t, x, lambda, drift, false)?;
        let left = v_map(sys, u, t, x, lambda, drift, true)?;
        worst = worst.max((stored - (right - left)).norm());
    }
    Ok(worst)
}

/// Integrated form of `d_t V + d_x V [g_0 dt + sum_i g_i d beta_i] = 0` with
/// jumps, with a refinement study over the configured grid doublings.
#[allow(clippy::too_many_arguments)]
pub fn hj_jump_residual_v(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    lambda: &DVector<f64>,
    xs: &[DVector<f64>],
    drift: bool,
    tol: &Tolerances,
) -> Result<(ResidualReport, RefinementStudy)> {
    for x in xs {
        sys.require_in_ball(x, 1.0)?;
    }
    let at = |cells: usize| -> Result<Vec<f64>> {
        xs.iter().map(|x| jump_residual_one(sys, alg, u, lambda, x, drift, cells)).collect()
    };
    let per_sample = at(tol.cells)?;
    let cells = tol.refinement_cells();
    let base = per_sample.iter().cloned().fold(0.0, f64::max);
    let study = RefinementStudy::run(&cells, tol.roundoff_floor, |c| {
        if c == tol.cells {
            Ok(base)
        } else {
            Ok(at(c)?.into_iter().fold(0.0, f64::max))
        }
    })?;
    let mut report = ResidualReport::new(
        if drift { "hj_jump_v_drift" } else { "hj_jump_v" },
        format!("{} x points, lambda = {:?}, {} cells per interval", xs.len(), lambda.as_slice(), tol.cells),
        per_sample,
        tol.jump_threshold,
        &[("cells", tol.cells as f64)],
    );
    report.rate_estimate = study.order();
    report.verdict &= study.active().all(|q| q <= tol.halving_ratio);
    Ok((report, study))
}

/// `|d_t psi + d_x psi [g_0(x) + sum_i g_i(x) d_t beta_i(t, psi)]|` at interior times.
#[allow(clippy::too_many_arguments)]
pub fn hj_residual_psi(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    constants: &ContractionConstants,
    samples: &[(f64, DVector<f64>)],
    drift: bool,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let n = sys.dim();
    let (ht, hx) = (tol.psi_time_step, tol.psi_space_step);
    let mut per_sample = Vec::with_capacity(samples.len());
    for (t, x) in samples {
        let t = *t;
        let k = u.interval_of(t)?;
        let (a, b) = (u.breakpoints()[k], u.breakpoints()[k + 1]);
        if u.breakpoint_index(t).is_some() || t - ht < a || t + ht >= b {
            return Err(Error::AtBreakpoint { t });
        }
        let psi = |s: f64, y: &DVector<f64>| psi_at(sys, u, constants, s, y, drift).map(|p| p.value);
        let centre = psi(t, x)?;
        let dt = (psi(t + ht, x)? - psi(t - ht, x)?) / (2.0 * ht);
        let mut dx = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut xp = x.clone();
            xp[c] += hx;
            let mut xm = x.clone();
            xm[c] -= hx;
            dx.set_column(c, &((psi(t, &xp)? - psi(t, &xm)?) / (2.0 * hx)));
        }
        let mut velocity = sys.frame(x) * beta_derivative(alg, u, t, &centre, drift)?;
        if drift {
            velocity += sys.eval(Generator::Drift, x)?;
        }
        per_sample.push((dt + dx * velocity).norm());
    }
    Ok(ResidualReport::new(
        if drift { "hj_psi_drift" } else { "hj_psi" },
        format!("{} interior (t, x) samples", samples.len()),
        per_sample,
        tol.psi_threshold,
        &[("psi_time_step", ht), ("psi_space_step", hx)],
    ))
}

/// Sampled `|d_lambda V|` against `1.2 C_1 C_2 K_1`.
pub fn gradient_bound_check(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    constants: &ContractionConstants,
    samples: &[(f64, DVector<f64>, DVector<f64>)],
    drift: bool,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for (t, x, lambda) in samples {
        sys.require_in_ball(lambda, 2.0)?;
        let j = v_map_lambda_jacobian(sys, u, *t, x, lambda, drift, tol.gradient_step)?;
        per_sample.push(spectral_norm(&j));
    }
    let threshold = constants.rho.max(tol.gradient_floor);
    Ok(ResidualReport::new(
        "gradient_bound",
        format!("{} (t, x, lambda) samples", samples.len()),
        per_sample,
        threshold,
        &[("gradient_step", tol.gradient_step)],
    ))
}

/// `(t, x, lambda)` with `t in [0, T]`, `x` in the shrunken ball, `lambda` in `B(x*, 2 gamma)`.
pub fn gradient_samples(
    sys: &VectorFieldSystem,
    u: &AdmissibleControl,
    count: usize,
    margin: f64,
    seed: u64,
) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
    let xs = ball_points(sys.center(), sys.radius() * (1.0 - margin), count, derive_seed(seed, 44));
    let ls = ball_points(sys.center(), 2.0 * sys.radius() * (1.0 - margin), count, derive_seed(seed, 45));
    let mut qr = QuasiRandom::new(1, derive_seed(seed, 46));
    xs.into_iter().zip(ls).map(|(x, l)| (qr.next_point()[0] * u.horizon(), x, l)).collect()
}

/// Euler-Stieltjes reconstruction error of the trajectory from `lambda` on doubled grids.
pub fn ode_refinement(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    lambda: &DVector<f64>,
    drift: bool,
    tol: &Tolerances,
) -> Result<(ResidualReport, RefinementStudy)> {
    let study = RefinementStudy::run(&tol.refinement_cells(), tol.roundoff_floor, |c| {
        Ok(ode_residual(&evolve(sys, alg, u, lambda, drift, c)?, sys)?.max)
    })?;
    let mut report = ResidualReport::new(
        if drift { "ode_drift" } else { "ode" },
        format!("lambda = {:?}, cells {:?}", lambda.as_slice(), study.cells),
        vec![study.residuals[0]],
        tol.ode_threshold,
        &[("cells", tol.cells as f64)],
    );
    let (lo, hi) = tol.first_order_band;
    report.rate_estimate = study.order();
    report.verdict &= study.all_within(lo, hi);
    Ok((report, study))
}

/// Grid used by the trajectory and path checks for a control.
pub fn base_grid(u: &AdmissibleControl, tol: &Tolerances) -> Result<TimeGrid> {
    TimeGrid::for_control(u, tol.cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{Cubic, Jump, Shape};
    use crate::fields::{Builtin, Monomial, PolynomialField, StructureConstants};
    use crate::inversion::estimate_constants;
    use std::sync::Arc;

    fn translations() -> VectorFieldSystem {
        Builtin::Translations { dim: 2 }.build(DVector::zeros(2), 1.0, vec![0.1; 2]).unwrap()
    }

    fn heisenberg() -> VectorFieldSystem {
        Builtin::Heisenberg.build(DVector::zeros(3), 1.0, vec![0.05; 3]).unwrap()
    }

    fn trans_control() -> AdmissibleControl {
        AdmissibleControl::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, 0.0, 0.1, 0.0])],
                vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, 0.0, 0.0, -0.05])],
            ],
            vec![Shape::Constant; 2],
            vec![Jump { at: 0.5, delta: vec![-0.02, 0.01] }],
            0.0,
            2,
        )
        .unwrap()
    }

    fn heis_control() -> AdmissibleControl {
        AdmissibleControl::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, 0.0, 0.04, 0.0]), Cubic([0.0, 0.02, 0.0, 0.0])],
                vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, -0.04, 0.0, 0.0]), Cubic::default()],
            ],
            vec![
                Shape::Ridge { direction: vec![0.6, 0.8, 0.0], center: vec![0.0; 3] },
                Shape::Constant,
                Shape::Constant,
            ],
            vec![Jump { at: 0.5, delta: vec![0.01, 0.02, 0.0] }],
            0.2,
            3,
        )
        .unwrap()
    }

    #[test]
    fn z_residual_closed_form_and_identity() {
        let tol = Tolerances::default();
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let samples = box_ball_samples(&sys, 0.95, 30, 1);
        let r = hj_residual_z(&sys, &alg, &samples, &tol).unwrap();
        assert!(r.max_residual < 1e-10 && r.verdict);
        let sys = heisenberg();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let r = hj_residual_z(&sys, &alg, &box_ball_samples(&sys, 0.95, 50, 2), &tol).unwrap();
        assert!(r.max_residual <= 1e-4, "{}", r.max_residual);
        for (_, x) in box_ball_samples(&sys, 0.95, 10, 3) {
            let z0 = inverse_raw(&sys, &[0.0; 3], &x, false).unwrap().value;
            assert!((z0 - &x).norm() <= 1e-12);
        }
    }

    #[test]
    fn z_residual_second_order_in_step() {
        // g(x) = x^2 near x = 1, so z(p; x) = x / (1 + p x)
        let g = PolynomialField::new(vec![vec![Monomial::new(1.0, vec![2])]]).unwrap();
        let sys = VectorFieldSystem::new("square", vec![Arc::new(g)], DVector::from_element(1, 1.0), 0.5, vec![0.2])
            .unwrap()
            .with_structure_constants(StructureConstants::zeros(1))
            .unwrap();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let samples = box_ball_samples(&sys, 0.45, 5, 4);
        let coarse = Tolerances { z_step: 0.2, ..Tolerances::default() };
        let fine = Tolerances { z_step: 0.1, ..Tolerances::default() };
        let rc = hj_residual_z(&sys, &alg, &samples, &coarse).unwrap().max_residual;
        let rf = hj_residual_z(&sys, &alg, &samples, &fine).unwrap().max_residual;
        let ratio = rf / rc;
        assert!(rc > 1e-8 && (0.2..0.3).contains(&ratio), "{rc} ratio {ratio}");
    }

    #[test]
    fn jump_residual_translations_and_zero() {
        let tol = Tolerances::default();
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let xs = ball_points(sys.center(), 0.95, 5, 5);
        let lambda = DVector::from_vec(vec![0.2, 0.1]);
        let (r, _) = hj_jump_residual_v(&sys, &alg, &trans_control(), &lambda, &xs, false, &tol).unwrap();
        assert!(r.max_residual <= 1e-10, "{}", r.max_residual);
        let zero = AdmissibleControl::zero(2, 2, 1.0).unwrap();
        let (r, _) = hj_jump_residual_v(&sys, &alg, &zero, &lambda, &xs, false, &tol).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn jump_residual_heisenberg_refines() {
        let tol = Tolerances::default();
        let sys = heisenberg();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let xs = ball_points(sys.center(), 0.95, 3, 6);
        let lambda = DVector::from_vec(vec![0.5, -0.3, 0.2]);
        let (r, study) = hj_jump_residual_v(&sys, &alg, &heis_control(), &lambda, &xs, false, &tol).unwrap();
        assert!(r.max_residual <= 5e-3);
        assert!(r.verdict, "{study:?}");
    }

    #[test]
    fn psi_residual_translations_and_heisenberg() {
        let tol = Tolerances::default();
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = trans_control();
        let c = estimate_constants(&sys, &alg, &u, false, 1).unwrap();
        let ts = interior_times(&u, 10, 0.01, 1);
        let xs = ball_points(sys.center(), 0.95, 10, 7);
        let samples: Vec<_> = ts.into_iter().zip(xs).collect();
        let r = hj_residual_psi(&sys, &alg, &u, &c, &samples, false, &tol).unwrap();
        assert!(r.max_residual <= 1e-9, "{}", r.max_residual);

        let sys = heisenberg();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = heis_control();
        let c = estimate_constants(&sys, &alg, &u, false, 1).unwrap();
        let ts = interior_times(&u, 10, 0.01, 2);
        let xs = ball_points(sys.center(), 0.95, 10, 8);
        let samples: Vec<_> = ts.into_iter().zip(xs).collect();
        let r = hj_residual_psi(&sys, &alg, &u, &c, &samples, false, &tol).unwrap();
        assert!(r.verdict, "{}", r.max_residual);
        let bad = vec![(0.5, DVector::zeros(3))];
        assert!(matches!(hj_residual_psi(&sys, &alg, &u, &c, &bad, false, &tol), Err(Error::AtBreakpoint { .. })));
    }

    #[test]
    fn gradient_bounds() {
        let tol = Tolerances::default();
        let sys = translations();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let u = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![Cubic([0.0, 0.1, 0.0, 0.0]), Cubic([0.0, 0.0, 0.1, 0.0])]],
            vec![Shape::Ridge { direction: vec![1.0, 0.0], center: vec![0.0, 0.0] }, Shape::Constant],
            vec![],
            0.2,
            2,
        )
        .unwrap();
        let c = estimate_constants(&sys, &alg, &u, false, 1).unwrap();
        let samples = gradient_samples(&sys, &u, 200, 0.05, 1);
        let r = gradient_bound_check(&sys, &u, &c, &samples, false, &tol).unwrap();
        assert!(r.verdict && r.max_residual <= 0.24);
        let zero = AdmissibleControl::zero(2, 2, 1.0).unwrap();
        let cz = estimate_constants(&sys, &alg, &zero, false, 1).unwrap();
        let r = gradient_bound_check(&sys, &zero, &cz, &samples, false, &tol).unwrap();
        assert!(r.max_residual <= 1e-7 && r.verdict);
    }

    #[test]
    fn ode_study_first_order() {
        let tol = Tolerances::default();
        let sys = heisenberg();
        let alg = CoordinateAlgebra::for_system(&sys).unwrap();
        let lambda = DVector::from_vec(vec![0.6, -0.4, 0.3]);
        let (r, study) = ode_refinement(&sys, &alg, &heis_control(), &lambda, false, &tol).unwrap();
        assert!(r.verdict, "{study:?}");
        assert!((r.rate_estimate.unwrap() - 1.0).abs() < 0.3);
    }

    #[test]
    fn zero_drift_jump_residual_is_bit_identical() {
        let tol = Tolerances { refinements: 0, ..Tolerances::default() };
        let plain = heisenberg();
        let drifted = plain.clone().with_drift(Arc::new(PolynomialField::zero(3))).unwrap();
        let xs = ball_points(plain.center(), 0.95, 2, 9);
        let lambda = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let a = hj_jump_residual_v(
            &plain,
            &CoordinateAlgebra::for_system(&plain).unwrap(),
            &heis_control(),
            &lambda,
            &xs,
            false,
            &tol,
        )
        .unwrap()
        .0;
        let b = hj_jump_residual_v(
            &drifted,
            &CoordinateAlgebra::for_system(&drifted).unwrap(),
            &heis_control(),
            &lambda,
            &xs,
            true,
            &tol,
        )
        .unwrap()
        .0;
        assert_eq!(a.per_sample, b.per_sample);
    }

    #[test]
    fn tolerance_scaling_leaves_steps() {
        let t = Tolerances::default().scaled(10.0);
        assert_eq!(t.z_step, 1e-5);
        assert_eq!(t.z_threshold, 1e-3);
        assert_eq!(Tolerances::default().refinement_cells(), vec![200, 400, 800]);
    }
}
