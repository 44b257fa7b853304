//! The bounded-variation path `alpha_ij(t, lambda) = int_0^t b_ij(s, u(s-)) du_j(s)`
//! and its row sums `beta_i = sum_j alpha_ij`.
//!
//! Smooth parts use 16-point Gauss-Legendre on every grid cell. At an interior
//! breakpoint the atom is `b_ij(t_k, u(t_k-)) * Delta u_j(t_k)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::algebra::CoordinateAlgebra;
use crate::controls::{AdmissibleControl, TimeGrid};
use crate::error::{Error, Result};

const GL_ORDER: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let step = p1 / dp;
                z -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

/// Increment logged at an interior breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpIncrement {
    pub breakpoint: usize,
    pub t: f64,
    pub d_alpha: DMatrix<f64>,
    pub d_beta: DVector<f64>,
}

/// `alpha` and `beta` stored at every node of a [`TimeGrid`].
#[derive(Debug, Clone)]
pub struct StieltjesPath {
    grid: TimeGrid,
    alpha: Vec<DMatrix<f64>>,
    beta: Vec<DVector<f64>>,
    jump_log: Vec<JumpIncrement>,
    lambda: DVector<f64>,
    drift: bool,
}

impl StieltjesPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn alpha(&self) -> &[DMatrix<f64>] {
        &self.alpha
    }

    pub fn beta(&self) -> &[DVector<f64>] {
        &self.beta
    }

    pub fn jump_log(&self) -> &[JumpIncrement] {
        &self.jump_log
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn drift(&self) -> bool {
        self.drift
    }

    /// Largest componentwise total variation of `alpha` along the grid.
    pub fn max_variation(&self) -> f64 {
        let m = self.alpha[0].nrows();
        let mut tv = DMatrix::<f64>::zeros(m, m);
        for w in self.alpha.windows(2) {
            tv += (&w[1] - &w[0]).abs();
        }
        tv.max()
    }
}

/// `b(s, p)`: `exp(-s ad_0) A(p)` in the drift case, `A(p)` otherwise.
fn coefficients(alg: &CoordinateAlgebra, s: f64, p: &[f64], drift: bool) -> Result<DMatrix<f64>> {
    if drift {
        alg.drift_columns(s, p)
    } else {
        alg.a_matrix(p)
    }
}

/// Builds the path for the given parameter point with `cells` grid cells per interval.
pub fn integrate_alpha(
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    lambda: &DVector<f64>,
    drift: bool,
    cells: usize,
) -> Result<StieltjesPath> {
    let m = u.channels();
    if alg.order() != m {
        return Err(Error::DimensionMismatch { expected: alg.order(), got: m });
    }
    if lambda.len() != u.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), got: lambda.len() });
    }
    let grid = TimeGrid::for_control(u, cells)?;
    let (gx, gw) = gauss_legendre();
    let mut alpha = Vec::with_capacity(grid.len());
    let mut beta = Vec::with_capacity(grid.len());
    let mut jump_log = Vec::new();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    let nodes = grid.nodes();
    for (idx, node) in nodes.iter().enumerate() {
        if idx > 0 {
            let prev = nodes[idx - 1];
            if prev.left {
                // crossing t_k: prev is t_k-, node is t_k
                let k = node.interval;
                let left = u.eval_node(&prev, lambda);
                let du = u.jump(k, lambda);
                let b = coefficients(alg, node.t, &left, drift)?;
                let d_alpha = b * DMatrix::from_diagonal(&DVector::from_vec(du));
                let d_beta = row_sums(&d_alpha);
                acc += &d_alpha;
                jump_log.push(JumpIncrement { breakpoint: k, t: node.t, d_alpha, d_beta });
            } else {
                let k = node.interval;
                let (a, b) = (prev.t, node.t);
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                for q in 0..GL_ORDER {
                    let s = mid + half * gx[q];
                    let p = u.eval_on(k, s, lambda);
                    let rate = u.rate_on(k, s, lambda);
                    let mut integrand = coefficients(alg, s, &p, drift)?;
                    for (j, r) in rate.iter().enumerate() {
                        integrand.column_mut(j).scale_mut(*r);
                    }
                    acc += integrand * (half * gw[q]);
                }
            }
        }
        beta.push(row_sums(&acc));
        alpha.push(acc.clone());
    }
    Ok(StieltjesPath { grid, alpha, beta, jump_log, lambda: lambda.clone(), drift })
}

fn row_sums(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(a.nrows(), |i, _| a.row(i).sum())
}

/// `d beta_i / dt = sum_j b_ij(t, u(t)) du_j/dt` inside a continuity interval.
pub fn beta_derivative(
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    t: f64,
    lambda: &DVector<f64>,
    drift: bool,
) -> Result<DVector<f64>> {
    if u.breakpoint_index(t).is_some() {
        return Err(Error::AtBreakpoint { t });
    }
    let p = u.eval(t, lambda)?;
    let rate = u.rate(t, lambda)?;
    let b = coefficients(alg, t, &p, drift)?;
    Ok(b * DVector::from_vec(rate))
}
