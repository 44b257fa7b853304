//! Trajectories `x(t) = G(u(t, lambda))[lambda]` and their drift versions,
//! plus the Euler-Stieltjes reconstruction used to check the jump ODE
//! `dx = g_0 dt + sum_i g_i(x) d beta_i`.

use nalgebra::DVector;

use crate::algebra::CoordinateAlgebra;
use crate::controls::{AdmissibleControl, GridNode};
use crate::error::{Error, Result};
use crate::fields::{Generator, VectorFieldSystem};
use crate::flows::{compose_raw, drift_raw};
use crate::stieltjes::{integrate_alpha, StieltjesPath};

#[derive(Debug, Clone)]
pub struct JumpTrajectory {
    lambda: DVector<f64>,
    values: Vec<DVector<f64>>,
    path: StieltjesPath,
    drift: bool,
}

impl JumpTrajectory {
    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn nodes(&self) -> &[GridNode] {
        self.path.grid().nodes()
    }

    /// Values at grid nodes; left-limit nodes hold `x(t_k-)`.
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn path(&self) -> &StieltjesPath {
        &self.path
    }

    pub fn drift(&self) -> bool {
        self.drift
    }

    /// Largest `|x(t) - x*|` along the grid.
    pub fn max_distance(&self, sys: &VectorFieldSystem) -> f64 {
        self.values.iter().map(|x| sys.distance_from_center(x)).fold(0.0, f64::max)
    }
}

/// The trajectory map at a single time: `G(p)[lambda]`, or with the drift
/// `G_0(t) o G(p)[lambda]` (evaluated as `G(p) o G_0(t)` when they commute).
pub fn trajectory_point(
    sys: &VectorFieldSystem,
    t: f64,
    p: &[f64],
    lambda: &DVector<f64>,
    drift: bool,
) -> Result<DVector<f64>> {
    sys.require_in_box(p)?;
    if !drift {
        return Ok(compose_raw(sys, p, lambda, false)?.value);
    }
    if !sys.has_drift() {
        return Err(Error::NoDrift);
    }
    if sys.drift_commutes() {
        let y = drift_raw(sys, t, lambda, false)?.value;
        Ok(compose_raw(sys, p, &y, false)?.value)
    } else {
        let y = compose_raw(sys, p, lambda, false)?.value;
        Ok(drift_raw(sys, t, &y, false)?.value)
    }
}

/// Evaluates the trajectory on the grid of `cells` cells per interval.
pub fn evolve(
    sys: &VectorFieldSystem,
    alg: &CoordinateAlgebra,
    u: &AdmissibleControl,
    lambda: &DVector<f64>,
    drift: bool,
    cells: usize,
) -> Result<JumpTrajectory> {
    sys.require_in_ball(lambda, 2.0)?;
    if drift && !sys.has_drift() {
        return Err(Error::NoDrift);
    }
    let path = integrate_alpha(alg, u, lambda, drift, cells)?;
    let values = path
        .grid()
        .nodes()
        .iter()
        .map(|node| trajectory_point(sys, node.t, &u.eval_node(node, lambda), lambda, drift))
        .collect::<Result<Vec<_>>>()?;
    Ok(JumpTrajectory { lambda: lambda.clone(), values, path, drift })
}

/// Per-node and worst deviation of the Euler-Stieltjes reconstruction.
#[derive(Debug, Clone)]
pub struct OdeResidual {
    pub per_node: Vec<f64>,
    pub max: f64,
}

/// Restarts from the exact value at the start of every continuity interval,
/// then steps `x += g_0(x) dt + sum_i g_i(x) d beta_i` cell by cell.
pub fn ode_residual(traj: &JumpTrajectory, sys: &VectorFieldSystem) -> Result<OdeResidual> {
    let grid = traj.path.grid();
    if grid.len() != traj.values.len() {
        return Err(Error::GridMismatch(format!(
            "{} trajectory values on a {}-node grid",
            traj.values.len(),
            grid.len()
        )));
    }
    let nodes = grid.nodes();
    let beta = traj.path.beta();
    let mut per_node = vec![0.0; nodes.len()];
    for &(first, last) in grid.spans() {
        let mut x = traj.values[first].clone();
        for j in first..last {
            let mut step = sys.frame(&x) * (&beta[j + 1] - &beta[j]);
            if traj.drift {
                step += sys.eval(Generator::Drift, &x)? * (nodes[j + 1].t - nodes[j].t);
            }
            x += step;
            per_node[j + 1] = (&x - &traj.values[j + 1]).norm();
        }
    }
    let max = per_node.iter().cloned().fold(0.0, f64::max);
    Ok(OdeResidual { per_node, max })
}
