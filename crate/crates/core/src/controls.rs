//! Admissible controls `u_i(t, lambda) = c_i(t) * phi_i(lambda)`.
//!
//! Each `c_i` is a cubic in absolute time on every continuity interval
//! `[t_k, t_{k+1})`, so range, Lipschitz and variation bounds are all
//! available in closed form. Jumps sit on interior breakpoints only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorFieldSystem;
use crate::sampling::{ball_points, derive_seed};

/// `c(t) = c_0 + c_1 t + c_2 t^2 + c_3 t^3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cubic(pub [f64; 4]);

impl Cubic {
    pub fn eval(&self, t: f64) -> f64 {
        let c = &self.0;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let c = &self.0;
        (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1]
    }

    /// Roots of `c'` strictly inside `(a, b)`, sorted.
    fn critical_points(&self, a: f64, b: f64) -> Vec<f64> {
        let (q2, q1, q0) = (3.0 * self.0[3], 2.0 * self.0[2], self.0[1]);
        let mut roots = Vec::new();
        if q2 == 0.0 {
            if q1 != 0.0 {
                roots.push(-q0 / q1);
            }
        } else {
            let disc = q1 * q1 - 4.0 * q2 * q0;
            if disc >= 0.0 {
                let s = disc.sqrt();
                // numerically stable pair
                let sign = if q1 >= 0.0 { 1.0 } else { -1.0 };
                let q = -0.5 * (q1 + sign * s);
                if q != 0.0 {
                    roots.push(q / q2);
                    roots.push(q0 / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
        roots.retain(|r| *r > a && *r < b);
        roots.sort_by(f64::total_cmp);
        roots
    }

    /// `max |c(t)|` over `[a, b]`.
    pub fn sup_abs(&self, a: f64, b: f64) -> f64 {
        self.critical_points(a, b).into_iter().chain([a, b]).map(|t| self.eval(t).abs()).fold(0.0, f64::max)
    }

    /// Total variation of `c` over `[a, b]`.
    pub fn variation(&self, a: f64, b: f64) -> f64 {
        let mut pts = vec![a];
        pts.extend(self.critical_points(a, b));
        pts.push(b);
        pts.windows(2).map(|w| (self.eval(w[1]) - self.eval(w[0])).abs()).sum()
    }
}

/// Bounded smooth shape `phi(lambda)` with `|phi| <= 1` and `|grad phi| <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Constant,
    /// `r^2 / (L^2 + r^2)` with `r = |lambda - center|`.
    Radial {
        center: Vec<f64>,
        length: f64,
    },
    /// `tanh(direction . (lambda - center))`.
    Ridge {
        direction: Vec<f64>,
        center: Vec<f64>,
    },
}

impl Shape {
    fn check(&self, n: usize) -> Result<()> {
        match self {
            Shape::Constant => Ok(()),
            Shape::Radial { center, length } => {
                if center.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: center.len() });
                }
                if !(*length > 0.0 && length.is_finite()) {
                    return Err(Error::InvalidControl(format!("radial length must be positive, got {length}")));
                }
                Ok(())
            }
            Shape::Ridge { direction, center } => {
                if direction.len() != n || center.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: direction.len().min(center.len()) });
                }
                Ok(())
            }
        }?;
        if self.sup_gradient() > 1.0 {
            return Err(Error::InvalidControl(format!("shape gradient bound {} exceeds 1", self.sup_gradient())));
        }
        Ok(())
    }

    pub fn eval(&self, lambda: &DVector<f64>) -> f64 {
        match self {
            Shape::Constant => 1.0,
            Shape::Radial { center, length } => {
                let r2: f64 = lambda.iter().zip(center).map(|(l, c)| (l - c) * (l - c)).sum();
                r2 / (length * length + r2)
            }
            Shape::Ridge { direction, center } => {
                let s: f64 = lambda.iter().zip(center).zip(direction).map(|((l, c), v)| v * (l - c)).sum();
                s.tanh()
            }
        }
    }

    pub fn gradient(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let n = lambda.len();
        match self {
            Shape::Constant => DVector::zeros(n),
            Shape::Radial { center, length } => {
                let d = DVector::from_fn(n, |i, _| lambda[i] - center[i]);
                let l2 = length * length;
                let denom = l2 + d.norm_squared();
                d * (2.0 * l2 / (denom * denom))
            }
            Shape::Ridge { direction, center } => {
                let s: f64 = lambda.iter().zip(center).zip(direction).map(|((l, c), v)| v * (l - c)).sum();
                let sech2 = 1.0 - s.tanh().powi(2);
                DVector::from_fn(n, |i, _| direction[i] * sech2)
            }
        }
    }

    pub fn sup_value(&self) -> f64 {
        1.0
    }

    pub fn sup_gradient(&self) -> f64 {
        match self {
            Shape::Constant => 0.0,
            Shape::Radial { length, .. } => 3.0 * 3f64.sqrt() / (8.0 * length),
            Shape::Ridge { direction, .. } => direction.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// A coefficient jump `c_i(t_k) - c_i(t_k-) = delta_i` at an interior breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub at: f64,
    pub delta: Vec<f64>,
}

/// Piecewise cubic-times-shape control on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleControl {
    breakpoints: Vec<f64>,
    /// `pieces[k][i]`, with jump offsets already folded into `c_0`.
    pieces: Vec<Vec<Cubic>>,
    shapes: Vec<Shape>,
    /// `jumps[k - 1][i]` for breakpoint `t_k`, zero when none is declared.
    jumps: Vec<Vec<f64>>,
    k1: f64,
    dim: usize,
}

const BREAKPOINT_TOL: f64 = 1e-12;

impl AdmissibleControl {
    /// `pieces[k][i]` are the raw coefficients of channel `i` on interval `k`.
    pub fn new(
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<Cubic>>,
        shapes: Vec<Shape>,
        jumps: Vec<Jump>,
        k1: f64,
        dim: usize,
    ) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints[0] != 0.0 {
            return Err(Error::InvalidControl("breakpoints must start at 0 and contain the horizon".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || !breakpoints.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidControl("breakpoints must be finite and strictly increasing".into()));
        }
        let intervals = breakpoints.len() - 1;
        if pieces.len() != intervals {
            return Err(Error::InvalidControl(format!("{} intervals but {} pieces", intervals, pieces.len())));
        }
        let m = shapes.len();
        if m == 0 {
            return Err(Error::InvalidControl("at least one channel is required".into()));
        }
        if let Some(bad) = pieces.iter().position(|p| p.len() != m) {
            return Err(Error::InvalidControl(format!("piece {bad} has {} channels, expected {m}", pieces[bad].len())));
        }
        for s in &shapes {
            s.check(dim)?;
        }
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::InvalidControl(format!("K1 must be nonnegative, got {k1}")));
        }
        let mut table = vec![vec![0.0; m]; intervals - 1];
        for j in &jumps {
            if j.delta.len() != m {
                return Err(Error::InvalidControl(format!(
                    "jump at {} has {} channels, expected {m}",
                    j.at,
                    j.delta.len()
                )));
            }
            if j.at.abs() <= BREAKPOINT_TOL {
                return Err(Error::InvalidControl("a jump at t = 0 is not allowed".into()));
            }
            let k = (1..intervals)
                .find(|&k| (breakpoints[k] - j.at).abs() <= BREAKPOINT_TOL)
                .ok_or_else(|| Error::InvalidControl(format!("jump at {} is not on an interior breakpoint", j.at)))?;
            for (slot, d) in table[k - 1].iter_mut().zip(&j.delta) {
                *slot += d;
            }
        }
        let mut folded = pieces;
        let mut offset = vec![0.0; m];
        for k in 1..intervals {
            for (o, d) in offset.iter_mut().zip(&table[k - 1]) {
                *o += d;
            }
            for (c, o) in folded[k].iter_mut().zip(&offset) {
                c.0[0] += o;
            }
        }
        if let Some(i) = folded[0].iter().position(|c| c.0[0] != 0.0) {
            return Err(Error::InvalidControl(format!("channel {i} does not vanish at t = 0")));
        }
        Ok(Self { breakpoints, pieces: folded, shapes, jumps: table, k1, dim })
    }

    /// `u = 0` on `[0, horizon]`.
    pub fn zero(m: usize, dim: usize, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![vec![Cubic::default(); m]], vec![Shape::Constant; m], vec![], 0.0, dim)
    }

    pub fn channels(&self) -> usize {
        self.shapes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("at least two breakpoints")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn intervals(&self) -> usize {
        self.pieces.len()
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Coefficients of interval `k` with jump offsets folded in.
    pub fn piece(&self, k: usize) -> &[Cubic] {
        &self.pieces[k]
    }

    /// True when no channel depends on `lambda`.
    pub fn lambda_independent(&self) -> bool {
        self.shapes.iter().all(|s| matches!(s, Shape::Constant))
    }

    /// Same control with another declared Lipschitz constant.
    pub fn with_k1(mut self, k1: f64) -> Self {
        self.k1 = k1;
        self
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Ok(())
    }

    /// Interval `k` with `t in [t_k, t_{k+1})`; the horizon belongs to the last one.
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let k = self.breakpoints.partition_point(|&b| b <= t);
        Ok((k.max(1) - 1).min(self.intervals() - 1))
    }

    /// Index `k` of an interior breakpoint `t_k` equal to `t`.
    pub fn breakpoint_index(&self, t: f64) -> Option<usize> {
        (1..self.intervals()).find(|&k| self.breakpoints[k] == t)
    }

    fn shape_values(&self, lambda: &DVector<f64>) -> Vec<f64> {
        self.shapes.iter().map(|s| s.eval(lambda)).collect()
    }

    fn apply(&self, k: usize, t: f64, lambda: &DVector<f64>) -> Vec<f64> {
        self.pieces[k].iter().zip(self.shape_values(lambda)).map(|(c, phi)| c.eval(t) * phi).collect()
    }

    fn check_lambda(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: lambda.len() });
        }
        Ok(())
    }

    /// `u(t, lambda)`, right-continuous at breakpoints.
    pub fn eval(&self, t: f64, lambda: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let k = self.interval_of(t)?;
        Ok(self.apply(k, t, lambda))
    }

    /// `u(t-, lambda)`.
    pub fn eval_left(&self, t: f64, lambda: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        self.check_time(t)?;
        if t == 0.0 {
            return Err(Error::NoLeftLimit);
        }
        let k = match self.breakpoint_index(t) {
            Some(k) => k - 1,
            None => self.interval_of(t)?,
        };
        Ok(self.apply(k, t, lambda))
    }

    /// `du/dt` using the piece that contains `t` (the right piece at a breakpoint).
    pub fn rate(&self, t: f64, lambda: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let k = self.interval_of(t)?;
        Ok(self.pieces[k].iter().zip(self.shape_values(lambda)).map(|(c, phi)| c.derivative(t) * phi).collect())
    }

    /// `du/dt` on interval `k`, which may be evaluated at either end.
    pub fn rate_on(&self, k: usize, t: f64, lambda: &DVector<f64>) -> Vec<f64> {
        self.pieces[k].iter().zip(self.shape_values(lambda)).map(|(c, phi)| c.derivative(t) * phi).collect()
    }

    /// `u` on interval `k`, which may be evaluated at either end.
    pub fn eval_on(&self, k: usize, t: f64, lambda: &DVector<f64>) -> Vec<f64> {
        self.apply(k, t, lambda)
    }

    /// `Delta u(t_k, lambda)` for the interior breakpoint `t_k`.
    pub fn jump(&self, k: usize, lambda: &DVector<f64>) -> Vec<f64> {
        if k == 0 || k >= self.intervals() {
            return vec![0.0; self.channels()];
        }
        let t = self.breakpoints[k];
        let right = self.apply(k, t, lambda);
        let left = self.apply(k - 1, t, lambda);
        right.iter().zip(left).map(|(r, l)| r - l).collect()
    }

    /// The `m x n` matrix `d u / d lambda` at `(t, lambda)`.
    pub fn lambda_jacobian(&self, t: f64, lambda: &DVector<f64>, left: bool) -> Result<DMatrix<f64>> {
        self.check_lambda(lambda)?;
        let k = if left {
            self.check_time(t)?;
            if t == 0.0 {
                return Err(Error::NoLeftLimit);
            }
            self.breakpoint_index(t).map(|k| k - 1).unwrap_or(self.interval_of(t)?)
        } else {
            self.interval_of(t)?
        };
        let mut out = DMatrix::zeros(self.channels(), self.dim);
        for (i, (c, s)) in self.pieces[k].iter().zip(&self.shapes).enumerate() {
            out.set_row(i, &(s.gradient(lambda) * c.eval(t)).transpose());
        }
        Ok(out)
    }

    /// `sup_t |c_i(t)|` over `[0, T]` per channel.
    pub fn coefficient_sup(&self) -> Vec<f64> {
        (0..self.channels())
            .map(|i| {
                (0..self.intervals())
                    .map(|k| self.pieces[k][i].sup_abs(self.breakpoints[k], self.breakpoints[k + 1]))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Coefficient variation per channel, smooth parts plus jumps, scaled by `sup |phi_i|`.
    pub fn total_variation(&self) -> Vec<f64> {
        (0..self.channels())
            .map(|i| {
                let smooth: f64 = (0..self.intervals())
                    .map(|k| self.pieces[k][i].variation(self.breakpoints[k], self.breakpoints[k + 1]))
                    .sum();
                let jumps: f64 = (1..self.intervals())
                    .map(|k| {
                        let t = self.breakpoints[k];
                        (self.pieces[k][i].eval(t) - self.pieces[k - 1][i].eval(t)).abs()
                    })
                    .sum();
                (smooth + jumps) * self.shapes[i].sup_value()
            })
            .collect()
    }

    /// Declared coefficient jumps per interior breakpoint.
    pub fn declared_jumps(&self) -> &[Vec<f64>] {
        &self.jumps
    }

    /// Checks every admissibility clause against the box of `sys`.
    pub fn validate(&self, sys: &VectorFieldSystem, seed: u64) -> ControlReport {
        let mut clauses = Vec::new();
        let m = self.channels();
        if m != sys.count() || self.dim != sys.dim() {
            clauses.push(Clause::new(
                "shape",
                false,
                -1.0,
                format!(
                    "control has {m} channels on R^{}, system has {} fields on R^{}",
                    self.dim,
                    sys.count(),
                    sys.dim()
                ),
            ));
            return ControlReport::from_clauses(clauses, vec![0.0; m]);
        }

        let origin = self.apply(0, 0.0, sys.center());
        let initial = origin.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
        clauses.push(Clause::new("initial_value", initial == 0.0, -initial, format!("max |u(0)| = {initial:e}")));

        let sup_c = self.coefficient_sup();
        let mut range_margin = f64::INFINITY;
        let mut range_detail = String::new();
        for i in 0..m {
            let bound = sup_c[i] * self.shapes[i].sup_value();
            let margin = sys.half_widths()[i] - bound;
            if margin < range_margin {
                range_margin = margin;
                range_detail = format!("channel {i}: sup |u| <= {bound:e} against a = {:e}", sys.half_widths()[i]);
            }
        }
        // grid confirmation over (t, lambda) in [0, T] x B(x*, 2 gamma)
        let lambdas = ball_points(sys.center(), 2.0 * sys.radius(), 64, derive_seed(seed, 21));
        let mut grid_worst = f64::INFINITY;
        for k in 0..self.intervals() {
            let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
            for s in 0..=16 {
                let t = a + (b - a) * s as f64 / 16.0;
                for l in &lambdas {
                    for (i, v) in self.apply(k, t, l).iter().enumerate() {
                        grid_worst = grid_worst.min(sys.half_widths()[i] - v.abs());
                    }
                }
            }
        }
        let range_ok = range_margin >= 0.0 && grid_worst >= 0.0;
        clauses.push(Clause::new("range", range_ok, range_margin.min(grid_worst), range_detail));

        let mut lip_margin = f64::INFINITY;
        let mut lip_detail = String::new();
        for i in 0..m {
            let bound = sup_c[i] * self.shapes[i].sup_gradient();
            if self.k1 - bound < lip_margin {
                lip_margin = self.k1 - bound;
                lip_detail = format!("channel {i}: sup |grad u| <= {bound:e} against K1 = {:e}", self.k1);
            }
        }
        clauses.push(Clause::new("lipschitz", lip_margin >= 0.0, lip_margin, lip_detail));

        let tv = self.total_variation();
        let tv_ok = tv.iter().all(|v| v.is_finite());
        clauses.push(Clause::new("bounded_variation", tv_ok, 0.0, format!("total variation {tv:?}")));
        ControlReport::from_clauses(clauses, tv)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub name: &'static str,
    pub pass: bool,
    pub margin: f64,
    pub detail: String,
}

impl Clause {
    fn new(name: &'static str, pass: bool, margin: f64, detail: String) -> Self {
        Self { name, pass, margin, detail }
    }
}

/// Outcome of [`AdmissibleControl::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ControlReport {
    pub pass: bool,
    /// First failing clause.
    pub violated: Option<&'static str>,
    pub clauses: Vec<Clause>,
    pub total_variation: Vec<f64>,
}

impl ControlReport {
    fn from_clauses(clauses: Vec<Clause>, total_variation: Vec<f64>) -> Self {
        let violated = clauses.iter().find(|c| !c.pass).map(|c| c.name);
        Self { pass: violated.is_none(), violated, clauses, total_variation }
    }
}

/// One node of a [`TimeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridNode {
    pub t: f64,
    /// Continuity interval the node belongs to.
    pub interval: usize,
    /// Left-limit node `t_k-` closing interval `k - 1`.
    pub left: bool,
}

/// Uniform cells inside every continuity interval. Each interior breakpoint
/// appears twice: first as the left limit closing the previous interval,
/// then as the right value opening the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<GridNode>,
    cells: usize,
    spans: Vec<(usize, usize)>,
}

pub const DEFAULT_CELLS: usize = 200;

impl TimeGrid {
    pub fn new(breakpoints: &[f64], cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::GridMismatch("at least one cell per interval is required".into()));
        }
        if breakpoints.len() < 2 {
            return Err(Error::GridMismatch("need at least one interval".into()));
        }
        let intervals = breakpoints.len() - 1;
        let mut nodes = Vec::with_capacity(intervals * (cells + 1));
        let mut spans = Vec::with_capacity(intervals);
        for k in 0..intervals {
            let (a, b) = (breakpoints[k], breakpoints[k + 1]);
            let start = nodes.len();
            for j in 0..=cells {
                let t = if j == cells { b } else { a + (b - a) * j as f64 / cells as f64 };
                nodes.push(GridNode { t, interval: k, left: j == cells && k + 1 < intervals });
            }
            spans.push((start, nodes.len() - 1));
        }
        Ok(Self { nodes, cells, spans })
    }

    pub fn for_control(u: &AdmissibleControl, cells: usize) -> Result<Self> {
        Self::new(u.breakpoints(), cells)
    }

    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Inclusive node ranges `(first, last)` of every continuity interval.
    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl AdmissibleControl {
    /// `u` at a grid node, honouring left-limit nodes.
    pub fn eval_node(&self, node: &GridNode, lambda: &DVector<f64>) -> Vec<f64> {
        self.apply(node.interval, node.t, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Builtin;

    fn lam(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn c(a: [f64; 4]) -> Cubic {
        Cubic(a)
    }

    fn jump_control() -> AdmissibleControl {
        AdmissibleControl::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![c([0.0, 0.1, 0.0, 0.0]), Cubic::default()], vec![c([0.0, 0.1, 0.0, 0.0]), Cubic::default()]],
            vec![Shape::Constant, Shape::Constant],
            vec![Jump { at: 0.5, delta: vec![0.02, 0.0] }],
            0.0,
            2,
        )
        .unwrap()
    }

    #[test]
    fn single_piece_evaluation() {
        let u = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![c([0.0, 0.1, 0.0, 0.0]), Cubic::default()]],
            vec![Shape::Constant; 2],
            vec![],
            0.0,
            2,
        )
        .unwrap();
        let l = lam(&[0.3, 0.4]);
        assert_eq!(u.eval(0.5, &l).unwrap(), vec![0.05, 0.0]);
        assert_eq!(u.eval(0.0, &l).unwrap(), vec![0.0, 0.0]);
        assert_eq!(u.eval_left(0.5, &l).unwrap(), u.eval(0.5, &l).unwrap());
        assert_eq!(u.eval_left(1.0, &l).unwrap(), vec![0.1, 0.0]);
        assert_eq!(u.eval(1.0, &l).unwrap(), vec![0.1, 0.0]);
        assert!(matches!(u.eval(1.5, &l), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(u.eval_left(0.0, &l), Err(Error::NoLeftLimit)));
    }

    #[test]
    fn jump_is_right_continuous() {
        let u = jump_control();
        let l = lam(&[0.0, 0.0]);
        let right = u.eval(0.5, &l).unwrap();
        let left = u.eval_left(0.5, &l).unwrap();
        assert!((right[0] - 0.07).abs() < 1e-15);
        assert!((left[0] - 0.05).abs() < 1e-15);
        assert!((u.jump(1, &l)[0] - 0.02).abs() < 1e-15);
        let eps = u.eval(0.5 + 1e-8, &l).unwrap();
        assert!((eps[0] - right[0]).abs() < 1e-8);
        let tv = u.total_variation();
        assert!((tv[0] - 0.12).abs() < 1e-15);
        assert_eq!(tv[1], 0.0);
    }

    #[test]
    fn construction_errors() {
        let shapes = vec![Shape::Constant];
        let nonzero =
            AdmissibleControl::new(vec![0.0, 1.0], vec![vec![c([0.1, 0.0, 0.0, 0.0])]], shapes.clone(), vec![], 0.0, 1);
        assert!(matches!(nonzero, Err(Error::InvalidControl(_))));
        let jump0 = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![Cubic::default()]],
            shapes.clone(),
            vec![Jump { at: 0.0, delta: vec![0.1] }],
            0.0,
            1,
        );
        assert!(matches!(jump0, Err(Error::InvalidControl(m)) if m.contains("t = 0")));
        let offgrid = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![Cubic::default()]],
            shapes.clone(),
            vec![Jump { at: 0.3, delta: vec![0.1] }],
            0.0,
            1,
        );
        assert!(offgrid.is_err());
        let steep = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![Cubic::default()]],
            vec![Shape::Radial { center: vec![0.0], length: 0.5 }],
            vec![],
            0.0,
            1,
        );
        assert!(steep.is_err());
        let unordered =
            AdmissibleControl::new(vec![0.0, 0.0, 1.0], vec![vec![Cubic::default()]; 2], shapes, vec![], 0.0, 1);
        assert!(unordered.is_err());
    }

    #[test]
    fn cubic_sup_and_variation() {
        // c(t) = t - t^3 on [0, 1]: peak at 1/sqrt(3)
        let q = c([0.0, 1.0, 0.0, -1.0]);
        let tp = 1.0 / 3f64.sqrt();
        let peak = tp - tp.powi(3);
        assert!((q.sup_abs(0.0, 1.0) - peak).abs() < 1e-15);
        assert!((q.variation(0.0, 1.0) - 2.0 * peak).abs() < 1e-15);
        let lin = c([0.0, -2.0, 0.0, 0.0]);
        assert_eq!(lin.sup_abs(0.0, 1.5), 3.0);
        assert_eq!(lin.variation(0.0, 1.5), 3.0);
        let quad = c([0.0, -1.0, 1.0, 0.0]);
        assert!((quad.variation(0.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_bounds() {
        let radial = Shape::Radial { center: vec![0.0, 0.0], length: 1.0 };
        let r = 1.0 / 3f64.sqrt();
        let g = radial.gradient(&lam(&[r, 0.0])).norm();
        assert!((g - radial.sup_gradient()).abs() < 1e-14);
        let ridge = Shape::Ridge { direction: vec![0.6, 0.8], center: vec![0.1, 0.0] };
        assert!((ridge.gradient(&lam(&[0.1, 0.0])).norm() - 1.0).abs() < 1e-15);
        let x = lam(&[0.3, -0.2]);
        let h = 1e-6;
        for shape in [radial, ridge] {
            let grad = shape.gradient(&x);
            for j in 0..2 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (shape.eval(&xp) - shape.eval(&xm)) / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-9);
            }
        }
    }

    fn translations(a: f64) -> VectorFieldSystem {
        Builtin::Translations { dim: 2 }.build(DVector::zeros(2), 1.0, vec![a; 2]).unwrap()
    }

    #[test]
    fn validate_clauses() {
        let sys = translations(0.1);
        let zero = AdmissibleControl::zero(2, 2, 1.0).unwrap();
        let r = zero.validate(&sys, 1);
        assert!(r.pass);
        assert!(r.total_variation.iter().all(|v| *v == 0.0));

        let too_big = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![c([0.0, 0.15, 0.0, 0.0]), Cubic::default()]],
            vec![Shape::Constant; 2],
            vec![],
            0.0,
            2,
        )
        .unwrap();
        let r = too_big.validate(&sys, 1);
        assert_eq!(r.violated, Some("range"));

        let steep = AdmissibleControl::new(
            vec![0.0, 1.0],
            vec![vec![c([0.0, 0.3, 0.0, 0.0]), Cubic::default()]],
            vec![Shape::Ridge { direction: vec![1.0, 0.0], center: vec![0.0, 0.0] }, Shape::Constant],
            vec![],
            0.2,
            2,
        )
        .unwrap();
        let r = steep.validate(&translations(0.5), 1);
        assert_eq!(r.violated, Some("lipschitz"));
        let lip = r.clauses.iter().find(|c| c.name == "lipschitz").unwrap();
        assert!((lip.margin + 0.1).abs() < 1e-15);

        let ok = steep.with_k1(0.3);
        assert!(ok.validate(&translations(0.5), 1).pass);
    }

    #[test]
    fn grid_layout() {
        let g = TimeGrid::new(&[0.0, 0.5, 1.0], 4).unwrap();
        assert_eq!(g.len(), 10);
        let n = g.nodes();
        assert_eq!(n[4], GridNode { t: 0.5, interval: 0, left: true });
        assert_eq!(n[5], GridNode { t: 0.5, interval: 1, left: false });
        assert_eq!(n[9], GridNode { t: 1.0, interval: 1, left: false });
        assert_eq!(g.spans(), &[(0, 4), (5, 9)]);
        let u = jump_control();
        let l = lam(&[0.0, 0.0]);
        assert_eq!(u.eval_node(&n[4], &l), u.eval_left(0.5, &l).unwrap());
        assert_eq!(u.eval_node(&n[5], &l), u.eval(0.5, &l).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn lambda_lipschitz(
                t in 0.0..1.0f64,
                a in prop::collection::vec(-1.0..1.0f64, 2),
                b in prop::collection::vec(-1.0..1.0f64, 2),
                k in 0.05..0.3f64,
            ) {
                let u = AdmissibleControl::new(
                    vec![0.0, 1.0],
                    vec![vec![c([0.0, k, 0.0, 0.0]), c([0.0, 0.0, k, 0.0])]],
                    vec![
                        Shape::Ridge { direction: vec![0.6, -0.8], center: vec![0.1, 0.2] },
                        Shape::Radial { center: vec![0.0, 0.3], length: 0.7 },
                    ],
                    vec![],
                    k,
                    2,
                ).unwrap();
                let (la, lb) = (DVector::from_vec(a), DVector::from_vec(b));
                let ua = DVector::from_vec(u.eval(t, &la).unwrap());
                let ub = DVector::from_vec(u.eval(t, &lb).unwrap());
                prop_assert!((ua - ub).norm() <= k * 2f64.sqrt() * (la - lb).norm() + 1e-15);
            }

            #[test]
            fn variation_is_additive(coeffs in prop::collection::vec(-1.0..1.0f64, 6), d in -0.5..0.5f64, s in 0.1..0.9f64) {
                let p0 = c([0.0, coeffs[0], coeffs[1], coeffs[2]]);
                let p1 = c([coeffs[3], coeffs[4], coeffs[5], 0.0]);
                let u = AdmissibleControl::new(
                    vec![0.0, s, 1.0],
                    vec![vec![p0], vec![p1]],
                    vec![Shape::Constant],
                    vec![Jump { at: s, delta: vec![d] }],
                    0.0,
                    1,
                ).unwrap();
                let jump = (p1.eval(s) + d - p0.eval(s)).abs();
                let expected = p0.variation(0.0, s) + p1.variation(s, 1.0) + jump;
                prop_assert!((u.total_variation()[0] - expected).abs() <= 1e-12);
                // fine sampling never exceeds the exact variation
                let l = DVector::from_vec(vec![0.0]);
                let mut sampled = 0.0;
                let mut prev = 0.0;
                for j in 1..=2000 {
                    let t = j as f64 / 2000.0;
                    let v = u.eval(t, &l).unwrap()[0];
                    sampled += (v - prev).abs();
                    prev = v;
                }
                prop_assert!(sampled <= expected + 1e-12);
            }
        }
    }
}
