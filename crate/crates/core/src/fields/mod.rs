//! Vector-field systems, Lie brackets and the involution hypothesis.
//!
//! A [`VectorFieldSystem`] bundles the control fields `g_1..g_m` (and an
//! optional drift `g_0`) on `R^n` with the structure constants
//! `[g_i, g_j] = sum_k gamma_k^{ij} g_k`, the working ball `B(x*, gamma)` and
//! the parameter box `prod [-a_i, a_i]`.
//!
//! Bracket convention: `[X, Y](x) = DY(x) X(x) - DX(x) Y(x)`.

mod catalog;
mod polynomial;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use catalog::{Builtin, HeadingField};
pub use polynomial::{Monomial, PolynomialField};

/// A smooth vector field on `R^n`.
///
/// Implementors that can differentiate themselves in closed form should
/// override [`VectorField::jacobian`]; otherwise a central-difference
/// Jacobian is used.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Central-difference Jacobian with step `1e-6 * (1 + |x|)`.
pub fn fd_jacobian(field: &dyn VectorField, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let h = 1e-6 * (1.0 + x.norm());
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for c in 0..n {
        xp[c] = x[c] + h;
        let fp = field.eval(&xp);
        xp[c] = x[c] - h;
        let fm = field.eval(&xp);
        xp[c] = x[c];
        jac.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Selects the drift `g_0` or one of the control fields (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    Drift,
    Field(usize),
}

/// The tensor `gamma_k^{ij}`, antisymmetric in `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    m: usize,
    data: Vec<f64>,
}

impl StructureConstants {
    pub fn zeros(m: usize) -> Self {
        Self { m, data: vec![0.0; m * m * m] }
    }

    /// Builds the tensor from `(i, j, k, value)` entries meaning
    /// `[g_i, g_j]` has coefficient `value` on `g_k`. The `(j, i)` entry is
    /// filled in with the opposite sign; conflicting entries are rejected.
    pub fn from_entries(m: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut out = Self::zeros(m);
        let mut seen = vec![false; m * m * m];
        for &(i, j, k, v) in entries {
            for idx in [i, j, k] {
                if idx >= m {
                    return Err(Error::IndexOutOfRange { index: idx, count: m });
                }
            }
            if i == j && v != 0.0 {
                return Err(Error::InvalidSystem(format!("[g_{i}, g_{i}] must vanish but entry gives {v} on g_{k}")));
            }
            let a = out.index(k, i, j);
            let b = out.index(k, j, i);
            if (seen[a] && out.data[a] != v) || (seen[b] && out.data[b] != -v) {
                return Err(Error::InvalidSystem(format!(
                    "conflicting structure constants for pair ({i}, {j}) on g_{k}"
                )));
            }
            out.data[a] = v;
            out.data[b] = -v;
            seen[a] = true;
            seen[b] = true;
        }
        Ok(out)
    }

    #[inline]
    fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.m + i) * self.m + j
    }

    pub fn order(&self) -> usize {
        self.m
    }

    /// `gamma_k^{ij}`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(k, i, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        let a = self.index(k, i, j);
        let b = self.index(k, j, i);
        self.data[a] = value;
        self.data[b] = -value;
    }

    /// Largest `|gamma_k^{ij} + gamma_k^{ji}|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let m = self.m;
        let mut worst: f64 = 0.0;
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    worst = worst.max((self.get(k, i, j) + self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Control fields, optional drift, structure constants and working geometry.
#[derive(Clone)]
pub struct VectorFieldSystem {
    name: String,
    dim: usize,
    fields: Vec<Arc<dyn VectorField>>,
    drift: Option<Arc<dyn VectorField>>,
    structure: Option<StructureConstants>,
    drift_constants: Option<DMatrix<f64>>,
    center: DVector<f64>,
    radius: f64,
    half_widths: Vec<f64>,
}

impl fmt::Debug for VectorFieldSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("fields", &self.fields.len())
            .field("drift", &self.drift.is_some())
            .field("center", &self.center.as_slice())
            .field("radius", &self.radius)
            .field("half_widths", &self.half_widths)
            .finish()
    }
}

impl VectorFieldSystem {
    pub fn new(
        name: impl Into<String>,
        fields: Vec<Arc<dyn VectorField>>,
        center: DVector<f64>,
        radius: f64,
        half_widths: Vec<f64>,
    ) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidSystem("at least one field is required".into()));
        }
        let dim = center.len();
        if dim == 0 {
            return Err(Error::InvalidSystem("dimension must be positive".into()));
        }
        for f in &fields {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: f.dim() });
            }
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSystem(format!("radius must be positive, got {radius}")));
        }
        if half_widths.len() != fields.len() {
            return Err(Error::DimensionMismatch { expected: fields.len(), got: half_widths.len() });
        }
        if let Some(a) = half_widths.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidSystem(format!("box half-widths must be positive, got {a}")));
        }
        Ok(Self {
            name: name.into(),
            dim,
            fields,
            drift: None,
            structure: None,
            drift_constants: None,
            center,
            radius,
            half_widths,
        })
    }

    pub fn with_drift(mut self, drift: Arc<dyn VectorField>) -> Result<Self> {
        if drift.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: drift.dim() });
        }
        self.drift = Some(drift);
        Ok(self)
    }

    pub fn with_structure_constants(mut self, gamma: StructureConstants) -> Result<Self> {
        if gamma.order() != self.count() {
            return Err(Error::DimensionMismatch { expected: self.count(), got: gamma.order() });
        }
        if gamma.antisymmetry_defect() > 0.0 {
            return Err(Error::InvalidSystem("structure constants are not antisymmetric".into()));
        }
        self.structure = Some(gamma);
        Ok(self)
    }

    /// Drift bracket constants with `d[(k, i)] = gamma_k^i`, i.e.
    /// `[g_0, g_i] = sum_k gamma_k^i g_k`. Without them the drift is taken
    /// to commute with every control field.
    pub fn with_drift_constants(mut self, d: DMatrix<f64>) -> Result<Self> {
        let m = self.count();
        if d.nrows() != m || d.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, got: d.nrows().max(d.ncols()) });
        }
        self.drift_constants = Some(d);
        Ok(self)
    }

    pub fn without_structure_constants(mut self) -> Self {
        self.structure = None;
        self
    }

    /// Same fields and constants on a different working geometry.
    pub fn with_geometry(mut self, center: DVector<f64>, radius: f64, half_widths: Vec<f64>) -> Result<Self> {
        let fresh = Self::new(self.name.clone(), self.fields.clone(), center, radius, half_widths)?;
        self.center = fresh.center;
        self.radius = fresh.radius;
        self.half_widths = fresh.half_widths;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of control fields `m`.
    pub fn count(&self) -> usize {
        self.fields.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn structure(&self) -> Option<&StructureConstants> {
        self.structure.as_ref()
    }

    pub fn drift_constants(&self) -> Option<&DMatrix<f64>> {
        self.drift_constants.as_ref()
    }

    /// True when the drift is declared to commute with every field (no drift constants).
    pub fn drift_commutes(&self) -> bool {
        self.drift_constants.as_ref().is_none_or(|d| d.iter().all(|&v| v == 0.0))
    }

    fn generator(&self, g: Generator) -> Result<&dyn VectorField> {
        match g {
            Generator::Drift => self.drift.as_deref().ok_or(Error::NoDrift),
            Generator::Field(i) => self
                .fields
                .get(i)
                .map(|f| f.as_ref())
                .ok_or(Error::IndexOutOfRange { index: i, count: self.fields.len() }),
        }
    }

    pub fn eval(&self, g: Generator, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.generator(g)?.eval(x))
    }

    /// Analytic Jacobian when the field provides one, central differences otherwise.
    pub fn jacobian(&self, g: Generator, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = self.generator(g)?;
        Ok(f.jacobian(x).unwrap_or_else(|| fd_jacobian(f, x)))
    }

    /// The `n x m` frame matrix `{g_1(x), ..., g_m(x)}`.
    pub fn frame(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.count());
        for (i, f) in self.fields.iter().enumerate() {
            out.set_column(i, &f.eval(x));
        }
        out
    }

    pub fn distance_from_center(&self, x: &DVector<f64>) -> f64 {
        (x - &self.center).norm()
    }

    /// Fails unless `|x - x*| <= factor * gamma` (up to rounding).
    pub fn require_in_ball(&self, x: &DVector<f64>, factor: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let distance = self.distance_from_center(x);
        let limit = factor * self.radius;
        if distance > limit * (1.0 + 1e-12) {
            return Err(Error::OutsideDomain { distance, limit });
        }
        Ok(())
    }

    /// Fails unless `p` lies in the parameter box.
    pub fn require_in_box(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.count() {
            return Err(Error::DimensionMismatch { expected: self.count(), got: p.len() });
        }
        for (index, (&value, &bound)) in p.iter().zip(&self.half_widths).enumerate() {
            if !(value.abs() <= bound * (1.0 + 1e-12)) {
                return Err(Error::OutsideBox { index, value, bound });
            }
        }
        Ok(())
    }
}

/// `[g_i, g_j](x) = Dg_j(x) g_i(x) - Dg_i(x) g_j(x)`.
pub fn lie_bracket(sys: &VectorFieldSystem, i: Generator, j: Generator, x: &DVector<f64>) -> Result<DVector<f64>> {
    sys.require_in_ball(x, 3.0)?;
    let gi = sys.eval(i, x)?;
    let gj = sys.eval(j, x)?;
    if i == j {
        return Ok(DVector::zeros(sys.dim()));
    }
    let dgi = sys.jacobian(i, x)?;
    let dgj = sys.jacobian(j, x)?;
    Ok(dgj * gi - dgi * gj)
}

/// Largest deviation of a bracket from its declared constant-coefficient
/// expansion over the sample points. With a drift, `[g_0, g_i]` is compared
/// against the drift constants, or against zero when none are declared.
pub fn involution_residual(sys: &VectorFieldSystem, samples: &[DVector<f64>]) -> Result<f64> {
    let gamma = sys.structure().ok_or(Error::MissingStructureConstants)?;
    let m = sys.count();
    let mut worst: f64 = 0.0;
    for x in samples {
        let frame = sys.frame(x);
        for i in 0..m {
            for j in (i + 1)..m {
                let br = lie_bracket(sys, Generator::Field(i), Generator::Field(j), x)?;
                let coeffs = DVector::from_fn(m, |k, _| gamma.get(k, i, j));
                worst = worst.max((br - &frame * coeffs).norm());
            }
        }
        if sys.has_drift() {
            for i in 0..m {
                let br = lie_bracket(sys, Generator::Drift, Generator::Field(i), x)?;
                let expected = match sys.drift_constants() {
                    Some(d) => &frame * d.column(i),
                    None => DVector::zeros(sys.dim()),
                };
                worst = worst.max((br - expected).norm());
            }
        }
    }
    Ok(worst)
}

/// Outcome of [`fit_structure_constants`].
#[derive(Debug, Clone)]
pub struct StructureFit {
    pub constants: StructureConstants,
    /// Fitted `gamma_k^i` of the drift brackets, when the system has a drift.
    pub drift_constants: Option<DMatrix<f64>>,
    /// `(i, j, residual)` for every fitted pair (`i` is `None` for the drift).
    pub pair_residuals: Vec<(Option<usize>, usize, f64)>,
    pub residual: f64,
    pub accepted: bool,
}

/// Residual at or below which a fitted tensor is accepted.
pub const FIT_ACCEPTANCE: f64 = 1e-8;

fn least_squares(
    sys: &VectorFieldSystem,
    samples: &[DVector<f64>],
    frames: &[DMatrix<f64>],
    bracket: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<(DVector<f64>, f64)> {
    let n = sys.dim();
    let m = sys.count();
    let rows = n * samples.len();
    let mut a = DMatrix::zeros(rows, m);
    let mut b = DVector::zeros(rows);
    let mut targets = Vec::with_capacity(samples.len());
    for (s, (x, frame)) in samples.iter().zip(frames).enumerate() {
        a.view_mut((s * n, 0), (n, m)).copy_from(frame);
        let br = bracket(x)?;
        b.rows_mut(s * n, n).copy_from(&br);
        targets.push(br);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.rank(tol);
    if rank < m {
        return Err(Error::Degenerate { rank, expected: m });
    }
    let c = svd.solve(&b, tol).map_err(|e| Error::InvalidSystem(e.to_string()))?;
    let residual = targets.iter().zip(frames).map(|(t, f)| (t - f * &c).norm()).fold(0.0, f64::max);
    Ok((c, residual))
}

/// Recovers `gamma_k^{ij}` (and drift constants) by least squares over the samples.
pub fn fit_structure_constants(sys: &VectorFieldSystem, samples: &[DVector<f64>]) -> Result<StructureFit> {
    let m = sys.count();
    let mut constants = StructureConstants::zeros(m);
    let mut pair_residuals = Vec::new();
    let mut residual: f64 = 0.0;
    let needs_fit = m > 1 || sys.has_drift();
    if !needs_fit {
        return Ok(StructureFit { constants, drift_constants: None, pair_residuals, residual, accepted: true });
    }
    if samples.is_empty() {
        return Err(Error::Degenerate { rank: 0, expected: m });
    }
    let frames: Vec<_> = samples.iter().map(|x| sys.frame(x)).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            let (c, r) = least_squares(sys, samples, &frames, |x| {
                lie_bracket(sys, Generator::Field(i), Generator::Field(j), x)
            })?;
            for k in 0..m {
                constants.set(k, i, j, c[k]);
            }
            pair_residuals.push((Some(i), j, r));
            residual = residual.max(r);
        }
    }
    let drift_constants = if sys.has_drift() {
        let mut d = DMatrix::zeros(m, m);
        for i in 0..m {
            let (c, r) =
                least_squares(sys, samples, &frames, |x| lie_bracket(sys, Generator::Drift, Generator::Field(i), x))?;
            d.set_column(i, &c);
            pair_residuals.push((None, i, r));
            residual = residual.max(r);
        }
        Some(d)
    } else {
        None
    };
    Ok(StructureFit { constants, drift_constants, pair_residuals, residual, accepted: residual <= FIT_ACCEPTANCE })
}
