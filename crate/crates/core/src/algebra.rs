//! Coordinates of the pushed-forward frame in terms of the original one.
//!
//! With `(ad_i)_{k,l} = gamma_k^{il}`, column `j` of `A(p)` is
//! `exp(-t_0 ad_0) ... exp(-t_{j-1} ad_{j-1}) e_j`, so that
//! `d/dt_j G(p)[lambda] = sum_i A_{ij}(p) g_i(G(p)[lambda])`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fields::{StructureConstants, VectorFieldSystem};
use crate::flows::compose_raw;

/// Matrix exponential: exact power series when `a` is nilpotent, Padé(13)
/// with scaling and squaring otherwise.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if let Some(series) = nilpotent_series(a) {
        return series;
    }
    const THETA_13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let norm1 = (0..n).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    let s = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let mut r = (&v - &u).lu().solve(&(&v + &u)).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn nilpotent_series(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        term = &term * a / k as f64;
        if term.iter().all(|&v| v == 0.0) {
            return Some(sum);
        }
        sum += &term;
    }
    None
}

/// Largest singular value, by 20 power iterations on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let cols = m.ncols();
    if cols == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment to coordinate axes
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mtm = m.transpose() * m;
    for _ in 0..20 {
        let w = &mtm * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    (m * v).norm()
}

/// The adjoint matrices of a system together with its drift matrix.
#[derive(Debug, Clone)]
pub struct CoordinateAlgebra {
    ad: Vec<DMatrix<f64>>,
    ad0: Option<DMatrix<f64>>,
}

impl CoordinateAlgebra {
    pub fn from_constants(gamma: &StructureConstants, drift: Option<&DMatrix<f64>>) -> Self {
        let m = gamma.order();
        let ad = (0..m).map(|i| DMatrix::from_fn(m, m, |k, l| gamma.get(k, i, l))).collect();
        let ad0 = drift.filter(|d| d.iter().any(|&v| v != 0.0)).cloned();
        Self { ad, ad0 }
    }

    pub fn for_system(sys: &VectorFieldSystem) -> Result<Self> {
        let gamma = sys.structure().ok_or(Error::MissingStructureConstants)?;
        let drift = if sys.has_drift() { sys.drift_constants() } else { None };
        Ok(Self::from_constants(gamma, drift))
    }

    pub fn order(&self) -> usize {
        self.ad.len()
    }

    pub fn ad(&self, i: usize) -> &DMatrix<f64> {
        &self.ad[i]
    }

    /// `(ad_0)_{k,i} = gamma_k^i`; `None` when the drift commutes with every field.
    pub fn drift_matrix(&self) -> Option<&DMatrix<f64>> {
        self.ad0.as_ref()
    }

    /// True when `ad_i` is nilpotent, so `exp(-t ad_i)` is a finite polynomial in `t`.
    pub fn is_nilpotent(&self, i: usize) -> bool {
        nilpotent_series(&self.ad[i]).is_some()
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.order() {
            return Err(Error::DimensionMismatch { expected: self.order(), got: p.len() });
        }
        Ok(())
    }

    /// `A(p)`, an `m x m` matrix with `A(0) = I`.
    pub fn a_matrix(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check(p)?;
        let m = self.order();
        let mut out = DMatrix::zeros(m, m);
        let mut prefix = DMatrix::<f64>::identity(m, m);
        for j in 0..m {
            out.set_column(j, &prefix.column(j));
            if j + 1 < m && p[j] != 0.0 {
                prefix *= expm(&(&self.ad[j] * -p[j]));
            }
        }
        Ok(out)
    }

    /// `exp(-t ad_0) A(p)`: the coordinates of `d/dt_j G(p)` after the
    /// drift has run for time `t`. Equals `A(p)` when the drift commutes.
    pub fn drift_columns(&self, t: f64, p: &[f64]) -> Result<DMatrix<f64>> {
        let a = self.a_matrix(p)?;
        Ok(match &self.ad0 {
            Some(ad0) if t != 0.0 => expm(&(ad0 * -t)) * a,
            _ => a,
        })
    }

    /// The `(m+1) x (m+1)` matrix `diag(1, exp(-t ad_0) A(p))` acting on
    /// `(t, p)`-increments.
    pub fn v_matrix(&self, t: f64, p: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.drift_columns(t, p)?;
        let m = self.order();
        let mut out = DMatrix::zeros(m + 1, m + 1);
        out[(0, 0)] = 1.0;
        out.view_mut((1, 1), (m, m)).copy_from(&b);
        Ok(out)
    }
}

/// Independent estimate of column `j` of `A(p)`: central differences of
/// `G(p)[lambda]` in `t_j`, then least squares in the frame at `G(p)[lambda]`.
pub fn oracle_column(sys: &VectorFieldSystem, p: &[f64], j: usize, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    sys.require_in_box(p)?;
    sys.require_in_ball(lambda, 2.0)?;
    let m = sys.count();
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, count: m });
    }
    let x = lambda;
    let h = 1e-6 * sys.half_widths()[j];
    let mut plus = p.to_vec();
    plus[j] += h;
    let mut minus = p.to_vec();
    minus[j] -= h;
    let d = (compose_raw(sys, &plus, x, false)?.value - compose_raw(sys, &minus, x, false)?.value) / (2.0 * h);
    let y = compose_raw(sys, p, x, false)?.value;
    let svd = sys.frame(&y).svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.rank(tol);
    if rank < m {
        return Err(Error::Degenerate { rank, expected: m });
    }
    svd.solve(&d, tol).map_err(|e| Error::InvalidSystem(e.to_string()))
}
