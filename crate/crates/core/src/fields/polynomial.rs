use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::VectorField;

/// One term `coeff * x_1^{p_1} ... x_n^{p_n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, powers: Vec<u32>) -> Self {
        Self { coeff, powers }
    }

    pub fn constant(coeff: f64, dim: usize) -> Self {
        Self::new(coeff, vec![0; dim])
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.powers.iter().zip(x.iter()).fold(self.coeff, |acc, (&p, &xi)| acc * xi.powi(p as i32))
    }

    fn partial(&self, x: &DVector<f64>, var: usize) -> f64 {
        let p = self.powers[var];
        if p == 0 {
            return 0.0;
        }
        let mut acc = self.coeff * p as f64;
        for (k, (&q, &xk)) in self.powers.iter().zip(x.iter()).enumerate() {
            let e = if k == var { q - 1 } else { q };
            acc *= xk.powi(e as i32);
        }
        acc
    }
}

/// A vector field whose components are polynomials, with exact Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialField {
    dim: usize,
    components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    /// `components[c]` lists the terms of the c-th component.
    pub fn new(components: Vec<Vec<Monomial>>) -> Result<Self, String> {
        let dim = components.len();
        if dim == 0 {
            return Err("polynomial field needs at least one component".into());
        }
        for (c, terms) in components.iter().enumerate() {
            for t in terms {
                if t.powers.len() != dim {
                    return Err(format!("component {c}: monomial has {} exponents, expected {dim}", t.powers.len()));
                }
                if !t.coeff.is_finite() {
                    return Err(format!("component {c}: non-finite coefficient"));
                }
            }
        }
        Ok(Self { dim, components })
    }

    pub fn constant(v: &[f64]) -> Self {
        let n = v.len();
        let components = v.iter().map(|&c| if c == 0.0 { vec![] } else { vec![Monomial::constant(c, n)] }).collect();
        Self { dim: n, components }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, components: vec![Vec::new(); dim] }
    }

    pub fn components(&self) -> &[Vec<Monomial>] {
        &self.components
    }
}

impl VectorField for PolynomialField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.components.iter().map(|terms| terms.iter().map(|t| t.eval(x)).sum()))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.dim, self.dim, |r, c| self.components[r].iter().map(|t| t.partial(x, c)).sum()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_and_differentiates() {
        // (x0^2 x1, 3) in the plane
        let f =
            PolynomialField::new(vec![vec![Monomial::new(1.0, vec![2, 1])], vec![Monomial::constant(3.0, 2)]]).unwrap();
        let x = DVector::from_vec(vec![2.0, -1.5]);
        assert_eq!(f.eval(&x), DVector::from_vec(vec![-6.0, 3.0]));
        let j = f.jacobian(&x).unwrap();
        assert_eq!(j[(0, 0)], -6.0);
        assert_eq!(j[(0, 1)], 4.0);
        assert_eq!(j[(1, 0)], 0.0);
    }

    #[test]
    fn rejects_wrong_arity() {
        assert!(PolynomialField::new(vec![vec![Monomial::new(1.0, vec![1])], vec![]]).is_err());
    }
}
