use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Monomial, PolynomialField, StructureConstants, VectorField, VectorFieldSystem};
use crate::error::Result;

/// Left-invariant frame of the planar rigid motions in coordinates `(x, y, theta)`:
/// heading `(cos theta, sin theta, 0)` or lateral `(-sin theta, cos theta, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingField {
    pub lateral: bool,
}

impl VectorField for HeadingField {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        if self.lateral {
            DVector::from_vec(vec![-s, c, 0.0])
        } else {
            DVector::from_vec(vec![c, s, 0.0])
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (s, c) = x[2].sin_cos();
        let mut j = DMatrix::zeros(3, 3);
        if self.lateral {
            j[(0, 2)] = -c;
            j[(1, 2)] = -s;
        } else {
            j[(0, 2)] = -s;
            j[(1, 2)] = c;
        }
        Some(j)
    }
}

/// Catalog of complete vector-field systems with known structure constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    /// Coordinate translations `g_i = e_i` in `R^dim`.
    Translations {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `g_1 = (1,0,0)`, `g_2 = (0,1,x_1)`, `g_3 = (0,0,1)`, with `[g_1, g_2] = g_3`.
    Heisenberg,
    /// Planar rigid motions: heading, lateral and `omega * d/dtheta`.
    Rotations {
        #[serde(default = "default_omega")]
        omega: f64,
    },
    /// Heisenberg fields with the commuting drift `g_0 = (a, b, a x_2 + c)`.
    HeisenbergDrift {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
    /// Plane translations with drift `g_0 = (0, -s x_1)`, so `[g_0, g_1] = s g_2`.
    ShearedDrift {
        #[serde(default = "default_shear")]
        shear: f64,
    },
}

fn default_dim() -> usize {
    2
}
fn default_omega() -> f64 {
    1.0
}
fn default_shear() -> f64 {
    0.05
}

fn heisenberg_fields() -> Vec<Arc<dyn VectorField>> {
    let g2 =
        PolynomialField::new(vec![vec![], vec![Monomial::constant(1.0, 3)], vec![Monomial::new(1.0, vec![1, 0, 0])]])
            .expect("well-formed polynomial");
    vec![
        Arc::new(PolynomialField::constant(&[1.0, 0.0, 0.0])),
        Arc::new(g2),
        Arc::new(PolynomialField::constant(&[0.0, 0.0, 1.0])),
    ]
}

impl Builtin {
    pub fn label(&self) -> &'static str {
        match self {
            Builtin::Translations { .. } => "translations",
            Builtin::Heisenberg => "heisenberg",
            Builtin::Rotations { .. } => "rotations",
            Builtin::HeisenbergDrift { .. } => "heisenberg_drift",
            Builtin::ShearedDrift { .. } => "sheared_drift",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Builtin::Translations { dim } => *dim,
            Builtin::ShearedDrift { .. } => 2,
            _ => 3,
        }
    }

    pub fn field_count(&self) -> usize {
        self.dim()
    }

    pub fn build(&self, center: DVector<f64>, radius: f64, half_widths: Vec<f64>) -> Result<VectorFieldSystem> {
        let name = self.label();
        match *self {
            Builtin::Translations { dim } => {
                let fields = (0..dim)
                    .map(|i| {
                        let mut e = vec![0.0; dim];
                        e[i] = 1.0;
                        Arc::new(PolynomialField::constant(&e)) as Arc<dyn VectorField>
                    })
                    .collect();
                VectorFieldSystem::new(name, fields, center, radius, half_widths)?
                    .with_structure_constants(StructureConstants::zeros(dim))
            }
            Builtin::Heisenberg => {
                let gamma = StructureConstants::from_entries(3, &[(0, 1, 2, 1.0)])?;
                VectorFieldSystem::new(name, heisenberg_fields(), center, radius, half_widths)?
                    .with_structure_constants(gamma)
            }
            Builtin::Rotations { omega } => {
                let fields: Vec<Arc<dyn VectorField>> = vec![
                    Arc::new(HeadingField { lateral: false }),
                    Arc::new(HeadingField { lateral: true }),
                    Arc::new(PolynomialField::constant(&[0.0, 0.0, omega])),
                ];
                // [g3, g1] = omega g2, [g3, g2] = -omega g1
                let gamma = StructureConstants::from_entries(3, &[(2, 0, 1, omega), (2, 1, 0, -omega)])?;
                VectorFieldSystem::new(name, fields, center, radius, half_widths)?.with_structure_constants(gamma)
            }
            Builtin::HeisenbergDrift { a, b, c } => {
                let mut third = vec![];
                if a != 0.0 {
                    third.push(Monomial::new(a, vec![0, 1, 0]));
                }
                if c != 0.0 {
                    third.push(Monomial::constant(c, 3));
                }
                let drift =
                    PolynomialField::new(vec![vec![Monomial::constant(a, 3)], vec![Monomial::constant(b, 3)], third])
                        .expect("well-formed polynomial");
                let gamma = StructureConstants::from_entries(3, &[(0, 1, 2, 1.0)])?;
                VectorFieldSystem::new(name, heisenberg_fields(), center, radius, half_widths)?
                    .with_structure_constants(gamma)?
                    .with_drift(Arc::new(drift))
            }
            Builtin::ShearedDrift { shear } => {
                let fields: Vec<Arc<dyn VectorField>> = vec![
                    Arc::new(PolynomialField::constant(&[1.0, 0.0])),
                    Arc::new(PolynomialField::constant(&[0.0, 1.0])),
                ];
                let drift = PolynomialField::new(vec![vec![], vec![Monomial::new(-shear, vec![1, 0])]])
                    .expect("well-formed polynomial");
                let mut d = DMatrix::zeros(2, 2);
                d[(1, 0)] = shear;
                VectorFieldSystem::new(name, fields, center, radius, half_widths)?
                    .with_structure_constants(StructureConstants::zeros(2))?
                    .with_drift(Arc::new(drift))?
                    .with_drift_constants(d)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::involution_residual;
    use crate::sampling::ball_points;

    #[test]
    fn catalog_systems_are_in_involution() {
        let catalog = [
            Builtin::Translations { dim: 2 },
            Builtin::Translations { dim: 4 },
            Builtin::Heisenberg,
            Builtin::Rotations { omega: 0.8 },
            Builtin::HeisenbergDrift { a: 0.03, b: -0.02, c: 0.01 },
            Builtin::ShearedDrift { shear: 0.05 },
        ];
        for b in catalog {
            let n = b.dim();
            let center = DVector::from_element(n, 0.1);
            let sys = b.build(center.clone(), 1.0, vec![0.05; b.field_count()]).unwrap();
            let pts = ball_points(&center, 3.0, 100, 42);
            let r = involution_residual(&sys, &pts).unwrap();
            assert!(r <= 1e-10, "{}: residual {r}", b.label());
        }
    }

    #[test]
    fn config_form_round_trips() {
        let b: Builtin = serde_json::from_str(r#"{"name": "rotations", "omega": 2.0}"#).unwrap();
        assert_eq!(b, Builtin::Rotations { omega: 2.0 });
        let back: Builtin = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
        let t: Builtin = serde_json::from_str(r#"{"name": "translations"}"#).unwrap();
        assert_eq!(t, Builtin::Translations { dim: 2 });
    }
}
