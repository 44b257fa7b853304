//! Fixtures shared by the benchmarks.

use involute_core::{AdmissibleControl, Builtin, CoordinateAlgebra, Cubic, Jump, Shape, VectorFieldSystem};
use nalgebra::DVector;

pub fn heisenberg() -> (VectorFieldSystem, CoordinateAlgebra) {
    let sys = Builtin::Heisenberg.build(DVector::zeros(3), 1.0, vec![0.05; 3]).expect("catalog system");
    let alg = CoordinateAlgebra::for_system(&sys).expect("structure constants");
    (sys, alg)
}

pub fn rotations() -> (VectorFieldSystem, CoordinateAlgebra) {
    let sys = Builtin::Rotations { omega: 1.0 }.build(DVector::zeros(3), 1.0, vec![0.05; 3]).expect("catalog system");
    let alg = CoordinateAlgebra::for_system(&sys).expect("structure constants");
    (sys, alg)
}

/// Two-interval control with a jump and a lambda-dependent first channel.
pub fn jump_control() -> AdmissibleControl {
    AdmissibleControl::new(
        vec![0.0, 0.5, 1.0],
        vec![
            vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, 0.0, 0.04, 0.0]), Cubic([0.0, 0.02, 0.0, 0.0])],
            vec![Cubic([0.0, 0.03, 0.0, 0.0]), Cubic([0.0, -0.04, 0.0, 0.0]), Cubic::default()],
        ],
        vec![Shape::Ridge { direction: vec![0.6, 0.8, 0.0], center: vec![0.0; 3] }, Shape::Constant, Shape::Constant],
        vec![Jump { at: 0.5, delta: vec![0.01, 0.02, 0.0] }],
        0.14,
        3,
    )
    .expect("valid control")
}

pub fn point(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}
