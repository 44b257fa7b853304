//! Gradient flows with jumps for finite families of vector fields in
//! involution, their contraction inversion and Hamilton-Jacobi checks.

pub mod algebra;
pub mod commands;
pub mod controls;
pub mod error;
pub mod fields;
pub mod flows;
pub mod inversion;
pub mod jumpflow;
pub mod sampling;
pub mod scenario;
pub mod stieltjes;
pub mod verify;

pub use algebra::{expm, oracle_column, spectral_norm, CoordinateAlgebra};
pub use commands::{cmd_invert, cmd_run, cmd_verify, Outcome, Overrides, Status};
pub use controls::{AdmissibleControl, ControlReport, Cubic, GridNode, Jump, Shape, TimeGrid};
pub use error::{Error, Result};
pub use fields::{
    fit_structure_constants, involution_residual, lie_bracket, Builtin, Generator, Monomial, PolynomialField,
    StructureConstants, StructureFit, VectorField, VectorFieldSystem,
};
pub use flows::{compose_g, displacement_check, flow, inverse_h, DisplacementReport, FlowPoint};
pub use inversion::{estimate_constants, psi_at, solve_psi, v_map, ContractionConstants, InversionResult};
pub use jumpflow::{evolve, ode_residual, trajectory_point, JumpTrajectory, OdeResidual};
pub use scenario::{load, parse_config, Scenario, ScenarioConfig};
pub use stieltjes::{beta_derivative, integrate_alpha, StieltjesPath};
pub use verify::{RefinementStudy, ResidualReport, Tolerances};
