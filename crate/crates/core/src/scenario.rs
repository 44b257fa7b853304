//! Versioned JSON scenario files: system, geometry, control, queries and
//! tolerances, validated into ready-to-run objects.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::CoordinateAlgebra;
use crate::controls::{AdmissibleControl, Cubic, Jump, Shape};
use crate::error::{Error, Result};
use crate::fields::{
    fit_structure_constants, Builtin, Monomial, PolynomialField, StructureConstants, StructureFit, VectorField,
    VectorFieldSystem,
};
use crate::sampling::{ball_points, derive_seed};
use crate::verify::Tolerances;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;
/// Sample points used when structure constants have to be fitted.
pub const FIT_SAMPLES: usize = 100;
/// Fitted constants smaller than this are set to exactly zero.
pub const FIT_SNAP: f64 = 1e-10;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub system: SystemSpec,
    pub geometry: Geometry,
    pub control: ControlSpec,
    #[serde(default)]
    pub queries: Queries,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Builtin(Builtin),
    Polynomial(PolynomialSpec),
}

/// `[g_i, g_j] = value * g_k`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSpec {
    /// `fields[i][c]` lists the monomials of component `c` of `g_i`.
    pub fields: Vec<Vec<Vec<Monomial>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<Vec<Monomial>>>,
    /// Fitted from samples when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_constants: Option<Vec<BracketEntry>>,
    /// `drift_constants[k][i]`: coefficient of `g_k` in `[g_0, g_i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_constants: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub center: Vec<f64>,
    pub radius: f64,
    pub half_widths: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub breakpoints: Vec<f64>,
    /// `pieces[k][i]`: cubic coefficients of channel `i` on interval `k`.
    pub pieces: Vec<Vec<Cubic>>,
    pub shapes: Vec<Shape>,
    #[serde(default)]
    pub jumps: Vec<Jump>,
    pub k1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Queries {
    /// Initial points for trajectories; the center is used when empty.
    #[serde(default)]
    pub lambdas: Vec<Vec<f64>>,
    /// Target points for inversion; the center is used when empty.
    #[serde(default)]
    pub xs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "yes")]
    pub trajectories: bool,
    #[serde(default = "yes")]
    pub alpha_beta: bool,
    #[serde(default = "yes")]
    pub psi: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { directory: None, trajectories: true, alpha_beta: true, psi: true }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: VectorFieldSystem,
    pub algebra: CoordinateAlgebra,
    pub control: AdmissibleControl,
    pub lambdas: Vec<DVector<f64>>,
    pub xs: Vec<DVector<f64>>,
    /// Present when the structure constants were fitted rather than declared.
    pub fit: Option<StructureFit>,
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl Scenario {
    pub fn drift(&self) -> bool {
        self.system.has_drift()
    }
}

fn line_of(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1))).unwrap_or((1, 1))
}

/// Parses without semantic validation; syntax and type errors carry their line.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config { line: e.line(), column: e.column(), message: e.to_string() })
}

/// Parses and validates; semantic errors point at the line of the offending section.
pub fn load(text: &str) -> Result<Scenario> {
    let config = parse_config(text)?;
    config.build().map_err(|(section, err)| {
        let (line, column) = line_of(text, section);
        Error::Config { line, column, message: format!("{section}: {err}") }
    })
}

fn polynomial(components: &[Vec<Monomial>]) -> Result<Arc<dyn VectorField>> {
    PolynomialField::new(components.to_vec()).map(|f| Arc::new(f) as Arc<dyn VectorField>).map_err(Error::InvalidSystem)
}

fn points(rows: &[Vec<f64>], dim: usize, fallback: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if rows.is_empty() {
        return Ok(vec![fallback.clone()]);
    }
    rows.iter()
        .map(|r| {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            Ok(DVector::from_vec(r.clone()))
        })
        .collect()
}

fn snap(v: f64) -> f64 {
    if v.abs() < FIT_SNAP {
        0.0
    } else {
        v
    }
}

impl ScenarioConfig {
    fn build_system(&self, seed: u64) -> Result<(VectorFieldSystem, Option<StructureFit>)> {
        let g = &self.geometry;
        let center = DVector::from_vec(g.center.clone());
        let spec = match &self.system {
            SystemSpec::Builtin(b) => {
                if b.dim() != center.len() {
                    return Err(Error::DimensionMismatch { expected: b.dim(), got: center.len() });
                }
                return Ok((b.build(center, g.radius, g.half_widths.clone())?, None));
            }
            SystemSpec::Polynomial(p) => p,
        };
        let fields = spec.fields.iter().map(|f| polynomial(f)).collect::<Result<Vec<_>>>()?;
        let mut sys =
            VectorFieldSystem::new(self.name_or("polynomial"), fields, center, g.radius, g.half_widths.clone())?;
        if let Some(d) = &spec.drift {
            sys = sys.with_drift(polynomial(d)?)?;
        }
        let m = sys.count();
        if let Some(rows) = &spec.drift_constants {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidSystem(format!("drift_constants must be {m} x {m}")));
            }
            sys = sys.with_drift_constants(DMatrix::from_fn(m, m, |k, i| rows[k][i]))?;
        }
        match &spec.structure_constants {
            Some(entries) => {
                let tuples: Vec<_> = entries.iter().map(|e| (e.i, e.j, e.k, e.value)).collect();
                let gamma = StructureConstants::from_entries(m, &tuples)?;
                Ok((sys.with_structure_constants(gamma)?, None))
            }
            None => {
                let samples = ball_points(sys.center(), 3.0 * sys.radius(), FIT_SAMPLES, derive_seed(seed, 51));
                let fit = fit_structure_constants(&sys, &samples)?;
                let mut gamma = StructureConstants::zeros(m);
                for k in 0..m {
                    for i in 0..m {
                        for j in (i + 1)..m {
                            gamma.set(k, i, j, snap(fit.constants.get(k, i, j)));
                        }
                    }
                }
                sys = sys.with_structure_constants(gamma)?;
                if spec.drift_constants.is_none() {
                    if let Some(d) = &fit.drift_constants {
                        sys = sys.with_drift_constants(d.map(snap))?;
                    }
                }
                Ok((sys, Some(fit)))
            }
        }
    }

    fn name_or(&self, fallback: &str) -> String {
        if self.name.is_empty() {
            fallback.to_string()
        } else {
            self.name.clone()
        }
    }

    fn build_control(&self, dim: usize, m: usize) -> Result<AdmissibleControl> {
        let c = &self.control;
        let last = c.breakpoints.last().copied().unwrap_or(f64::NAN);
        if last != self.geometry.horizon {
            return Err(Error::InvalidControl(format!(
                "last breakpoint {last} differs from the horizon {}",
                self.geometry.horizon
            )));
        }
        if c.shapes.len() != m {
            return Err(Error::InvalidControl(format!("{} shapes for {m} channels", c.shapes.len())));
        }
        AdmissibleControl::new(c.breakpoints.clone(), c.pieces.clone(), c.shapes.clone(), c.jumps.clone(), c.k1, dim)
    }

    /// Validates every section; the error names the section it came from.
    pub fn build(&self) -> std::result::Result<Scenario, (&'static str, Error)> {
        if self.version != SCHEMA_VERSION {
            return Err((
                "version",
                Error::InvalidSystem(format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.version)),
            ));
        }
        let g = &self.geometry;
        let geometry_ok = g.horizon > 0.0 && g.horizon.is_finite() && g.center.iter().all(|c| c.is_finite());
        if !geometry_ok {
            return Err(("geometry", Error::InvalidSystem("horizon must be positive and the center finite".into())));
        }
        let (system, fit) = self.build_system(self.seed).map_err(|e| ("system", e))?;
        let algebra = CoordinateAlgebra::for_system(&system).map_err(|e| ("system", e))?;
        let control = self.build_control(system.dim(), system.count()).map_err(|e| ("control", e))?;
        let lambdas = points(&self.queries.lambdas, system.dim(), system.center()).map_err(|e| ("queries", e))?;
        let xs = points(&self.queries.xs, system.dim(), system.center()).map_err(|e| ("queries", e))?;
        let t = &self.tolerances;
        if t.cells == 0 || !(t.halving_ratio > 0.0) || !(t.sample_margin > 0.0 && t.sample_margin < 1.0) {
            return Err((
                "tolerances",
                Error::InvalidSystem("cells, halving_ratio and sample_margin out of range".into()),
            ));
        }
        Ok(Scenario {
            config: self.clone(),
            system,
            algebra,
            control,
            lambdas,
            xs,
            fit,
            tolerances: self.tolerances.clone(),
            seed: self.seed,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEISENBERG: &str = r#"{
  "version": 1,
  "name": "heisenberg",
  "system": { "builtin": { "name": "heisenberg" } },
  "geometry": { "center": [0, 0, 0], "radius": 1.0, "half_widths": [0.05, 0.05, 0.05], "horizon": 1.0 },
  "control": {
    "breakpoints": [0.0, 0.5, 1.0],
    "pieces": [
      [[0, 0.03, 0, 0], [0, 0, 0.04, 0], [0, 0.02, 0, 0]],
      [[0, 0.03, 0, 0], [0, -0.04, 0, 0], [0, 0, 0, 0]]
    ],
    "shapes": [
      { "kind": "ridge", "direction": [0.6, 0.8, 0.0], "center": [0, 0, 0] },
      { "kind": "constant" },
      { "kind": "constant" }
    ],
    "jumps": [{ "at": 0.5, "delta": [0.01, 0.02, 0.0] }],
    "k1": 0.2
  },
  "queries": { "lambdas": [[0.5, -0.3, 0.2]], "xs": [[0.2, 0.1, -0.3]] }
}"#;

    #[test]
    fn parses_builtin_with_defaults() {
        let s = load(HEISENBERG).unwrap();
        assert_eq!(s.seed, 42);
        assert_eq!(s.system.count(), 3);
        assert_eq!(s.control.intervals(), 2);
        assert_eq!(s.tolerances, Tolerances::default());
        assert!(s.fit.is_none() && !s.drift());
        assert_eq!(s.lambdas.len(), 1);
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let a = parse_config(HEISENBERG).unwrap();
        let b = parse_config(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_json(), a.to_json());
    }

    #[test]
    fn syntax_error_reports_line() {
        let broken = HEISENBERG.replace("\"radius\": 1.0,", "\"radius\": 1.0,,");
        match load(&broken) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let typed = HEISENBERG.replace("\"k1\": 0.2", "\"k1\": \"big\"");
        match load(&typed) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 18),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_error_points_at_section() {
        let bad = HEISENBERG.replace(
            "[[0, 0.03, 0, 0], [0, 0, 0.04, 0], [0, 0.02, 0, 0]]",
            "[[0.1, 0.03, 0, 0], [0, 0, 0.04, 0], [0, 0.02, 0, 0]]",
        );
        match load(&bad) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.starts_with("control:"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let version = HEISENBERG.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(load(&version), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn polynomial_system_gets_fitted_constants() {
        let text = r#"{
  "version": 1,
  "system": { "polynomial": { "fields": [
    [[{"coeff": 1, "powers": [0, 0, 0]}], [], []],
    [[], [{"coeff": 1, "powers": [0, 0, 0]}], [{"coeff": 1, "powers": [1, 0, 0]}]],
    [[], [], [{"coeff": 1, "powers": [0, 0, 0]}]]
  ] } },
  "geometry": { "center": [0, 0, 0], "radius": 1.0, "half_widths": [0.05, 0.05, 0.05], "horizon": 1.0 },
  "control": { "breakpoints": [0, 1], "pieces": [[[0,0,0,0],[0,0,0,0],[0,0,0,0]]], "shapes": [{"kind":"constant"},{"kind":"constant"},{"kind":"constant"}], "k1": 0 }
}"#;
        let s = load(text).unwrap();
        let fit = s.fit.as_ref().unwrap();
        assert!(fit.accepted);
        let gamma = s.system.structure().unwrap();
        assert!((gamma.get(2, 0, 1) - 1.0).abs() <= 1e-8);
        assert_eq!(gamma.get(0, 0, 1), 0.0);
        let cfg = parse_config(text).unwrap();
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let extra = HEISENBERG.replace("\"name\": \"heisenberg\",", "\"name\": \"heisenberg\", \"colour\": 3,");
        assert!(matches!(load(&extra), Err(Error::Config { line: 3, .. })));
    }

    proptest::proptest! {
        #[test]
        fn serialized_config_parses_back(
            k1 in 0.0..1.0f64,
            radius in 0.1..5.0f64,
            mid in 0.1..0.9f64,
            coeffs in proptest::collection::vec(-0.1..0.1f64, 12),
            seed in proptest::prelude::any::<u64>(),
        ) {
            let mut cfg = parse_config(HEISENBERG).unwrap();
            cfg.control.k1 = k1;
            cfg.geometry.radius = radius;
            cfg.control.breakpoints[1] = mid;
            cfg.control.jumps[0].at = mid;
            for (c, chunk) in cfg.control.pieces[1].iter_mut().zip(coeffs.chunks(4)) {
                c.0.copy_from_slice(chunk);
            }
            cfg.seed = seed;
            let back = parse_config(&cfg.to_json()).unwrap();
            proptest::prop_assert_eq!(&back, &cfg);
            proptest::prop_assert_eq!(back.to_json(), cfg.to_json());
        }
    }
}
