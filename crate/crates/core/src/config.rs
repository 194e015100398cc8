//! Run configuration: a strict JSON schema with fail-fast validation.
//!
//! Unknown keys are rejected so that archived configs describe runs
//! unambiguously. Initial data is specified as lists of cosine modes
//! `amplitude * cos(2 pi k . x / L)` with integer wavevectors over the 2n
//! real axes.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HkError, Result};
use crate::flow::FlowSetup;
use crate::geometry::MetricField;
use crate::spectral::{Grid, ScalarField, C64};
use crate::verify::Tolerances;

pub const SCHEMA_VERSION: u32 = 1;

/// One cosine mode of a real field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    /// Integer wavevector over the real axes (length 2n).
    pub wavevector: Vec<i64>,
    pub amplitude: f64,
}

/// Initial metric specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum MetricSpec {
    /// The flat metric.
    #[default]
    Flat,
    /// Flat plus the complex Hessian of a background potential.
    Potential { modes: Vec<ModeSpec> },
    /// `g = exp(u)` from a real log-profile (one complex dimension only).
    ConformalExp { modes: Vec<ModeSpec> },
}

/// Tolerance overrides for the verification suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ToleranceOverrides {
    pub abs_zero: Option<f64>,
    pub order_min: Option<f64>,
    pub order_max: Option<f64>,
    pub ceiling: Option<f64>,
}

impl ToleranceOverrides {
    pub fn resolve(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(v) = self.abs_zero {
            t.abs_zero = v;
        }
        if let Some(v) = self.order_min {
            t.order_min = v;
        }
        if let Some(v) = self.order_max {
            t.order_max = v;
        }
        if let Some(v) = self.ceiling {
            t.ceiling = v;
        }
        t
    }
}

fn default_length() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_safety() -> f64 {
    0.5
}

/// Full description of a reproducible run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Complex dimension (1 or 2).
    pub n: usize,
    /// Points per real axis.
    pub points_per_axis: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default)]
    pub initial_metric: MetricSpec,
    /// Initial potential modes.
    #[serde(default)]
    pub phi0_modes: Vec<ModeSpec>,
    /// Initial velocity-potential modes.
    #[serde(default)]
    pub phi1_modes: Vec<ModeSpec>,
    /// Explicit time step; when omitted the step is `cfl_safety` times the
    /// stability bound of the initial metric, rounded to divide snapshot_dt.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    pub t_end: f64,
    /// Snapshot spacing in time; must be a whole number of steps.
    pub snapshot_dt: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    /// Refinement factors for the verification ladder, coarsest first.
    #[serde(default)]
    pub ladder: Option<Vec<usize>>,
    /// Time-step ladder for convergence studies (at least three levels).
    #[serde(default)]
    pub dt_ladder: Option<Vec<f64>>,
    /// Resolution ladder for convergence studies.
    #[serde(default)]
    pub n_ladder: Option<Vec<usize>>,
    /// Use five-point fourth-order ring stencils in the verifier.
    #[serde(default)]
    pub fd_order4: bool,
    /// Default output directory (the command line overrides it).
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Seed recorded for reproducibility of randomized studies.
    #[serde(default)]
    pub seed: u64,
}

/// Everything needed to start integrating.
pub struct BuiltRun {
    pub grid: Arc<Grid>,
    pub setup: FlowSetup,
    pub phi0: ScalarField,
    pub psi0: ScalarField,
    pub dt: f64,
    pub snapshot_every: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HkError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HkError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HkError::ConfigInvalid(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.snapshot_dt > 0.0) {
            return Err(HkError::ConfigInvalid(
                "snapshot_dt must be positive".into(),
            ));
        }
        if let Some(l) = &self.ladder {
            if l.is_empty() || l.contains(&0) {
                return Err(HkError::ConfigInvalid(
                    "ladder factors must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Evaluates a mode list into a real field.
    pub fn build_mode_field(&self, grid: &Arc<Grid>, modes: &[ModeSpec]) -> Result<ScalarField> {
        let axes = grid.axes();
        let nyq = (grid.points_per_axis / 2) as i64;
        for m in modes {
            if m.wavevector.len() != axes {
                return Err(HkError::ConfigInvalid(format!(
                    "wavevector {:?} must have {axes} entries for n = {}",
                    m.wavevector, grid.n
                )));
            }
            if m.wavevector.iter().any(|k| k.abs() >= nyq) {
                return Err(HkError::ConfigInvalid(format!(
                    "wavevector {:?} is not resolvable at {} points per axis",
                    m.wavevector, grid.points_per_axis
                )));
            }
            if !m.amplitude.is_finite() {
                return Err(HkError::ConfigInvalid(
                    "mode amplitude must be finite".into(),
                ));
            }
        }
        let length = grid.length;
        let modes = modes.to_vec();
        Ok(ScalarField::from_fn(grid, move |x| {
            let mut v = 0.0;
            for m in &modes {
                let mut phase = 0.0;
                for (a, &k) in m.wavevector.iter().enumerate() {
                    phase += k as f64 * x[a];
                }
                v += m.amplitude * (2.0 * std::f64::consts::PI * phase / length).cos();
            }
            C64::new(v, 0.0)
        }))
    }

    /// Builds the background metric.
    pub fn build_metric(&self, grid: &Arc<Grid>) -> Result<MetricField> {
        match &self.initial_metric {
            MetricSpec::Flat => MetricField::flat(grid),
            MetricSpec::Potential { modes } => {
                let phi = self.build_mode_field(grid, modes)?;
                MetricField::from_potential(&MetricField::flat(grid)?, &phi)
            }
            MetricSpec::ConformalExp { modes } => {
                let u = self.build_mode_field(grid, modes)?;
                MetricField::conformal_from_log(&u)
            }
        }
    }

    /// Resolves grid, background, initial data and step sizes.
    pub fn build(&self) -> Result<BuiltRun> {
        let grid = Grid::new(self.n, self.points_per_axis, self.length)?;
        let g0 = self.build_metric(&grid)?;
        let setup = FlowSetup::new(g0, self.dealias)?;
        let phi0 = self.build_mode_field(&grid, &self.phi0_modes)?;
        let psi0 = self.build_mode_field(&grid, &self.phi1_modes)?;
        let dt = match self.dt {
            Some(dt) => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(HkError::ConfigInvalid(format!(
                        "dt must be positive, got {dt}"
                    )));
                }
                dt
            }
            None => {
                let bound = crate::flow::cfl_dt(&setup.g0, self.cfl_safety)?;
                // Round down so snapshot_dt is a whole number of steps.
                let per_snap = (self.snapshot_dt / bound).ceil().max(1.0);
                self.snapshot_dt / per_snap
            }
        };
        let every = (self.snapshot_dt / dt).round();
        if (every * dt - self.snapshot_dt).abs() > 1e-9 * self.snapshot_dt {
            return Err(HkError::ConfigInvalid(format!(
                "snapshot_dt = {} must be a whole number of steps of dt = {dt}",
                self.snapshot_dt
            )));
        }
        Ok(BuiltRun {
            grid,
            setup,
            phi0,
            psi0,
            dt,
            snapshot_every: every as usize,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        serde_json::from_str(
            r#"{
                "schema_version": 1,
                "n": 1,
                "points_per_axis": 32,
                "t_end": 0.1,
                "snapshot_dt": 0.01,
                "dt": 0.001,
                "phi0_modes": [{"wavevector": [1, 0], "amplitude": 1e-4}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_builds() {
        let cfg = minimal();
        cfg.validate().unwrap();
        let built = cfg.build().unwrap();
        assert_eq!(built.snapshot_every, 10);
        assert!((built.phi0.data[0].re - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<RunConfig, _> = serde_json::from_str(
            r#"{"schema_version": 1, "n": 1, "points_per_axis": 32,
                "t_end": 0.1, "snapshot_dt": 0.01, "bogus": 3}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn wavevector_validation() {
        let mut cfg = minimal();
        cfg.phi0_modes[0].wavevector = vec![1];
        assert!(cfg.build().is_err());
        cfg.phi0_modes[0].wavevector = vec![16, 0];
        assert!(cfg.build().is_err());
    }

    #[test]
    fn cfl_derived_step_divides_snapshot_spacing() {
        let mut cfg = minimal();
        cfg.dt = None;
        let built = cfg.build().unwrap();
        let k = (cfg.snapshot_dt / built.dt).round();
        assert!((k * built.dt - cfg.snapshot_dt).abs() < 1e-12);
        assert!(built.dt <= crate::flow::cfl_dt(&built.setup.g0, cfg.cfl_safety).unwrap());
    }
}
