//! Coupled voltage/temperature FEM on linear tetrahedra.
//!
//! The model is a proxy with the structure of an RF-ablation solver:
//!
//! * voltage: `∇·(σ(T) ∇V) = 0`, V fixed on the electrodes;
//! * temperature: `ρc ∂T/∂t = ∇·(k ∇T) + σ(T) |∇V|²`, implicit Euler, T fixed
//!   on the outer boundary;
//! * `σ(T) = σ₀ (1 + α (T - T_ref))`, lagged inside a Picard corrector loop.
//!
//! Both fields live in one `2N × 2N` system with interleaved dofs: node `i`
//! owns row `2i` (V) and row `2i + 1` (T).

mod assembly;
mod element;
mod timeloop;

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::mesh::MeshError;
use crate::solver::{Backend, Ordering, Preconditioner, SolverConfig, SolverError};

pub use assembly::{assemble_global, Assembler, Constraints, LinearSystem};
pub use element::{element_matrices, ElementMatrices};
pub use timeloop::{
    corrector_step, predictor, run_simulation, CorrectorOutcome, FailCause, RunOptions, RunStats, SimSummary,
};

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("conductivity {sigma:e} S/mm is not positive in tet {tet} (mean T = {temperature} °C)")]
    PhysicsRange { tet: usize, sigma: f64, temperature: f64 },
    #[error("step {step} failed at t = {t} s with dt already at dt_min = {dt_min} s: {cause}")]
    StepFailure {
        step: usize,
        t: f64,
        dt_min: f64,
        cause: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("field length {found} does not match node count {expected}")]
    FieldLength { expected: usize, found: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("result output: {0}")]
    Output(String),
}

/// Material coefficients, in millimeter-based SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    /// Thermal conductivity, W·mm⁻¹·K⁻¹.
    pub k: f64,
    /// Volumetric heat capacity, J·mm⁻³·K⁻¹.
    pub rho_c: f64,
    /// Electrical conductivity at `t_ref`, S·mm⁻¹.
    pub sigma0: f64,
    /// Conductivity temperature coefficient, K⁻¹.
    pub alpha: f64,
    /// °C
    pub t_ref: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            k: 0.5e-3,
            rho_c: 3.6e-3,
            sigma0: 0.2e-3,
            alpha: 0.02,
            t_ref: 37.0,
        }
    }
}

impl Material {
    pub fn sigma(&self, temperature: f64) -> f64 {
        self.sigma0 * (1.0 + self.alpha * (temperature - self.t_ref))
    }

    fn validate(&self) -> Result<(), FemError> {
        if !(self.k > 0.0 && self.rho_c > 0.0 && self.sigma0 > 0.0) {
            return Err(FemError::InvalidConfig(format!(
                "k, rho_c and sigma0 must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Materials per region tag, falling back to `default`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterialParams {
    pub default: Material,
    pub regions: BTreeMap<i32, Material>,
}

impl MaterialParams {
    pub fn uniform(material: Material) -> Self {
        Self {
            default: material,
            regions: BTreeMap::new(),
        }
    }

    pub fn for_region(&self, tag: i32) -> &Material {
        self.regions.get(&tag).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), FemError> {
        self.default.validate()?;
        self.regions.values().try_for_each(Material::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Simulated time, s.
    pub total_time: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Relative max-change threshold of the corrector loop.
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
    /// Potential of `electrode_pos`, V (`electrode_neg` is grounded).
    pub applied_voltage: f64,
    /// °C on `outer_boundary`.
    pub boundary_temp: f64,
    pub initial_temp: f64,
    pub solver: SolverConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            total_time: 900.0,
            dt_init: 1.0,
            dt_min: 1e-3,
            dt_max: 10.0,
            corrector_tol: 1e-4,
            max_corrector_iters: 50,
            applied_voltage: 25.0,
            boundary_temp: 37.0,
            initial_temp: 37.0,
            solver: SolverConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), FemError> {
        let bad = |m: String| Err(FemError::InvalidConfig(m));
        if !(self.total_time > 0.0) {
            return bad(format!("total_time must be positive, got {}", self.total_time));
        }
        if !(0.0 < self.dt_min && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if self.max_corrector_iters < 1 {
            return bad("max_corrector_iters must be at least 1".into());
        }
        // 0 is accepted and means the corrector never converges.
        if !(self.corrector_tol >= 0.0) {
            return bad(format!(
                "corrector_tol must be non-negative, got {}",
                self.corrector_tol
            ));
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Applies one `key = value` setting. Material keys (`k`, `rho_c`,
    /// `sigma0`, `alpha`, `t_ref`) update `params.default`.
    pub fn apply_setting(&mut self, params: &mut MaterialParams, key: &str, value: &str) -> Result<(), FemError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, FemError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| FemError::InvalidConfig(format!("{key} = {value}: {e}")))
        }
        fn named<T: FromStr<Err = String>>(value: &str) -> Result<T, FemError> {
            value.parse().map_err(FemError::InvalidConfig)
        }
        let key_norm = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        match key_norm.as_str() {
            "total_time" => self.total_time = num(key, value)?,
            "dt_init" => self.dt_init = num(key, value)?,
            "dt_min" => self.dt_min = num(key, value)?,
            "dt_max" => self.dt_max = num(key, value)?,
            "corrector_tol" => self.corrector_tol = num(key, value)?,
            "max_corrector_iters" => self.max_corrector_iters = num(key, value)?,
            "applied_voltage" => self.applied_voltage = num(key, value)?,
            "boundary_temp" => self.boundary_temp = num(key, value)?,
            "initial_temp" => self.initial_temp = num(key, value)?,
            "solver" => self.solver.backend = named::<Backend>(value)?,
            "m" | "restart_m" => self.solver.restart_m = num(key, value)?,
            "tol" | "tolerance" => self.solver.tolerance = num(key, value)?,
            "max_total_iters" => self.solver.max_total_iters = Some(num(key, value)?),
            "precond" | "precondition" => self.solver.precondition = named::<Preconditioner>(value)?,
            "ordering" => self.solver.ordering = named::<Ordering>(value)?,
            "reuse_ordering" => self.solver.reuse_ordering = num(key, value)?,
            "dense_cap" => self.solver.dense_cap = num(key, value)?,
            "k" => params.default.k = num(key, value)?,
            "rho_c" => params.default.rho_c = num(key, value)?,
            "sigma0" => params.default.sigma0 = num(key, value)?,
            "alpha" => params.default.alpha = num(key, value)?,
            "t_ref" => params.default.t_ref = num(key, value)?,
            _ => return Err(FemError::InvalidConfig(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>, FemError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FemError::InvalidConfig(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// Accepted steps so far.
    pub step: usize,
    /// s
    pub t: f64,
    /// Size of the next step.
    pub dt: f64,
    /// Size of the last accepted step.
    pub dt_prev: f64,
    pub temperature: Vec<f64>,
    pub voltage: Vec<f64>,
    /// Temperature at the previous accepted step.
    pub temperature_prev: Vec<f64>,
    pub corrector_iters_last: usize,
    pub converged_last: bool,
}

impl SimState {
    pub fn initial(node_count: usize, config: &SimConfig) -> Self {
        Self {
            step: 0,
            t: 0.0,
            dt: config.dt_init,
            dt_prev: config.dt_init,
            temperature: vec![config.initial_temp; node_count],
            voltage: vec![0.0; node_count],
            temperature_prev: vec![config.initial_temp; node_count],
            corrector_iters_last: 0,
            converged_last: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
        MaterialParams::default().validate().unwrap();
    }

    #[test]
    fn dt_bounds_are_checked() {
        let c = SimConfig {
            dt_init: 20.0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SimConfig {
            max_corrector_iters: 0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn conductivity_is_linear_in_temperature() {
        let m = Material::default();
        assert_eq!(m.sigma(37.0), 0.2e-3);
        assert!((m.sigma(87.0) - 0.4e-3).abs() < 1e-18);
    }

    #[test]
    fn settings_round_trip() {
        let text =
            "# run\ntotal_time = 60\nsolver=gmres\nm = 12 # restart\ntol=1e-6\nreuse_ordering = true\nsigma0=0.3e-3\n";
        let mut c = SimConfig::default();
        let mut p = MaterialParams::default();
        for (k, v) in parse_settings(text).unwrap() {
            c.apply_setting(&mut p, &k, &v).unwrap();
        }
        assert_eq!(c.total_time, 60.0);
        assert_eq!(c.solver.backend, Backend::Gmres);
        assert_eq!(c.solver.restart_m, 12);
        assert_eq!(c.solver.tolerance, 1e-6);
        assert!(c.solver.reuse_ordering);
        assert_eq!(p.default.sigma0, 0.3e-3);
        assert!(c.apply_setting(&mut p, "warp", "9").is_err());
        assert!(parse_settings("no equals sign").is_err());
    }
}
