//! TOML configuration. Every field is optional and falls back to the
//! defaults below.

use mmpc_core::bank::GridSpec;
use mmpc_core::dynamics::VehicleParams;
use mmpc_core::gap::DEFAULT_TOL;
use mmpc_core::mpc::MpcParams;
use mmpc_core::sim::{ScenarioSpec, SimOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q_diag: Vec<f64>,
    pub p_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let p = MpcParams::default();
        Self {
            horizon: p.horizon,
            q_diag: p.q.diagonal().iter().copied().collect(),
            p_diag: p.p.diagonal().iter().copied().collect(),
            r_diag: p.r.diagonal().iter().copied().collect(),
            x_lower: p.x_lower.iter().copied().collect(),
            x_upper: p.x_upper.iter().copied().collect(),
            u_lower: p.u_lower.iter().copied().collect(),
            u_upper: p.u_upper.iter().copied().collect(),
        }
    }
}

impl MpcConfig {
    pub fn params(&self) -> Result<MpcParams, CliError> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let p = MpcParams {
            horizon: self.horizon,
            p: diag(&self.p_diag),
            q: diag(&self.q_diag),
            r: diag(&self.r_diag),
            x_lower: DVector::from_column_slice(&self.x_lower),
            x_upper: DVector::from_column_slice(&self.x_upper),
            u_lower: DVector::from_column_slice(&self.u_lower),
            u_upper: DVector::from_column_slice(&self.u_upper),
        };
        if p.q.nrows() != 6 || p.r.nrows() != 3 {
            return Err(CliError::Config(
                "mpc: q_diag needs 6 entries and r_diag 3".into(),
            ));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub delta_th: f64,
    pub gap_tol: f64,
    /// Bank file name inside the output directory.
    pub file: String,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            delta_th: 0.2,
            gap_tol: DEFAULT_TOL,
            file: "bank.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub output_dir: PathBuf,
    /// Attitude-control sample period, s.
    pub sample_period: f64,
    /// Soft-switching parameter.
    pub lambda: f64,
    pub vehicle: VehicleParams,
    pub grid: GridSpec,
    pub bank: BankConfig,
    pub mpc: MpcConfig,
    pub sim: SimOptions,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            sample_period: 0.004,
            lambda: 0.5,
            vehicle: VehicleParams::default(),
            grid: GridSpec::default(),
            bank: BankConfig::default(),
            mpc: MpcConfig::default(),
            sim: SimOptions::default(),
            scenarios: vec![
                ScenarioSpec::attitude_default(),
                ScenarioSpec::trajectory_default(),
            ],
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.vehicle.validate()?;
        self.grid.validate()?;
        self.sim.validate()?;
        self.mpc.params()?;
        if !(self.bank.delta_th > 0.0 && self.bank.delta_th < 1.0) {
            return Err(CliError::Config(format!(
                "bank.delta_th must lie in (0, 1), got {}",
                self.bank.delta_th
            )));
        }
        if !(self.bank.gap_tol > 0.0) {
            return Err(CliError::Config("bank.gap_tol must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.sample_period > 0.0)
            || (self.sample_period - self.sim.control_period()).abs() > 1e-12
        {
            return Err(CliError::Config(format!(
                "sample_period {} must equal sim.plant_dt × sim.attitude_substeps = {}",
                self.sample_period,
                self.sim.control_period()
            )));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }

    pub fn scenario(&self, id: &str) -> Result<&ScenarioSpec, CliError> {
        self.scenarios.iter().find(|s| s.name == id).ok_or_else(|| {
            let known: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
            CliError::Usage(format!(
                "unknown scenario '{id}' (known: {})",
                known.join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn shipped_default_file_matches() {
        let text = include_str!("../../../config/default.toml");
        assert_eq!(Config::from_toml(text).unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let cfg = Config::from_toml("lambda = 0.0\n[bank]\ndelta_th = 0.5\n").unwrap();
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.bank.delta_th, 0.5);
        assert_eq!(cfg.vehicle, VehicleParams::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("lambda = 1.5").is_err());
        assert!(Config::from_toml("[bank]\ndelta_th = 1.0").is_err());
        assert!(Config::from_toml("[vehicle]\nmass = -1.0").is_err());
        assert!(Config::from_toml("sample_period = 0.01").is_err());
        assert!(Config::from_toml("unknown_key = 1").is_err());
        assert!(Config::from_toml("[mpc]\nr_diag = [1.0, 0.0, 1.0]").is_err());
    }

    #[test]
    fn unknown_scenario_is_usage_error() {
        assert!(matches!(
            Config::default().scenario("loop"),
            Err(CliError::Usage(_))
        ));
        assert!(Config::default().scenario("trajectory").is_ok());
    }
}
