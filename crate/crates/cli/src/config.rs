//! Run configuration shared by all subcommands.
//!
//! Values come from an optional JSON file and are then overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fuller_core::lyapunov::{calibrate, halving_candidates, Calibration, QlfError, QlfParams, DEFAULT_A_BAR};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

/// First radius tried by calibration.
pub const CALIBRATION_START: f64 = 0.5;

/// Number of halvings tried by calibration.
pub const CALIBRATION_STEPS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Radius {
    Auto,
    Fixed(f64),
}

impl Radius {
    pub fn fixed(self) -> Option<f64> {
        match self {
            Radius::Auto => None,
            Radius::Fixed(r) => Some(r),
        }
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Radius::Auto => f.write_str("auto"),
            Radius::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for Radius {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Radius::Auto);
        }
        let r: f64 = s.parse().map_err(|_| format!("radius must be a number or \"auto\", got {s:?}"))?;
        Ok(Radius::Fixed(r))
    }
}

impl Serialize for Radius {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Radius::Auto => s.serialize_str("auto"),
            Radius::Fixed(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(r) => Ok(Radius::Fixed(r)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub a_bar: f64,
    pub r: Radius,
    #[serde(rename = "T")]
    pub t: f64,
    pub grid_n: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            a_bar: DEFAULT_A_BAR,
            r: Radius::Auto,
            t: 1.0,
            grid_n: 200,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub a_bar: Option<f64>,
    pub r: Option<Radius>,
    pub t: Option<f64>,
    pub grid_n: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(file: Option<&Path>, o: Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = o.a_bar {
            cfg.a_bar = v;
        }
        if let Some(v) = o.r {
            cfg.r = v;
        }
        if let Some(v) = o.t {
            cfg.t = v;
        }
        if let Some(v) = o.grid_n {
            cfg.grid_n = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.out_dir {
            cfg.out_dir = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.a_bar > 0.0 && self.a_bar.is_finite()) {
            return Err(CliError::Invalid(format!("a_bar must be positive and finite, got {}", self.a_bar)));
        }
        if let Radius::Fixed(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Invalid(format!("r must be positive and finite, got {r}")));
            }
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(CliError::Invalid(format!("T must be finite and non-negative, got {}", self.t)));
        }
        if self.grid_n == 0 {
            return Err(CliError::Invalid("grid_n must be at least 1".into()));
        }
        Ok(())
    }

    /// Certificate parameters: the fixed radius, or the largest halving
    /// candidate that passes every calibration check.
    pub fn certificate(&self) -> Result<Calibration, QlfError> {
        match self.r {
            Radius::Fixed(r) => {
                let params = QlfParams::new(self.a_bar, r)?;
                let report = fuller_core::lyapunov::calibration_checks(&params, self.grid_n);
                if let Some(c) = report.first_failure() {
                    let check = c.name.clone();
                    return Err(QlfError::CalibrationFailure { check, report: Box::new(report) });
                }
                Ok(Calibration { params, report })
            }
            Radius::Auto => calibrate(
                self.a_bar,
                &halving_candidates(CALIBRATION_START, CALIBRATION_STEPS),
                self.grid_n,
            ),
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_auto_and_numbers() {
        let c: RunConfig = serde_json::from_str(r#"{"r": "auto", "T": 2.5}"#).unwrap();
        assert_eq!(c.r, Radius::Auto);
        assert_eq!(c.t, 2.5);
        let c: RunConfig = serde_json::from_str(r#"{"r": 0.01, "grid_n": 50}"#).unwrap();
        assert_eq!(c.r, Radius::Fixed(0.01));
        assert_eq!(c.grid_n, 50);
        assert!(serde_json::from_str::<RunConfig>(r#"{"r": "big"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"radius": 1}"#).is_err());
    }

    #[test]
    fn round_trips() {
        let c = RunConfig { r: Radius::Fixed(0.25), ..Default::default() };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn flags_override_and_validate() {
        let o = Overrides { grid_n: Some(0), ..Default::default() };
        assert!(matches!(RunConfig::resolve(None, o), Err(CliError::Invalid(_))));
        let o = Overrides { r: Some(Radius::Fixed(f64::NAN)), ..Default::default() };
        assert!(RunConfig::resolve(None, o).is_err());
        let o = Overrides { t: Some(3.0), ..Default::default() };
        assert_eq!(RunConfig::resolve(None, o).unwrap().t, 3.0);
    }
}
