//! Flat key-value scenario configuration.
//!
//! ```toml
//! plant = "linear"        # integrator | linear | cubic | double_integrator
//! a = 1.0                 # linear plant only
//! b = 1.0
//! gain = 2.0
//! x0 = [1.0]
//! delay = 0.5             # true delay D
//! schedule = "sinusoid"   # constant | ramp | sinusoid
//! schedule_base = 0.5
//! schedule_amplitude = 0.1
//! schedule_frequency = 1.0
//! d_lower = 0.1
//! d_upper = 1.5
//! grid = 100              # M
//! dt = 0.001
//! horizon = 10.0          # T
//! stride = 100            # snapshot every `stride` steps
//! ```
//!
//! Every key except `plant`, `x0` and `delay` has a default; see
//! [`ScenarioConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{DelaySchedule, ScheduleKind};
use crate::plant::{builtin, DelayBounds, PlantParams, PlantSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Constant,
    Ramp,
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: String,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "two")]
    pub gain: f64,
    pub x0: Vec<f64>,
    pub delay: f64,

    #[serde(default = "constant_schedule")]
    pub schedule: ScheduleName,
    /// Constant value, ramp start, or sinusoid offset. Defaults to `delay`.
    #[serde(default)]
    pub schedule_base: Option<f64>,
    #[serde(default)]
    pub schedule_slope: f64,
    #[serde(default)]
    pub schedule_amplitude: f64,
    #[serde(default = "one")]
    pub schedule_frequency: f64,
    #[serde(default)]
    pub schedule_phase: f64,
    #[serde(default = "default_d_lower")]
    pub d_lower: f64,
    #[serde(default = "default_d_upper")]
    pub d_upper: f64,

    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Steps between the members of a snapshot triplet (time-difference step
    /// `δ = triplet_span · dt`).
    #[serde(default = "one_usize")]
    pub triplet_span: usize,
    /// Snapshots are only assembled for `t ≥ snapshot_start`.
    #[serde(default)]
    pub snapshot_start: f64,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,

    /// Residual window starts at `max D̂ + analysis_margin`.
    #[serde(default = "one")]
    pub analysis_margin: f64,
    #[serde(default = "default_residual_cap")]
    pub residual_cap: f64,
    #[serde(default = "default_boundary_cap")]
    pub boundary_cap: f64,
    #[serde(default = "default_min_order")]
    pub min_order: f64,

    #[serde(default = "default_trajectory_file")]
    pub trajectory_file: String,
    #[serde(default = "default_snapshot_dir")]
    pub snapshot_dir: String,
    #[serde(default = "default_manifest_file")]
    pub manifest_file: String,
    #[serde(default = "yes")]
    pub write_snapshots: bool,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn constant_schedule() -> ScheduleName {
    ScheduleName::Constant
}
fn default_d_lower() -> f64 {
    0.05
}
fn default_d_upper() -> f64 {
    5.0
}
fn default_grid() -> usize {
    100
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    10.0
}
fn default_stride() -> usize {
    100
}
fn default_blowup() -> f64 {
    1e6
}
fn default_residual_cap() -> f64 {
    1e-3
}
fn default_boundary_cap() -> f64 {
    1e-6
}
fn default_min_order() -> f64 {
    1.7
}
fn default_trajectory_file() -> String {
    "trajectory.csv".into()
}
fn default_snapshot_dir() -> String {
    "snapshots".into()
}
fn default_manifest_file() -> String {
    "manifest.json".into()
}

impl ScenarioConfig {
    /// A config with every optional key at its default.
    pub fn new(plant: &str, x0: &[f64], delay: f64) -> Self {
        Self {
            plant: plant.into(),
            a: 1.0,
            b: 1.0,
            gain: 2.0,
            x0: x0.to_vec(),
            delay,
            schedule: ScheduleName::Constant,
            schedule_base: None,
            schedule_slope: 0.0,
            schedule_amplitude: 0.0,
            schedule_frequency: 1.0,
            schedule_phase: 0.0,
            d_lower: default_d_lower(),
            d_upper: default_d_upper(),
            grid: default_grid(),
            dt: default_dt(),
            horizon: default_horizon(),
            stride: default_stride(),
            triplet_span: 1,
            snapshot_start: 0.0,
            blowup_threshold: default_blowup(),
            analysis_margin: 1.0,
            residual_cap: default_residual_cap(),
            boundary_cap: default_boundary_cap(),
            min_order: default_min_order(),
            trajectory_file: default_trajectory_file(),
            snapshot_dir: default_snapshot_dir(),
            manifest_file: default_manifest_file(),
            write_snapshots: true,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("<document>")
                .to_string();
            Error::config(key, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("delay", self.delay)?;
        positive("blowup_threshold", self.blowup_threshold)?;
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::config("horizon", "must be at least dt"));
        }
        if self.grid < 8 {
            return Err(Error::config("grid", format!("must be at least 8, got {}", self.grid)));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if self.triplet_span == 0 {
            return Err(Error::config("triplet_span", "must be at least 1"));
        }
        if self.delay < self.dt {
            return Err(Error::config("delay", "must be at least dt"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0", "must be finite"));
        }
        let setup = self.plant_setup()?;
        if setup.plant.dim() != self.x0.len() {
            return Err(Error::config(
                "x0",
                format!("plant `{}` has {} states, x0 has {}", self.plant, setup.plant.dim(), self.x0.len()),
            ));
        }
        let schedule = self.delay_schedule()?;
        if schedule.eval(0.0).value < self.dt {
            return Err(Error::config("schedule_base", "delay estimate must be at least dt"));
        }
        Ok(())
    }

    pub fn plant_setup(&self) -> Result<PlantSetup> {
        builtin(&self.plant, PlantParams { a: self.a, b: self.b, gain: self.gain })
    }

    pub fn bounds(&self) -> Result<DelayBounds> {
        DelayBounds::new(self.d_lower, self.d_upper)
            .map_err(|_| Error::config("d_lower", format!("need 0 < d_lower < d_upper, got [{}, {}]", self.d_lower, self.d_upper)))
    }

    pub fn delay_schedule(&self) -> Result<DelaySchedule> {
        let bounds = self.bounds()?;
        let base = self.schedule_base.unwrap_or(self.delay);
        let kind = match self.schedule {
            ScheduleName::Constant => ScheduleKind::Constant { value: base },
            ScheduleName::Ramp => ScheduleKind::Ramp { start: base, slope: self.schedule_slope },
            ScheduleName::Sinusoid => ScheduleKind::Sinusoid {
                base,
                amplitude: self.schedule_amplitude,
                frequency: self.schedule_frequency,
                phase: self.schedule_phase,
            },
        };
        DelaySchedule::new(kind, bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ScenarioConfig::from_toml_str("plant = \"linear\"\nx0 = [1.0]\ndelay = 0.5\n").unwrap();
        assert_eq!(cfg, ScenarioConfig::new("linear", &[1.0], 0.5));
        assert_eq!(cfg.delay_schedule().unwrap().eval(3.0).value, 0.5);
    }

    #[test]
    fn nonpositive_dt_names_the_key() {
        let err = ScenarioConfig::from_toml_str("plant = \"linear\"\nx0 = [1.0]\ndelay = 0.5\ndt = 0.0\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "dt"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ScenarioConfig::from_toml_str("plant = \"linear\"\nx0 = [1.0]\ndelay = 0.5\ndtt = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "dtt"), "{err}");
    }

    #[test]
    fn state_dimension_is_checked() {
        let mut cfg = ScenarioConfig::new("double_integrator", &[1.0], 0.5);
        assert!(cfg.validate().is_err());
        cfg.x0 = vec![1.0, 0.0];
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ScenarioConfig::new("cubic", &[1.5], 0.3);
        cfg.schedule = ScheduleName::Sinusoid;
        cfg.schedule_amplitude = 0.05;
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
