//! Run configuration (TOML) and built-in presets.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::DirichletSides;
use crate::magnetics::{FieldSchedule, Intensity, Placement, ScheduledDipole};
use crate::mesh::build_rect_mesh;
use crate::scheme::{MaterialParams, Mode, PicardSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not parse configuration: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("time stepping needs two of tau, steps, t_final (got {0})")]
    Underdetermined(&'static str),
    #[error("tau * steps = {product} does not match t_final = {t_final}")]
    Inconsistent { product: f64, t_final: f64 },
    #[error("unknown preset `{0}`; known presets: {list}", list = Preset::NAMES.join(", "))]
    UnknownPreset(String),
    #[error("unknown scale `{0}`; expected desk or full")]
    UnknownScale(String),
    #[error(transparent)]
    Field(#[from] crate::magnetics::MagneticsError),
}

/// Which walls carry no-slip conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Walls {
    /// Closed box.
    #[default]
    All,
    /// Walls at bottom and top, open (traction-free) ends left and right.
    Channel,
}

impl Walls {
    pub fn sides(self) -> DirichletSides {
        match self {
            Walls::All => DirichletSides::ALL,
            Walls::Channel => DirichletSides::CHANNEL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub degree: usize,
    pub walls: Walls,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { x: [0.0, 1.0], y: [0.0, 1.0], nx: 16, ny: 16, degree: 2, walls: Walls::All }
    }
}

/// Any two of the three determine the third.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub tau: Option<f64>,
    pub steps: Option<usize>,
    pub t_final: Option<f64>,
}

impl TimeConfig {
    /// `(tau, steps)` after checking consistency.
    pub fn resolve(&self) -> Result<(f64, usize), ConfigError> {
        let check_tau = |tau: f64| {
            if tau > 0.0 && tau.is_finite() {
                Ok(tau)
            } else {
                Err(ConfigError::Invalid { key: "time.tau", reason: format!("{tau} is not positive") })
            }
        };
        match (self.tau, self.steps, self.t_final) {
            (Some(tau), Some(k), Some(tf)) => {
                let product = check_tau(tau)? * k as f64;
                if (product - tf).abs() > 1e-9 * tf.abs().max(1.0) {
                    return Err(ConfigError::Inconsistent { product, t_final: tf });
                }
                Ok((tau, k))
            }
            (Some(tau), Some(k), None) => Ok((check_tau(tau)?, k)),
            (None, Some(k), Some(tf)) => {
                if k == 0 {
                    return Err(ConfigError::Invalid { key: "time.steps", reason: "must be positive".into() });
                }
                Ok((check_tau(tf / k as f64)?, k))
            }
            (Some(tau), None, Some(tf)) => {
                let tau = check_tau(tau)?;
                let k = (tf / tau).round();
                if (k * tau - tf).abs() > 1e-9 * tf.abs().max(1.0) {
                    return Err(ConfigError::Inconsistent { product: k * tau, t_final: tf });
                }
                Ok((tau, k as usize))
            }
            _ => Err(ConfigError::Underdetermined("fewer than two")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarConfig {
    pub alpha: f64,
    /// Initial concentration is one on a strip of this thickness at the
    /// bottom wall.
    pub strip: f64,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        Self { alpha: 1e-3, strip: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write fields every this many steps (0 disables VTK output).
    pub every: usize,
    pub vtk: bool,
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("output"), every: 10, vtk: true, csv: true }
    }
}

/// Runtime checks that decide the exit status.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Energy law; `None` enables it whenever it applies.
    pub energy_law: Option<bool>,
    /// Require positive domain-averaged spin for `t` in this interval.
    pub positive_mean_spin: Option<[f64; 2]>,
    /// Require positive time-averaged flux through the right end.
    pub positive_exit_flux: bool,
    /// Require negative spin in the upper half and positive spin in the
    /// lower half of the vertical mid-line, averaged in time.
    pub channel_spin_pattern: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mode: Mode,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub params: MaterialParams,
    pub picard: PicardSettings,
    pub field: FieldSchedule,
    /// Replace the applied field by the manufactured sources on the unit
    /// square.
    pub manufactured: bool,
    pub scalar: Option<ScalarConfig>,
    pub output: OutputConfig,
    pub monitors: MonitorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            mode: Mode::Coupled,
            mesh: MeshConfig::default(),
            time: TimeConfig { tau: Some(0.01), steps: Some(10), t_final: None },
            params: MaterialParams::default(),
            picard: PicardSettings::default(),
            field: FieldSchedule::empty(),
            manufactured: false,
            scalar: None,
            output: OutputConfig::default(),
            monitors: MonitorConfig::default(),
        }
    }
}

const TOP_LEVEL_KEYS: &[&str] =
    &["name", "mode", "mesh", "time", "params", "picard", "field", "manufactured", "scalar", "output", "monitors"];

impl RunConfig {
    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 {
            return Err(ConfigError::Invalid { key: "mesh.nx", reason: "cell counts must be positive".into() });
        }
        if m.degree < 2 {
            return Err(ConfigError::Invalid { key: "mesh.degree", reason: "the spaces need degree >= 2".into() });
        }
        let (tau, steps) = self.time.resolve()?;
        self.params.validate().map_err(|e| ConfigError::Invalid { key: "params", reason: e.to_string() })?;
        if self.picard.tolerance <= 0.0 || self.picard.max_iterations == 0 {
            return Err(ConfigError::Invalid { key: "picard", reason: "need tolerance > 0 and iterations > 0".into() });
        }
        if let Some(s) = &self.scalar {
            if !(s.alpha > 0.0) {
                return Err(ConfigError::Invalid { key: "scalar.alpha", reason: format!("{} is not positive", s.alpha) });
            }
        }
        if self.manufactured && (m.x != [0.0, 1.0] || m.y != [0.0, 1.0] || !self.field.is_empty()) {
            return Err(ConfigError::Invalid {
                key: "manufactured",
                reason: "needs the unit square and no dipoles".into(),
            });
        }
        let mesh = build_rect_mesh(m.x[0], m.x[1], m.y[0], m.y[1], m.nx, m.ny)
            .map_err(|e| ConfigError::Invalid { key: "mesh", reason: e.to_string() })?;
        self.field.validate(&mesh, tau * steps as f64, 4 * steps.max(50))?;
        Ok(())
    }

    /// Whether the energy law is monitored.
    pub fn energy_law_enabled(&self) -> bool {
        // the identity needs no-slip on the whole boundary
        let applicable = self.params.sigma == 0.0 && !self.manufactured && self.mesh.walls == Walls::All;
        self.monitors.energy_law.unwrap_or(applicable) && applicable
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Parses and validates a TOML configuration. Missing sections fall back to
/// defaults; each fallback is logged.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    if let Ok(table) = text.parse::<toml::Table>() {
        for key in TOP_LEVEL_KEYS {
            if !table.contains_key(*key) {
                log::info!("`{key}` not given, using the default");
            }
        }
        if let Some(toml::Value::Table(p)) = table.get("params") {
            let defaults = MaterialParams::default();
            let all = toml::Value::try_from(&defaults).expect("parameters serialize");
            if let toml::Value::Table(all) = all {
                for (k, v) in all {
                    if !p.contains_key(&k) {
                        log::info!("params.{k} not given, using {v}");
                    }
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Built-in experiment setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Validation,
    Relaxation,
    SpinningMagnet,
    Pumping,
    StirringAlternating,
    StirringWave,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scale {
    /// Small enough for tests and laptops.
    #[default]
    Desk,
    /// Fine meshes and long runs.
    Full,
}

impl FromStr for Scale {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(ConfigError::UnknownScale(s.into())),
        }
    }
}

impl Preset {
    pub const NAMES: [&'static str; 6] =
        ["validation", "relaxation", "spinning_magnet", "pumping", "stirring_alternating", "stirring_wave"];

    pub const ALL: [Preset; 6] = [
        Preset::Validation,
        Preset::Relaxation,
        Preset::SpinningMagnet,
        Preset::Pumping,
        Preset::StirringAlternating,
        Preset::StirringWave,
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES[Self::ALL.iter().position(|p| *p == self).expect("listed")]
    }

    /// Mesh sizes of the convergence ladder (cells per side).
    pub fn validation_levels(scale: Scale) -> Vec<usize> {
        match scale {
            Scale::Desk => vec![4, 8, 16, 32],
            Scale::Full => vec![4, 8, 16, 32, 64],
        }
    }

    /// Final time of the convergence runs.
    pub const VALIDATION_T_FINAL: f64 = 0.25;

    pub fn config(self, scale: Scale) -> RunConfig {
        let desk = scale == Scale::Desk;
        let mut c = RunConfig { name: self.name().into(), ..Default::default() };
        match self {
            Preset::Validation => {
                // the coarsest level of the ladder; the study refines it
                let n = 4;
                c.manufactured = true;
                c.mesh.nx = n;
                c.mesh.ny = n;
                let tau = 1.0 / (n * n) as f64;
                c.time = TimeConfig { tau: Some(tau), steps: None, t_final: Some(Self::VALIDATION_T_FINAL) };
                c.output.vtk = false;
            }
            Preset::Relaxation => {
                c.mesh.nx = 16;
                c.mesh.ny = 16;
                c.time = TimeConfig { tau: Some(0.02), steps: Some(50), t_final: None };
                c.params.relaxation_time = 0.1;
                c.field.dipoles.push(ScheduledDipole {
                    placement: Placement::Fixed { position: [0.5, -0.4], direction: [0.0, 1.0] },
                    intensity: Intensity::Constant { value: 10.0 },
                });
                c.monitors.energy_law = Some(true);
            }
            Preset::SpinningMagnet => {
                let n = if desk { 16 } else { 100 };
                c.mesh.nx = n;
                c.mesh.ny = n;
                c.time = TimeConfig { tau: None, steps: Some(if desk { 100 } else { 400 }), t_final: Some(4.0) };
                c.params.relaxation_time = 1e-4;
                c.field.dipoles.push(ScheduledDipole {
                    placement: Placement::Orbit {
                        center: [0.5, 0.5],
                        radius: 0.9,
                        start_angle: -0.5 * PI,
                        start_time: 2.0,
                        period: 2.0,
                    },
                    intensity: Intensity::Ramp { start: 0.0, end: 1.0, from: 0.0, to: 10.0 },
                });
                c.monitors.positive_mean_spin = Some([2.0, 4.0]);
            }
            Preset::Pumping => {
                c.mesh = MeshConfig {
                    x: [0.0, 6.0],
                    y: [0.0, 1.0],
                    nx: if desk { 48 } else { 192 },
                    ny: if desk { 8 } else { 32 },
                    degree: 2,
                    walls: Walls::Channel,
                };
                c.time = TimeConfig { tau: None, steps: Some(if desk { 100 } else { 1000 }), t_final: Some(1.0) };
                c.params.relaxation_time = 1e-4;
                let pulse = Intensity::TravelingPulse { amplitude: 1.0, frequency: 10.0, wavelength: 1.0, exponent: 10.0 };
                for s in 0..32 {
                    let x = 2.0 + (s as f64 + 0.5) * 2.0 / 32.0;
                    for y in [-0.1, 1.1] {
                        c.field.dipoles.push(ScheduledDipole {
                            placement: Placement::Fixed { position: [x, y], direction: [0.0, 1.0] },
                            intensity: pulse.clone(),
                        });
                    }
                }
                c.monitors.positive_exit_flux = true;
                c.monitors.channel_spin_pattern = true;
            }
            Preset::StirringAlternating | Preset::StirringWave => {
                let n = if desk { 16 } else { 64 };
                c.mesh.nx = n;
                c.mesh.ny = n;
                // 20 periods at 20 Hz
                c.time = TimeConfig { tau: None, steps: Some(if desk { 100 } else { 400 }), t_final: Some(1.0) };
                c.params.nu = 0.5;
                c.params.nu_r = 0.5;
                c.params.relaxation_time = 1e-4;
                c.scalar = Some(ScalarConfig::default());
                c.field = stirring_field(self == Preset::StirringWave, 5.0, 20.0, STIRRING_OFFSET);
            }
        }
        c
    }
}

/// Distance of the stirring dipoles below the bottom wall.
pub const STIRRING_OFFSET: f64 = 0.1;

/// Two phase-shifted dipoles, or eight dipoles carrying a travelling wave,
/// all below the bottom wall of the unit square and pointing up.
pub fn stirring_field(wave: bool, amplitude: f64, frequency: f64, offset: f64) -> FieldSchedule {
    let up = [0.0, 1.0];
    let dipoles = if wave {
        (0..8)
            .map(|s| ScheduledDipole {
                placement: Placement::Fixed { position: [(s as f64 + 0.5) / 8.0, -offset], direction: up },
                intensity: Intensity::TravelingPulse { amplitude, frequency, wavelength: 0.8, exponent: 1.0 },
            })
            .collect()
    } else {
        [(0.25, 0.0), (0.75, 0.5 * PI)]
            .iter()
            .map(|&(x, phase)| ScheduledDipole {
                placement: Placement::Fixed { position: [x, -offset], direction: up },
                intensity: Intensity::Sinusoid { amplitude, frequency, phase },
            })
            .collect()
    };
    FieldSchedule { dipoles }
}

impl FromStr for Preset {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| ConfigError::UnknownPreset(s.into()))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
