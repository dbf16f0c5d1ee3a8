//! Drives a configured run: time stepping, monitors, observables, output.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Walls};
use crate::diagnostics::{
    check_energy_law, simplified_bound, DiagnosticsError, EnergyLawReport, EnergyMonitor, EnergyRecord, ErrorMaxima,
};
use crate::fem::{build_spaces, FEFunction, FemError};
use crate::manufactured::Manufactured;
use crate::mesh::{build_rect_mesh, MeshError};
use crate::output::{write_csv, write_vtk, OutputError};
use crate::quadrature::gauss_legendre;
use crate::scheme::{Mode, SchemeError, SourceSet, State, Stepper};
use crate::transport::{mixing_metric, PassiveScalar, ScalarStepper, TransportError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("could not create output directory {path}: {source}")]
    OutputDir { path: PathBuf, source: std::io::Error },
}

/// Scalar observables sampled after every step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Observation {
    pub k: usize,
    pub t: f64,
    /// Domain average of the spin.
    pub mean_spin: f64,
    /// `∫ u_x dy` across the right end.
    pub exit_flux: f64,
    /// Average spin along the vertical mid-line, upper half.
    pub spin_upper: f64,
    /// Average spin along the vertical mid-line, lower half.
    pub spin_lower: f64,
    pub mixing: Option<f64>,
    pub scalar_mass: Option<f64>,
    pub overshoot: Option<f64>,
}

/// Outcome of one runtime check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monitor {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub struct RunOutcome {
    pub name: String,
    pub tau: f64,
    pub steps: usize,
    pub records: Vec<EnergyRecord>,
    pub observations: Vec<Observation>,
    pub energy_law: Option<EnergyLawReport>,
    pub errors: Option<ErrorMaxima>,
    pub monitors: Vec<Monitor>,
    pub final_state: State,
    pub scalar: Option<PassiveScalar>,
    pub seconds: f64,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.monitors.iter().all(|m| m.passed)
    }

    pub fn time_average(&self, f: impl Fn(&Observation) -> f64) -> f64 {
        if self.observations.is_empty() {
            return 0.0;
        }
        self.observations.iter().map(f).sum::<f64>() / self.observations.len() as f64
    }
}

/// Integral of `f(y)` along the vertical line `x` between `y0` and `y1`,
/// with a Gauss rule on every cell crossing.
fn line_integral(g: &FEFunction, comp: usize, x: f64, y0: f64, y1: f64, cells: usize) -> f64 {
    let (pts, wts) = gauss_legendre(4);
    let dy = (y1 - y0) / cells as f64;
    let mut s = 0.0;
    for c in 0..cells {
        for (r, w) in pts.iter().zip(&wts) {
            let y = y0 + dy * (c as f64 + 0.5 * (r + 1.0));
            if let Some(p) = g.evaluate_at([x, y]) {
                s += 0.5 * dy * w * p.value[comp];
            }
        }
    }
    s
}

fn observe(cfg: &RunConfig, st: &State, scalar: Option<&PassiveScalar>, area: f64) -> Observation {
    let m = &cfg.mesh;
    let (x0, x1, y0, y1) = (m.x[0], m.x[1], m.y[0], m.y[1]);
    let ym = 0.5 * (y0 + y1);
    let xm = 0.5 * (x0 + x1);
    let half = (m.ny / 2).max(1);
    let exit = x1 - 1e-9 * (x1 - x0);
    Observation {
        k: st.k,
        t: st.t,
        mean_spin: st.w.integral(0) / area,
        exit_flux: line_integral(&st.u, 0, exit, y0, y1, m.ny),
        spin_upper: line_integral(&st.w, 0, xm, ym, y1, half) / (y1 - ym),
        spin_lower: line_integral(&st.w, 0, xm, y0, ym, half) / (ym - y0),
        mixing: scalar.map(|c| mixing_metric(&c.c)),
        scalar_mass: scalar.map(|c| c.mass()),
        overshoot: scalar.map(|c| c.overshoot(0.0, 1.0)),
    }
}

/// Runs a configuration. With `out` set, writes `energy.csv`,
/// `observables.csv` and VTK snapshots into `out`.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, ExperimentError> {
    let clock = Instant::now();
    cfg.validate()?;
    let (tau, steps) = cfg.time.resolve()?;
    let mc = &cfg.mesh;
    let mesh = Arc::new(build_rect_mesh(mc.x[0], mc.x[1], mc.y[0], mc.y[1], mc.nx, mc.ny)?);
    let spaces = build_spaces(mesh, mc.degree, mc.walls.sides())?;
    let sources = if cfg.manufactured { Manufactured::source_set(&cfg.params) } else { SourceSet::none() };
    let mut stepper = Stepper::new(spaces.clone(), cfg.params.clone(), cfg.field.clone(), sources, cfg.mode)?;
    stepper.picard = cfg.picard.clone();

    let initial = if cfg.manufactured {
        stepper.initialize(
            |x| Manufactured::velocity(x, 0.0),
            |x| Manufactured::spin(x, 0.0),
            |x| Manufactured::magnetization(x, 0.0),
        )
    } else {
        stepper.initialize(|_| [0.0; 2], |_| 0.0, |_| [0.0; 2])
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::OutputDir { path: dir.to_path_buf(), source })?;
    }
    let vtk_every = if cfg.output.vtk { cfg.output.every } else { 0 };
    let snapshot = |st: &State, c: Option<&PassiveScalar>| -> Result<(), ExperimentError> {
        if let (Some(dir), true) = (out, vtk_every > 0 && st.k % vtk_every.max(1) == 0) {
            write_vtk(&dir.join(format!("{}_{:05}.vtk", cfg.name, st.k)), st, c.map(|c| &c.c))?;
        }
        Ok(())
    };

    let monitor = EnergyMonitor::new(cfg.params.clone(), cfg.field.clone(), cfg.mode, tau);
    let e0 = monitor.initial_energy(&initial);
    let h0_sq = crate::fem::l2_norm(&initial.h).powi(2);
    let area = (mc.x[1] - mc.x[0]) * (mc.y[1] - mc.y[0]);

    let mut scalar = match &cfg.scalar {
        Some(s) => Some(PassiveScalar::bottom_strip(&spaces.x, s.strip, s.alpha)?),
        None => None,
    };
    let mut scalar_stepper = scalar.as_ref().map(|_| ScalarStepper::new(&spaces.x));
    let mut worst_mass_drift: f64 = 0.0;

    let mut records = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps + 1);
    let mut errors = cfg.manufactured.then(ErrorMaxima::default);
    observations.push(observe(cfg, &initial, scalar.as_ref(), area));
    snapshot(&initial, scalar.as_ref())?;

    let final_state = stepper.run::<ExperimentError>(initial, tau, steps, |prev, next, report| {
        records.push(monitor.record(prev, next, report));
        if let (Some(c), Some(ss)) = (scalar.as_mut(), scalar_stepper.as_mut()) {
            let before = c.mass();
            *c = ss.step(c, &next.u, tau)?;
            let drift = (c.mass() - before).abs() / before.abs().max(f64::MIN_POSITIVE);
            worst_mass_drift = worst_mass_drift.max(drift);
        }
        if let Some(e) = errors.as_mut() {
            let t = next.t;
            e.update(
                next,
                |x| Manufactured::velocity(x, t),
                |x| Manufactured::spin(x, t),
                |x| Manufactured::magnetization(x, t),
                |x| Manufactured::field(x, t),
            );
        }
        observations.push(observe(cfg, next, scalar.as_ref(), area));
        snapshot(next, scalar.as_ref())?;
        log::debug!("{}: step {} t = {:.4} ({} Picard iterations)", cfg.name, next.k, next.t, report.iterations);
        Ok(())
    })?;

    let mut monitors = Vec::new();
    let mut energy_law = None;
    if cfg.energy_law_enabled() {
        match cfg.mode {
            Mode::Coupled => {
                let r = check_energy_law(&records, e0, tau, &cfg.params, cfg.manufactured)?;
                monitors.push(Monitor {
                    name: "energy law".into(),
                    passed: r.passed,
                    detail: format!(
                        "min slack {:.3e} (tolerance {:.1e}), summed {:.6e} <= {:.6e}",
                        r.min_slack, r.tolerance, r.telescoped_lhs, r.telescoped_rhs
                    ),
                });
                energy_law = Some(r);
            }
            Mode::Simplified => {
                let b = simplified_bound(&records, e0, h0_sq, tau, &cfg.params);
                let worst = b.prefixes.iter().map(|(l, r)| l - r).fold(f64::NEG_INFINITY, f64::max);
                monitors.push(Monitor {
                    name: "prescribed-field stability bound".into(),
                    passed: b.passed,
                    detail: format!("max energy {:.6e}, largest left - right {worst:.3e}", b.max_energy),
                });
            }
        }
    }
    if let Some([t0, t1]) = cfg.monitors.positive_mean_spin {
        let window: Vec<&Observation> = observations.iter().filter(|o| o.t > t0 + 1e-9 * t0.abs().max(1.0) && o.t <= t1 + 1e-9 * t1.abs().max(1.0)).collect();
        let min = window.iter().map(|o| o.mean_spin).fold(f64::INFINITY, f64::min);
        monitors.push(Monitor {
            name: "positive mean spin".into(),
            passed: !window.is_empty() && min > 0.0,
            detail: format!("min mean spin on ({t0}, {t1}] is {min:.3e} over {} steps", window.len()),
        });
    }
    let outcome_avg = |f: fn(&Observation) -> f64| {
        let v: Vec<f64> = observations.iter().skip(1).map(f).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    if cfg.monitors.positive_exit_flux {
        let flux = outcome_avg(|o| o.exit_flux);
        monitors.push(Monitor {
            name: "positive exit flux".into(),
            passed: flux > 0.0,
            detail: format!("time-averaged exit flux {flux:.3e}"),
        });
    }
    if cfg.monitors.channel_spin_pattern {
        let (up, low) = (outcome_avg(|o| o.spin_upper), outcome_avg(|o| o.spin_lower));
        monitors.push(Monitor {
            name: "mid-channel spin pattern".into(),
            passed: up < 0.0 && low > 0.0,
            detail: format!("time-averaged spin: upper half {up:.3e}, lower half {low:.3e}"),
        });
    }
    if scalar.is_some() && mc.walls == Walls::All {
        monitors.push(Monitor {
            name: "scalar mass".into(),
            passed: worst_mass_drift <= 1e-10,
            detail: format!("largest relative change per step {worst_mass_drift:.3e}"),
        });
    }

    if let Some(dir) = out {
        if cfg.output.csv {
            write_csv(&dir.join("energy.csv"), &records)?;
            write_csv(&dir.join("observables.csv"), &observations)?;
        }
    }
    for m in &monitors {
        log::info!("{}: {} ({})", m.name, if m.passed { "pass" } else { "FAIL" }, m.detail);
    }
    Ok(RunOutcome {
        name: cfg.name.clone(),
        tau,
        steps,
        records,
        observations,
        energy_law,
        errors,
        monitors,
        final_state,
        scalar,
        seconds: clock.elapsed().as_secs_f64(),
    })
}
