//! Convergence study against the manufactured solution.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{convergence_table, DiagnosticsError, ErrorMaxima};
use crate::fem::{build_spaces, DirichletSides, FemError};
use crate::magnetics::FieldSchedule;
use crate::manufactured::Manufactured;
use crate::mesh::{build_rect_mesh, MeshError};
use crate::scheme::{MaterialParams, Mode, SchemeError, Stepper};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

/// Result of one mesh level.
#[derive(Clone, Debug, Serialize)]
pub struct LevelResult {
    pub cells_per_side: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub errors: ErrorMaxima,
    pub picard_iterations: usize,
    pub seconds: f64,
}

/// Errors per level and observed orders between consecutive levels.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub levels: Vec<LevelResult>,
    pub velocity_orders: Vec<f64>,
    pub spin_orders: Vec<f64>,
    pub magnetization_orders: Vec<f64>,
    pub field_orders: Vec<f64>,
}

impl ConvergenceStudy {
    pub fn min_order(&self) -> f64 {
        [&self.velocity_orders, &self.spin_orders, &self.magnetization_orders, &self.field_orders]
            .iter()
            .flat_map(|v| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs the manufactured problem on an `n × n` mesh of the unit square with
/// `τ = h²` up to `t_final`, tracking the largest L² error over time nodes.
pub fn manufactured_level(n: usize, t_final: f64, degree: usize) -> Result<LevelResult, ValidationError> {
    let clock = Instant::now();
    let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n)?);
    let spaces = build_spaces(mesh, degree, DirichletSides::ALL)?;
    let params = MaterialParams::default();
    let sources = Manufactured::source_set(&params);
    let mut stepper = Stepper::new(spaces, params, FieldSchedule::empty(), sources, Mode::Coupled)?;

    let h = 1.0 / n as f64;
    let tau = h * h;
    let steps = (t_final / tau).round().max(1.0) as usize;
    let initial = stepper.initialize(
        |x| Manufactured::velocity(x, 0.0),
        |x| Manufactured::spin(x, 0.0),
        |x| Manufactured::magnetization(x, 0.0),
    );
    let mut errors = ErrorMaxima::default();
    let mut picard_iterations = 0;
    stepper.run::<SchemeError>(initial, tau, steps, |_, next, report| {
        let t = next.t;
        errors.update(
            next,
            |x| Manufactured::velocity(x, t),
            |x| Manufactured::spin(x, t),
            |x| Manufactured::magnetization(x, t),
            |x| Manufactured::field(x, t),
        );
        picard_iterations += report.iterations;
        log::debug!("n = {n}, step {} of {steps}: {} Picard iterations", next.k, report.iterations);
        Ok(())
    })?;
    Ok(LevelResult {
        cells_per_side: n,
        h,
        tau,
        steps,
        errors,
        picard_iterations,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Runs every level in `ns` (each twice as fine as the previous one) and
/// computes the observed orders.
pub fn convergence_study(ns: &[usize], t_final: f64, degree: usize) -> Result<ConvergenceStudy, ValidationError> {
    let levels = ns.iter().map(|&n| manufactured_level(n, t_final, degree)).collect::<Result<Vec<_>, _>>()?;
    let orders = |f: fn(&ErrorMaxima) -> f64| {
        convergence_table(&levels.iter().map(|l| (l.h, f(&l.errors))).collect::<Vec<_>>())
    };
    Ok(ConvergenceStudy {
        velocity_orders: orders(|e| e.velocity)?,
        spin_orders: orders(|e| e.spin)?,
        magnetization_orders: orders(|e| e.magnetization)?,
        field_orders: orders(|e| e.field)?,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_levels_converge() {
        let s = convergence_study(&[2, 4], 0.25, 2).unwrap();
        assert!(s.levels.iter().all(|l| l.errors.velocity.is_finite()));
        assert!(s.levels[1].errors.spin < s.levels[0].errors.spin);
    }
}
