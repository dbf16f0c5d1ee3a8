//! Energy bookkeeping, stability monitors and convergence tables.

use serde::Serialize;
use thiserror::Error;

use crate::fem::{l2_inner, l2_norm, FEFunction};
use crate::forms::{cell_integral, curl_of_vector, div_of_vector};
use crate::magnetics::{FieldSchedule, QuadField};
use crate::scheme::{MaterialParams, Mode, State, StepReport};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("the energy law is only established for sigma = 0 (got {0})")]
    DiffusiveMagnetization(f64),
    #[error("the energy law does not apply to runs with manufactured sources")]
    Sourced,
    #[error("need at least two mesh levels, got {0}")]
    TooFewLevels(usize),
    #[error("mesh sizes {coarse} and {fine} are not related by halving")]
    NotHalving { coarse: f64, fine: f64 },
    #[error("error values must be positive and finite, got {0}")]
    BadError(f64),
}

fn sq(f: &FEFunction) -> f64 {
    l2_norm(f).powi(2)
}

fn sub(a: &FEFunction, b: &FEFunction) -> FEFunction {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}

/// `½(‖U‖² + ȷ‖W‖² + μ0‖M‖² + μ0‖H‖²)`; the field term is dropped when
/// `with_field` is false (prescribed-field runs).
pub fn energy(s: &State, p: &MaterialParams, with_field: bool) -> f64 {
    let mut e = sq(&s.u) + p.inertia * sq(&s.w) + p.mu0 * sq(&s.m);
    if with_field {
        e += p.mu0 * sq(&s.h);
    }
    0.5 * e
}

/// Energy of the increments between two states.
pub fn increment_energy(prev: &State, cur: &State, p: &MaterialParams, with_field: bool) -> f64 {
    let mut e = sq(&sub(&cur.u, &prev.u)) + p.inertia * sq(&sub(&cur.w, &prev.w)) + p.mu0 * sq(&sub(&cur.m, &prev.m));
    if with_field {
        e += p.mu0 * sq(&sub(&cur.h, &prev.h));
    }
    0.5 * e
}

/// `ν‖∇U‖² + c1‖∇W‖² + ν_r‖div U‖² + ν_r‖curl U − 2W‖² + (μ0/𝒯)‖M‖²`
/// plus `(μ0/2𝒯)(½ + 3κ0)‖H‖²` when `with_field`.
pub fn dissipation(s: &State, p: &MaterialParams, with_field: bool) -> f64 {
    let flow = cell_integral(&[&s.u, &s.w], |_, v| {
        let g = v[0].grad;
        let grad_u = g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2);
        let gw = v[1].grad[0];
        let div = div_of_vector(&g);
        let rot = curl_of_vector(&g) - 2.0 * v[1].value[0];
        p.nu * grad_u + p.c1 * (gw[0] * gw[0] + gw[1] * gw[1]) + p.nu_r * (div * div + rot * rot)
    })
    .expect("state functions share one mesh");
    let mut d = flow + p.mu0 / p.relaxation_time * sq(&s.m);
    if with_field {
        d += p.mu0 / (2.0 * p.relaxation_time) * (0.5 + 3.0 * p.kappa0) * sq(&s.h);
    }
    d
}

/// `(f, H)` with `f` sampled at quadrature points.
fn pair_with(h: &FEFunction, f: &QuadField) -> f64 {
    let mesh = &h.space.mesh;
    let t = &h.space.tables;
    let mut s = 0.0;
    for cell in 0..mesh.n_cells() {
        let jac = mesh.geom(cell).jacobian();
        let q = h.on_cell(cell);
        for (k, pt) in q.points.iter().enumerate() {
            let v = f.at(cell, k);
            s += t.qweights[k] * jac * (v[0] * pt.value[0] + v[1] * pt.value[1]);
        }
    }
    s
}

/// One row of the energy ledger.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub k: usize,
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "I")]
    pub increment: f64,
    /// `D^k` (not multiplied by τ).
    #[serde(rename = "D")]
    pub dissipation: f64,
    /// Forcing of this step, already multiplied by τ.
    #[serde(rename = "F")]
    pub forcing: f64,
    /// Right side minus left side of the per-step energy identity.
    pub slack: f64,
    pub picard_iters: usize,
    #[serde(rename = "divU")]
    pub div_u: f64,
    #[serde(skip)]
    pub field_sq: f64,
    #[serde(skip)]
    pub field_step_sq: f64,
}

/// Builds [`EnergyRecord`]s step by step.
pub struct EnergyMonitor {
    pub params: MaterialParams,
    pub schedule: FieldSchedule,
    pub mode: Mode,
    pub tau: f64,
}

impl EnergyMonitor {
    pub fn new(params: MaterialParams, schedule: FieldSchedule, mode: Mode, tau: f64) -> Self {
        Self { params, schedule, mode, tau }
    }

    fn with_field(&self) -> bool {
        self.mode == Mode::Coupled
    }

    /// `E^0` of the initial state.
    pub fn initial_energy(&self, s: &State) -> f64 {
        energy(s, &self.params, self.with_field())
    }

    fn sample(&self, s: &State, t: f64) -> QuadField {
        let sp = &s.m.space;
        QuadField::sample(&sp.mesh, &sp.tables, |x| self.schedule.applied_field(t, x))
    }

    /// `∫_{t0}^{t1} ‖∂t h_a‖²` with a three-point Gauss rule in time.
    fn field_rate_integral(&self, s: &State, t0: f64, t1: f64) -> f64 {
        let sp = &s.m.space;
        let (mid, half) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
        let g = (0.6f64).sqrt();
        let eps = 1e-4 * half;
        [(-g, 5.0 / 9.0), (0.0, 8.0 / 9.0), (g, 5.0 / 9.0)]
            .iter()
            .map(|&(r, w)| {
                let t = mid + r * half;
                let f = QuadField::sample(&sp.mesh, &sp.tables, |x| self.schedule.time_derivative(t, x, eps));
                w * half * f.norm_squared(&sp.mesh, &sp.tables)
            })
            .sum()
    }

    pub fn record(&self, prev: &State, cur: &State, report: &StepReport) -> EnergyRecord {
        let p = &self.params;
        let tau = self.tau;
        let wf = self.with_field();
        let e_prev = energy(prev, p, wf);
        let e = energy(cur, p, wf);
        let inc = increment_energy(prev, cur, p, wf);
        let d = dissipation(cur, p, wf);
        let h_sq = sq(&cur.h);
        let (slack, forcing) = if wf {
            let ha = self.sample(cur, cur.t);
            let ha_prev = self.sample(cur, prev.t);
            let lhs = e + inc + tau * d + p.mu0 * tau / (2.0 * p.relaxation_time) * (1.5 + p.kappa0) * h_sq;
            let rhs = e_prev
                + p.mu0 * pair_with(&cur.h, &ha.sub(&ha_prev))
                + p.mu0 * tau / p.relaxation_time * (1.0 + p.kappa0) * pair_with(&cur.h, &ha);
            let m = &cur.m.space;
            let forcing = p.relaxation_time * p.mu0 * self.field_rate_integral(cur, prev.t, cur.t)
                + p.mu0 * tau / (2.0 * p.relaxation_time) * (1.0 + p.kappa0) * ha.norm_squared(&m.mesh, &m.tables);
            (rhs - lhs, forcing)
        } else {
            let lhs = e + inc + tau * d + p.mu0 * tau * p.kappa0 / p.relaxation_time * h_sq;
            let rhs = e_prev
                + p.mu0 * tau / p.relaxation_time * (1.0 + p.kappa0) * l2_inner(&cur.m, &cur.h)
                + p.mu0 * l2_inner(&sub(&cur.m, &prev.m), &cur.h);
            (rhs - lhs, p.mu0 * tau / p.relaxation_time * (1.0 + 3.0 * p.kappa0 * p.kappa0) * h_sq)
        };
        let div_u = cell_integral(&[&cur.u], |_, v| div_of_vector(&v[0].grad).powi(2)).unwrap_or(f64::NAN).sqrt();
        EnergyRecord {
            k: cur.k,
            t: cur.t,
            energy: e,
            increment: inc,
            dissipation: d,
            forcing,
            slack,
            picard_iters: report.iterations,
            div_u,
            field_sq: h_sq,
            field_step_sq: sq(&sub(&cur.h, &prev.h)),
        }
    }
}

/// Verdict of the discrete energy law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLawReport {
    pub slacks: Vec<f64>,
    pub tolerance: f64,
    pub min_slack: f64,
    /// First step whose slack is below `-tolerance`.
    pub first_violation: Option<usize>,
    /// `E^K + Σ I^k + Σ τ D^k`.
    pub telescoped_lhs: f64,
    /// `Σ τ F^k + E^0`.
    pub telescoped_rhs: f64,
    pub passed: bool,
}

/// Checks every per-step identity slack against `−1e−8·max(E^0, 1)` and the
/// summed stability estimate.
pub fn check_energy_law(
    records: &[EnergyRecord],
    e0: f64,
    tau: f64,
    params: &MaterialParams,
    sourced: bool,
) -> Result<EnergyLawReport, DiagnosticsError> {
    if params.sigma != 0.0 {
        return Err(DiagnosticsError::DiffusiveMagnetization(params.sigma));
    }
    if sourced {
        return Err(DiagnosticsError::Sourced);
    }
    let tolerance = 1e-8 * e0.max(1.0);
    let slacks: Vec<f64> = records.iter().map(|r| r.slack).collect();
    let first_violation = records.iter().find(|r| !(r.slack >= -tolerance)).map(|r| r.k);
    let min_slack = slacks.iter().copied().fold(0.0, f64::min);
    let last = records.last().map_or(e0, |r| r.energy);
    let sum_i: f64 = records.iter().map(|r| r.increment).sum();
    let sum_d: f64 = records.iter().map(|r| tau * r.dissipation).sum();
    let sum_f: f64 = records.iter().map(|r| r.forcing).sum();
    let telescoped_lhs = last + sum_i + sum_d;
    let telescoped_rhs = sum_f + e0;
    let passed = first_violation.is_none() && telescoped_lhs <= telescoped_rhs + tolerance;
    Ok(EnergyLawReport { slacks, tolerance, min_slack, first_violation, telescoped_lhs, telescoped_rhs, passed })
}

/// Prefix-by-prefix check of the prescribed-field stability bound
/// `½E^K + Σ I^k + Σ τD^k ≤ F_K + 2E^0 + μ0‖H^0‖² + 2μ0‖H^K‖²` with
/// `F_K = 3μ0𝒯 Σ_{k=1}^{K−1} ‖δH^{k+1}‖²/τ + Σ_{k≤K} (μ0τ/𝒯)(1+3κ0²)‖H^k‖²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplifiedBoundReport {
    /// `(left, right)` for every prefix length `K`.
    pub prefixes: Vec<(f64, f64)>,
    pub max_energy: f64,
    pub passed: bool,
}

pub fn simplified_bound(
    records: &[EnergyRecord],
    e0: f64,
    h0_sq: f64,
    tau: f64,
    p: &MaterialParams,
) -> SimplifiedBoundReport {
    let mut prefixes = Vec::with_capacity(records.len());
    let (mut sum_i, mut sum_d, mut sum_f, mut rate) = (0.0, 0.0, 0.0, 0.0);
    let mut passed = true;
    let mut max_energy = e0;
    for (i, r) in records.iter().enumerate() {
        sum_i += r.increment;
        sum_d += tau * r.dissipation;
        sum_f += r.forcing;
        // δH^{k+1} for k ≥ 1 enters from the second step on
        if i >= 1 {
            rate += r.field_step_sq / tau;
        }
        let lhs = 0.5 * r.energy + sum_i + sum_d;
        let rhs = 3.0 * p.mu0 * p.relaxation_time * rate + sum_f + 2.0 * e0 + p.mu0 * h0_sq + 2.0 * p.mu0 * r.field_sq;
        passed &= lhs <= rhs;
        max_energy = max_energy.max(r.energy);
        prefixes.push((lhs, rhs));
    }
    SimplifiedBoundReport { prefixes, max_energy, passed }
}

/// Observed orders `log2(e_i / e_{i+1})` for successive halvings of `h`.
/// `levels` lists `(h, error)` from coarse to fine.
pub fn convergence_table(levels: &[(f64, f64)]) -> Result<Vec<f64>, DiagnosticsError> {
    if levels.len() < 2 {
        return Err(DiagnosticsError::TooFewLevels(levels.len()));
    }
    for &(_, e) in levels {
        if !(e > 0.0 && e.is_finite()) {
            return Err(DiagnosticsError::BadError(e));
        }
    }
    levels
        .windows(2)
        .map(|w| {
            let ((h0, e0), (h1, e1)) = (w[0], w[1]);
            if ((h0 / h1) - 2.0).abs() > 1e-9 {
                return Err(DiagnosticsError::NotHalving { coarse: h0, fine: h1 });
            }
            Ok((e0 / e1).log2())
        })
        .collect()
}

/// Running maxima over time of L² errors (the ℓ∞(L²) norm on time nodes).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorMaxima {
    pub velocity: f64,
    pub spin: f64,
    pub magnetization: f64,
    pub field: f64,
}

impl ErrorMaxima {
    pub fn update(&mut self, s: &State, u: impl Fn([f64; 2]) -> [f64; 2], w: impl Fn([f64; 2]) -> f64, m: impl Fn([f64; 2]) -> [f64; 2], h: impl Fn([f64; 2]) -> [f64; 2]) {
        use crate::fem::l2_error;
        self.velocity = self.velocity.max(l2_error(&s.u, |x, c| u(x)[c]));
        self.spin = self.spin.max(l2_error(&s.w, |x, _| w(x)));
        self.magnetization = self.magnetization.max(l2_error(&s.m, |x, c| m(x)[c]));
        self.field = self.field.max(l2_error(&s.h, |x, c| h(x)[c]));
    }
}
