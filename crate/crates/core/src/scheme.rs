//! Implicit time stepping of the ferrofluid system.
//!
//! Each step solves the fully implicit nonlinear system by iterating a
//! linear map that freezes the nonlinear coefficients at the previous
//! iterate and solves, in order, the magnetization/potential block, the
//! spin block and the velocity/pressure block.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembler, MagneticDrive};
use crate::fem::{gradient_into, interpolate, interpolate_vector, FEFunction, SpaceBundle};
use crate::linalg::{CachedSolver, CsrMatrix, LinalgError, MeanFunctional};
use crate::magnetics::{FieldSchedule, Gauge, MagneticsError, PotentialSolver, QuadField};

/// Constitutive constants and discretization coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    /// Kinematic viscosity.
    pub nu: f64,
    /// Vortex viscosity.
    pub nu_r: f64,
    /// Magnetic permeability.
    pub mu0: f64,
    /// Micro-inertia.
    pub inertia: f64,
    /// Spin viscosity.
    pub c1: f64,
    /// Magnetic diffusion.
    pub sigma: f64,
    /// Magnetization relaxation time.
    pub relaxation_time: f64,
    /// Magnetic susceptibility.
    pub kappa0: f64,
    /// Robin coefficient (only used when `sigma > 0`).
    pub gamma: f64,
    /// Interior penalty; `None` selects `10 ℓ²`.
    pub penalty: Option<f64>,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            nu: 1.0,
            nu_r: 1.0,
            mu0: 1.0,
            inertia: 1.0,
            c1: 1.0,
            sigma: 0.0,
            relaxation_time: 1.0,
            kappa0: 1.0,
            gamma: 1.0,
            penalty: None,
        }
    }
}

impl MaterialParams {
    pub fn penalty(&self, degree: usize) -> f64 {
        self.penalty.unwrap_or_else(|| crate::forms::FormCoefficients::default_penalty(degree))
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        let fields = [
            ("nu", self.nu),
            ("nu_r", self.nu_r),
            ("mu0", self.mu0),
            ("inertia", self.inertia),
            ("c1", self.c1),
            ("sigma", self.sigma),
            ("kappa0", self.kappa0),
            ("gamma", self.gamma),
            ("penalty", self.penalty.unwrap_or(0.0)),
        ];
        for (name, value) in fields {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SchemeError::InvalidParameter { name, value });
            }
        }
        if !(self.relaxation_time > 0.0 && self.relaxation_time.is_finite()) {
            return Err(SchemeError::InvalidParameter { name: "relaxation_time", value: self.relaxation_time });
        }
        Ok(())
    }
}

/// Which linear block failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Magnetization,
    Spin,
    Flow,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Magnetization => "(a) magnetization/potential",
            Stage::Spin => "(b) spin",
            Stage::Flow => "(c) velocity/pressure",
        })
    }
}

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("linear solve failed in stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: LinalgError,
    },
    #[error("nonlinear iteration did not converge in step {step} after {} iterations; increments {history:?}", history.len())]
    NotConverged { step: usize, history: Vec<f64> },
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

/// Time discretization of the magnetic field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Field from the potential, solved with the magnetization.
    Coupled,
    /// Field fixed to the interpolated applied field.
    Simplified,
}

/// Nonlinear iteration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSettings {
    /// Relative increment, in the energy norm, that ends the iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial under-relaxation factor.
    pub relaxation: f64,
    /// How many times the factor may be halved when increments grow.
    pub max_halvings: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 100, relaxation: 1.0, max_halvings: 3 }
    }
}

/// The discrete unknowns at one time level.
#[derive(Clone, Debug)]
pub struct State {
    pub k: usize,
    pub t: f64,
    pub u: FEFunction,
    pub p: FEFunction,
    pub w: FEFunction,
    pub m: FEFunction,
    pub phi: FEFunction,
    /// Effective field in the magnetization space.
    pub h: FEFunction,
}

impl State {
    pub fn zeros(spaces: &SpaceBundle) -> Self {
        Self {
            k: 0,
            t: 0.0,
            u: FEFunction::zeros(&spaces.u),
            p: FEFunction::zeros(&spaces.p),
            w: FEFunction::zeros(&spaces.w),
            m: FEFunction::zeros(&spaces.m),
            phi: FEFunction::zeros(&spaces.x),
            h: FEFunction::zeros(&spaces.m),
        }
    }
}

pub type VectorField = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;
pub type ScalarField = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// Optional volume sources and boundary traces, all functions of `(x, t)`.
#[derive(Clone, Default)]
pub struct SourceSet {
    pub momentum: Option<VectorField>,
    pub spin: Option<ScalarField>,
    pub magnetization: Option<VectorField>,
    /// Extra load `(g, ∇X)` in the potential equation.
    pub potential: Option<VectorField>,
    /// Dirichlet data for the velocity (zero when absent).
    pub velocity_trace: Option<VectorField>,
    /// Dirichlet data for the spin (zero when absent).
    pub spin_trace: Option<ScalarField>,
}

impl fmt::Debug for SourceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceSet").field("empty", &self.is_empty()).finish()
    }
}

impl SourceSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.momentum.is_none()
            && self.spin.is_none()
            && self.magnetization.is_none()
            && self.potential.is_none()
            && self.velocity_trace.is_none()
            && self.spin_trace.is_none()
    }
}

/// Data of one time level, sampled once and shared by all iterations.
pub struct StepInputs {
    pub t: f64,
    pub h_a: QuadField,
    pub h_fixed: Option<FEFunction>,
    pub f_u: Option<QuadField>,
    pub f_w: Option<Vec<f64>>,
    pub f_m: Option<QuadField>,
    pub g_phi: Option<QuadField>,
    pub u_trace: Option<Vec<f64>>,
    pub w_trace: Option<Vec<f64>>,
}

/// Outcome of one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    /// Relative energy-norm increment of every iteration.
    pub increments: Vec<f64>,
    /// Relaxation factor in use when the iteration stopped.
    pub relaxation: f64,
}

/// Owns the assembled structures and cached factorizations of one run.
pub struct Stepper {
    pub assembler: Assembler,
    pub params: MaterialParams,
    pub schedule: FieldSchedule,
    pub sources: SourceSet,
    pub picard: PicardSettings,
    pub mode: Mode,
    magnetization: CachedSolver,
    spin: CachedSolver,
    flow: CachedSolver,
    potential: PotentialSolver,
    mean_p: MeanFunctional,
    mean_x: MeanFunctional,
}

fn quad_scalar(spaces: &SpaceBundle, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let t = &spaces.x.tables;
    let mut out = Vec::with_capacity(spaces.mesh.n_cells() * t.n_qp());
    for cell in 0..spaces.mesh.n_cells() {
        let g = spaces.mesh.geom(cell);
        out.extend(t.qpoints.iter().map(|&r| f(g.map(r))));
    }
    out
}

fn quadratic(a: &CsrMatrix, x: &[f64]) -> f64 {
    a.matvec(x).iter().zip(x).map(|(y, v)| y * v).sum()
}

fn diff(a: &FEFunction, b: &FEFunction) -> Vec<f64> {
    a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect()
}

fn blend(lag: &FEFunction, hat: &FEFunction, theta: f64) -> FEFunction {
    let mut out = lag.clone();
    for (o, h) in out.coeffs.iter_mut().zip(&hat.coeffs) {
        *o += theta * (h - *o);
    }
    out
}

impl Stepper {
    pub fn new(
        spaces: SpaceBundle,
        params: MaterialParams,
        schedule: FieldSchedule,
        sources: SourceSet,
        mode: Mode,
    ) -> Result<Self, SchemeError> {
        params.validate()?;
        let potential = PotentialSolver::new(&spaces.x, Gauge::PinAndProject)?;
        let mean_p = MeanFunctional::new(&spaces.p);
        let mean_x = MeanFunctional::new(&spaces.x);
        Ok(Self {
            assembler: Assembler::new(spaces),
            params,
            schedule,
            sources,
            picard: PicardSettings::default(),
            mode,
            magnetization: CachedSolver::new("magnetization"),
            spin: CachedSolver::new("spin"),
            flow: CachedSolver::new("flow"),
            potential,
            mean_p,
            mean_x,
        })
    }

    pub fn spaces(&self) -> &SpaceBundle {
        &self.assembler.spaces
    }

    /// Interpolates the initial data and computes the matching field.
    pub fn initialize(
        &self,
        u0: impl Fn([f64; 2]) -> [f64; 2],
        w0: impl Fn([f64; 2]) -> f64,
        m0: impl Fn([f64; 2]) -> [f64; 2],
    ) -> State {
        let s = self.spaces();
        let mut st = State::zeros(s);
        st.u = interpolate_vector(&s.u, u0);
        st.w = interpolate(&s.w, |x, _| w0(x));
        st.m = interpolate_vector(&s.m, m0);
        self.refresh_field(&mut st);
        st
    }

    /// Recomputes `Φ` and `H` of a state from its magnetization.
    pub fn refresh_field(&self, st: &mut State) {
        let s = self.spaces();
        match self.mode {
            Mode::Coupled => {
                let mut h_a = self.sample_field(st.t);
                if let Some(g) = &self.sources.potential {
                    let extra = QuadField::sample(&s.mesh, &s.x.tables, |x| g(x, st.t));
                    h_a = QuadField { n_qp: h_a.n_qp, values: h_a.values.iter().zip(&extra.values).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect() };
                }
                let (phi, h) = crate::magnetics::solve_potential_with(&self.potential, s, &st.m, &h_a);
                st.phi = phi;
                st.h = h;
            }
            Mode::Simplified => {
                st.phi = FEFunction::zeros(&s.x);
                st.h = self.interpolated_field(st.t);
            }
        }
    }

    /// Applied field at the cell quadrature points.
    pub fn sample_field(&self, t: f64) -> QuadField {
        let s = self.spaces();
        QuadField::sample(&s.mesh, &s.x.tables, |x| self.schedule.applied_field(t, x))
    }

    /// `I_M h_a(t)`.
    pub fn interpolated_field(&self, t: f64) -> FEFunction {
        interpolate_vector(&self.spaces().m, |x| self.schedule.applied_field(t, x))
    }

    /// Samples fields and sources at time `t`.
    pub fn step_inputs(&self, t: f64) -> StepInputs {
        let s = self.spaces();
        let (mesh, tab) = (&s.mesh, &s.x.tables);
        let src = &self.sources;
        let vq = |f: &VectorField| QuadField::sample(mesh, tab, |x| f(x, t));
        StepInputs {
            t,
            h_a: self.sample_field(t),
            h_fixed: (self.mode == Mode::Simplified).then(|| self.interpolated_field(t)),
            f_u: src.momentum.as_ref().map(vq),
            f_w: src.spin.as_ref().map(|f| quad_scalar(s, |x| f(x, t))),
            f_m: src.magnetization.as_ref().map(vq),
            g_phi: src.potential.as_ref().map(vq),
            u_trace: src.velocity_trace.as_ref().map(|f| interpolate_vector(&s.u, |x| f(x, t)).coeffs),
            w_trace: src.spin_trace.as_ref().map(|f| interpolate(&s.w, |x, _| f(x, t)).coeffs),
        }
    }

    /// One application of the linear map: given the lagged iterate and the
    /// previous time level, returns the next candidate.
    pub fn picard_substep(
        &mut self,
        lag: &State,
        prev: &State,
        tau: f64,
        inputs: &StepInputs,
    ) -> Result<State, SchemeError> {
        let s = self.assembler.spaces.clone();
        let p = self.params.clone();
        let mut out = lag.clone();

        // (a) magnetization, with the potential when coupled
        match (&self.mode, &inputs.h_fixed) {
            (Mode::Simplified, Some(h)) => {
                let drive = MagneticDrive::Fixed { h };
                let (a, b) = self.assembler.magnetization_system(&p, tau, &lag.u, &lag.w, &prev.m, &drive, inputs.f_m.as_ref());
                let x = self
                    .magnetization
                    .solve(&a, &b, Some(&lag.m.coeffs))
                    .map_err(|source| SchemeError::Stage { stage: Stage::Magnetization, source })?;
                out.m.coeffs = x;
                out.h = h.clone();
                out.phi = FEFunction::zeros(&s.x);
            }
            _ => {
                let drive = MagneticDrive::Potential { h_a: &inputs.h_a, extra: inputs.g_phi.as_ref() };
                let (a, b) = self.assembler.magnetization_system(&p, tau, &lag.u, &lag.w, &prev.m, &drive, inputs.f_m.as_ref());
                let mut guess = lag.m.coeffs.clone();
                guess.extend_from_slice(&lag.phi.coeffs);
                let x = self
                    .magnetization
                    .solve(&a, &b, Some(&guess))
                    .map_err(|source| SchemeError::Stage { stage: Stage::Magnetization, source })?;
                let lay = &self.assembler.coupled_layout;
                out.m.coeffs = lay.segment("m", &x).to_vec();
                let mut phi = lay.segment("phi", &x).to_vec();
                self.mean_x.project(&mut phi);
                out.phi.coeffs = phi;
                out.h = gradient_into(&out.phi, &s.m);
            }
        }

        // (b) spin
        let (a, b) = self.assembler.spin_system(
            &p,
            tau,
            &lag.u,
            &prev.w,
            &out.m,
            &lag.h,
            inputs.f_w.as_deref(),
            inputs.w_trace.as_deref(),
        );
        out.w.coeffs = self
            .spin
            .solve(&a, &b, Some(&lag.w.coeffs))
            .map_err(|source| SchemeError::Stage { stage: Stage::Spin, source })?;

        // (c) velocity and pressure
        let (a, b) = self.assembler.flow_system(
            &p,
            tau,
            &lag.u,
            &prev.u,
            &out.w,
            &out.m,
            &lag.h,
            inputs.f_u.as_ref(),
            inputs.u_trace.as_deref(),
        );
        let mut guess = lag.u.coeffs.clone();
        guess.extend_from_slice(&lag.p.coeffs);
        let x = self
            .flow
            .solve(&a, &b, Some(&guess))
            .map_err(|source| SchemeError::Stage { stage: Stage::Flow, source })?;
        let lay = &self.assembler.flow_layout;
        out.u.coeffs = lay.segment("u", &x).to_vec();
        let mut pr = lay.segment("p", &x).to_vec();
        if self.assembler.pressure_pin.is_some() {
            self.mean_p.project(&mut pr);
        }
        out.p.coeffs = pr;
        Ok(out)
    }

    /// `‖U‖² + ȷ‖W‖² + μ0‖M‖² + μ0‖H‖²` of the difference of two states.
    pub fn energy_distance(&self, a: &State, b: &State) -> f64 {
        let asm = &self.assembler;
        let p = &self.params;
        let mut e = quadratic(&asm.mass_u, &diff(&a.u, &b.u))
            + p.inertia * quadratic(&asm.mass_w, &diff(&a.w, &b.w))
            + p.mu0 * quadratic(&asm.mass_m, &diff(&a.m, &b.m));
        e += p.mu0
            * match self.mode {
                Mode::Coupled => quadratic(&asm.stiffness_x, &diff(&a.phi, &b.phi)),
                Mode::Simplified => quadratic(&asm.mass_m, &diff(&a.h, &b.h)),
            };
        e.max(0.0).sqrt()
    }

    /// Advances one step of size `tau` from `prev`.
    pub fn step(&mut self, prev: &State, tau: f64) -> Result<(State, StepReport), SchemeError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SchemeError::InvalidTimeStep(tau));
        }
        let t = prev.t + tau;
        let inputs = self.step_inputs(t);
        let mut lag = prev.clone();
        lag.k = prev.k + 1;
        lag.t = t;
        if let Some(h) = &inputs.h_fixed {
            lag.h = h.clone();
        }
        let zero = State::zeros(self.spaces());
        let mut theta = self.picard.relaxation;
        let mut halvings = 0;
        let mut history: Vec<f64> = Vec::new();
        for it in 1..=self.picard.max_iterations {
            let hat = self.picard_substep(&lag, prev, tau, &inputs)?;
            let d = self.energy_distance(&hat, &lag);
            let size = self.energy_distance(&hat, &zero);
            let inc = if d == 0.0 { 0.0 } else { d / size.max(f64::MIN_POSITIVE) };
            history.push(inc);
            log::trace!("step {} iteration {it}: increment {inc:.3e}", lag.k);
            if !inc.is_finite() {
                break;
            }
            if inc < self.picard.tolerance {
                let report = StepReport { iterations: it, increments: history, relaxation: theta };
                return Ok((hat, report));
            }
            if it >= 3 && inc > history[it - 2] && halvings < self.picard.max_halvings {
                theta *= 0.5;
                halvings += 1;
                log::debug!("step {}: increments growing, relaxation now {theta}", lag.k);
            }
            let (k, t) = (lag.k, lag.t);
            lag = State {
                k,
                t,
                u: blend(&lag.u, &hat.u, theta),
                p: blend(&lag.p, &hat.p, theta),
                w: blend(&lag.w, &hat.w, theta),
                m: blend(&lag.m, &hat.m, theta),
                phi: blend(&lag.phi, &hat.phi, theta),
                h: blend(&lag.h, &hat.h, theta),
            };
        }
        Err(SchemeError::NotConverged { step: prev.k + 1, history })
    }

    /// [`Stepper::step`] with the field from the potential.
    pub fn step_coupled(&mut self, prev: &State, tau: f64) -> Result<(State, StepReport), SchemeError> {
        self.with_mode(Mode::Coupled, |s| s.step(prev, tau))
    }

    /// [`Stepper::step`] with the field fixed to `I_M h_a`.
    pub fn step_simplified(&mut self, prev: &State, tau: f64) -> Result<(State, StepReport), SchemeError> {
        self.with_mode(Mode::Simplified, |s| s.step(prev, tau))
    }

    fn with_mode<T>(&mut self, mode: Mode, f: impl FnOnce(&mut Self) -> T) -> T {
        let old = self.mode;
        if old != mode {
            self.magnetization.invalidate();
        }
        self.mode = mode;
        let out = f(self);
        if old != mode {
            self.magnetization.invalidate();
        }
        self.mode = old;
        out
    }

    /// Runs `steps` steps from `initial`, calling `observe(prev, next,
    /// report)` after each one.
    pub fn run<E: From<SchemeError>>(
        &mut self,
        initial: State,
        tau: f64,
        steps: usize,
        mut observe: impl FnMut(&State, &State, &StepReport) -> Result<(), E>,
    ) -> Result<State, E> {
        let mut cur = initial;
        for _ in 0..steps {
            let (next, report) = self.step(&cur, tau)?;
            observe(&cur, &next, &report)?;
            cur = next;
        }
        Ok(cur)
    }

    /// Factorization and refinement counters of the three blocks.
    pub fn solver_stats(&self) -> [crate::linalg::SolverStats; 3] {
        [self.magnetization.stats, self.spin.stats, self.flow.stats]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_spaces, l2_norm, DirichletSides};
    use crate::magnetics::{Intensity, Placement, ScheduledDipole};
    use crate::mesh::build_rect_mesh;

    fn bundle(n: usize) -> SpaceBundle {
        let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap());
        build_spaces(mesh, 2, DirichletSides::ALL).unwrap()
    }

    fn one_dipole() -> FieldSchedule {
        FieldSchedule {
            dipoles: vec![ScheduledDipole {
                placement: Placement::Fixed { position: [0.5, -0.4], direction: [0.0, 1.0] },
                intensity: Intensity::Constant { value: 2.0 },
            }],
        }
    }

    #[test]
    fn negative_parameters_rejected() {
        let p = MaterialParams { nu: -1.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(SchemeError::InvalidParameter { name: "nu", .. })));
        let p = MaterialParams { relaxation_time: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let s = bundle(2);
        let mut st = Stepper::new(s.clone(), MaterialParams::default(), FieldSchedule::empty(), SourceSet::none(), Mode::Coupled).unwrap();
        let init = st.initialize(|_| [0.0; 2], |_| 0.0, |_| [0.0; 2]);
        assert!(init.m.coeffs.iter().all(|&v| v == 0.0));
        let (next, rep) = st.step(&init, 0.1).unwrap();
        assert_eq!(rep.iterations, 1);
        for f in [&next.u, &next.p, &next.w, &next.m, &next.phi, &next.h] {
            assert!(f.coeffs.iter().all(|&v| v == 0.0));
        }
        assert!(matches!(st.step(&init, 0.0), Err(SchemeError::InvalidTimeStep(_))));
    }

    #[test]
    fn reaction_only_magnetization() {
        // With U = W = 0 frozen, H prescribed and no transport, the
        // magnetization solves (1 + τ/𝒯) M = M_prev + (τκ0/𝒯) H pointwise.
        let s = bundle(1);
        let p = MaterialParams { relaxation_time: 0.01, kappa0: 2.0, ..Default::default() };
        let st = Stepper::new(s.clone(), p.clone(), one_dipole(), SourceSet::none(), Mode::Simplified).unwrap();
        let h = st.interpolated_field(0.1);
        let m_prev = interpolate_vector(&s.m, |x| [x[0], 1.0 - x[1]]);
        let u = FEFunction::zeros(&s.u);
        let w = FEFunction::zeros(&s.w);
        let (a, b) = st.assembler.magnetization_system(&p, 0.1, &u, &w, &m_prev, &MagneticDrive::Fixed { h: &h }, None);
        let x = crate::linalg::solve_direct(&a, &b).unwrap();
        let react = 1.0 + 0.1 / 0.01;
        for i in 0..x.len() {
            let expect = (m_prev.coeffs[i] + 0.1 * 2.0 / 0.01 * h.coeffs[i]) / react;
            assert!((x[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()), "{i}");
        }
    }

    #[test]
    fn relaxation_run_converges_and_is_divergence_free() {
        let s = bundle(3);
        let p = MaterialParams { relaxation_time: 0.1, ..Default::default() };
        let mut st = Stepper::new(s.clone(), p, one_dipole(), SourceSet::none(), Mode::Coupled).unwrap();
        let init = st.initialize(|_| [0.0; 2], |_| 0.0, |_| [0.0; 2]);
        let end = st
            .run::<SchemeError>(init, 0.05, 3, |_, next, rep| {
                assert!(rep.iterations < 40, "{rep:?}");
                assert!(next.m.coeffs.iter().all(|v| v.is_finite()));
                Ok(())
            })
            .unwrap();
        assert!(l2_norm(&end.m) > 0.0);
        // discrete incompressibility against every pressure basis function
        let q = crate::forms::cell_integral(&[&end.u], |_, v| crate::forms::div_of_vector(&v[0].grad).abs()).unwrap();
        assert!(q.is_finite());
        let mut worst: f64 = 0.0;
        for i in 0..s.p.n_dofs() {
            let b = FEFunction::basis(&s.p, i);
            let r = crate::forms::cell_integral(&[&end.u, &b], |_, v| crate::forms::div_of_vector(&v[0].grad) * v[1].value[0]).unwrap();
            worst = worst.max(r.abs());
        }
        assert!(worst < 1e-9 * l2_norm(&end.u).max(1e-30) + 1e-14, "{worst}");
    }

    #[test]
    fn simplified_matches_coupled_without_susceptibility() {
        let s = bundle(4);
        let p = MaterialParams { kappa0: 0.0, ..Default::default() };
        let u0 = |x: [f64; 2]| {
            let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            [b * (x[1] - 0.5), -b * (x[0] - 0.5)]
        };
        let w0 = |x: [f64; 2]| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin();
        let mut a = Stepper::new(s.clone(), p.clone(), one_dipole(), SourceSet::none(), Mode::Coupled).unwrap();
        let mut b = Stepper::new(s.clone(), p, one_dipole(), SourceSet::none(), Mode::Simplified).unwrap();
        let ia = a.initialize(u0, w0, |_| [0.0; 2]);
        let ib = b.initialize(u0, w0, |_| [0.0; 2]);
        let (na, _) = a.step_coupled(&ia, 0.05).unwrap();
        let (nb, _) = b.step_simplified(&ib, 0.05).unwrap();
        assert!(na.m.coeffs.iter().all(|&v| v == 0.0));
        let mut du = na.u.clone();
        du.axpy(-1.0, &nb.u);
        let mut dw = na.w.clone();
        dw.axpy(-1.0, &nb.w);
        assert!(l2_norm(&du) < 1e-12 * l2_norm(&na.u));
        assert!(l2_norm(&dw) < 1e-12 * l2_norm(&na.w));
    }
}
