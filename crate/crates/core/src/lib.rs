//! Finite element solver for two-dimensional ferrofluid flow with an
//! energy-stable implicit scheme, dipole field schedules and a passive
//! scalar.

pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod forms;
pub mod magnetics;
pub mod assembly;
pub mod scheme;
pub mod residual;
pub mod manufactured;
pub mod diagnostics;
pub mod validation;
pub mod transport;
pub mod config;
pub mod output;
pub mod experiments;

pub use config::{parse_config, ConfigError, Preset, RunConfig, Scale, Walls};
pub use diagnostics::{EnergyLawReport, EnergyRecord, ErrorMaxima};
pub use experiments::{run, ExperimentError, Monitor, Observation, RunOutcome};
pub use fem::{build_spaces, DirichletSides, FEFunction, FESpace, SpaceBundle};
pub use magnetics::{FieldSchedule, Intensity, Placement, ScheduledDipole};
pub use mesh::{build_rect_mesh, Mesh};
pub use scheme::{MaterialParams, Mode, PicardSettings, SchemeError, State, Stepper};
pub use transport::{mixing_metric, PassiveScalar, ScalarStepper};
pub use validation::{convergence_study, ConvergenceStudy};
