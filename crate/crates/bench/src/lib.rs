//! Shared setup for the benchmarks.

use std::sync::Arc;

use ferroflow_core::fem::{build_spaces, DirichletSides, SpaceBundle};
use ferroflow_core::magnetics::{FieldSchedule, Intensity, Placement, ScheduledDipole};
use ferroflow_core::mesh::build_rect_mesh;
use ferroflow_core::scheme::{MaterialParams, Mode, SourceSet, State, Stepper};

pub fn unit_square(n: usize) -> SpaceBundle {
    let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n).expect("valid mesh"));
    build_spaces(mesh, 2, DirichletSides::ALL).expect("valid spaces")
}

pub fn one_dipole() -> FieldSchedule {
    FieldSchedule {
        dipoles: vec![ScheduledDipole {
            placement: Placement::Fixed { position: [0.5, -0.4], direction: [0.0, 1.0] },
            intensity: Intensity::Constant { value: 10.0 },
        }],
    }
}

/// A stepper on an `n × n` mesh and a state a few steps into a relaxation
/// run, so that all fields are nonzero.
pub fn warmed_up(n: usize, mode: Mode) -> (Stepper, State) {
    let params = MaterialParams { relaxation_time: 0.1, ..Default::default() };
    let mut st = Stepper::new(unit_square(n), params, one_dipole(), SourceSet::none(), mode).expect("valid setup");
    let mut s = st.initialize(|_| [0.0; 2], |_| 0.0, |_| [0.0; 2]);
    for _ in 0..2 {
        s = st.step(&s, 0.02).expect("step converges").0;
    }
    (st, s)
}
