//! Legacy VTK snapshots and CSV time series.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::fem::FEFunction;
use crate::mesh::Mesh;
use crate::scheme::State;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

/// Values of `f` at the mesh vertices. Discontinuous fields take the value
/// from whichever cell the point lookup returns.
fn at_vertices(mesh: &Mesh, f: &FEFunction) -> Vec<[f64; 2]> {
    mesh.vertices.iter().map(|&x| f.evaluate_at(x).map_or([0.0; 2], |p| p.value)).collect()
}

enum PointData<'a> {
    Scalar(&'a str, Vec<f64>),
    Vector(&'a str, Vec<[f64; 2]>),
}

fn write_grid(path: &Path, mesh: &Mesh, title: &str, data: &[PointData]) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
        writeln!(w, "ASCII\nDATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", mesh.vertices.len())?;
        for v in &mesh.vertices {
            writeln!(w, "{} {} 0", v[0], v[1])?;
        }
        let nc = mesh.n_cells();
        writeln!(w, "CELLS {} {}", nc, 5 * nc)?;
        for c in &mesh.cells {
            writeln!(w, "4 {} {} {} {}", c[0], c[1], c[2], c[3])?;
        }
        writeln!(w, "CELL_TYPES {nc}")?;
        for _ in 0..nc {
            writeln!(w, "9")?;
        }
        writeln!(w, "POINT_DATA {}", mesh.vertices.len())?;
        for d in data {
            match d {
                PointData::Scalar(name, v) => {
                    writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
                    for x in v {
                        writeln!(w, "{x}")?;
                    }
                }
                PointData::Vector(name, v) => {
                    writeln!(w, "VECTORS {name} double")?;
                    for x in v {
                        writeln!(w, "{} {} 0", x[0], x[1])?;
                    }
                }
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

/// Writes all unknowns of a state (and optionally a concentration) at the
/// mesh vertices.
pub fn write_vtk(path: &Path, state: &State, concentration: Option<&FEFunction>) -> Result<(), OutputError> {
    let mesh = &state.u.space.mesh;
    let scalar = |f: &FEFunction| at_vertices(mesh, f).into_iter().map(|v| v[0]).collect::<Vec<_>>();
    let mut data = vec![
        PointData::Vector("velocity", at_vertices(mesh, &state.u)),
        PointData::Scalar("pressure", scalar(&state.p)),
        PointData::Scalar("spin", scalar(&state.w)),
        PointData::Vector("magnetization", at_vertices(mesh, &state.m)),
        PointData::Scalar("potential", scalar(&state.phi)),
        PointData::Vector("field", at_vertices(mesh, &state.h)),
    ];
    if let Some(c) = concentration {
        data.push(PointData::Scalar("concentration", scalar(c)));
    }
    write_grid(path, mesh, &format!("step {} t = {}", state.k, state.t), &data)
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), OutputError> {
    let err = |source| OutputError::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}
