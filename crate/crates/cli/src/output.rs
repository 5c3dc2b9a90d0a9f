//! CSV and legacy ASCII VTK writers. Files are written to a temporary sibling
//! and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use gld_core::hdg::{field_e, field_p, StateFields, FIELD_V};
use gld_core::linalg::dot;
use gld_core::mesh::Mesh;
use gld_core::model::Scaling;
use gld_core::polybasis::CellBasis;

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Formats rows of numbers under a header line.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Integers print without a fractional part, everything else in shortest
/// round-trip exponent form.
fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

/// Cell-center values of one cell, in SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSample {
    pub v: f64,
    pub e: [f64; 2],
    pub p: [f64; 2],
    /// `d1 P2 - d2 P1`.
    pub curl_p: f64,
}

/// Evaluates the cell fields at the cell centers and redimensionalizes them.
pub fn sample_cells(mesh: &Mesh, state: &StateFields, scaling: &Scaling) -> Vec<CellSample> {
    let basis = CellBasis::new(state.degree);
    let (vals, grads) = basis.eval([0.0, 0.0]);
    (0..mesh.num_cells())
        .map(|c| {
            let h = mesh.cell_size(c);
            let grad = |f: usize| {
                let coef = state.cell_field(c, f);
                let mut g = [0.0; 2];
                for (a, gr) in coef.iter().zip(&grads) {
                    g[0] += a * gr[0] * 2.0 / h[0];
                    g[1] += a * gr[1] * 2.0 / h[1];
                }
                g
            };
            let val = |f: usize| dot(&vals, state.cell_field(c, f));
            let curl = grad(field_p(1))[0] - grad(field_p(0))[1];
            CellSample {
                v: val(FIELD_V) * scaling.potential(),
                e: [val(field_e(0)) * scaling.field(), val(field_e(1)) * scaling.field()],
                p: [
                    val(field_p(0)) * scaling.polarization,
                    val(field_p(1)) * scaling.polarization,
                ],
                curl_p: curl * scaling.polarization / scaling.length,
            }
        })
        .collect()
}

/// Legacy ASCII VTK unstructured grid with one quadrilateral per cell and
/// cell data `V`, `E`, `P`, `curl_P`. Coordinates are in meters.
pub fn vtk_string(mesh: &Mesh, state: &StateFields, scaling: &Scaling) -> String {
    let samples = sample_cells(mesh, state, scaling);
    let verts = mesh.vertices();
    let nc = mesh.num_cells();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "gld step {} time {:e}", state.step, state.time * scaling.time);
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", verts.len());
    for v in verts {
        let _ = writeln!(s, "{:e} {:e} 0", v[0] * scaling.length, v[1] * scaling.length);
    }
    let _ = writeln!(s, "CELLS {} {}", nc, 5 * nc);
    for cell in mesh.cells() {
        let [a, b, c, d] = cell.vertices;
        let _ = writeln!(s, "4 {a} {b} {c} {d}");
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(s, "9");
    }
    let _ = writeln!(s, "CELL_DATA {nc}");
    let _ = writeln!(s, "SCALARS V double 1\nLOOKUP_TABLE default");
    for x in &samples {
        let _ = writeln!(s, "{:e}", x.v);
    }
    let _ = writeln!(s, "VECTORS E double");
    for x in &samples {
        let _ = writeln!(s, "{:e} {:e} 0", x.e[0], x.e[1]);
    }
    let _ = writeln!(s, "VECTORS P double");
    for x in &samples {
        let _ = writeln!(s, "{:e} {:e} 0", x.p[0], x.p[1]);
    }
    let _ = writeln!(s, "SCALARS curl_P double 1\nLOOKUP_TABLE default");
    for x in &samples {
        let _ = writeln!(s, "{:e}", x.curl_p);
    }
    s
}

pub fn write_vtk(mesh: &Mesh, state: &StateFields, scaling: &Scaling, path: &Path) -> io::Result<()> {
    write_atomic(path, &vtk_string(mesh, state, scaling))
}
