//! Output writers: CSV tables (step log, eigenvalue list, run summary),
//! legacy-VTK snapshots (one file per mesh dimension, plus vertex clouds
//! carrying face flux magnitudes), and the human-readable run report.
//!
//! All floating-point output uses Rust's shortest round-trip formatting,
//! so files written from identical inputs are byte-identical.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::fv::Layout;
use crate::mesh::MixedDimMesh;
use crate::Timings;

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------
// CSV

/// One CSV cell.
#[derive(Clone, Debug)]
pub enum Field {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Num(v) => fmt_f64(*v),
            Field::Text(s) => {
                if s.contains(',') || s.contains('"') || s.contains('\n') {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// Incremental CSV writer: UTF-8, comma separator, '.' decimal point,
/// header row first.
pub struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
    width: usize,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> io::Result<Csv> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Csv { path: path.to_path_buf(), out, width: header.len() })
    }

    pub fn row(&mut self, fields: &[Field]) -> io::Result<()> {
        debug_assert_eq!(fields.len(), self.width, "CSV row width mismatch");
        let line: Vec<String> = fields.iter().map(Field::render).collect();
        writeln!(self.out, "{}", line.join(","))
    }

    pub fn finish(mut self) -> io::Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

/// Read a key,value summary CSV back in (used by `compare`).
pub fn read_summary(path: &Path) -> io::Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if let Some((k, v)) = line.split_once(',') {
            rows.push((k.to_string(), v.to_string()));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// legacy VTK

/// Axis with the largest |component|.
fn major_axis(v: [f64; 3]) -> usize {
    let mut best = 0;
    for a in 1..3 {
        if v[a].abs() > v[best].abs() {
            best = a;
        }
    }
    best
}

/// For each lower-dimensional cell, the set of axes that appear as
/// bulk-side interface normals. A fracture cell sees exactly its plane
/// normal; an intersection line in 3D sees the two fracture normals.
fn constrained_axes(mesh: &MixedDimMesh) -> Vec<HashMap<usize, [bool; 3]>> {
    let mut maps = vec![HashMap::new(), HashMap::new(), HashMap::new()];
    for iface in &mesh.interfaces {
        let codim = iface.hi_codim + 1;
        let axes = maps[codim].entry(iface.lo_cell).or_insert([false; 3]);
        axes[major_axis(iface.normal)] = true;
    }
    maps
}

struct VtkGeom {
    points: Vec<[f64; 3]>,
    /// point indices per cell
    cells: Vec<Vec<usize>>,
    cell_type: u8,
}

/// Reconstruct axis-aligned cell shapes for one codimension from cell
/// centroids and grid spacing.
fn vtk_geometry(mesh: &MixedDimMesh, codim: usize) -> VtkGeom {
    let dim = mesh.dim;
    let h = mesh.h;
    let sub = &mesh.subs[codim];
    let cell_dim = dim - codim;
    let axes_map = constrained_axes(mesh);

    let mut points = Vec::new();
    let mut cells = Vec::with_capacity(sub.cells.len());
    // VTK cell types: 1 vertex, 3 line, 9 quad, 12 hexahedron
    let cell_type: u8 = match cell_dim {
        0 => 1,
        1 => 3,
        2 => 9,
        _ => 12,
    };

    for (ci, cell) in sub.cells.iter().enumerate() {
        let c = cell.centroid;
        // span[a] = half-extent of the cell along axis a
        let mut span = [0.0; 3];
        if codim == 0 {
            for a in 0..dim {
                span[a] = 0.5 * h[a];
            }
        } else {
            let constrained = axes_map[codim].get(&ci).copied().unwrap_or([false; 3]);
            for a in 0..dim {
                if !constrained[a] {
                    span[a] = 0.5 * h[a];
                }
            }
        }
        // free axes, in increasing order
        let free: Vec<usize> = (0..dim).filter(|&a| span[a] > 0.0).collect();
        let base = points.len();
        let ids: Vec<usize> = match free.len() {
            0 => {
                points.push(c);
                vec![base]
            }
            1 => {
                let a = free[0];
                for s in [-1.0, 1.0] {
                    let mut p = c;
                    p[a] += s * span[a];
                    points.push(p);
                }
                vec![base, base + 1]
            }
            2 => {
                let (u, v) = (free[0], free[1]);
                // counter-clockwise quad
                for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                    let mut p = c;
                    p[u] += su * span[u];
                    p[v] += sv * span[v];
                    points.push(p);
                }
                (base..base + 4).collect()
            }
            _ => {
                // hexahedron: bottom quad then top quad
                for sz in [-1.0, 1.0] {
                    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                        points.push([
                            c[0] + sx * span[0],
                            c[1] + sy * span[1],
                            c[2] + sz * span[2],
                        ]);
                    }
                }
                (base..base + 8).collect()
            }
        };
        cells.push(ids);
    }
    VtkGeom { points, cells, cell_type }
}

fn write_vtk_body(
    path: &Path,
    title: &str,
    geom: &VtkGeom,
    fields: &[(&str, &[f64])],
) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", geom.points.len())?;
    for p in &geom.points {
        writeln!(out, "{} {} {}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]))?;
    }
    let size: usize = geom.cells.iter().map(|c| c.len() + 1).sum();
    writeln!(out, "CELLS {} {}", geom.cells.len(), size)?;
    for ids in &geom.cells {
        let list: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{} {}", ids.len(), list.join(" "))?;
    }
    writeln!(out, "CELL_TYPES {}", geom.cells.len())?;
    for _ in &geom.cells {
        writeln!(out, "{}", geom.cell_type)?;
    }
    if !fields.is_empty() {
        writeln!(out, "CELL_DATA {}", geom.cells.len())?;
        for (name, vals) in fields {
            debug_assert_eq!(vals.len(), geom.cells.len());
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in *vals {
                writeln!(out, "{}", fmt_f64(*v))?;
            }
        }
    }
    out.flush()
}

/// Write per-cell fields for one codimension. Each field slice is
/// indexed by cell within that codimension.
pub fn write_vtk_cells(
    path: &Path,
    mesh: &MixedDimMesh,
    codim: usize,
    fields: &[(&str, &[f64])],
) -> io::Result<()> {
    let geom = vtk_geometry(mesh, codim);
    let title = format!("convecta {}d cells", mesh.dim - codim);
    write_vtk_body(path, &title, &geom, fields)
}

/// Write face-centred fields for one codimension as a vertex cloud at
/// the face centroids (fluid and solute flux magnitudes, typically).
pub fn write_vtk_faces(
    path: &Path,
    mesh: &MixedDimMesh,
    codim: usize,
    fields: &[(&str, &[f64])],
) -> io::Result<()> {
    let sub = &mesh.subs[codim];
    let geom = VtkGeom {
        points: sub.faces.iter().map(|f| f.centroid).collect(),
        cells: (0..sub.faces.len()).map(|i| vec![i]).collect(),
        cell_type: 1,
    };
    let title = format!("convecta {}d faces", mesh.dim - codim);
    write_vtk_body(path, &title, &geom, fields)
}

/// Split a full state vector into per-codim W and P slices and write one
/// VTK file per mesh dimension under `dir`, named `<base>.<d>d.vtk`.
/// Returns the files written.
pub fn write_state_vtk(
    dir: &Path,
    base: &str,
    mesh: &MixedDimMesh,
    lay: &Layout,
    x: &[f64],
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for codim in 0..mesh.subs.len() {
        let n = mesh.subs[codim].cells.len();
        if n == 0 {
            continue;
        }
        let w: Vec<f64> = (0..n).map(|ci| x[lay.w(codim, ci)]).collect();
        let p: Vec<f64> = (0..n).map(|ci| x[lay.p(codim, ci)]).collect();
        let path = dir.join(format!("{base}.{}d.vtk", mesh.dim - codim));
        write_vtk_cells(&path, mesh, codim, &[("W", &w), ("P", &p)])?;
        written.push(path);
    }
    Ok(written)
}

/// Write one scalar defined on all cells (e.g. an eigenvector) as one
/// VTK file per mesh dimension. `values` is indexed by global cell.
pub fn write_cellfield_vtk(
    dir: &Path,
    base: &str,
    name: &str,
    mesh: &MixedDimMesh,
    values: &[f64],
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for codim in 0..mesh.subs.len() {
        let n = mesh.subs[codim].cells.len();
        if n == 0 {
            continue;
        }
        let off = mesh.cell_offset(codim);
        let vals: Vec<f64> = values[off..off + n].to_vec();
        let path = dir.join(format!("{base}.{}d.vtk", mesh.dim - codim));
        write_vtk_cells(&path, mesh, codim, &[(name, &vals)])?;
        written.push(path);
    }
    Ok(written)
}

/// Write fluid and solute flux magnitudes on the faces of every mesh
/// dimension, one vertex-cloud file per dimension.
pub fn write_flux_vtk(
    dir: &Path,
    base: &str,
    mesh: &MixedDimMesh,
    fluid: &[Vec<f64>],
    solute: &[Vec<f64>],
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for codim in 0..mesh.subs.len() {
        if mesh.subs[codim].faces.is_empty() {
            continue;
        }
        let u: Vec<f64> = fluid[codim].iter().map(|v| v.abs()).collect();
        let q: Vec<f64> = solute[codim].iter().map(|v| v.abs()).collect();
        let path = dir.join(format!("{base}.faces.{}d.vtk", mesh.dim - codim));
        write_vtk_faces(&path, mesh, codim, &[("fluid_flux", &u), ("solute_flux", &q)])?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------
// run report

/// Everything worth knowing about one invocation, rendered both as a
/// readable report and as a key,value summary CSV for `compare`.
pub struct Report {
    pub scenario: String,
    pub method: String,
    pub cells_per_dim: Vec<(usize, usize)>,
    pub rayleigh: f64,
    pub peclet: f64,
    /// headline results in display order (name, rendered value)
    pub headline: Vec<(String, String)>,
    /// numeric results for machine comparison (name, value)
    pub summary: Vec<(String, f64)>,
    pub timings: Timings,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenario:  {}\n", self.scenario));
        s.push_str(&format!("method:    {}\n", self.method));
        let grid: Vec<String> = self
            .cells_per_dim
            .iter()
            .map(|(d, n)| format!("{n} cells ({d}d)"))
            .collect();
        s.push_str(&format!("grid:      {}\n", grid.join(" + ")));
        s.push_str(&format!("Ra:        {:.4}\n", self.rayleigh));
        s.push_str(&format!("grid Pe:   {:.4}\n", self.peclet));
        for (name, val) in &self.headline {
            s.push_str(&format!("{name}: {val}\n"));
        }
        s.push_str("timings [s]:\n");
        for (name, secs) in self.timings.entries() {
            s.push_str(&format!("  {name:<10} {secs:.3}\n"));
        }
        if !self.files.is_empty() {
            s.push_str("files:\n");
            for f in &self.files {
                s.push_str(&format!("  {}\n", f.display()));
            }
        }
        s
    }

    /// Write report.txt and summary.csv under `dir`; returns both paths.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.render())?;
        let csv_path = dir.join("summary.csv");
        let mut csv = Csv::create(&csv_path, &["key", "value"])?;
        csv.row(&[Field::Text("rayleigh".into()), Field::Num(self.rayleigh)])?;
        csv.row(&[Field::Text("peclet".into()), Field::Num(self.peclet)])?;
        for (k, v) in &self.summary {
            csv.row(&[Field::Text(k.clone()), Field::Num(*v)])?;
        }
        csv.finish()?;
        Ok(vec![txt, csv_path])
    }
}
