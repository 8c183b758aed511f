//! Wavefront OBJ exchange for grid meshes.
//!
//! Files carry a `# grid <n_u> <n_v>` comment so the lattice can be rebuilt on
//! load, and a `# side <side_u> <side_v>` comment for the rest extents.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{make_grid, GridMesh};
use crate::error::{Error, Result};

/// Renders the mesh as OBJ text.
pub fn write_obj(mesh: &GridMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# grid {} {}", mesh.n_u, mesh.n_v);
    let _ = writeln!(out, "# side {} {}", mesh.side_u, mesh.side_v);
    for p in &mesh.positions {
        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &GridMesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_obj(mesh))?;
    Ok(())
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<GridMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path)
}

fn parse_obj(text: &str, path: &Path) -> Result<GridMesh> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };

    let mut dims: Option<(usize, usize)> = None;
    let mut sides: Option<(f64, f64)> = None;
    let mut positions = Vec::new();
    let mut faces: Vec<([usize; 3], usize)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            let body: Vec<&str> = line.trim_start_matches('#').split_whitespace().collect();
            match body.as_slice() {
                ["grid", a, b] => {
                    let nu = a.parse().map_err(|_| err(line_no, "bad grid header".into()))?;
                    let nv = b.parse().map_err(|_| err(line_no, "bad grid header".into()))?;
                    dims = Some((nu, nv));
                }
                ["side", a, b] => {
                    let su = a.parse().map_err(|_| err(line_no, "bad side header".into()))?;
                    let sv = b.parse().map_err(|_| err(line_no, "bad side header".into()))?;
                    sides = Some((su, sv));
                }
                _ => {}
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => {}
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(line_no, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(err(line_no, "vertex needs three coordinates".into()));
                }
                positions.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(err(
                        line_no,
                        format!("face `{line}` has {} vertices, only triangles are supported", refs.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (slot, r) in tri.iter_mut().zip(&refs) {
                    let first = r.split('/').next().unwrap_or("");
                    let idx: usize = first.parse().map_err(|_| err(line_no, format!("bad face index `{r}`")))?;
                    if idx == 0 {
                        return Err(err(line_no, "face indices are 1-based".into()));
                    }
                    *slot = idx - 1;
                }
                faces.push((tri, line_no));
            }
            Some(_) => {}
        }
    }

    let (n_u, n_v) = dims.ok_or_else(|| err(1, "missing `# grid nu nv` header".into()))?;
    if positions.len() != n_u * n_v {
        return Err(err(
            text.lines().count(),
            format!("grid {n_u}x{n_v} expects {} vertices, found {}", n_u * n_v, positions.len()),
        ));
    }
    let (side_u, side_v) = match sides {
        Some(s) => s,
        None => {
            // fall back to the corner-to-corner extents of the first row and column
            let d = |a: usize, b: usize| crate::math::norm(crate::math::sub(positions[a], positions[b]));
            (d((n_u - 1) * n_v, 0), d(n_v - 1, 0))
        }
    };

    let mut mesh = make_grid(n_u, n_v, side_u, side_v).map_err(|e| err(1, e.to_string()))?;
    if faces.len() != mesh.triangles.len() {
        let line = faces.last().map(|f| f.1).unwrap_or(1);
        return Err(err(line, format!("expected {} faces for the grid, found {}", mesh.triangles.len(), faces.len())));
    }
    for ((tri, line_no), expected) in faces.iter().zip(&mesh.triangles) {
        if tri != expected {
            return Err(err(*line_no, format!("face {tri:?} does not match grid topology {expected:?}")));
        }
    }
    mesh.positions = positions;
    Ok(mesh)
}
