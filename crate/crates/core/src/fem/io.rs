//! Text formats for meshes and nodal fields.
//!
//! Mesh: a header `V T F`, then `V` lines `x y`, `T` lines `i j k` and `F`
//! lines `i j marker`. Field: one real per line in vertex order.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::mesh::{BoundaryFacet, Mesh};
use crate::error::{Error, Result};

/// Nodal coefficients of a P1 function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    /// Validates length against `mesh` and finiteness.
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_vertices(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24);
        for v in &self.values {
            writeln!(s, "{v:e}").unwrap();
        }
        s
    }

    pub fn parse(mesh: &Mesh, text: &str, path: &Path) -> Result<Self> {
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Field::new(mesh, values)
    }

    pub fn read(mesh: &Mesh, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(mesh, &text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

pub fn mesh_to_text(mesh: &Mesh) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{} {} {}",
        mesh.num_vertices(),
        mesh.num_triangles(),
        mesh.boundary_facets().len()
    )
    .unwrap();
    for v in mesh.vertices() {
        writeln!(s, "{:e} {:e}", v[0], v[1]).unwrap();
    }
    for t in mesh.triangles() {
        writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
    }
    for f in mesh.boundary_facets() {
        writeln!(s, "{} {} {}", f.vertices[0], f.vertices[1], f.marker).unwrap();
    }
    s
}

pub fn parse_mesh(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    fn fields<T: std::str::FromStr>(line: &str, n: usize) -> std::result::Result<Vec<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != n {
            return Err(format!("expected {n} fields, found {}", parts.len()));
        }
        parts
            .iter()
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect()
    }

    let (ln, header) = lines.next().ok_or_else(|| err(0, "empty mesh file".into()))?;
    let counts: Vec<usize> = fields(header, 3).map_err(|m| err(ln, m))?;
    let (nv, nt, nf) = (counts[0], counts[1], counts[2]);

    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    let mut facets = Vec::with_capacity(nf);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated vertex block".into()))?;
        let v: Vec<f64> = fields(l, 2).map_err(|m| err(ln, m))?;
        vertices.push([v[0], v[1]]);
    }
    for _ in 0..nt {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated triangle block".into()))?;
        let t: Vec<usize> = fields(l, 3).map_err(|m| err(ln, m))?;
        triangles.push([t[0], t[1], t[2]]);
    }
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated facet block".into()))?;
        let f: Vec<i64> = fields(l, 3).map_err(|m| err(ln, m))?;
        if f[0] < 0 || f[1] < 0 {
            return Err(err(ln, "negative vertex index".into()));
        }
        facets.push(BoundaryFacet {
            vertices: [f[0] as usize, f[1] as usize],
            marker: f[2] as i32,
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing content after facet block".into()));
    }
    Mesh::new(vertices, triangles, facets)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    write_atomic(path, mesh_to_text(mesh).as_bytes())
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
