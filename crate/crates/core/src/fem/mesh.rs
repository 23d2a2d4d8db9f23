use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Marker carried by every facet of the meshes built in this crate.
pub const BOUNDARY_MARKER: i32 = 1;

/// Refinement levels above this are rejected by the disc builder.
pub const MAX_DISC_LEVEL: usize = 8;

/// Boundary segment between two vertices with an integer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub vertices: [usize; 2],
    pub marker: i32,
}

/// 2D triangulation with marked boundary facets.
///
/// Triangles are stored counter-clockwise; [`Mesh::new`] flips any clockwise
/// input and rejects zero-area elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_facets: Vec<BoundaryFacet>,
    dirichlet_nodes: BTreeSet<usize>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    pub fn new(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        boundary_facets: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        for (index, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {index} references a vertex out of range"
                )));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area.abs() <= f64::EPSILON * 1e-3 || !area.is_finite() {
                return Err(Error::DegenerateTriangle { index, area });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                *edge_use
                    .entry(edge_key(tri[k], tri[(k + 1) % 3]))
                    .or_default() += 1;
            }
        }
        let mut degree: HashMap<usize, usize> = HashMap::new();
        for (i, f) in boundary_facets.iter().enumerate() {
            let [a, b] = f.vertices;
            if a >= nv || b >= nv || a == b {
                return Err(Error::InvalidMesh(format!("facet {i} is malformed")));
            }
            match edge_use.get(&edge_key(a, b)) {
                Some(1) => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "facet {i} ({a}, {b}) does not lie on exactly one triangle"
                    )))
                }
            }
            *degree.entry(a).or_default() += 1;
            *degree.entry(b).or_default() += 1;
        }
        if let Some((v, d)) = degree.iter().find(|(_, &d)| d != 2) {
            return Err(Error::InvalidMesh(format!(
                "boundary facets do not form closed loops (vertex {v} has degree {d})"
            )));
        }

        Ok(Self {
            vertices,
            triangles,
            boundary_facets,
            dirichlet_nodes: BTreeSet::new(),
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    pub fn dirichlet_nodes(&self) -> &BTreeSet<usize> {
        &self.dirichlet_nodes
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Records `nodes` as Dirichlet vertices. Every node must be on the boundary.
    pub fn set_dirichlet_nodes(&mut self, nodes: impl IntoIterator<Item = usize>) -> Result<()> {
        let boundary = self.boundary_vertices();
        let nodes: BTreeSet<usize> = nodes.into_iter().collect();
        if let Some(n) = nodes.iter().find(|n| !boundary.contains(n)) {
            return Err(Error::InvalidMesh(format!(
                "Dirichlet node {n} is not a boundary vertex"
            )));
        }
        self.dirichlet_nodes = nodes;
        Ok(())
    }

    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        self.boundary_facets
            .iter()
            .flat_map(|f| f.vertices)
            .collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unique undirected edges.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .into_iter()
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Boundary vertex whose polar angle is closest to `theta`.
    pub fn boundary_vertex_nearest_angle(&self, theta: f64) -> Option<usize> {
        self.boundary_vertices().into_iter().min_by(|&a, &b| {
            let da = wrap_angle(polar_angle(self.vertices[a]) - theta).abs();
            let db = wrap_angle(polar_angle(self.vertices[b]) - theta).abs();
            da.total_cmp(&db)
        })
    }

    /// Splits every triangle into four through its edge midpoints.
    ///
    /// `project` maps each new boundary midpoint; interior midpoints stay put.
    pub fn refine_with(&self, project: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Mesh> {
        let boundary_edges: HashMap<(usize, usize), i32> = self
            .boundary_facets
            .iter()
            .map(|f| (edge_key(f.vertices[0], f.vertices[1]), f.marker))
            .collect();
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                if boundary_edges.contains_key(&edge_key(a, b)) {
                    m = project(m);
                }
                vertices.push(m);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        let mut facets = Vec::with_capacity(2 * self.boundary_facets.len());
        for f in &self.boundary_facets {
            let [a, b] = f.vertices;
            let m = mid(a, b, &mut vertices);
            facets.push(BoundaryFacet {
                vertices: [a, m],
                marker: f.marker,
            });
            facets.push(BoundaryFacet {
                vertices: [m, b],
                marker: f.marker,
            });
        }
        let mut mesh = Mesh::new(vertices, triangles, facets)?;
        mesh.dirichlet_nodes = self.dirichlet_nodes.clone();
        Ok(mesh)
    }
}

pub(crate) fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

pub fn polar_angle(p: [f64; 2]) -> f64 {
    p[1].atan2(p[0])
}

/// Wraps an angle difference into (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

const DISC_SECTORS: usize = 8;

/// Unit disc triangulation from an eight-sector fan around the origin,
/// refined `level` times by midpoint subdivision with boundary projection.
///
/// The boundary vertex at angle zero is recorded as the single Dirichlet node.
pub fn build_unit_disc_mesh(level: usize) -> Result<Mesh> {
    if level > MAX_DISC_LEVEL {
        return Err(Error::InvalidMesh(format!(
            "refinement level {level} exceeds {MAX_DISC_LEVEL}"
        )));
    }
    let mut vertices = vec![[0.0, 0.0]];
    for k in 0..DISC_SECTORS {
        let t = 2.0 * PI * k as f64 / DISC_SECTORS as f64;
        vertices.push([t.cos(), t.sin()]);
    }
    let ring = |k: usize| 1 + k % DISC_SECTORS;
    let triangles = (0..DISC_SECTORS).map(|k| [0, ring(k), ring(k + 1)]).collect();
    let facets = (0..DISC_SECTORS)
        .map(|k| BoundaryFacet {
            vertices: [ring(k), ring(k + 1)],
            marker: BOUNDARY_MARKER,
        })
        .collect();
    let mut mesh = Mesh::new(vertices, triangles, facets)?;
    for _ in 0..level {
        mesh = mesh.refine_with(|p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            [p[0] / r, p[1] / r]
        })?;
    }
    // vertex 1 sits at angle 0 and survives every refinement
    mesh.set_dirichlet_nodes([1])?;
    Ok(mesh)
}

/// Structured triangulation of [0,1]² with `n` cells per side.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("square mesh needs n >= 1".into()));
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            // alternate the diagonal so the mesh has no preferred direction
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    let mut facets = Vec::with_capacity(4 * n);
    let mut push = |a, b| {
        facets.push(BoundaryFacet {
            vertices: [a, b],
            marker: BOUNDARY_MARKER,
        })
    };
    for i in 0..n {
        push(idx(i, 0), idx(i + 1, 0));
        push(idx(n, i), idx(n, i + 1));
        push(idx(i + 1, n), idx(i, n));
        push(idx(0, i + 1), idx(0, i));
    }
    Mesh::new(vertices, triangles, facets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_level0_euler_relation() {
        let mesh = build_unit_disc_mesh(0).unwrap();
        let v = mesh.num_vertices() as i64;
        let e = mesh.edges().len() as i64;
        let t = mesh.num_triangles() as i64;
        assert_eq!(v - e + t, 1);
    }

    #[test]
    fn disc_euler_relation_all_levels() {
        for level in 0..5 {
            let mesh = build_unit_disc_mesh(level).unwrap();
            let (v, e, t) = (
                mesh.num_vertices() as i64,
                mesh.edges().len() as i64,
                mesh.num_triangles() as i64,
            );
            assert_eq!(v - e + t, 1, "level {level}");
        }
    }

    #[test]
    fn disc_boundary_on_unit_circle() {
        let mesh = build_unit_disc_mesh(3).unwrap();
        for v in mesh.boundary_vertices() {
            let p = mesh.vertices()[v];
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-14);
        }
        assert!(mesh
            .boundary_facets()
            .iter()
            .all(|f| f.marker == BOUNDARY_MARKER));
    }

    #[test]
    fn disc_vertex_count_grows_fourfold() {
        let counts: Vec<usize> = (0..5)
            .map(|l| build_unit_disc_mesh(l).unwrap().num_vertices())
            .collect();
        for w in counts.windows(2) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!(ratio > 2.7 && ratio < 4.0, "{counts:?}");
        }
        assert_eq!(counts[3], 289);
        assert_eq!(counts[4], 1089);
    }

    #[test]
    fn disc_refinement_keeps_coarse_vertices() {
        let coarse = build_unit_disc_mesh(0).unwrap();
        let fine = build_unit_disc_mesh(1).unwrap();
        for (i, p) in coarse.vertices().iter().enumerate() {
            assert_eq!(fine.vertices()[i], *p);
        }
    }

    #[test]
    fn disc_refinement_halves_edge_length() {
        let h: Vec<f64> = (1..5)
            .map(|l| build_unit_disc_mesh(l).unwrap().max_edge_length())
            .collect();
        for w in h.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 1.8 && r < 2.2, "{h:?}");
        }
    }

    #[test]
    fn disc_area_converges_quadratically() {
        let err: Vec<f64> = (2..6)
            .map(|l| (build_unit_disc_mesh(l).unwrap().area() - PI).abs())
            .collect();
        for w in err.windows(2) {
            let r = w[0] / w[1];
            assert!((r - 4.0).abs() < 0.2, "{err:?}");
        }
    }

    #[test]
    fn ground_node_at_angle_zero() {
        let mesh = build_unit_disc_mesh(2).unwrap();
        assert_eq!(mesh.dirichlet_nodes().iter().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(mesh.boundary_vertex_nearest_angle(0.0), Some(1));
        assert_eq!(mesh.vertices()[1], [1.0, 0.0]);
    }

    #[test]
    fn level_above_cap_is_rejected() {
        assert!(build_unit_disc_mesh(MAX_DISC_LEVEL + 1).is_err());
    }

    #[test]
    fn clockwise_triangle_is_flipped_and_zero_area_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let facets = vec![
            BoundaryFacet { vertices: [0, 1], marker: 1 },
            BoundaryFacet { vertices: [1, 2], marker: 1 },
            BoundaryFacet { vertices: [2, 0], marker: 1 },
        ];
        let mesh = Mesh::new(v.clone(), vec![[0, 2, 1]], facets.clone()).unwrap();
        assert!(mesh.triangle_area(0) > 0.0);

        let flat = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let err = Mesh::new(flat, vec![[0, 1, 2]], facets).unwrap_err();
        assert!(matches!(err, Error::DegenerateTriangle { index: 0, .. }));
    }

    #[test]
    fn open_boundary_is_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let facets = vec![BoundaryFacet { vertices: [0, 1], marker: 1 }];
        assert!(Mesh::new(v, vec![[0, 1, 2]], facets).is_err());
    }

    #[test]
    fn square_mesh_area_and_boundary() {
        let mesh = build_unit_square_mesh(6).unwrap();
        assert!((mesh.area() - 1.0).abs() < 1e-14);
        assert_eq!(mesh.boundary_facets().len(), 24);
        assert_eq!(mesh.num_vertices(), 49);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(2.0 * PI) - 0.0).abs() < 1e-15);
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.5 * PI) + 0.5 * PI).abs() < 1e-12);
    }
}
