use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::mesh::{dist, Mesh};
use super::sparse::{SparseOperator, SparsityPattern};
use crate::error::{Error, Result};

/// Inner product used for consensus norms, gradient norms and CG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    H1,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::L2 => write!(f, "l2"),
            NormKind::H1 => write!(f, "h1"),
        }
    }
}

/// Conductivity-like coefficient for stiffness assembly.
#[derive(Debug, Clone, Copy)]
pub enum Coefficient<'a> {
    Constant(f64),
    /// Nodal values, reduced to the element average.
    Nodal(&'a [f64]),
}

/// P1 function space on a mesh: per-element geometry, the shared sparsity
/// pattern, and the unit mass and stiffness operators.
#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    pattern: Arc<SparsityPattern>,
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    elem_slots: Vec<[usize; 9]>,
    facet_lengths: Vec<f64>,
    facet_slots: Vec<[usize; 4]>,
    mass: SparseOperator,
    stiffness: SparseOperator,
    lumped_mass: Vec<f64>,
    block_patterns: Mutex<BTreeMap<usize, Arc<SparsityPattern>>>,
}

const MASS_REF: [[f64; 3]; 3] = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let nv = mesh.num_vertices();
        let mut rows: Vec<Vec<usize>> = (0..nv).map(|i| vec![i]).collect();
        for t in mesh.triangles() {
            for &a in t {
                rows[a].extend_from_slice(t);
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));

        let mut areas = Vec::with_capacity(mesh.num_triangles());
        let mut grads = Vec::with_capacity(mesh.num_triangles());
        let mut elem_slots = Vec::with_capacity(mesh.num_triangles());
        for (index, t) in mesh.triangles().iter().enumerate() {
            let area = mesh.triangle_area(index);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index, area });
            }
            let p = t.map(|i| mesh.vertices()[i]);
            let s = 1.0 / (2.0 * area);
            grads.push([
                [(p[1][1] - p[2][1]) * s, (p[2][0] - p[1][0]) * s],
                [(p[2][1] - p[0][1]) * s, (p[0][0] - p[2][0]) * s],
                [(p[0][1] - p[1][1]) * s, (p[1][0] - p[0][0]) * s],
            ]);
            areas.push(area);
            let mut slots = [0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    slots[3 * i + j] = pattern.slot(t[i], t[j]).expect("element entries in pattern");
                }
            }
            elem_slots.push(slots);
        }
        let mut facet_lengths = Vec::with_capacity(mesh.boundary_facets().len());
        let mut facet_slots = Vec::with_capacity(mesh.boundary_facets().len());
        for f in mesh.boundary_facets() {
            let [a, b] = f.vertices;
            facet_lengths.push(dist(mesh.vertices()[a], mesh.vertices()[b]));
            facet_slots.push([
                pattern.slot(a, a).unwrap(),
                pattern.slot(a, b).unwrap(),
                pattern.slot(b, a).unwrap(),
                pattern.slot(b, b).unwrap(),
            ]);
        }

        let mut space = Self {
            mass: SparseOperator::zeros(pattern.clone()),
            stiffness: SparseOperator::zeros(pattern.clone()),
            mesh,
            pattern,
            areas,
            grads,
            elem_slots,
            facet_lengths,
            facet_slots,
            lumped_mass: Vec::new(),
            block_patterns: Mutex::new(BTreeMap::new()),
        };
        let ones = vec![1.0; space.num_elements()];
        space.mass = space.weighted_mass(&ones);
        space.stiffness = space.weighted_stiffness(&ones);
        space.lumped_mass = space.mass.apply(&vec![1.0; nv]);
        Ok(space)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.mesh.num_vertices()
    }

    /// Shared block-diagonal pattern with `blocks` copies of the nodal pattern.
    pub fn block_pattern(&self, blocks: usize) -> Arc<SparsityPattern> {
        if blocks == 1 {
            return self.pattern.clone();
        }
        let mut cache = self.block_patterns.lock().expect("block pattern cache poisoned");
        cache
            .entry(blocks)
            .or_insert_with(|| Arc::new(self.pattern.block_diagonal(blocks)))
            .clone()
    }

    pub fn num_elements(&self) -> usize {
        self.areas.len()
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Gradients of the three local basis functions on element `e`.
    pub fn basis_gradients(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.grads[e]
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    /// Unit-coefficient stiffness.
    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// Constant gradient of a P1 function on element `e`.
    pub fn element_gradient(&self, e: usize, values: &[f64]) -> [f64; 2] {
        let t = self.mesh.triangles()[e];
        let g = &self.grads[e];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += values[t[k]] * g[k][0];
            out[1] += values[t[k]] * g[k][1];
        }
        out
    }

    /// Mean of the three vertex values on each element.
    pub fn element_average(&self, nodal: &[f64]) -> Vec<f64> {
        self.mesh
            .triangles()
            .iter()
            .map(|t| (nodal[t[0]] + nodal[t[1]] + nodal[t[2]]) / 3.0)
            .collect()
    }

    /// Σₑ cₑ ∫ₑ ∇φᵢ·∇φⱼ with no sign restriction on c.
    pub fn weighted_stiffness(&self, elem_coeff: &[f64]) -> SparseOperator {
        let mut op = SparseOperator::zeros(self.pattern.clone());
        let vals = op.values_mut();
        for (e, slots) in self.elem_slots.iter().enumerate() {
            let g = &self.grads[e];
            let w = elem_coeff[e] * self.areas[e];
            for i in 0..3 {
                for j in 0..3 {
                    vals[slots[3 * i + j]] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        op
    }

    /// Σₑ cₑ ∫ₑ φᵢφⱼ with no sign restriction on c.
    pub fn weighted_mass(&self, elem_coeff: &[f64]) -> SparseOperator {
        let mut op = SparseOperator::zeros(self.pattern.clone());
        let vals = op.values_mut();
        for (e, slots) in self.elem_slots.iter().enumerate() {
            let w = elem_coeff[e] * self.areas[e] / 12.0;
            for i in 0..3 {
                for j in 0..3 {
                    vals[slots[3 * i + j]] += w * MASS_REF[i][j];
                }
            }
        }
        op
    }

    /// Stiffness with coefficient `coeff`, which must be strictly positive.
    pub fn assemble_stiffness(&self, coeff: Coefficient<'_>) -> Result<SparseOperator> {
        let elem = match coeff {
            Coefficient::Constant(c) => vec![c; self.num_elements()],
            Coefficient::Nodal(v) => {
                self.check_len(v)?;
                self.element_average(v)
            }
        };
        if let Some((element, &value)) = elem.iter().enumerate().find(|(_, c)| !(**c > 0.0)) {
            return Err(Error::NonPositiveCoefficient { element, value });
        }
        Ok(self.weighted_stiffness(&elem))
    }

    /// ∫_Γ φᵢφⱼ ds over facets with the given marker.
    pub fn assemble_boundary_mass(&self, marker: i32) -> Result<SparseOperator> {
        self.boundary_mass_filtered(|m| m == marker)
            .ok_or(Error::UnknownMarker(marker))
    }

    /// Boundary mass over every facet.
    pub fn full_boundary_mass(&self) -> SparseOperator {
        self.boundary_mass_filtered(|_| true)
            .expect("meshes always have boundary facets")
    }

    fn boundary_mass_filtered(&self, keep: impl Fn(i32) -> bool) -> Option<SparseOperator> {
        let mut op = SparseOperator::zeros(self.pattern.clone());
        let mut any = false;
        let vals = op.values_mut();
        for ((f, len), s) in self
            .mesh
            .boundary_facets()
            .iter()
            .zip(&self.facet_lengths)
            .zip(&self.facet_slots)
        {
            if !keep(f.marker) {
                continue;
            }
            any = true;
            vals[s[0]] += len / 3.0;
            vals[s[1]] += len / 6.0;
            vals[s[2]] += len / 6.0;
            vals[s[3]] += len / 3.0;
        }
        any.then_some(op)
    }

    pub fn facet_lengths(&self) -> &[f64] {
        &self.facet_lengths
    }

    /// Per-element ∫ₑ ∇a·∇b.
    pub fn element_gradient_products(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.num_elements())
            .map(|e| {
                let ga = self.element_gradient(e, a);
                let gb = self.element_gradient(e, b);
                self.areas[e] * (ga[0] * gb[0] + ga[1] * gb[1])
            })
            .collect()
    }

    /// Per-element ∫ₑ a b using the element mass matrix.
    pub fn element_mass_products(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.mesh
            .triangles()
            .iter()
            .zip(&self.areas)
            .map(|(t, area)| {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += MASS_REF[i][j] * a[t[i]] * b[t[j]];
                    }
                }
                s * area / 12.0
            })
            .collect()
    }

    /// Distributes per-element scalars to vertices as Σ_{e∋j} wₑ/3.
    pub fn scatter_thirds(&self, elem: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (t, w) in self.mesh.triangles().iter().zip(elem) {
            for &v in t {
                out[v] += w / 3.0;
            }
        }
        out
    }

    /// Metric operator for the given norm: M for L², M + K for H¹.
    pub fn metric_operator(&self, kind: NormKind) -> SparseOperator {
        match kind {
            NormKind::L2 => self.mass.clone(),
            NormKind::H1 => {
                let mut w = self.mass.clone();
                w.axpy(1.0, &self.stiffness);
                w
            }
        }
    }

    pub fn inner_product(&self, a: &[f64], b: &[f64], kind: NormKind) -> Result<f64> {
        self.check_len(a)?;
        self.check_len(b)?;
        Ok(match kind {
            NormKind::L2 => self.mass.bilinear(a, b),
            NormKind::H1 => self.mass.bilinear(a, b) + self.stiffness.bilinear(a, b),
        })
    }

    pub fn norm(&self, a: &[f64], kind: NormKind) -> Result<f64> {
        Ok(self.inner_product(a, a, kind)?.max(0.0).sqrt())
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Boundary mass grouped by marker, for callers that need several.
    pub fn boundary_masses(&self) -> BTreeMap<i32, SparseOperator> {
        let markers: std::collections::BTreeSet<i32> =
            self.mesh.boundary_facets().iter().map(|f| f.marker).collect();
        markers
            .into_iter()
            .map(|m| (m, self.assemble_boundary_mass(m).unwrap()))
            .collect()
    }
}

/// Mass matrix of `mesh` with exact P1 quadrature.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseOperator> {
    Ok(FunctionSpace::new(Arc::new(mesh.clone()))?.mass().clone())
}

/// Stiffness matrix of `mesh` with an element-averaged coefficient.
pub fn assemble_stiffness(mesh: &Mesh, coeff: Coefficient<'_>) -> Result<SparseOperator> {
    FunctionSpace::new(Arc::new(mesh.clone()))?.assemble_stiffness(coeff)
}

pub fn assemble_boundary_mass(mesh: &Mesh, marker: i32) -> Result<SparseOperator> {
    FunctionSpace::new(Arc::new(mesh.clone()))?.assemble_boundary_mass(marker)
}
