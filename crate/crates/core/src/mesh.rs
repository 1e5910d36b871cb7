//! Linear triangular meshes, single-point quadrature and nodal kinematics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible reference area of an element.
pub const MIN_ELEMENT_AREA: f64 = 1e-14;

/// Triangulation of the reference domain. Coordinates are normalized by the
/// specimen side length; indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub boundaries: BTreeMap<String, Vec<usize>>,
}

/// Constant shape-function gradients and reference area of one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub grad_n: [[f64; 2]; 3],
    pub area: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    X,
    Y,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::X => 0,
            Direction::Y => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        match i {
            0 => Some(Direction::X),
            1 => Some(Direction::Y),
            _ => None,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Direction::X => "x",
            Direction::Y => "y",
        }
    }
}

/// A nodal degree of freedom `(node, direction)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dof {
    pub node: usize,
    pub dir: usize,
}

impl Dof {
    pub fn new(node: usize, dir: usize) -> Self {
        Dof { node, dir }
    }

    /// Global index `2 · node + dir`.
    pub fn global(self) -> usize {
        2 * self.node + self.dir
    }
}

/// One Dirichlet constraint set of the partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub tag: String,
    pub direction: Direction,
    pub reaction_measured: bool,
}

impl DirichletSpec {
    pub fn new(tag: &str, direction: Direction, reaction_measured: bool) -> Self {
        DirichletSpec {
            tag: tag.to_string(),
            direction,
            reaction_measured,
        }
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.tag, self.direction.suffix())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedGroup {
    pub name: String,
    pub dofs: Vec<Dof>,
}

/// Split of all observed degrees of freedom into free DOFs, measured reaction
/// groups, and constrained DOFs whose reaction is not observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofPartition {
    pub free: Vec<Dof>,
    pub fixed_groups: Vec<FixedGroup>,
    pub unmeasured: Vec<Dof>,
}

impl DofPartition {
    pub fn n_groups(&self) -> usize {
        self.fixed_groups.len()
    }

    /// All constrained DOFs (measured or not) in ascending global order.
    pub fn constrained(&self) -> Vec<Dof> {
        let mut all: Vec<Dof> = self
            .fixed_groups
            .iter()
            .flat_map(|g| g.dofs.iter().copied())
            .chain(self.unmeasured.iter().copied())
            .collect();
        all.sort();
        all
    }
}

impl Mesh {
    /// Builds a mesh and checks its structural invariants.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        boundaries: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let mesh = Mesh {
            nodes,
            elements,
            boundaries,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, el) in self.elements.iter().enumerate() {
            if el.iter().any(|&a| a >= n) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} references a node beyond {n}"
                )));
            }
            let area = self.signed_area(e);
            if !(area > MIN_ELEMENT_AREA) {
                return Err(Error::DegenerateElement { element: e, area });
            }
        }
        for (tag, ids) in &self.boundaries {
            if ids.iter().any(|&a| a >= n) {
                return Err(Error::InvalidMesh(format!(
                    "boundary `{tag}` references a node beyond {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn signed_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.elements[element];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn boundary(&self, tag: &str) -> Result<&[usize]> {
        self.boundaries
            .get(tag)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::UnknownBoundaryTag(tag.to_string()))
    }

    /// Geometry of every element, in element order.
    pub fn geometries(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.elements.len())
            .map(|e| element_geometry(self, e))
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.elements.len()).map(|e| self.signed_area(e)).sum()
    }

    /// Smallest interior angle over all elements, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut worst = 180.0f64;
        for el in &self.elements {
            for k in 0..3 {
                let p = self.nodes[el[k]];
                let q = self.nodes[el[(k + 1) % 3]];
                let r = self.nodes[el[(k + 2) % 3]];
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                let cos = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                worst = worst.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        worst
    }

    /// Edges used by exactly one element, as sorted node pairs.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for el in &self.elements {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect()
    }
}

/// Constant gradients of the linear barycentric shape functions of an element.
pub fn element_geometry(mesh: &Mesh, element_index: usize) -> Result<ElementGeometry> {
    let [a, b, c] = mesh.elements[element_index];
    let (p1, p2, p3) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
    let twice = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1]);
    let area = 0.5 * twice;
    if !(area > MIN_ELEMENT_AREA) {
        return Err(Error::DegenerateElement {
            element: element_index,
            area,
        });
    }
    let grad_n = [
        [(p2[1] - p3[1]) / twice, (p3[0] - p2[0]) / twice],
        [(p3[1] - p1[1]) / twice, (p1[0] - p3[0]) / twice],
        [(p1[1] - p2[1]) / twice, (p2[0] - p1[0]) / twice],
    ];
    Ok(ElementGeometry { grad_n, area })
}

/// `F = I + Σ_a u^a ⊗ ∇N^a`, embedded in plane strain.
pub fn deformation_gradient(geom: &ElementGeometry, nodal_disp: &[[f64; 2]; 3]) -> Matrix3<f64> {
    let mut f = Matrix3::identity();
    for (u, g) in nodal_disp.iter().zip(geom.grad_n.iter()) {
        for i in 0..2 {
            for j in 0..2 {
                f[(i, j)] += u[i] * g[j];
            }
        }
    }
    f
}

/// Gathers the three nodal displacements of an element from a global field.
pub fn element_displacements(mesh: &Mesh, element: usize, disp: &[[f64; 2]]) -> [[f64; 2]; 3] {
    let el = mesh.elements[element];
    [disp[el[0]], disp[el[1]], disp[el[2]]]
}

/// Partitions all DOFs into free DOFs and one group per Dirichlet spec.
///
/// A DOF eligible for several groups belongs to the first listed one.
pub fn partition_dofs(mesh: &Mesh, specs: &[DirichletSpec]) -> Result<DofPartition> {
    let mut taken: BTreeSet<Dof> = BTreeSet::new();
    let mut fixed_groups = Vec::new();
    let mut unmeasured = Vec::new();
    for spec in specs {
        let nodes = mesh.boundary(&spec.tag)?;
        let mut dofs: Vec<Dof> = nodes
            .iter()
            .map(|&a| Dof::new(a, spec.direction.index()))
            .filter(|d| !taken.contains(d))
            .collect();
        dofs.sort();
        dofs.dedup();
        taken.extend(dofs.iter().copied());
        if spec.reaction_measured {
            fixed_groups.push(FixedGroup {
                name: spec.name(),
                dofs,
            });
        } else {
            unmeasured.extend(dofs);
        }
    }
    unmeasured.sort();
    let free = (0..mesh.n_nodes())
        .flat_map(|a| [Dof::new(a, 0), Dof::new(a, 1)])
        .filter(|d| !taken.contains(d))
        .collect();
    Ok(DofPartition {
        free,
        fixed_groups,
        unmeasured,
    })
}

/// Structured triangulation of `[x0, x1] × [y0, y1]` with `nx × ny` cells.
/// Boundary tags `left`, `right`, `bottom`, `top` are attached.
pub fn structured_rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Mesh {
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx {
                x1
            } else {
                x0 + (x1 - x0) * i as f64 / nx as f64
            };
            let y = if j == ny {
                y1
            } else {
                y0 + (y1 - y0) * j as f64 / ny as f64
            };
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            // alternate the diagonal so the mesh has no preferred direction
            if (i + j) % 2 == 0 {
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            } else {
                elements.push([a, b, d]);
                elements.push([b, c, d]);
            }
        }
    }
    let mut boundaries = BTreeMap::new();
    boundaries.insert("bottom".into(), (0..=nx).map(|i| id(i, 0)).collect());
    boundaries.insert("top".into(), (0..=nx).map(|i| id(i, ny)).collect());
    boundaries.insert("left".into(), (0..=ny).map(|j| id(0, j)).collect());
    boundaries.insert("right".into(), (0..=ny).map(|j| id(nx, j)).collect());
    Mesh {
        nodes,
        elements,
        boundaries,
    }
}
