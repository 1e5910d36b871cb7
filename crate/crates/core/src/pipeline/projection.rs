use super::{SnapshotDataset, Stage};
use crate::error::{Error, Result};
use crate::mesh::{partition_dofs, DirichletSpec, DofPartition, Mesh};

const INSIDE_TOL: f64 = 1e-9;
/// Points of a curved coarse boundary may sit slightly outside the fine
/// mesh's chords; they are extrapolated from the nearest element as long as
/// every barycentric coordinate stays above this bound.
const CHORD_TOL: f64 = -0.1;

/// Uniform bucket grid over element bounding boxes.
struct Locator<'a> {
    mesh: &'a Mesh,
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> Locator<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &mesh.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let side = (mesh.n_elements() as f64).sqrt().ceil().max(1.0);
        let cell = span / side;
        let dims = [
            ((hi[0] - lo[0]) / cell) as usize + 1,
            ((hi[1] - lo[1]) / cell) as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut loc = Locator {
            mesh,
            origin: lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (e, el) in mesh.elements.iter().enumerate() {
            let (mut a, mut b) = ([usize::MAX; 2], [0usize; 2]);
            for &n in el {
                let c = loc.cell_of(mesh.nodes[n]);
                for d in 0..2 {
                    a[d] = a[d].min(c[d]);
                    b[d] = b[d].max(c[d]);
                }
            }
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    buckets[j * dims[0] + i].push(e);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, p: [f64; 2]) -> [usize; 2] {
        let mut c = [0; 2];
        for d in 0..2 {
            let k = ((p[d] - self.origin[d]) / self.cell).floor();
            c[d] = (k.max(0.0) as usize).min(self.dims[d] - 1);
        }
        c
    }

    fn barycentric(&self, e: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.mesh.elements[e];
        let (p1, p2, p3) = (self.mesh.nodes[a], self.mesh.nodes[b], self.mesh.nodes[c]);
        let det = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1]);
        let l2 = ((p[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p[1] - p1[1])) / det;
        let l3 = ((p2[0] - p1[0]) * (p[1] - p1[1]) - (p[0] - p1[0]) * (p2[1] - p1[1])) / det;
        [1.0 - l2 - l3, l2, l3]
    }

    /// Element and barycentric coordinates of `p`, widening the search ring
    /// until a containing element is found or the chord tolerance rules it out.
    fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let c = self.cell_of(p);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for ring in 0..3usize {
            let i0 = c[0].saturating_sub(ring);
            let j0 = c[1].saturating_sub(ring);
            let i1 = (c[0] + ring).min(self.dims[0] - 1);
            let j1 = (c[1] + ring).min(self.dims[1] - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    for &e in &self.buckets[j * self.dims[0] + i] {
                        let l = self.barycentric(e, p);
                        let worst = l[0].min(l[1]).min(l[2]);
                        if worst >= -INSIDE_TOL {
                            return Some((e, l));
                        }
                        if best.map_or(true, |b| worst > b.2) {
                            best = Some((e, l, worst));
                        }
                    }
                }
            }
        }
        best.filter(|b| b.2 >= CHORD_TOL).map(|b| (b.0, b.1))
    }
}

/// Interpolates every snapshot of `fine` at the nodes of `coarse` with the
/// fine mesh's linear shape functions. The DOF partition is rebuilt on the
/// coarse mesh from the fine partition's group names; reactions are copied.
pub fn project_to_coarse(fine: &SnapshotDataset, coarse: &Mesh) -> Result<SnapshotDataset> {
    let locator = Locator::new(&fine.mesh);
    let weights: Vec<(usize, [f64; 3])> = coarse
        .nodes
        .iter()
        .map(|&p| {
            locator
                .locate(p)
                .ok_or(Error::PointOutsideDomain { x: p[0], y: p[1] })
        })
        .collect::<Result<_>>()?;

    let displacements = fine
        .displacements
        .iter()
        .map(|u| {
            weights
                .iter()
                .map(|(e, l)| {
                    let el = fine.mesh.elements[*e];
                    let mut v = [0.0; 2];
                    for k in 0..3 {
                        v[0] += l[k] * u[el[k]][0];
                        v[1] += l[k] * u[el[k]][1];
                    }
                    v
                })
                .collect()
        })
        .collect();

    let partition = rebuild_partition(&fine.partition, coarse)?;
    let mut out = SnapshotDataset {
        mesh: coarse.clone(),
        partition,
        displacements,
        reactions: fine.reactions.clone(),
        provenance: fine.provenance.clone(),
    };
    out.provenance.stage = Stage::Projected;
    out.provenance
        .parameters
        .insert("fine_n_nodes".into(), serde_json::json!(fine.mesh.n_nodes()));
    out.provenance
        .parameters
        .insert("n_nodes".into(), serde_json::json!(coarse.n_nodes()));
    Ok(out)
}

/// Re-derives the partition on another mesh from group names like `left_x`.
fn rebuild_partition(fine: &DofPartition, coarse: &Mesh) -> Result<DofPartition> {
    let parse = |name: &str, measured: bool| -> Result<DirichletSpec> {
        let (tag, dir) = name
            .rsplit_once('_')
            .ok_or_else(|| Error::schema("constraints", format!("group name {name:?}")))?;
        let direction = match dir {
            "x" => crate::mesh::Direction::X,
            "y" => crate::mesh::Direction::Y,
            _ => return Err(Error::schema("constraints", format!("group name {name:?}"))),
        };
        Ok(DirichletSpec::new(tag, direction, measured))
    };
    let specs = fine
        .fixed_groups
        .iter()
        .map(|g| parse(&g.name, true))
        .collect::<Result<Vec<_>>>()?;
    partition_dofs(coarse, &specs)
}
