//! Unstructured triangulation of the unit square minus one or more holes, by
//! force-equilibrium smoothing of a point cloud with repeated Delaunay
//! retriangulation.

use std::collections::BTreeMap;

use delaunator::{triangulate, Point};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub const MIN_ANGLE_DEG: f64 = 20.0;
const SNAP_TOL: f64 = 1e-10;

/// Rotated ellipse given by center, semi-axes and rotation in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation_deg: f64,
}

impl Ellipse {
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    fn global(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        [
            self.center[0] + c * q[0] - s * q[1],
            self.center[1] + s * q[0] + c * q[1],
        ]
    }

    /// Normalized radius, 1 on the ellipse.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let q = self.local(p);
        ((q[0] / self.semi_axes[0]).powi(2) + (q[1] / self.semi_axes[1]).powi(2)).sqrt()
    }

    /// First-order signed distance, positive outside the ellipse.
    fn distance(&self, p: [f64; 2]) -> f64 {
        let q = self.local(p);
        let (a, b) = (self.semi_axes[0], self.semi_axes[1]);
        let rho = ((q[0] / a).powi(2) + (q[1] / b).powi(2)).sqrt();
        if rho < 1e-12 {
            return -a.min(b);
        }
        let grad = ((q[0] / (a * a)).powi(2) + (q[1] / (b * b)).powi(2)).sqrt() / rho;
        (rho - 1.0) / grad
    }

    fn snap(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.local(p);
        let rho = self.level(p);
        self.global([q[0] / rho, q[1] / rho])
    }

    /// Half widths of the axis-aligned bounding box.
    pub fn half_extents(&self) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (a, b) = (self.semi_axes[0], self.semi_axes[1]);
        [
            (a * a * c * c + b * b * s * s).sqrt(),
            (a * a * s * s + b * b * c * c).sqrt(),
        ]
    }

    fn boundary_point(&self, theta: f64) -> [f64; 2] {
        self.global([
            self.semi_axes[0] * theta.cos(),
            self.semi_axes[1] * theta.sin(),
        ])
    }
}

/// Holes cut from the unit square.
#[derive(Clone, Debug, PartialEq)]
pub enum Holes {
    /// Quarter circle centered at the origin corner.
    CornerCircle { radius: f64 },
    Ellipses(Vec<Ellipse>),
}

impl Holes {
    pub fn validate(&self) -> Result<()> {
        match self {
            Holes::CornerCircle { radius } => {
                if !(*radius > 0.0 && *radius < 0.5) {
                    return Err(Error::Geometry(format!(
                        "corner hole radius {radius} must lie in (0, 0.5)"
                    )));
                }
            }
            Holes::Ellipses(list) => {
                for (k, e) in list.iter().enumerate() {
                    let [hx, hy] = e.half_extents();
                    let [cx, cy] = e.center;
                    if !(e.semi_axes[0] > 0.0 && e.semi_axes[1] > 0.0) {
                        return Err(Error::Geometry(format!("ellipse {k} has non-positive axes")));
                    }
                    if cx - hx <= 0.0 || cx + hx >= 1.0 || cy - hy <= 0.0 || cy + hy >= 1.0 {
                        return Err(Error::Geometry(format!(
                            "ellipse {k} is not strictly inside the unit square"
                        )));
                    }
                }
                for i in 0..list.len() {
                    for j in 0..list.len() {
                        if i == j {
                            continue;
                        }
                        let overlaps = (0..720).any(|s| {
                            let theta = s as f64 * std::f64::consts::PI / 360.0;
                            list[j].level(list[i].boundary_point(theta)) <= 1.0
                        });
                        if overlaps {
                            return Err(Error::Geometry(format!("ellipses {i} and {j} intersect")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn tags(&self) -> Vec<String> {
        match self {
            Holes::CornerCircle { .. } => vec!["hole".to_string()],
            Holes::Ellipses(list) if list.len() == 1 => vec!["hole".to_string()],
            Holes::Ellipses(list) => (1..=list.len()).map(|k| format!("hole_{k}")).collect(),
        }
    }

    /// Signed distances to each hole boundary, positive inside the material.
    fn distances(&self, p: [f64; 2]) -> Vec<f64> {
        match self {
            Holes::CornerCircle { radius } => vec![(p[0] * p[0] + p[1] * p[1]).sqrt() - radius],
            Holes::Ellipses(list) => list.iter().map(|e| e.distance(p)).collect(),
        }
    }

    fn snap(&self, k: usize, p: [f64; 2]) -> [f64; 2] {
        match self {
            Holes::CornerCircle { radius } => {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                [p[0] * radius / r, p[1] * radius / r]
            }
            Holes::Ellipses(list) => list[k].snap(p),
        }
    }

    fn on_boundary(&self, k: usize, p: [f64; 2]) -> bool {
        match self {
            Holes::CornerCircle { radius } => {
                ((p[0] * p[0] + p[1] * p[1]).sqrt() - radius).abs() <= SNAP_TOL
            }
            Holes::Ellipses(list) => (list[k].level(p) - 1.0).abs() <= SNAP_TOL,
        }
    }

    fn fixed_points(&self) -> Vec<[f64; 2]> {
        match self {
            Holes::CornerCircle { radius } => {
                vec![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [*radius, 0.0], [0.0, *radius]]
            }
            Holes::Ellipses(_) => vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        }
    }

    fn area(&self) -> f64 {
        match self {
            Holes::CornerCircle { radius } => 1.0 - 0.25 * std::f64::consts::PI * radius * radius,
            Holes::Ellipses(list) => {
                1.0 - list
                    .iter()
                    .map(|e| std::f64::consts::PI * e.semi_axes[0] * e.semi_axes[1])
                    .sum::<f64>()
            }
        }
    }
}

/// Signed distance to the domain boundary, negative inside.
fn domain_distance(holes: &Holes, p: [f64; 2]) -> f64 {
    let square = -(p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]));
    holes
        .distances(p)
        .into_iter()
        .fold(square, |d, h| d.max(-h))
}

fn hex_lattice(holes: &Holes, h0: f64) -> Vec<[f64; 2]> {
    let dy = h0 * 3f64.sqrt() / 2.0;
    let geps = 1e-3 * h0;
    let fixed = holes.fixed_points();
    let mut pts = fixed.clone();
    let mut row = 0usize;
    let mut y = 0.0;
    while y <= 1.0 + 1e-12 {
        let mut x = if row % 2 == 1 { 0.5 * h0 } else { 0.0 };
        while x <= 1.0 + 1e-12 {
            let p = [x, y];
            let near_fixed = fixed
                .iter()
                .any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < 0.5 * h0);
            if domain_distance(holes, p) < -geps && !near_fixed {
                pts.push(p);
            }
            x += h0;
        }
        row += 1;
        y = row as f64 * dy;
    }
    pts
}

fn delaunay(pts: &[[f64; 2]], holes: &Holes, geps: f64) -> Vec<[usize; 3]> {
    let points: Vec<Point> = pts.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&points);
    tri.triangles
        .chunks_exact(3)
        .filter_map(|t| {
            let (a, b, c) = (t[0], t[1], t[2]);
            let centroid = [
                (pts[a][0] + pts[b][0] + pts[c][0]) / 3.0,
                (pts[a][1] + pts[b][1] + pts[c][1]) / 3.0,
            ];
            (domain_distance(holes, centroid) < -geps).then_some([a, b, c])
        })
        .collect()
}

/// Force-equilibrium smoothing; returns the relaxed point set.
fn relax(mut pts: Vec<[f64; 2]>, n_fixed: usize, holes: &Holes, h0: f64) -> Vec<[f64; 2]> {
    const DPTOL: f64 = 1e-3;
    const TTOL: f64 = 0.1;
    const FSCALE: f64 = 1.2;
    const DELTAT: f64 = 0.2;
    const MAX_ITERS: usize = 1000;
    let geps = 1e-3 * h0;
    let deps = f64::EPSILON.sqrt() * h0;

    let mut last = vec![[f64::INFINITY; 2]; pts.len()];
    let mut bars: Vec<(usize, usize)> = Vec::new();
    for _ in 0..MAX_ITERS {
        let moved = pts
            .iter()
            .zip(&last)
            .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
            .fold(0.0, f64::max);
        if moved > TTOL * h0 {
            last = pts.clone();
            let tris = delaunay(&pts, holes, geps);
            bars.clear();
            for t in &tris {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    bars.push((a.min(b), a.max(b)));
                }
            }
            bars.sort_unstable();
            bars.dedup();
        }

        let lengths: Vec<f64> = bars
            .iter()
            .map(|&(a, b)| (pts[a][0] - pts[b][0]).hypot(pts[a][1] - pts[b][1]))
            .collect();
        let sum_sq: f64 = lengths.iter().map(|l| l * l).sum();
        let l0 = FSCALE * (sum_sq / bars.len() as f64).sqrt();
        let mut force = vec![[0.0; 2]; pts.len()];
        for (&(a, b), &l) in bars.iter().zip(&lengths) {
            let f = (l0 - l).max(0.0);
            if f == 0.0 || l == 0.0 {
                continue;
            }
            let fx = f * (pts[a][0] - pts[b][0]) / l;
            let fy = f * (pts[a][1] - pts[b][1]) / l;
            force[a][0] += fx;
            force[a][1] += fy;
            force[b][0] -= fx;
            force[b][1] -= fy;
        }

        let mut max_move = 0.0f64;
        for (k, p) in pts.iter_mut().enumerate().skip(n_fixed) {
            let old = *p;
            p[0] += DELTAT * force[k][0];
            p[1] += DELTAT * force[k][1];
            let d = domain_distance(holes, *p);
            if d > 0.0 {
                let gx = (domain_distance(holes, [p[0] + deps, p[1]]) - d) / deps;
                let gy = (domain_distance(holes, [p[0], p[1] + deps]) - d) / deps;
                let g2 = gx * gx + gy * gy;
                if g2 > 0.0 {
                    p[0] -= d * gx / g2;
                    p[1] -= d * gy / g2;
                }
            }
            if domain_distance(holes, old) < -geps {
                max_move = max_move.max((p[0] - old[0]).hypot(p[1] - old[1]) / h0);
            }
        }
        if max_move < DPTOL {
            break;
        }
    }
    pts
}

/// Moves boundary nodes exactly onto the analytic curve they approximate.
fn snap_boundary(pts: &mut [[f64; 2]], boundary_nodes: &[usize], holes: &Holes) {
    for &a in boundary_nodes {
        let p = pts[a];
        let sides = [p[0], 1.0 - p[0], p[1], 1.0 - p[1]];
        let hole_d = holes.distances(p);
        let (mut best, mut which) = (f64::INFINITY, usize::MAX);
        for (k, d) in sides.iter().chain(hole_d.iter()).enumerate() {
            if d.abs() < best {
                best = d.abs();
                which = k;
            }
        }
        pts[a] = match which {
            0 => [0.0, p[1]],
            1 => [1.0, p[1]],
            2 => [p[0], 0.0],
            3 => [p[0], 1.0],
            k => holes.snap(k - 4, p),
        };
    }
}

/// Triangulates the unit square minus `holes` with roughly `target_nodes`
/// nodes. Tags `left`, `right`, `bottom`, `top` and one tag per hole are
/// attached; corner nodes belong to both adjacent edges.
pub fn generate_mesh(holes: &Holes, target_nodes: usize) -> Result<Mesh> {
    holes.validate()?;
    if target_nodes < 100 {
        return Err(Error::Geometry(format!(
            "target node count {target_nodes} is below 100"
        )));
    }
    let mut h0 = (2.0 * holes.area() / (3f64.sqrt() * target_nodes as f64)).sqrt();
    let mut pts = hex_lattice(holes, h0);
    for _ in 0..8 {
        let ratio = pts.len() as f64 / target_nodes as f64;
        if (ratio - 1.0).abs() < 0.01 {
            break;
        }
        h0 *= ratio.sqrt();
        pts = hex_lattice(holes, h0);
    }
    let n_fixed = holes.fixed_points().len();
    let mut pts = relax(pts, n_fixed, holes, h0);

    let geps = 1e-3 * h0;
    let mut tris = delaunay(&pts, holes, geps);
    let boundary_nodes = {
        let probe = Mesh {
            nodes: pts.clone(),
            elements: tris.clone(),
            boundaries: BTreeMap::new(),
        };
        let mut nodes: Vec<usize> = probe
            .boundary_edges()
            .into_iter()
            .flat_map(|(a, b)| [a, b])
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    };
    snap_boundary(&mut pts, &boundary_nodes, holes);

    // drop unused points and renumber
    let mut used = vec![false; pts.len()];
    for t in &tris {
        for &a in t {
            used[a] = true;
        }
    }
    let mut renumber = vec![usize::MAX; pts.len()];
    let mut nodes = Vec::new();
    for (a, p) in pts.iter().enumerate() {
        if used[a] {
            renumber[a] = nodes.len();
            nodes.push(*p);
        }
    }
    for t in tris.iter_mut() {
        for a in t.iter_mut() {
            *a = renumber[*a];
        }
        let area = (nodes[t[1]][0] - nodes[t[0]][0]) * (nodes[t[2]][1] - nodes[t[0]][1])
            - (nodes[t[2]][0] - nodes[t[0]][0]) * (nodes[t[1]][1] - nodes[t[0]][1]);
        if area < 0.0 {
            t.swap(1, 2);
        }
    }
    let boundary_nodes: Vec<usize> = boundary_nodes
        .into_iter()
        .map(|a| renumber[a])
        .filter(|&a| a != usize::MAX)
        .collect();

    let mut boundaries: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let sides: [(&str, fn([f64; 2]) -> bool); 4] = [
        ("left", |p| p[0] == 0.0),
        ("right", |p| p[0] == 1.0),
        ("bottom", |p| p[1] == 0.0),
        ("top", |p| p[1] == 1.0),
    ];
    for (tag, test) in sides {
        boundaries.insert(
            tag.to_string(),
            boundary_nodes.iter().copied().filter(|&a| test(nodes[a])).collect(),
        );
    }
    for (k, tag) in holes.tags().into_iter().enumerate() {
        boundaries.insert(
            tag,
            boundary_nodes
                .iter()
                .copied()
                .filter(|&a| holes.on_boundary(k, nodes[a]))
                .collect(),
        );
    }

    let mesh = Mesh::new(nodes, tris, boundaries)
        .map_err(|e| Error::MeshingFailure(format!("invalid triangulation: {e}")))?;
    mesh.geometries()
        .map_err(|e| Error::MeshingFailure(format!("degenerate triangle: {e}")))?;
    let angle = mesh.min_angle_deg();
    if angle < MIN_ANGLE_DEG {
        return Err(Error::MeshingFailure(format!(
            "minimum angle {angle:.2} degrees is below {MIN_ANGLE_DEG}"
        )));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_distance_sign() {
        let e = Ellipse {
            center: [0.5, 0.5],
            semi_axes: [0.2, 0.1],
            rotation_deg: 30.0,
        };
        assert!(e.distance([0.5, 0.5]) < 0.0);
        assert!(e.distance([0.95, 0.5]) > 0.0);
        let on = e.boundary_point(1.0);
        assert!(e.distance(on).abs() < 1e-12);
        assert!((e.level(e.snap([0.6, 0.55])) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn radius_outside_range_rejected() {
        for r in [0.0, 0.5, 0.6, 1.2] {
            assert!(matches!(
                Holes::CornerCircle { radius: r }.validate(),
                Err(Error::Geometry(_))
            ));
        }
    }

    #[test]
    fn overlapping_ellipses_rejected() {
        let e = Ellipse {
            center: [0.5, 0.5],
            semi_axes: [0.2, 0.1],
            rotation_deg: 0.0,
        };
        let f = Ellipse {
            center: [0.6, 0.5],
            ..e
        };
        assert!(Holes::Ellipses(vec![e, f]).validate().is_err());
        let g = Ellipse {
            center: [0.95, 0.5],
            ..e
        };
        assert!(Holes::Ellipses(vec![g]).validate().is_err());
    }

    #[test]
    fn small_quarter_hole_mesh() {
        let mesh = generate_mesh(&Holes::CornerCircle { radius: 0.2 }, 300).unwrap();
        let n = mesh.n_nodes() as f64;
        assert!((n - 300.0).abs() <= 30.0, "{n} nodes");
        assert!(mesh.min_angle_deg() >= MIN_ANGLE_DEG);
        for &a in mesh.boundary("hole").unwrap() {
            let p = mesh.nodes[a];
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.2).abs() <= 1e-10);
        }
        let exact = 1.0 - 0.01 * std::f64::consts::PI;
        assert!((mesh.total_area() - exact).abs() < 5e-3);
    }
}
