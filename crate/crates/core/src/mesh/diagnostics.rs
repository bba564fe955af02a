use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{repair, TriangleMesh, Vector};

/// Default silhouette raster size (pixels per side) for projected areas.
pub const DEFAULT_AREA_RESOLUTION: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDiagnostics {
    pub watertight: bool,
    pub repairable: bool,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub surface_area: f64,
    pub frontal_projected_area: f64,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub inconsistent_edges: usize,
    pub degenerate_faces_dropped: usize,
}

/// Edge-incidence summary. An edge is counted once per undirected vertex pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub edges: usize,
    /// Edges used by a single face.
    pub boundary: usize,
    /// Edges used by three or more faces.
    pub non_manifold: usize,
    /// Two-face edges traversed in the same direction by both faces.
    pub inconsistent: usize,
}

impl EdgeReport {
    pub fn is_watertight(&self) -> bool {
        self.edges > 0 && self.boundary == 0 && self.non_manifold == 0 && self.inconsistent == 0
    }
}

pub fn edge_report(mesh: &TriangleMesh) -> EdgeReport {
    // (forward uses a->b with a<b, backward uses b->a)
    let mut uses: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
    for &[a, b, c] in mesh.faces() {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let entry = uses.entry((u.min(v), u.max(v))).or_default();
            if u < v {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
    }
    let mut report = EdgeReport {
        edges: uses.len(),
        ..Default::default()
    };
    for &(fwd, bwd) in uses.values() {
        match fwd + bwd {
            1 => report.boundary += 1,
            2 if fwd != 1 => report.inconsistent += 1,
            2 => {}
            _ => report.non_manifold += 1,
        }
    }
    report
}

pub fn diagnose(mesh: &TriangleMesh, flow_axis: &Vector) -> MeshDiagnostics {
    diagnose_with_resolution(mesh, flow_axis, DEFAULT_AREA_RESOLUTION)
}

pub fn diagnose_with_resolution(
    mesh: &TriangleMesh,
    flow_axis: &Vector,
    resolution: usize,
) -> MeshDiagnostics {
    let edges = edge_report(mesh);
    let watertight = edges.is_watertight();
    let repairable = watertight || (!mesh.is_empty() && repair(mesh).watertight);
    let (lo, hi) = mesh
        .bounds()
        .map(|(lo, hi)| ([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]))
        .unwrap_or(([0.0; 3], [0.0; 3]));
    MeshDiagnostics {
        watertight,
        repairable,
        bounds_min: lo,
        bounds_max: hi,
        surface_area: mesh.surface_area(),
        frontal_projected_area: projected_area(mesh, flow_axis, resolution),
        boundary_edges: edges.boundary,
        non_manifold_edges: edges.non_manifold,
        inconsistent_edges: edges.inconsistent,
        degenerate_faces_dropped: mesh.dropped_degenerate(),
    }
}

/// Orthonormal pair spanning the plane perpendicular to `axis`.
pub(crate) fn perpendicular_basis(axis: &Vector) -> (Vector, Vector) {
    let a = axis.normalize();
    let helper = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vector::x()
    } else if a.y.abs() <= a.z.abs() {
        Vector::y()
    } else {
        Vector::z()
    };
    let u = a.cross(&helper).normalize();
    let v = a.cross(&u);
    (u, v)
}

/// Raster axes for a silhouette along `axis`. When the projected vertex cloud has a distinct
/// principal direction the grid follows it, so rotating mesh and axis together rotates the grid
/// with them; otherwise the fixed perpendicular basis is used.
fn raster_frame(mesh: &TriangleMesh, axis: &Vector) -> (Vector, Vector) {
    let (u0, v0) = perpendicular_basis(axis);
    let n = mesh.vertex_count() as f64;
    let (mut mu, mut mv) = (0.0, 0.0);
    for p in mesh.vertices() {
        mu += p.coords.dot(&u0);
        mv += p.coords.dot(&v0);
    }
    let (mu, mv) = (mu / n, mv / n);
    let (mut cuu, mut cvv, mut cuv) = (0.0, 0.0, 0.0);
    for p in mesh.vertices() {
        let (a, b) = (p.coords.dot(&u0) - mu, p.coords.dot(&v0) - mv);
        cuu += a * a;
        cvv += b * b;
        cuv += a * b;
    }
    let spread = ((cuu - cvv).powi(2) + 4.0 * cuv * cuv).sqrt();
    if spread <= PRINCIPAL_TIE * (cuu + cvv) {
        return (u0, v0);
    }
    let theta = 0.5 * (2.0 * cuv).atan2(cuu - cvv);
    let u = (u0 * theta.cos() + v0 * theta.sin()).normalize();
    (u, axis.normalize().cross(&u))
}

/// Relative eigenvalue gap below which the projected principal axes count as tied.
const PRINCIPAL_TIE: f64 = 1e-6;

/// Silhouette area seen along `axis`, by rasterizing the projected faces onto a
/// `resolution`² grid spanning the projection's bounding rectangle. Pixels count when their
/// centre lies inside (or on the edge of) any projected triangle.
pub fn projected_area(mesh: &TriangleMesh, axis: &Vector, resolution: usize) -> f64 {
    if mesh.is_empty() || resolution == 0 {
        return 0.0;
    }
    let (u, v) = raster_frame(mesh, axis);
    let projected: Vec<[f64; 2]> = mesh
        .vertices()
        .iter()
        .map(|p| [p.coords.dot(&u), p.coords.dot(&v)])
        .collect();

    let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &[a, b, c] in mesh.faces() {
        for i in [a, b, c] {
            let [pu, pv] = projected[i];
            u0 = u0.min(pu);
            u1 = u1.max(pu);
            v0 = v0.min(pv);
            v1 = v1.max(pv);
        }
    }
    let (width, height) = (u1 - u0, v1 - v0);
    if !(width > 0.0 && height > 0.0) {
        return 0.0;
    }
    let (du, dv) = (width / resolution as f64, height / resolution as f64);
    let mut covered = vec![false; resolution * resolution];

    for &[a, b, c] in mesh.faces() {
        let (pa, pb, pc) = (projected[a], projected[b], projected[c]);
        let area2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area2.abs() <= f64::EPSILON * width * height {
            continue; // edge-on
        }
        let tri_u0 = pa[0].min(pb[0]).min(pc[0]);
        let tri_u1 = pa[0].max(pb[0]).max(pc[0]);
        let tri_v0 = pa[1].min(pb[1]).min(pc[1]);
        let tri_v1 = pa[1].max(pb[1]).max(pc[1]);
        let col = |x: f64, d: f64, o: f64| ((x - o) / d - 0.5).clamp(0.0, (resolution - 1) as f64);
        let (i0, i1) = (col(tri_u0, du, u0).floor() as usize, col(tri_u1, du, u0).ceil() as usize);
        let (j0, j1) = (col(tri_v0, dv, v0).floor() as usize, col(tri_v1, dv, v0).ceil() as usize);
        let sign = area2.signum();
        let edge = |p: [f64; 2], q: [f64; 2], x: f64, y: f64| {
            sign * ((q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]))
        };
        for j in j0..=j1 {
            let y = v0 + (j as f64 + 0.5) * dv;
            for i in i0..=i1 {
                let cell = &mut covered[j * resolution + i];
                if *cell {
                    continue;
                }
                let x = u0 + (i as f64 + 0.5) * du;
                if edge(pa, pb, x, y) >= 0.0 && edge(pb, pc, x, y) >= 0.0 && edge(pc, pa, x, y) >= 0.0 {
                    *cell = true;
                }
            }
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 * du * dv
}
