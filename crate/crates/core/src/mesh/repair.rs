//! Best-effort repair: vertex welding, duplicate removal and winding re-orientation.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{edge_report, Point, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairParams {
    /// Weld distance as a fraction of the bounding-box diagonal.
    pub weld_tolerance: f64,
}

impl Default for RepairParams {
    fn default() -> Self {
        Self { weld_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub mesh: TriangleMesh,
    pub watertight: bool,
    pub welded_vertices: usize,
    pub removed_faces: usize,
    pub flipped_faces: usize,
}

pub fn repair(mesh: &TriangleMesh) -> RepairOutcome {
    repair_with(mesh, &RepairParams::default())
}

pub fn repair_with(mesh: &TriangleMesh, params: &RepairParams) -> RepairOutcome {
    let (vertices, remap, welded) = weld(mesh, params.weld_tolerance);

    let mut seen = HashSet::new();
    let mut faces = Vec::with_capacity(mesh.face_count());
    for &[a, b, c] in mesh.faces() {
        let tri = [remap[a], remap[b], remap[c]];
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            continue;
        }
        let mut key = tri;
        key.sort_unstable();
        if seen.insert(key) {
            faces.push(tri);
        }
    }
    let removed_faces = mesh.face_count() - faces.len();
    let flipped_faces = orient(&vertices, &mut faces);

    let mesh = match TriangleMesh::new(vertices, faces) {
        Ok(m) => m,
        Err(_) => {
            return RepairOutcome {
                mesh: TriangleMesh::empty(),
                watertight: false,
                welded_vertices: welded,
                removed_faces: mesh.face_count(),
                flipped_faces,
            }
        }
    };
    let watertight = edge_report(&mesh).is_watertight();
    debug!(welded, removed_faces, flipped_faces, watertight, "mesh repair");
    RepairOutcome {
        mesh,
        watertight,
        welded_vertices: welded,
        removed_faces,
        flipped_faces,
    }
}

/// Merges vertices closer than `relative * diagonal` using a uniform hash grid.
fn weld(mesh: &TriangleMesh, relative: f64) -> (Vec<Point>, Vec<usize>, usize) {
    let Some((lo, hi)) = mesh.bounds() else {
        return (Vec::new(), Vec::new(), 0);
    };
    let tol = (relative * (hi - lo).norm()).max(f64::MIN_POSITIVE);
    let cell = |p: &Point| {
        [
            ((p.x - lo.x) / tol).floor() as i64,
            ((p.y - lo.y) / tol).floor() as i64,
            ((p.z - lo.z) / tol).floor() as i64,
        ]
    };

    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut out: Vec<Point> = Vec::new();
    let mut remap = Vec::with_capacity(mesh.vertex_count());
    for p in mesh.vertices() {
        let c = cell(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if let Some(&k) = bucket.iter().find(|&&k| (out[k] - p).norm() <= tol) {
                            found = Some(k);
                            break 'search;
                        }
                    }
                }
            }
        }
        let index = found.unwrap_or_else(|| {
            out.push(*p);
            grid.entry(c).or_default().push(out.len() - 1);
            out.len() - 1
        });
        remap.push(index);
    }
    let welded = mesh.vertex_count() - out.len();
    (out, remap, welded)
}

/// Makes winding consistent across manifold edges, then flips each connected component whose
/// signed volume is negative. Returns the number of faces flipped.
fn orient(vertices: &[Point], faces: &mut [[usize; 3]]) -> usize {
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, &[a, b, c]) in faces.iter().enumerate() {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            by_edge.entry((u.min(v), u.max(v))).or_default().push(f);
        }
    }
    let has_directed = |tri: &[usize; 3], u: usize, v: usize| {
        (tri[0] == u && tri[1] == v) || (tri[1] == u && tri[2] == v) || (tri[2] == u && tri[0] == v)
    };

    let mut flipped = vec![false; faces.len()];
    let mut visited = vec![false; faces.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for seed in 0..faces.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut component = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            let tri = faces[f];
            for (u, v) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                let shared = &by_edge[&(u.min(v), u.max(v))];
                if shared.len() != 2 {
                    continue;
                }
                let g = if shared[0] == f { shared[1] } else { shared[0] };
                if visited[g] {
                    continue;
                }
                if has_directed(&faces[g], u, v) {
                    faces[g].swap(1, 2);
                    flipped[g] = !flipped[g];
                }
                visited[g] = true;
                component.push(g);
                queue.push_back(g);
            }
        }
        components.push(component);
    }

    for component in components {
        let volume: f64 = component
            .iter()
            .map(|&f| {
                let [a, b, c] = faces[f].map(|i| vertices[i].coords);
                a.dot(&b.cross(&c))
            })
            .sum();
        if volume < 0.0 {
            for &f in &component {
                faces[f].swap(1, 2);
                flipped[f] = !flipped[f];
            }
        }
    }
    flipped.iter().filter(|&&f| f).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, Vector};

    /// Cube with every face given its own copy of its corners (a "triangle soup").
    fn soup(mesh: &TriangleMesh) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in 0..mesh.face_count() {
            let base = vertices.len();
            for (k, p) in mesh.triangle(f).into_iter().enumerate() {
                // sub-tolerance jitter
                vertices.push(p + Vector::repeat(1e-9 * (k as f64)));
            }
            faces.push([base, base + 1, base + 2]);
        }
        TriangleMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn welds_soup_back_to_closed_cube() {
        let s = soup(&primitives::unit_cube());
        assert!(!edge_report(&s).is_watertight());
        let out = repair(&s);
        assert!(out.watertight);
        assert_eq!(out.mesh.vertex_count(), 8);
        assert_eq!(out.welded_vertices, 36 - 8);
    }

    #[test]
    fn fixes_flipped_faces_and_inside_out() {
        let cube = primitives::unit_cube();
        let mut faces = cube.faces().to_vec();
        faces[3].swap(1, 2);
        faces[7].swap(1, 2);
        let bad = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        let out = repair(&bad);
        assert!(out.watertight);
        assert!(out.mesh.signed_volume() > 0.0);

        let inside_out = repair(&cube.flipped());
        assert!(inside_out.watertight);
        assert_eq!(inside_out.flipped_faces, 12);
        assert!(inside_out.mesh.signed_volume() > 0.0);
    }

    #[test]
    fn open_box_stays_open() {
        let cube = primitives::unit_cube();
        let faces = cube.faces()[2..].to_vec();
        let open = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(!repair(&open).watertight);
    }
}
