//! Median-split bounding volume hierarchy over the faces of a mesh.

use super::intersect::{intersect_triangle, Hit, Ray};
use crate::mesh::{Point, TriangleMesh, Vector};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector,
    hi: Vector,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vector::repeat(f64::INFINITY),
            hi: Vector::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn entry(&self, origin: &Point, inv_dir: &Vector, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            // NaN (0 * inf) comparisons fall through, which keeps the slab unbounded
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize, axis: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Ray-queryable copy of a mesh's triangles.
#[derive(Debug, Clone)]
pub struct Scene {
    triangles: Vec<[Point; 3]>,
    normals: Vec<Vector>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    radius: f64,
}

impl Scene {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let triangles: Vec<[Point; 3]> = (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
        let normals = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();
        let mut scene = Self {
            order: (0..triangles.len()).collect(),
            triangles,
            normals,
            nodes: Vec::new(),
            radius: mesh.bounding_radius(),
        };
        if !scene.triangles.is_empty() {
            let centroids: Vec<Vector> = scene
                .triangles
                .iter()
                .map(|[a, b, c]| (a.coords + b.coords + c.coords) / 3.0)
                .collect();
            let n = scene.order.len();
            scene.build(&centroids, 0, n);
        }
        scene
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Largest vertex distance from the origin.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Outward face normal from the winding.
    pub fn normal(&self, face: usize) -> Vector {
        self.normals[face]
    }

    fn build(&mut self, centroids: &[Vector], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut centre_bounds = Aabb::empty();
        for &f in &self.order[start..end] {
            for p in &self.triangles[f] {
                bounds.grow(&p.coords);
            }
            centre_bounds.grow(&centroids[f]);
        }
        let index = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return index;
        }
        let axis = (centre_bounds.hi - centre_bounds.lo).imax();
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        // placeholder, patched once both children exist
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build(centroids, start, mid);
        let right = self.build(centroids, mid, end);
        self.nodes[index] = Node::Inner { bounds, left, right, axis };
        index
    }

    /// Nearest hit along the ray. Equal distances resolve to the lower face index so the
    /// answer does not depend on traversal order.
    pub fn closest(&self, ray: &Ray) -> Option<(usize, Hit)> {
        let mut best: Option<(usize, Hit)> = None;
        self.traverse(ray, f64::INFINITY, |face, hit| {
            let better = match best {
                None => true,
                Some((f, h)) => hit.t < h.t || (hit.t == h.t && face < f),
            };
            if better {
                best = Some((face, hit));
            }
            best.map_or(f64::INFINITY, |(_, h)| h.t)
        });
        best
    }

    /// True when anything is hit with `t < t_max`.
    pub fn occluded(&self, ray: &Ray, t_max: f64) -> bool {
        let mut hit_any = false;
        self.traverse(ray, t_max, |_, hit| {
            if hit.t < t_max {
                hit_any = true;
                return 0.0;
            }
            t_max
        });
        hit_any
    }

    /// Visits candidate hits; `visit` returns the new pruning distance.
    fn traverse(&self, ray: &Ray, t_max: f64, mut visit: impl FnMut(usize, Hit) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let inv_dir = ray.dir.map(|d| 1.0 / d);
        let mut limit = t_max;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().entry(&ray.origin, &inv_dir, limit).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let [a, b, c] = &self.triangles[f];
                        if let Some(hit) = intersect_triangle(ray, a, b, c) {
                            if hit.t <= limit {
                                limit = visit(f, hit);
                            }
                        }
                    }
                    if limit <= 0.0 {
                        return;
                    }
                }
                Node::Inner { left, right, axis, .. } => {
                    // near child popped first
                    if ray.dir[axis] >= 0.0 {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
    }
}
