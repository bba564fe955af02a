//! Indexed triangle meshes: ingestion, validation, diagnostics and pose normalization.
//!
//! A [`TriangleMesh`] is immutable once built. Every constructor validates face indices and
//! drops faces whose area falls below [`MIN_FACE_AREA`], keeping a count of what was dropped so
//! callers can report it.

mod diagnostics;
mod io;
mod pose;
pub mod primitives;
mod repair;

use std::fmt;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub(crate) use diagnostics::perpendicular_basis;
pub use diagnostics::{
    diagnose, diagnose_with_resolution, edge_report, projected_area, EdgeReport, MeshDiagnostics,
    DEFAULT_AREA_RESOLUTION,
};
pub use io::{encode_obj, encode_stl_binary, load_mesh, parse_mesh, save_mesh, MeshFormat};
pub use pose::normalize_pose;
pub use repair::{repair, repair_with, RepairOutcome, RepairParams};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Faces smaller than this (m²) are treated as degenerate and dropped.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{format} parse error at byte {offset}: {message}")]
    Format {
        format: MeshFormat,
        offset: usize,
        message: String,
    },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("mesh has no usable faces")]
    Empty,
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("stored normals: {0}")]
    Normals(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<Vector>>,
    dropped_degenerate: usize,
}

impl TriangleMesh {
    /// Builds a validated mesh. Fails on out-of-range indices or when no face survives.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::from_parts(vertices, faces, None)
    }

    /// Like [`TriangleMesh::new`] but carries per-face normals, which are normalized on the way
    /// in. Normals of dropped faces are dropped with them.
    pub fn from_parts(
        vertices: Vec<Point>,
        faces: Vec<[usize; 3]>,
        normals: Option<Vec<Vector>>,
    ) -> Result<Self, MeshError> {
        let mesh = Self::build(vertices, faces, normals)?;
        if mesh.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        Ok(mesh)
    }

    /// A mesh with no geometry. Renders as background; most analyses reject it.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: None,
            dropped_degenerate: 0,
        }
    }

    fn build(
        vertices: Vec<Point>,
        faces: Vec<[usize; 3]>,
        normals: Option<Vec<Vector>>,
    ) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (face, tri) in faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(MeshError::IndexOutOfRange { face, index, count });
            }
        }
        if let Some(p) = vertices.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::Degenerate(format!("non-finite vertex {p:?}")));
        }
        if let Some(n) = &normals {
            if n.len() != faces.len() {
                return Err(MeshError::Normals(format!(
                    "{} normals for {} faces",
                    n.len(),
                    faces.len()
                )));
            }
        }

        let mut kept_faces = Vec::with_capacity(faces.len());
        let mut kept_normals = normals.as_ref().map(|_| Vec::with_capacity(faces.len()));
        let mut dropped = 0;
        for (i, tri) in faces.into_iter().enumerate() {
            if triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]) < MIN_FACE_AREA
            {
                dropped += 1;
                continue;
            }
            kept_faces.push(tri);
            if let (Some(out), Some(src)) = (kept_normals.as_mut(), normals.as_ref()) {
                let n = src[i];
                let len = n.norm();
                if !len.is_finite() || len == 0.0 {
                    return Err(MeshError::Normals(format!("face {i} has a zero normal")));
                }
                out.push(n / len);
            }
        }
        Ok(Self {
            vertices,
            faces: kept_faces,
            normals: kept_normals,
            dropped_degenerate: dropped,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Per-face normals read from the source file, if it supplied usable ones.
    pub fn stored_normals(&self) -> Option<&[Vector]> {
        self.normals.as_deref()
    }

    /// Number of degenerate faces removed while building this mesh.
    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle(&self, face: usize) -> [Point; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unit normal from the face winding (counter-clockwise seen from outside).
    pub fn face_normal(&self, face: usize) -> Vector {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        triangle_area(&a, &b, &c)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Axis-aligned bounds, or `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Largest distance of any vertex from the world origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|p| p.coords.norm())
            .fold(0.0, f64::max)
    }

    /// Applies `f` to every vertex, keeping the connectivity. Stored normals are discarded
    /// because a general map does not say how normals transform.
    pub fn map_vertices(&self, f: impl Fn(&Point) -> Point) -> Result<Self, MeshError> {
        Self::from_parts(self.vertices.iter().map(f).collect(), self.faces.clone(), None)
    }

    pub fn translated(&self, offset: &Vector) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| p + offset).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
            dropped_degenerate: self.dropped_degenerate,
        }
    }

    /// Same surface with every face's winding reversed.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| -v).collect()),
            dropped_degenerate: self.dropped_degenerate,
        }
    }

    /// Signed enclosed volume (positive for outward-wound closed meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }
}

impl fmt::Display for TriangleMesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TriangleMesh({} vertices, {} faces)",
            self.vertices.len(),
            self.faces.len()
        )
    }
}

pub(crate) fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    #[test]
    fn single_triangle_is_valid() {
        let mesh =
            TriangleMesh::new(vec![p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.)], vec![[0, 1, 2]])
                .unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.face_count(), 1);
        assert!((mesh.surface_area() - 0.5).abs() < 1e-15);
        assert!((mesh.face_normal(0) - Vector::z()).norm() < 1e-15);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = TriangleMesh::new(vec![p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.)], vec![[0, 1, 99]])
            .unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 99, count: 3, .. }));
    }

    #[test]
    fn degenerate_faces_are_dropped_and_counted() {
        let verts = vec![p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.), p(2., 0., 0.)];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]]).unwrap();
        assert_eq!(mesh.face_count(), 1);
        assert_eq!(mesh.dropped_degenerate(), 2);
    }

    #[test]
    fn all_degenerate_is_empty() {
        let verts = vec![p(0., 0., 0.), p(1., 0., 0.), p(2., 0., 0.)];
        assert!(matches!(TriangleMesh::new(verts, vec![[0, 1, 2]]), Err(MeshError::Empty)));
    }

    #[test]
    fn stored_normals_are_unit() {
        let verts = vec![p(0., 0., 0.), p(1., 0., 0.), p(0., 1., 0.)];
        let mesh =
            TriangleMesh::from_parts(verts, vec![[0, 1, 2]], Some(vec![Vector::new(0., 0., 3.)]))
                .unwrap();
        let n = mesh.stored_normals().unwrap()[0];
        assert!((n.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cube_volume_and_flip() {
        let cube = primitives::cuboid(p(0., 0., 0.), p(1., 2., 3.));
        assert!((cube.signed_volume() - 6.0).abs() < 1e-12);
        assert!((cube.flipped().signed_volume() + 6.0).abs() < 1e-12);
        let (lo, hi) = cube.bounds().unwrap();
        assert_eq!(lo, p(0., 0., 0.));
        assert_eq!(hi, p(1., 2., 3.));
    }
}
