use nalgebra::{Matrix3, SymmetricEigen};

use super::{MeshError, Point, TriangleMesh, Vector};

/// Eigenvalues closer than this (relative to the largest) are treated as tied.
const EIGEN_TIE: f64 = 1e-6;

/// Registers a mesh into the canonical frame used for rendering and physics: area-weighted
/// surface centroid at the origin, principal axes on x (largest spread), y, z, and the longest
/// bounding-box extent scaled to 1. Tied principal axes keep the orientation closest to the
/// input frame, so already-registered meshes come back unchanged.
pub fn normalize_pose(mesh: &TriangleMesh) -> Result<TriangleMesh, MeshError> {
    if mesh.is_empty() {
        return Err(MeshError::Degenerate("cannot normalize an empty mesh".into()));
    }
    let (centroid, covariance) = surface_moments(mesh);
    let rotation = principal_frame(&covariance);

    let rotated: Vec<Point> = mesh
        .vertices()
        .iter()
        .map(|p| Point::from(rotation * (p - centroid)))
        .collect();
    let (lo, hi) = rotated.iter().fold(
        (Vector::repeat(f64::MAX), Vector::repeat(f64::MIN)),
        |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords)),
    );
    let extent = (hi - lo).max();
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(MeshError::Degenerate("mesh has zero extent".into()));
    }
    let scale = 1.0 / extent;
    let vertices = rotated.into_iter().map(|p| p * scale).collect();
    let normals = mesh
        .stored_normals()
        .map(|n| n.iter().map(|v| rotation * v).collect());
    TriangleMesh::from_parts(vertices, mesh.faces().to_vec(), normals)
}

/// Area-weighted centroid and covariance of the surface.
pub(crate) fn surface_moments(mesh: &TriangleMesh) -> (Point, Matrix3<f64>) {
    let mut area = 0.0;
    let mut first = Vector::zeros();
    let mut second = Matrix3::zeros();
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f);
        let w = super::triangle_area(&a, &b, &c);
        let sum = a.coords + b.coords + c.coords;
        area += w;
        first += w * sum / 3.0;
        // exact second moment of a flat triangle: A/12 (sum v v^T + S S^T)
        second += (w / 12.0)
            * (a.coords * a.coords.transpose()
                + b.coords * b.coords.transpose()
                + c.coords * c.coords.transpose()
                + sum * sum.transpose());
    }
    let centroid = first / area;
    let covariance = second / area - centroid * centroid.transpose();
    (Point::from(centroid), covariance)
}

/// Rows of the returned matrix are the new x, y, z axes.
fn principal_frame(covariance: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*covariance);
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = order.map(|i| canonical_sign(eig.eigenvectors.column(i).into_owned()));

    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    let tie01 = (values[0] - values[1]).abs() <= EIGEN_TIE * scale;
    let tie12 = (values[1] - values[2]).abs() <= EIGEN_TIE * scale;

    let (x, y, z) = match (tie01, tie12) {
        (true, true) => return Matrix3::identity(),
        (false, false) => {
            let (x, y) = (vectors[0], vectors[1]);
            (x, y, x.cross(&y))
        }
        (false, true) => {
            let x = vectors[0];
            let y = project_onto_plane(&Vector::y(), &x)
                .or_else(|| project_onto_plane(&Vector::z(), &x))
                .expect("two axes cannot both be parallel to x");
            (x, y, x.cross(&y))
        }
        (true, false) => {
            let z = vectors[2];
            let x = project_onto_plane(&Vector::x(), &z)
                .or_else(|| project_onto_plane(&Vector::y(), &z))
                .expect("two axes cannot both be parallel to z");
            (x, z.cross(&x), z)
        }
    };
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn project_onto_plane(v: &Vector, normal: &Vector) -> Option<Vector> {
    let p = v - normal * normal.dot(v);
    (p.norm() > 1e-6).then(|| p.normalize())
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: Vector) -> Vector {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use nalgebra::Rotation3;

    fn max_vertex_delta(a: &TriangleMesh, b: &TriangleMesh) -> f64 {
        a.vertices()
            .iter()
            .zip(b.vertices())
            .map(|(p, q)| (p - q).amax())
            .fold(0.0, f64::max)
    }

    #[test]
    fn centred_unit_cube_is_fixed_point() {
        let cube = primitives::unit_cube();
        let out = normalize_pose(&cube).unwrap();
        assert!(max_vertex_delta(&cube, &out) < 1e-9);
    }

    #[test]
    fn translation_is_removed() {
        let cube = primitives::unit_cube().translated(&Vector::new(5., 5., 5.));
        let out = normalize_pose(&cube).unwrap();
        let (c, _) = surface_moments(&out);
        assert!(c.coords.norm() < 1e-9);
    }

    #[test]
    fn second_moment_matches_quadrature() {
        // one triangle, compare against a dense barycentric midpoint rule
        let tri = TriangleMesh::new(
            vec![Point::new(0.3, -1.0, 2.0), Point::new(1.5, 0.2, 0.1), Point::new(-0.4, 0.9, 1.1)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let [a, b, c] = tri.triangle(0);
        // centroids of the n² equal sub-triangles of a regular subdivision
        let n = 400;
        let mut m = Matrix3::zeros();
        let mut count = 0.0;
        let mut sample = |u: f64, v: f64| {
            let p = a.coords + u * (b - a) + v * (c - a);
            m += p * p.transpose();
            count += 1.0;
        };
        for i in 0..n {
            for j in 0..n - i {
                sample((i as f64 + 1.0 / 3.0) / n as f64, (j as f64 + 1.0 / 3.0) / n as f64);
                if i + j + 1 < n {
                    sample((i as f64 + 2.0 / 3.0) / n as f64, (j as f64 + 2.0 / 3.0) / n as f64);
                }
            }
        }
        let quad = m / count;
        let (centroid, cov) = surface_moments(&tri);
        let exact = cov + centroid.coords * centroid.coords.transpose();
        assert!((quad - exact).amax() < 1e-4, "{quad} vs {exact}");
    }

    #[test]
    fn rotated_long_box_aligns_with_x() {
        let boxy = primitives::cuboid(Point::new(-1., -0.5, -0.5), Point::new(1., 0.5, 0.5));
        let rot = Rotation3::from_euler_angles(0.7, -0.4, 1.9);
        let rotated = boxy.map_vertices(|p| rot * p).unwrap();

        // oracle: dominant eigenvector of the vertex covariance of the rotated box
        let verts = rotated.vertices();
        let mean = verts.iter().fold(Vector::zeros(), |s, p| s + p.coords) / verts.len() as f64;
        let cov = verts.iter().fold(Matrix3::zeros(), |s, p| {
            let d = p.coords - mean;
            s + d * d.transpose()
        });
        let eig = SymmetricEigen::new(cov);
        let long_axis = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
        assert!((long_axis.dot(&(rot * Vector::x())).abs() - 1.0).abs() < 1e-9);

        let out = normalize_pose(&rotated).unwrap();
        let mapped = out.vertices()[1] - out.vertices()[0];
        // corner 0 -> 1 was the long edge; it must now lie along x
        let dir = mapped.normalize();
        assert!((dir.x.abs() - 1.0).abs() < 1e-6, "{dir}");
        let (lo, hi) = out.bounds().unwrap();
        assert!(((hi - lo).x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn idempotent() {
        let boxy = primitives::cuboid(Point::new(0., 0., 0.), Point::new(0.7, 2.0, 0.3));
        let rot = Rotation3::from_euler_angles(0.2, 0.3, -0.5);
        let once = normalize_pose(&boxy.map_vertices(|p| rot * p).unwrap()).unwrap();
        let twice = normalize_pose(&once).unwrap();
        assert!(max_vertex_delta(&once, &twice) < 1e-9);
    }

    #[test]
    fn zero_extent_is_degenerate() {
        assert!(normalize_pose(&TriangleMesh::empty()).is_err());
    }
}
