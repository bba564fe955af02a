use std::f64::consts::PI;

use rand::Rng;

use super::bvh::Scene;
use super::intersect::Ray;
use crate::mesh::{Point, Vector};

/// Directional light. `direction` points from the surface toward the light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub direction: Vector,
    pub intensity: f64,
}

/// Offset applied along the normal before casting secondary rays.
const SURFACE_BIAS: f64 = 1e-7;

/// Lambertian direct term `sum_i m * max(0, n.L_i) * V(z, L_i)`, clamped to [0, 1].
/// `visible` is the shadow test for one light direction.
pub fn shade_direct(
    z: &Point,
    n: &Vector,
    lights: &[Light],
    m_diffuse: f64,
    mut visible: impl FnMut(&Point, &Vector) -> bool,
) -> f64 {
    let mut sum = 0.0;
    for light in lights {
        let cos = n.dot(&light.direction);
        if cos <= 0.0 {
            continue;
        }
        if visible(z, &light.direction) {
            sum += m_diffuse * light.intensity * cos;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Direct shading at a scene point with shadow rays traced through `scene`.
pub(crate) fn shade_scene_direct(
    scene: &Scene,
    z: &Point,
    n: &Vector,
    lights: &[Light],
    m_diffuse: f64,
) -> f64 {
    let bias = SURFACE_BIAS * scene.radius().max(1.0);
    shade_direct(z, n, lights, m_diffuse, |p, l| {
        !scene.occluded(&Ray::new(p + n * bias, *l), f64::INFINITY)
    })
}

/// Cosine-weighted direction on the hemisphere around unit `n`.
pub(crate) fn cosine_sample(n: &Vector, rng: &mut impl Rng) -> Vector {
    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
    let phi = 2.0 * PI * r1;
    let r = r2.sqrt();
    let (t, b) = crate::mesh::perpendicular_basis(n);
    (t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - r2).max(0.0).sqrt()).normalize()
}

/// Per-sample integrand values `I_in(z, d_j) * max(0, n.d_j)` of the one-bounce estimator.
/// Incoming light along `d_j` is the direct shading of the first surface it meets.
pub(crate) fn indirect_samples(
    scene: &Scene,
    z: &Point,
    n: &Vector,
    lights: &[Light],
    m_diffuse: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let bias = SURFACE_BIAS * scene.radius().max(1.0);
    (0..samples)
        .map(|_| {
            let d = cosine_sample(n, rng);
            let ray = Ray::new(z + n * bias, d);
            let Some((face, hit)) = scene.closest(&ray) else {
                return 0.0;
            };
            let mut n2 = scene.normal(face);
            if n2.dot(&d) > 0.0 {
                n2 = -n2;
            }
            let incoming = shade_scene_direct(scene, &ray.at(hit.t), &n2, lights, m_diffuse);
            incoming * n.dot(&d).max(0.0)
        })
        .collect()
}

/// Monte-Carlo one-bounce indirect term `m * (1/N) * sum_j I_in(z, d_j) * max(0, n.d_j)`
/// with cosine-weighted directions.
pub fn shade_indirect(
    scene: &Scene,
    z: &Point,
    n: &Vector,
    lights: &[Light],
    m_diffuse: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let values = indirect_samples(scene, z, n, lights, m_diffuse, samples.max(1), rng);
    m_diffuse * values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, TriangleMesh};
    use crate::seed::rng_for;

    fn always(_: &Point, _: &Vector) -> bool {
        true
    }

    fn light(dir: Vector) -> Light {
        Light { direction: dir.normalize(), intensity: 1.0 }
    }

    #[test]
    fn direct_cosine_law() {
        let z = Point::origin();
        let n = Vector::z();
        assert_eq!(shade_direct(&z, &n, &[light(Vector::z())], 1.0, always), 1.0);
        assert_eq!(shade_direct(&z, &n, &[light(Vector::x())], 1.0, always), 0.0);
        // n.L = 0.5
        let l = light(Vector::new(3f64.sqrt(), 0.0, 1.0));
        let i = shade_direct(&z, &n, &[l], 0.8, always);
        assert!((i - 0.4).abs() < 1e-12);
        assert_eq!(shade_direct(&z, &n, &[l], 0.8, |_, _| false), 0.0);
    }

    #[test]
    fn direct_is_clamped() {
        let lights = [light(Vector::z()); 3];
        assert_eq!(shade_direct(&Point::origin(), &Vector::z(), &lights, 0.9, always), 1.0);
    }

    #[test]
    fn isolated_convex_object_has_no_bounce_light() {
        let scene = Scene::new(&primitives::unit_cube());
        let z = Point::new(0.5, 0.1, 0.2);
        let mut rng = rng_for(&[1]);
        let lights = [light(Vector::new(1.0, 0.3, 0.2))];
        assert_eq!(shade_indirect(&scene, &z, &Vector::x(), &lights, 0.85, 64, &mut rng), 0.0);
    }

    /// Floor (z = 0) and wall (x = 0) meeting along the y-axis.
    fn corner() -> TriangleMesh {
        let p = |x: f64, y: f64, z: f64| Point::new(x, y, z);
        TriangleMesh::new(
            vec![
                p(0., -2., 0.),
                p(2., -2., 0.),
                p(2., 2., 0.),
                p(0., 2., 0.),
                p(0., -2., 2.),
                p(0., 2., 2.),
            ],
            vec![[0, 1, 2], [0, 2, 3], [0, 3, 5], [0, 5, 4]],
        )
        .unwrap()
    }

    #[test]
    fn single_sample_agrees_with_converged_estimate() {
        let scene = Scene::new(&corner());
        let lights = [light(Vector::new(1.0, 0.2, 1.0))];
        let z = Point::new(0.3, 0.0, 0.0);
        let n = Vector::z();
        let values = indirect_samples(&scene, &z, &n, &lights, 0.85, 4096, &mut rng_for(&[9]));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        assert!(mean > 0.0, "the wall should bounce light onto the floor");
        let sigma = var.sqrt();
        for seed in 0..20 {
            let one = shade_indirect(&scene, &z, &n, &lights, 0.85, 1, &mut rng_for(&[seed]));
            assert!((one - 0.85 * mean).abs() <= 3.0 * 0.85 * sigma + 1e-12);
        }
    }

    #[test]
    fn indirect_is_seeded() {
        let scene = Scene::new(&corner());
        let lights = [light(Vector::new(1.0, 0.2, 1.0))];
        let z = Point::new(0.3, 0.0, 0.0);
        let a = shade_indirect(&scene, &z, &Vector::z(), &lights, 0.85, 32, &mut rng_for(&[4]));
        let b = shade_indirect(&scene, &z, &Vector::z(), &lights, 0.85, 32, &mut rng_for(&[4]));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cosine_samples_stay_in_hemisphere() {
        let n = Vector::new(0.3, -0.4, 0.8).normalize();
        let mut rng = rng_for(&[2]);
        for _ in 0..1000 {
            let d = cosine_sample(&n, &mut rng);
            assert!(d.dot(&n) >= 0.0 && (d.norm() - 1.0).abs() < 1e-12);
        }
    }
}
