use crate::mesh::{Point, Vector};

/// Determinants smaller than this mark a ray parallel to the triangle plane.
pub const LAMBDA_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point,
    /// Unit direction.
    pub dir: Vector,
}

impl Ray {
    pub fn new(origin: Point, dir: Vector) -> Self {
        Self { origin, dir }
    }

    pub fn at(&self, t: f64) -> Point {
        self.origin + self.dir * t
    }
}

/// Ray parameter and barycentric coordinates of a hit: `z = v1 + u (v2 - v1) + v (v3 - v1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Möller–Trumbore ray/triangle test. Hits require `u, v >= 0`, `u + v <= 1` and `t > 0`.
pub fn intersect_triangle(ray: &Ray, v1: &Point, v2: &Point, v3: &Point) -> Option<Hit> {
    let e1 = v2 - v1;
    let e2 = v3 - v1;
    let h = ray.dir.cross(&e2);
    let lambda = e1.dot(&h);
    if lambda.abs() < LAMBDA_EPSILON {
        return None;
    }
    let inv = 1.0 / lambda;
    let s = ray.origin - v1;
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if !(0.0..=1.0).contains(&v) || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(Hit { t, u, v })
}

/// Mirror direction of `d` about the plane with unit normal `n`.
pub fn reflect(d: &Vector, n: &Vector) -> Vector {
    d - 2.0 * d.dot(n) * n
}
