//! Aerodynamic scoring with a modified Newtonian panel surrogate, plus the exchange interface
//! for an external flow solver.

mod external;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{projected_area, TriangleMesh, Vector, DEFAULT_AREA_RESOLUTION};

pub use external::{external_simulate, ExternalCoefficients, ExternalSimulator, SimulatorError};

#[derive(Debug, Error)]
pub enum AeroError {
    #[error("invalid flow conditions: {0}")]
    InvalidFlow(String),
    #[error("invalid physics bounds: a = {a} must be below b = {b}")]
    InvalidBounds { a: f64, b: f64 },
    #[error("pressure list has {got} entries for {faces} faces")]
    LengthMismatch { got: usize, faces: usize },
    #[error("projected area along the flow is zero")]
    ZeroProjectedArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConditions {
    /// Freestream velocity (m/s).
    pub velocity: [f64; 3],
    /// Freestream density (kg/m³).
    pub density: f64,
    /// Stagnation pressure coefficient of the Newtonian law.
    pub cp_max: f64,
    /// Normalize coefficients by `2 rho |u|^2 A` instead of the dynamic pressure
    /// `0.5 rho |u|^2 A`. Coefficients come out four times smaller.
    pub paper_exact_normalization: bool,
    /// Silhouette raster size used for the reference area.
    pub area_resolution: usize,
}

impl Default for FlowConditions {
    fn default() -> Self {
        Self {
            velocity: [1.0, 0.0, 0.0],
            density: 1.0,
            cp_max: 2.0,
            paper_exact_normalization: false,
            area_resolution: DEFAULT_AREA_RESOLUTION,
        }
    }
}

impl FlowConditions {
    pub fn validate(&self) -> Result<(), AeroError> {
        let speed = Vector::from(self.velocity).norm();
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(AeroError::InvalidFlow("freestream speed must be positive".into()));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(AeroError::InvalidFlow("density must be positive".into()));
        }
        if !(self.cp_max > 0.0 && self.cp_max.is_finite()) {
            return Err(AeroError::InvalidFlow("cp_max must be positive".into()));
        }
        if self.area_resolution == 0 {
            return Err(AeroError::InvalidFlow("area_resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vector {
        Vector::from(self.velocity).normalize()
    }

    /// Dynamic pressure `0.5 rho |u|^2`, which scales pressure coefficients into pressures.
    pub fn dynamic_pressure(&self) -> f64 {
        0.5 * self.density * Vector::from(self.velocity).norm_squared()
    }

    /// Pressure used to non-dimensionalize the integrated force.
    pub fn reference_pressure(&self) -> f64 {
        if self.paper_exact_normalization {
            2.0 * self.density * Vector::from(self.velocity).norm_squared()
        } else {
            self.dynamic_pressure()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceForceReport {
    pub per_face_cp: Vec<f64>,
    /// Integrated pressure force (N).
    pub total_force: [f64; 3],
    pub projected_area: f64,
    pub c_drag: f64,
    pub c_lift: f64,
    /// Coefficient of the force along +y.
    pub c_side: f64,
}

/// Clamp bounds for the raw drag score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsBounds {
    pub a: f64,
    pub b: f64,
}

impl Default for PhysicsBounds {
    fn default() -> Self {
        Self { a: -1.0, b: 1.0 }
    }
}

impl PhysicsBounds {
    pub fn new(a: f64, b: f64) -> Result<Self, AeroError> {
        let bounds = Self { a, b };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<(), AeroError> {
        if self.a < self.b && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(AeroError::InvalidBounds { a: self.a, b: self.b })
        }
    }
}

/// Newtonian pressure coefficient per face: `cp_max (n.u)^2` on windward faces, zero elsewhere.
pub fn panel_pressure(mesh: &TriangleMesh, flow: &FlowConditions) -> Vec<f64> {
    let u = flow.direction();
    (0..mesh.face_count())
        .map(|f| {
            let c = mesh.face_normal(f).dot(&u);
            if c < 0.0 {
                flow.cp_max * c * c
            } else {
                0.0
            }
        })
        .collect()
}

/// Sums `cp_i A_i (-n_i) q` over faces and non-dimensionalizes the result by the reference
/// pressure and the silhouette area seen along the flow. Lift is the +z component.
pub fn integrate_forces(
    mesh: &TriangleMesh,
    per_face_cp: &[f64],
    flow: &FlowConditions,
) -> Result<SurfaceForceReport, AeroError> {
    flow.validate()?;
    if per_face_cp.len() != mesh.face_count() {
        return Err(AeroError::LengthMismatch {
            got: per_face_cp.len(),
            faces: mesh.face_count(),
        });
    }
    let q = flow.dynamic_pressure();
    let force = per_face_cp
        .iter()
        .enumerate()
        .fold(Vector::zeros(), |acc, (f, &cp)| {
            acc - mesh.face_normal(f) * (cp * mesh.face_area(f) * q)
        });

    let u = flow.direction();
    let area = projected_area(mesh, &u, flow.area_resolution);
    if !(area > 0.0) {
        return Err(AeroError::ZeroProjectedArea);
    }
    let scale = flow.reference_pressure() * area;
    Ok(SurfaceForceReport {
        per_face_cp: per_face_cp.to_vec(),
        total_force: force.into(),
        projected_area: area,
        c_drag: force.dot(&u) / scale,
        c_lift: force.z / scale,
        c_side: force.y / scale,
    })
}

/// Panel pressure followed by force integration.
pub fn newtonian_coefficients(
    mesh: &TriangleMesh,
    flow: &FlowConditions,
) -> Result<SurfaceForceReport, AeroError> {
    flow.validate()?;
    integrate_forces(mesh, &panel_pressure(mesh, flow), flow)
}

/// Maps a raw score onto [0, 1]: `(clamp(raw, a, b) - a) / (b - a)`.
pub fn f_physical(raw: f64, bounds: &PhysicsBounds) -> f64 {
    (raw.clamp(bounds.a, bounds.b) - bounds.a) / (bounds.b - bounds.a)
}
