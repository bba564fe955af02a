//! Orthographic multi-view ray casting.
//!
//! Every view is a square greyscale image produced by parallel rays. Pixels whose ray meets the
//! mesh are shaded with a Lambertian model (and optionally one Monte-Carlo bounce); the rest
//! stay black and are left out of the foreground mask.

mod bvh;
mod intersect;
mod shading;

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::mesh::{Point, TriangleMesh, Vector};
use crate::seed::rng_for;

pub use bvh::Scene;
pub use intersect::{intersect_triangle, reflect, Hit, Ray, LAMBDA_EPSILON};
pub use shading::{shade_direct, shade_indirect, Light};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),
    #[error("view index {index} out of range for {count} views")]
    ViewIndex { index: usize, count: usize },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Camera position on the view sphere, in degrees. Azimuth is measured from +x in the xy-plane,
/// elevation from the xy-plane toward +z. The camera always looks at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub azimuth: f64,
    pub elevation: f64,
}

impl View {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    /// Unit vector from the origin toward the camera.
    pub fn camera_dir(&self) -> Vector {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        Vector::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    /// Shared direction of every ray in this view.
    pub fn ray_dir(&self) -> Vector {
        -self.camera_dir()
    }

    /// Image-plane axes (right, up). Right stays horizontal, so the basis is defined even when
    /// looking straight up or down.
    pub fn basis(&self) -> (Vector, Vector) {
        let az = self.azimuth.to_radians();
        let right = Vector::new(-az.sin(), az.cos(), 0.0);
        let up = right.cross(&self.ray_dir());
        (right, up.normalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSpec {
    /// Direction from the surface toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub views: Vec<View>,
    /// World-space width covered by each image.
    pub ortho_width: f64,
    /// Pixels per image side.
    pub resolution: usize,
    pub m_diffuse: f64,
    /// Add a unit-intensity light co-located with each view's camera.
    #[serde(default = "default_true")]
    pub headlight: bool,
    /// Fixed lights shared by every view.
    pub lights: Vec<LightSpec>,
    /// Lower bound on the distance from the origin to the ray plane.
    pub min_plane_distance: f64,
    /// Monte-Carlo samples per pixel for the one-bounce term; 0 disables it.
    pub indirect_samples: usize,
    pub indirect_seed: u64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            views: (0..8).map(|i| View::new(45.0 * i as f64, 20.0)).collect(),
            ortho_width: 2.0,
            resolution: 64,
            m_diffuse: 0.85,
            headlight: true,
            lights: Vec::new(),
            min_plane_distance: 4.0,
            indirect_samples: 0,
            indirect_seed: 0,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidRig(m.to_string()));
        if self.views.is_empty() {
            return bad("at least one view is required");
        }
        if self.resolution < 8 {
            return bad("resolution must be at least 8");
        }
        if !(self.ortho_width > 0.0 && self.ortho_width.is_finite()) {
            return bad("ortho_width must be positive");
        }
        if !(0.0..=1.0).contains(&self.m_diffuse) {
            return bad("m_diffuse must lie in [0, 1]");
        }
        if self.views.iter().any(|v| !v.azimuth.is_finite() || !v.elevation.is_finite()) {
            return bad("view angles must be finite");
        }
        for l in &self.lights {
            let d = Vector::from(l.direction);
            if !(d.norm() > 0.0) || !(0.0..=1.0).contains(&l.intensity) {
                return bad("lights need a non-zero direction and intensity in [0, 1]");
            }
        }
        Ok(())
    }

    fn lights_for(&self, view: &View) -> Vec<Light> {
        let mut lights: Vec<Light> = self
            .lights
            .iter()
            .map(|l| Light {
                direction: Vector::from(l.direction).normalize(),
                intensity: l.intensity,
            })
            .collect();
        if self.headlight {
            lights.push(Light { direction: view.camera_dir(), intensity: 1.0 });
        }
        lights
    }

    fn pixel_size(&self) -> f64 {
        self.ortho_width / self.resolution as f64
    }
}

/// One ray per pixel, row-major from the top-left. Ray origins sit on a plane through
/// `camera_dir * distance`, with `distance >= 2 * scene_radius`.
pub fn generate_rays(
    rig: &CameraRig,
    view_index: usize,
    scene_radius: f64,
) -> Result<Vec<Ray>, RenderError> {
    let view = rig.views.get(view_index).ok_or(RenderError::ViewIndex {
        index: view_index,
        count: rig.views.len(),
    })?;
    let frame = Frame::new(rig, view, scene_radius);
    let n = rig.resolution;
    Ok((0..n * n).map(|k| frame.ray(k % n, k / n)).collect())
}

struct Frame {
    centre: Point,
    right: Vector,
    up: Vector,
    dir: Vector,
    pixel: f64,
    half: f64,
}

impl Frame {
    fn new(rig: &CameraRig, view: &View, scene_radius: f64) -> Self {
        let distance = rig.min_plane_distance.max(2.0 * scene_radius).max(1e-9);
        let (right, up) = view.basis();
        Self {
            centre: Point::from(view.camera_dir() * distance),
            right,
            up,
            dir: view.ray_dir(),
            pixel: rig.pixel_size(),
            half: rig.ortho_width / 2.0,
        }
    }

    fn ray(&self, col: usize, row: usize) -> Ray {
        let x = (col as f64 + 0.5) * self.pixel - self.half;
        let y = self.half - (row as f64 + 0.5) * self.pixel;
        Ray::new(self.centre + self.right * x + self.up * y, self.dir)
    }
}

/// Square greyscale render with its foreground mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub resolution: usize,
    pub intensity: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ViewImage {
    pub fn blank(resolution: usize) -> Self {
        Self {
            resolution,
            intensity: vec![0.0; resolution * resolution],
            mask: vec![false; resolution * resolution],
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// 8-bit greyscale PNG of the intensities.
    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(self.resolution, |k| (self.intensity[k].clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    /// Foreground mask as a black/white PNG.
    pub fn mask_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(self.resolution, |k| if self.mask[k] { 255 } else { 0 })
    }
}

pub(crate) fn encode_png(resolution: usize, value: impl Fn(usize) -> u8) -> Result<Vec<u8>, RenderError> {
    let side = resolution as u32;
    let img = GrayImage::from_fn(side, side, |x, y| Luma([value(y as usize * resolution + x as usize)]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// The R views of one object, in rig order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiView {
    pub images: Vec<ViewImage>,
}

impl MultiView {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images.first().map_or(0, |i| i.resolution)
    }

    /// True when no view contains any foreground pixel (e.g. an empty mesh).
    pub fn is_blank(&self) -> bool {
        self.images.iter().all(|i| i.foreground_count() == 0)
    }
}

/// Renders every view of the rig. An empty mesh yields all-background images.
pub fn render_multiview(mesh: &TriangleMesh, rig: &CameraRig) -> Result<MultiView, RenderError> {
    rig.validate()?;
    let scene = Scene::new(mesh);
    if scene.is_empty() {
        warn!("rendering an empty mesh; all views are background");
    }
    let images = (0..rig.views.len()).map(|v| render_view(&scene, rig, v)).collect();
    Ok(MultiView { images })
}

fn render_view(scene: &Scene, rig: &CameraRig, view_index: usize) -> ViewImage {
    let n = rig.resolution;
    let mut image = ViewImage::blank(n);
    if scene.is_empty() {
        return image;
    }
    let view = &rig.views[view_index];
    let frame = Frame::new(rig, view, scene.radius());
    let lights = rig.lights_for(view);

    image
        .intensity
        .par_chunks_mut(n)
        .zip(image.mask.par_chunks_mut(n))
        .enumerate()
        .for_each(|(row, (values, mask))| {
            for col in 0..n {
                let ray = frame.ray(col, row);
                let Some((face, hit)) = scene.closest(&ray) else {
                    continue;
                };
                let mut normal = scene.normal(face);
                if normal.dot(&ray.dir) > 0.0 {
                    normal = -normal;
                }
                let z = ray.at(hit.t);
                let mut value = shading::shade_scene_direct(scene, &z, &normal, &lights, rig.m_diffuse);
                if rig.indirect_samples > 0 {
                    let pixel = (row * n + col) as u64;
                    let mut rng = rng_for(&[rig.indirect_seed, view_index as u64, pixel]);
                    value += shade_indirect(
                        scene,
                        &z,
                        &normal,
                        &lights,
                        rig.m_diffuse,
                        rig.indirect_samples,
                        &mut rng,
                    );
                }
                values[col] = value.clamp(0.0, 1.0) as f32;
                mask[col] = true;
            }
        });
    image
}

/// Sidecar metadata written next to exported images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetadata {
    pub index: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub ortho_width: f64,
    pub resolution: usize,
}

pub fn view_metadata(rig: &CameraRig) -> Vec<ViewMetadata> {
    rig.views
        .iter()
        .enumerate()
        .map(|(index, v)| ViewMetadata {
            index,
            azimuth: v.azimuth,
            elevation: v.elevation,
            ortho_width: rig.ortho_width,
            resolution: rig.resolution,
        })
        .collect()
}

/// Writes `view_{i}.png`, `mask_{i}.png` and `views.json` into `dir`.
pub fn export_multiview(dir: &Path, views: &MultiView, rig: &CameraRig) -> Result<(), RenderError> {
    std::fs::create_dir_all(dir)?;
    for (i, img) in views.images.iter().enumerate() {
        std::fs::write(dir.join(format!("view_{i}.png")), img.to_png()?)?;
        std::fs::write(dir.join(format!("mask_{i}.png")), img.mask_png()?)?;
    }
    let meta = serde_json::to_vec_pretty(&view_metadata(rig)).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("views.json"), meta)?;
    Ok(())
}
