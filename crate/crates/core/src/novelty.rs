//! Image-space geometric novelty between two objects rendered with the same rig: a masked pixel
//! term, a masked feature-pyramid term, relevance weighting, and per-pixel heatmaps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, Embedding, FeatureExtractor, GreyImage};
use crate::render::{encode_png, view_metadata, CameraRig, MultiView, RenderError, ViewMetadata};
use crate::semantic::{embed_views, gamma_from, SemanticError};

#[derive(Debug, Error)]
pub enum NoveltyError {
    #[error("comparison mask is empty in every view")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl NoveltyError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Backend(e) => e.is_retryable(),
            Self::Semantic(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// Per-view regions of interest: the union of both silhouettes.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub resolution: usize,
    pub masks: Vec<Vec<bool>>,
}

impl MaskMatrix {
    /// Number of selected pixels over all views.
    pub fn count(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }
}

fn check_shapes(x: &MultiView, y: &MultiView) -> Result<(), NoveltyError> {
    if x.len() != y.len() {
        return Err(NoveltyError::ShapeMismatch(format!("{} vs {} views", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(NoveltyError::ShapeMismatch("no views".into()));
    }
    for (i, (a, b)) in x.images.iter().zip(&y.images).enumerate() {
        if a.resolution != b.resolution {
            return Err(NoveltyError::ShapeMismatch(format!(
                "view {i}: resolution {} vs {}",
                a.resolution, b.resolution
            )));
        }
    }
    Ok(())
}

fn check_mask(x: &MultiView, mask: &MaskMatrix) -> Result<(), NoveltyError> {
    if mask.masks.len() != x.len()
        || x.images.iter().zip(&mask.masks).any(|(v, m)| m.len() != v.intensity.len())
    {
        return Err(NoveltyError::ShapeMismatch("mask does not match the views".into()));
    }
    Ok(())
}

pub fn build_mask(x: &MultiView, y: &MultiView) -> Result<MaskMatrix, NoveltyError> {
    check_shapes(x, y)?;
    let masks: Vec<Vec<bool>> = x
        .images
        .iter()
        .zip(&y.images)
        .map(|(a, b)| a.mask.iter().zip(&b.mask).map(|(p, q)| *p || *q).collect())
        .collect();
    let mask = MaskMatrix { resolution: x.resolution(), masks };
    if mask.count() == 0 {
        return Err(NoveltyError::EmptyMask);
    }
    Ok(mask)
}

/// Squared masked intensity differences, one grid per view.
pub fn pixel_heatmaps(x: &MultiView, y: &MultiView, mask: &MaskMatrix) -> Result<Vec<Vec<f64>>, NoveltyError> {
    check_shapes(x, y)?;
    check_mask(x, mask)?;
    Ok(x.images
        .iter()
        .zip(&y.images)
        .zip(&mask.masks)
        .map(|((a, b), m)| {
            a.intensity
                .iter()
                .zip(&b.intensity)
                .zip(m)
                .map(|((p, q), &keep)| {
                    if keep {
                        let d = *q as f64 - *p as f64;
                        d * d
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

pub fn pixel_term_s3(x: &MultiView, y: &MultiView, mask: &MaskMatrix) -> Result<f64, NoveltyError> {
    Ok(pixel_heatmaps(x, y, mask)?.iter().flatten().sum())
}

/// The view with everything outside `mask` set to black.
pub fn masked_image(intensity: &[f32], mask: &[bool], resolution: usize) -> GreyImage {
    let data = intensity.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
    GreyImage::square(resolution, data)
}

/// Sum over views and pyramid levels `1..=levels` of squared feature differences, with the
/// mask applied before extraction.
pub fn feature_term_s4(
    x: &MultiView,
    y: &MultiView,
    mask: &MaskMatrix,
    extractor: &dyn FeatureExtractor,
    levels: usize,
) -> Result<f64, NoveltyError> {
    check_shapes(x, y)?;
    check_mask(x, mask)?;
    if levels == 0 {
        return Ok(0.0);
    }
    let wanted: Vec<usize> = (1..=levels).collect();
    let per_view: Vec<f64> = x
        .images
        .par_iter()
        .zip(&y.images)
        .zip(&mask.masks)
        .map(|((a, b), m)| {
            let fa = extractor.feature_maps(&masked_image(&a.intensity, m, a.resolution), &wanted)?;
            let fb = extractor.feature_maps(&masked_image(&b.intensity, m, b.resolution), &wanted)?;
            if fa.len() != fb.len() {
                return Err(NoveltyError::ShapeMismatch("feature level counts differ".into()));
            }
            let mut sum = 0.0;
            for (p, q) in fa.iter().zip(&fb) {
                if p.data.len() != q.data.len() {
                    return Err(NoveltyError::ShapeMismatch(format!("feature level {} sizes differ", p.level)));
                }
                sum += p.data.iter().zip(&q.data).map(|(u, v)| (*v as f64 - *u as f64).powi(2)).sum::<f64>();
            }
            Ok(sum)
        })
        .collect::<Result<_, NoveltyError>>()?;
    Ok(per_view.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub s3: f64,
    pub s4: f64,
    pub gamma_weight: f64,
    pub mask_pixels: usize,
    pub score: f64,
    pub resolution: usize,
    /// Per-view pixel-term integrands, row-major.
    #[serde(skip)]
    pub heatmaps: Vec<Vec<f64>>,
}

pub fn novelty_score(s3: f64, s4: f64, gamma_weight: f64, mask_pixels: usize) -> f64 {
    gamma_weight * (s3 + s4) / mask_pixels as f64
}

/// Novelty with view embeddings supplied by the caller, so cached reference embeddings can be
/// reused across candidates.
pub fn f_novelty_with(
    x: &MultiView,
    x_embeddings: &[Embedding],
    y: &MultiView,
    y_embeddings: &[Embedding],
    extractor: &dyn FeatureExtractor,
    levels: usize,
) -> Result<NoveltyReport, NoveltyError> {
    let mask = build_mask(x, y)?;
    let heatmaps = pixel_heatmaps(x, y, &mask)?;
    let s3 = heatmaps.iter().flatten().sum();
    let s4 = feature_term_s4(x, y, &mask, extractor, levels)?;
    let gamma_weight = gamma_from(x_embeddings, y_embeddings)?;
    let mask_pixels = mask.count();
    Ok(NoveltyReport {
        s3,
        s4,
        gamma_weight,
        mask_pixels,
        score: novelty_score(s3, s4, gamma_weight, mask_pixels),
        resolution: mask.resolution,
        heatmaps,
    })
}

pub fn f_novelty(
    x: &MultiView,
    y: &MultiView,
    extractor: &dyn FeatureExtractor,
    embedder: &dyn Embedder,
    levels: usize,
) -> Result<NoveltyReport, NoveltyError> {
    check_shapes(x, y)?;
    let ex = embed_views(x, embedder)?;
    let ey = embed_views(y, embedder)?;
    f_novelty_with(x, &ex, y, &ey, extractor, levels)
}

/// Rendered reference object with its view embeddings.
#[derive(Debug, Clone)]
pub struct ReferenceViews {
    pub views: MultiView,
    pub embeddings: Vec<Embedding>,
}

/// Smallest novelty against any reference, and which reference attained it.
pub fn min_novelty(
    x: &MultiView,
    x_embeddings: &[Embedding],
    references: &[ReferenceViews],
    extractor: &dyn FeatureExtractor,
    levels: usize,
) -> Result<(f64, usize), NoveltyError> {
    if references.is_empty() {
        return Err(NoveltyError::EmptyReferenceSet);
    }
    let mut best = (f64::INFINITY, 0);
    for (k, r) in references.iter().enumerate() {
        let score = f_novelty_with(x, x_embeddings, &r.views, &r.embeddings, extractor, levels)?.score;
        if score < best.0 {
            best = (score, k);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub resolution: usize,
    /// Common scale of the PNGs: a pixel value of 255 corresponds to this squared difference.
    pub max_value: f64,
    /// Raw grids as little-endian `f32`, row-major, one file per view.
    pub raw_files: Vec<String>,
    pub views: Vec<ViewMetadata>,
}

/// Writes `heatmap_{i}.png` scaled to the global maximum, `heatmap_{i}.f32` raw grids and
/// `heatmaps.json`.
pub fn export_heatmaps(dir: &Path, report: &NoveltyReport, rig: &CameraRig) -> Result<(), NoveltyError> {
    std::fs::create_dir_all(dir).map_err(RenderError::from)?;
    let max_value = report.heatmaps.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let mut raw_files = Vec::new();
    for (i, grid) in report.heatmaps.iter().enumerate() {
        let png = encode_png(report.resolution, |k| {
            if max_value > 0.0 {
                (grid[k] / max_value * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })?;
        std::fs::write(dir.join(format!("heatmap_{i}.png")), png).map_err(RenderError::from)?;
        let raw: Vec<u8> = grid.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        let name = format!("heatmap_{i}.f32");
        std::fs::write(dir.join(&name), raw).map_err(RenderError::from)?;
        raw_files.push(name);
    }
    let sidecar = HeatmapSidecar { resolution: report.resolution, max_value, raw_files, views: view_metadata(rig) };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| RenderError::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join("heatmaps.json"), json).map_err(RenderError::from)?;
    Ok(())
}
