//! Embedding-based semantic scores: view/text relevance, the tempered two-way softmax for domain
//! alignment, the multi-view relevance weight, and the prompt feasibility filter.

use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::{Arc, Mutex};

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, Embedding, GreyImage};
use crate::render::{MultiView, ViewImage};

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero-norm embedding")]
    ZeroNorm,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("no views to score")]
    NoViews,
    #[error("view counts differ ({0} vs {1})")]
    ViewCountMismatch(usize, usize),
    #[error("softmax temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl SemanticError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Backend(e) if e.is_retryable())
    }
}

pub fn cosine(x: &Embedding, y: &Embedding) -> Result<f64, SemanticError> {
    if x.dim() != y.dim() {
        return Err(SemanticError::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.0.iter().chain(&y.0).any(|v| !v.is_finite()) {
        return Err(SemanticError::NonFinite);
    }
    let (nx, ny) = (x.norm(), y.norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(SemanticError::ZeroNorm);
    }
    let dot: f64 = x.0.iter().zip(&y.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Target domain and the text used for its negation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub label: String,
    /// `{label}` is replaced by the label.
    pub negation_template: String,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self { label: "Car".into(), negation_template: "not a {label}".into() }
    }
}

impl DomainSpec {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.label.trim().is_empty() {
            return Err("domain label is empty".into());
        }
        Ok(())
    }

    pub fn negation(&self) -> String {
        self.negation_template.replace("{label}", &self.label)
    }

    /// The prefix every proposed prompt has to carry.
    pub fn template_prefix(&self) -> String {
        format!("A {} in the shape of", self.label)
    }
}

pub fn view_image(view: &ViewImage) -> GreyImage {
    GreyImage::square(view.resolution, view.intensity.clone())
}

pub fn embed_views(views: &MultiView, embedder: &dyn Embedder) -> Result<Vec<Embedding>, SemanticError> {
    if views.is_empty() {
        return Err(SemanticError::NoViews);
    }
    views
        .images
        .par_iter()
        .map(|v| embedder.embed_image(&view_image(v)).map_err(SemanticError::from))
        .collect()
}

/// Best clamped cosine between any view embedding and the text embedding.
pub fn h_vlm_from(views: &[Embedding], text: &Embedding) -> Result<f64, SemanticError> {
    if views.is_empty() {
        return Err(SemanticError::NoViews);
    }
    views.iter().try_fold(0.0f64, |best, v| Ok(best.max(cosine(v, text)?.max(0.0))))
}

pub fn h_vlm(views: &MultiView, text: &str, embedder: &dyn Embedder) -> Result<f64, SemanticError> {
    let text = embedder.embed_text(text)?;
    h_vlm_from(&embed_views(views, embedder)?, &text)
}

/// Two-way softmax `e^{s1/Γ} / (e^{s1/Γ} + e^{s2/Γ})`.
///
/// Evaluated through the smaller of the two shares so that swapping the arguments gives the
/// exact complement and no exponent ever overflows.
pub fn domain_softmax(s1: f64, s2: f64, temperature: f64) -> f64 {
    let gap = (s1 - s2).abs() / temperature;
    let e = (-gap).exp();
    let minor = e / (1.0 + e);
    if s1 >= s2 {
        1.0 - minor
    } else {
        minor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    /// Relevance to the domain label.
    pub s1: f64,
    /// Relevance to the negated label.
    pub s2: f64,
    pub f_domain: f64,
}

pub fn f_domain_from(
    views: &[Embedding],
    label: &Embedding,
    negation: &Embedding,
    temperature: f64,
) -> Result<DomainScore, SemanticError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SemanticError::BadTemperature(temperature));
    }
    let s1 = h_vlm_from(views, label)?;
    let s2 = h_vlm_from(views, negation)?;
    Ok(DomainScore { s1, s2, f_domain: domain_softmax(s1, s2, temperature) })
}

pub fn f_domain(
    views: &MultiView,
    domain: &DomainSpec,
    temperature: f64,
    embedder: &dyn Embedder,
) -> Result<DomainScore, SemanticError> {
    let label = embedder.embed_text(&domain.label)?;
    let negation = embedder.embed_text(&domain.negation())?;
    f_domain_from(&embed_views(views, embedder)?, &label, &negation, temperature)
}

/// Mean clamped cosine between same-index view embeddings.
pub fn gamma_from(x: &[Embedding], y: &[Embedding]) -> Result<f64, SemanticError> {
    if x.len() != y.len() {
        return Err(SemanticError::ViewCountMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(SemanticError::NoViews);
    }
    let mut sum = 0.0;
    for (a, b) in x.iter().zip(y) {
        sum += cosine(a, b)?.max(0.0);
    }
    Ok(sum / x.len() as f64)
}

pub fn gamma(x: &MultiView, y: &MultiView, embedder: &dyn Embedder) -> Result<f64, SemanticError> {
    if x.len() != y.len() {
        return Err(SemanticError::ViewCountMismatch(x.len(), y.len()));
    }
    gamma_from(&embed_views(x, embedder)?, &embed_views(y, embedder)?)
}

/// Outcome of the prompt filter, with each check kept so failures can be reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Cosine distance between prompt and label embeddings, clamped to [0, 1].
    pub q: f64,
    pub semantic_ok: bool,
    pub template_ok: bool,
    pub full_stop_ok: bool,
}

impl Feasibility {
    pub fn feasible(&self) -> bool {
        self.semantic_ok && self.template_ok && self.full_stop_ok
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.semantic_ok {
            out.push("semantic distance");
        }
        if !self.template_ok {
            out.push("template prefix");
        }
        if !self.full_stop_ok {
            out.push("full stop");
        }
        out
    }
}

/// Syntactic checks only; no backend involved.
pub fn syntax_ok(prompt: &str, domain: &DomainSpec) -> (bool, bool) {
    let trimmed = prompt.trim();
    (trimmed.contains(&domain.template_prefix()), trimmed.ends_with('.'))
}

pub fn prompt_feasible(
    prompt: &str,
    domain: &DomainSpec,
    epsilon: f64,
    embedder: &dyn Embedder,
) -> Result<Feasibility, SemanticError> {
    let (template_ok, full_stop_ok) = syntax_ok(prompt, domain);
    let p = embedder.embed_text(prompt.trim())?;
    let s = embedder.embed_text(&domain.label)?;
    let q = match cosine(&p, &s) {
        Ok(c) => 1.0 - c.max(0.0),
        // an empty prompt has nothing in common with the label
        Err(SemanticError::ZeroNorm) => 1.0,
        Err(e) => return Err(e),
    };
    Ok(Feasibility { q, semantic_ok: q <= epsilon, template_ok, full_stop_ok })
}

fn content_key(kind: u8, bytes: impl Iterator<Item = u8>, extra: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u8(kind);
    for b in bytes {
        h.write_u8(b);
    }
    for e in extra {
        h.write_u64(*e);
    }
    h.finish()
}

/// Memoizing wrapper keyed by a content hash. Each key is written once; later lookups return
/// the stored vector.
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: Mutex<HashMap<u64, Embedding>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("embedding cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn memo(&self, key: u64, compute: impl FnOnce() -> Result<Embedding, BackendError>) -> Result<Embedding, BackendError> {
        if let Some(hit) = self.cache.lock().expect("embedding cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let value = compute()?;
        let mut cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(cache.entry(key).or_insert(value).clone())
    }
}

impl Embedder for CachedEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let key = content_key(0, text.bytes(), &[]);
        self.memo(key, || self.inner.embed_text(text))
    }

    fn embed_image(&self, image: &GreyImage) -> Result<Embedding, BackendError> {
        let bytes = image.data.iter().flat_map(|v| v.to_bits().to_le_bytes());
        let key = content_key(1, bytes, &[image.width as u64, image.height as u64]);
        self.memo(key, || self.inner.embed_image(image))
    }
}
