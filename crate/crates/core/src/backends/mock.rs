//! Deterministic stand-ins for every backend.
//!
//! The mock world maps prompt keywords onto a parametric car body, so the search landscape is
//! known in advance: drag falls monotonically as the body's taper grows, and the taper is set
//! by the shape noun. The mock language model hill-climbs by nudging one descriptor of the best
//! exemplar it is shown.

use std::f64::consts::PI;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, ChatMessage, Embedder, Embedding, FeatureExtractor, FeatureMap,
    GreyImage, TextTo3d,
};
use crate::mesh::{Point, TriangleMesh};
use crate::seed::{rng_for, text_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub word: String,
    pub value: f64,
}

fn table(entries: &[(&str, f64)]) -> Vec<Keyword> {
    entries
        .iter()
        .map(|(w, v)| Keyword { word: (*w).into(), value: *v })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockWorldConfig {
    /// Shape nouns ordered by taper in [0, 1]; the optimum is the last entry.
    pub nouns: Vec<Keyword>,
    /// Profile adjectives mapping to body height / length.
    pub profiles: Vec<Keyword>,
    /// Nose adjectives mapping to nose rounding in [0, 1].
    pub noses: Vec<Keyword>,
    /// Body width / length.
    pub width_ratio: f64,
    /// Table positions moved per mutation.
    pub hill_climb_step: usize,
    /// Embedding dimension; must be a perfect square (image embeddings pool onto a square grid).
    pub embedding_dim: usize,
    /// Relative per-section size noise applied by the generator, keyed by the request seed.
    pub jitter: f64,
    /// Stations along the body and points per cross-section.
    pub stations: usize,
    pub section_points: usize,
    /// Domain label used when the meta-prompt does not carry a template.
    pub label: String,
    pub seed: u64,
}

impl Default for MockWorldConfig {
    fn default() -> Self {
        Self {
            nouns: table(&[
                ("slab", 0.1),
                ("brick", 0.25),
                ("box", 0.35),
                ("wedge", 0.5),
                ("bullet", 0.65),
                ("droplet", 0.8),
                ("teardrop", 0.9),
                ("needle", 1.0),
            ]),
            profiles: table(&[
                ("towering", 0.5),
                ("tall", 0.42),
                ("boxy", 0.36),
                ("sleek", 0.3),
                ("low", 0.24),
                ("flat", 0.18),
            ]),
            noses: table(&[
                ("blunt", 0.0),
                ("squared", 0.2),
                ("rounded", 0.5),
                ("tapered", 0.7),
                ("pointed", 0.9),
            ]),
            width_ratio: 0.6,
            hill_climb_step: 1,
            embedding_dim: 64,
            jitter: 0.03,
            stations: 24,
            section_points: 16,
            label: "Car".into(),
            seed: 0,
        }
    }
}

/// Body parameters recovered from a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub taper: f64,
    pub height: f64,
    pub rounding: f64,
}

/// Table indices of a prompt's descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Descriptors {
    nose: usize,
    profile: usize,
    noun: usize,
}

pub struct MockWorld {
    config: MockWorldConfig,
}

impl MockWorld {
    pub fn new(config: MockWorldConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockWorldConfig {
        &self.config
    }

    /// Keyword lookup; anything unrecognized falls back to the middle of the parameter range.
    pub fn shape_params(&self, prompt: &str) -> ShapeParams {
        let tokens = tokenize(prompt);
        let find = |t: &[Keyword], default: f64| {
            tokens
                .iter()
                .find_map(|tok| t.iter().find(|k| k.word == *tok).map(|k| k.value))
                .unwrap_or(default)
        };
        let c = &self.config;
        ShapeParams {
            taper: find(&c.nouns, 0.5),
            height: find(&c.profiles, 0.3),
            rounding: find(&c.noses, 0.5),
        }
    }

    fn descriptors(&self, prompt: &str) -> Option<Descriptors> {
        let tokens = tokenize(prompt);
        let index = |t: &[Keyword]| tokens.iter().find_map(|tok| t.iter().position(|k| k.word == *tok));
        let c = &self.config;
        let (nose, profile, noun) = (index(&c.noses), index(&c.profiles), index(&c.nouns));
        if nose.is_none() && profile.is_none() && noun.is_none() {
            return None;
        }
        Some(Descriptors {
            nose: nose.unwrap_or(c.noses.len() / 2),
            profile: profile.unwrap_or(c.profiles.len() / 2),
            noun: noun.unwrap_or(c.nouns.len() / 2),
        })
    }

    fn render_prompt(&self, label: &str, d: Descriptors) -> String {
        let c = &self.config;
        format!(
            "A {label} in the shape of a {} {} {}.",
            c.noses[d.nose].word, c.profiles[d.profile].word, c.nouns[d.noun].word
        )
    }

    /// Closed lofted body along x with superelliptic cross-sections. The nose faces -x, into a
    /// +x freestream.
    pub fn car_mesh(&self, params: &ShapeParams, seed: u64) -> TriangleMesh {
        let c = &self.config;
        let stations = c.stations.max(4);
        let points = c.section_points.max(6);
        let taper = params.taper.clamp(0.0, 1.0);
        let front_scale = 1.0 - 0.9 * taper;
        let nose_len = 0.1 + 0.5 * taper;
        let exponent = 1.0 + 2.0 * params.rounding.clamp(0.0, 1.0);
        let (half_w, half_h) = (0.5 * c.width_ratio, 0.5 * params.height.max(0.05));
        let mut rng = rng_for(&[c.seed, seed, 0x6d65_7368]);

        let mut vertices = Vec::with_capacity(stations * points + 2);
        for k in 0..stations {
            let s = k as f64 / (stations - 1) as f64;
            let profile = if s < nose_len {
                let t = s / nose_len;
                front_scale + (1.0 - front_scale) * (1.0 - (1.0 - t).powf(exponent))
            } else {
                1.0
            };
            let noise = 1.0 + c.jitter * (2.0 * rng.random::<f64>() - 1.0);
            let scale = profile * noise;
            for j in 0..points {
                let theta = 2.0 * PI * j as f64 / points as f64;
                let (ct, st) = (theta.cos(), theta.sin());
                // superellipse with exponent 4: |y|^4 + |z|^4 = 1
                let y = ct.signum() * ct.abs().sqrt() * half_w * scale;
                let z = st.signum() * st.abs().sqrt() * half_h * scale;
                vertices.push(Point::new(s - 0.5, y, z));
            }
        }
        let front = vertices.len();
        vertices.push(Point::new(-0.5, 0.0, 0.0));
        let rear = vertices.len();
        vertices.push(Point::new(0.5, 0.0, 0.0));

        let at = |k: usize, j: usize| k * points + j % points;
        let mut faces = Vec::with_capacity(2 * stations * points);
        for k in 0..stations - 1 {
            for j in 0..points {
                faces.push([at(k, j), at(k + 1, j), at(k + 1, j + 1)]);
                faces.push([at(k, j), at(k + 1, j + 1), at(k, j + 1)]);
            }
        }
        for j in 0..points {
            faces.push([front, at(0, j), at(0, j + 1)]);
            faces.push([rear, at(stations - 1, j + 1), at(stations - 1, j)]);
        }
        let mesh = TriangleMesh::new(vertices, faces).expect("parametric body is non-degenerate");
        if mesh.signed_volume() < 0.0 {
            mesh.flipped()
        } else {
            mesh
        }
    }

    fn label_from(&self, text: &str) -> String {
        const MARK: &str = " in the shape of";
        text.find(MARK)
            .and_then(|end| {
                let head = &text[..end];
                let start = head.rfind("A ")?;
                let label = head[start + 2..].trim();
                (!label.is_empty() && !label.contains('<')).then(|| label.to_string())
            })
            .unwrap_or_else(|| self.config.label.clone())
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Quoted prompts on numbered lines, in the order listed.
fn exemplar_prompts(text: &str) -> Vec<&str> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim_start();
            if !line.starts_with(|c: char| c.is_ascii_digit()) {
                return None;
            }
            let (open, close) = (line.find('"')?, line.rfind('"')?);
            (close > open).then(|| &line[open + 1..close])
        })
        .collect()
}

fn hash_bucket(token: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dim as u64) as usize
}

fn normalized(mut v: Vec<f64>) -> Embedding {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Embedding(v)
}

/// Mean of `image` over the block grid with `rows` × `cols` cells.
fn box_pool(image: &GreyImage, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1) = (r * image.height / rows, (r + 1) * image.height / rows);
        for c in 0..cols {
            let (x0, x1) = (c * image.width / cols, (c + 1) * image.width / cols);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += image.data[y * image.width + x] as f64;
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(if n > 0.0 { sum / n } else { 0.0 });
        }
    }
    out
}

impl ChatBackend for MockWorld {
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError> {
        let text: String = messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n");
        let mut rng = rng_for(&[self.config.seed, text_seed(&text), temperature.to_bits()]);
        let label = self.label_from(&text);
        let c = &self.config;

        let best = exemplar_prompts(&text).into_iter().find_map(|p| self.descriptors(p));
        let descriptors = match best {
            Some(mut d) => {
                let step = c.hill_climb_step.max(1) as isize;
                let (slot, len) = match rng.random_range(0..3) {
                    0 => (&mut d.noun, c.nouns.len()),
                    1 => (&mut d.profile, c.profiles.len()),
                    _ => (&mut d.nose, c.noses.len()),
                };
                let dir = if rng.random::<bool>() { step } else { -step };
                let mut next = *slot as isize + dir;
                if next < 0 || next >= len as isize {
                    next = *slot as isize - dir;
                }
                *slot = next.clamp(0, len as isize - 1) as usize;
                d
            }
            None => Descriptors {
                nose: rng.random_range(0..c.noses.len()),
                profile: rng.random_range(0..c.profiles.len()),
                noun: rng.random_range(0..c.nouns.len()),
            },
        };
        Ok(self.render_prompt(&label, descriptors))
    }
}

impl TextTo3d for MockWorld {
    fn generate(&self, prompt: &str, seed: u64) -> Result<TriangleMesh, BackendError> {
        Ok(self.car_mesh(&self.shape_params(prompt), seed))
    }
}

impl Embedder for MockWorld {
    /// Unigram and bigram token-hash histogram, L2-normalized.
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let dim = self.config.embedding_dim.max(1);
        let tokens = tokenize(text);
        let mut v = vec![0.0; dim];
        for t in &tokens {
            v[hash_bucket(t, dim)] += 1.0;
        }
        for pair in tokens.windows(2) {
            v[hash_bucket(&format!("{} {}", pair[0], pair[1]), dim)] += 1.0;
        }
        Ok(normalized(v))
    }

    /// Block-mean pool onto a square grid, flattened and L2-normalized. All-black images give
    /// the zero vector.
    fn embed_image(&self, image: &GreyImage) -> Result<Embedding, BackendError> {
        let side = (self.config.embedding_dim as f64).sqrt().round() as usize;
        if side * side != self.config.embedding_dim || side == 0 {
            return Err(BackendError::Protocol(format!(
                "mock embedding dimension {} is not a perfect square",
                self.config.embedding_dim
            )));
        }
        Ok(normalized(box_pool(image, side, side)))
    }
}

impl FeatureExtractor for MockWorld {
    /// Box-filter pyramid: level `j` is the image averaged over `2^(j-1)` pixel blocks.
    fn feature_maps(&self, image: &GreyImage, levels: &[usize]) -> Result<Vec<FeatureMap>, BackendError> {
        levels
            .iter()
            .map(|&level| {
                if level == 0 {
                    return Err(BackendError::Protocol("feature levels start at 1".into()));
                }
                let factor = 1usize << (level - 1).min(30);
                let (h, w) = ((image.height / factor).max(1), (image.width / factor).max(1));
                let data = box_pool(image, h, w).into_iter().map(|v| v as f32).collect();
                Ok(FeatureMap { level, height: h, width: w, channels: 1, data })
            })
            .collect()
    }
}

/// Random descriptor choice helper for callers building prompts from the mock tables.
pub fn random_prompt(config: &MockWorldConfig, rng: &mut impl Rng) -> String {
    let pick = |t: &[Keyword], rng: &mut dyn rand::RngCore| t.choose(rng).map(|k| k.word.clone()).unwrap_or_default();
    let nose = pick(&config.noses, rng);
    let profile = pick(&config.profiles, rng);
    let noun = pick(&config.nouns, rng);
    format!("A {} in the shape of a {nose} {profile} {noun}.", config.label)
}
