//! Parametric makeup corpus for desk-scale experiments.
//!
//! Each sample combines Gaussian-falloff eyeshadow blobs (placed around the
//! left eye and mirrored with a small jitter to the right), a soft-edged lip
//! ellipse, and optional blush discs. Alpha is exactly zero outside those
//! regions and the bases there are a fixed neutral gray, so all corpus
//! variance lives inside the makeup regions.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uvtex::{save_texture, BitDepth, FaceMask, MakeupLayer, UvMap};

pub const MIN_SIZE: usize = 32;
const NEUTRAL_BASES: [f64; 3] = [0.5, 0.5, 0.5];
/// Gaussian falloff is cut at this many standard deviations.
const BLOB_CUTOFF: f64 = 2.5;

const LEFT_EYE: (f64, f64) = (0.32, 0.40);
const CHEEK: (f64, f64) = (0.27, 0.60);
const FACE_CENTER: (f64, f64) = (0.5, 0.52);
const FACE_AXES: (f64, f64) = (0.42, 0.47);

type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    /// Square texture size in pixels.
    pub size: usize,
    pub eyeshadow_blobs: (usize, usize),
    /// Blob standard deviation, as a fraction of the texture size.
    pub blob_spread: (f64, f64),
    pub eyeshadow_opacity: (f64, f64),
    pub lip_center_y: (f64, f64),
    pub lip_half_width: (f64, f64),
    pub lip_half_height: (f64, f64),
    pub lip_opacity: (f64, f64),
    pub blush_probability: f64,
    pub blush_opacity: (f64, f64),
    pub eyeshadow_palette: Vec<Rgb>,
    pub lip_palette: Vec<Rgb>,
    pub blush_palette: Vec<Rgb>,
    pub skin_palette: Vec<Rgb>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 10,
            size: 64,
            eyeshadow_blobs: (1, 3),
            blob_spread: (0.03, 0.055),
            eyeshadow_opacity: (0.35, 0.85),
            lip_center_y: (0.74, 0.78),
            lip_half_width: (0.09, 0.13),
            lip_half_height: (0.035, 0.05),
            lip_opacity: (0.5, 0.9),
            blush_probability: 0.5,
            blush_opacity: (0.15, 0.35),
            eyeshadow_palette: vec![
                [0.55, 0.25, 0.45],
                [0.75, 0.55, 0.35],
                [0.35, 0.45, 0.65],
                [0.20, 0.15, 0.15],
                [0.85, 0.50, 0.60],
                [0.40, 0.55, 0.30],
            ],
            lip_palette: vec![
                [0.75, 0.10, 0.15],
                [0.85, 0.40, 0.45],
                [0.55, 0.20, 0.25],
                [0.80, 0.45, 0.35],
                [0.45, 0.10, 0.20],
            ],
            blush_palette: vec![[0.90, 0.50, 0.50], [0.85, 0.45, 0.40]],
            skin_palette: vec![
                [0.93, 0.78, 0.68],
                [0.87, 0.68, 0.55],
                [0.76, 0.57, 0.44],
                [0.60, 0.42, 0.30],
                [0.45, 0.30, 0.22],
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("synthetic count must be >= 1".into()));
        }
        if self.size < MIN_SIZE {
            return Err(Error::InvalidConfig(format!(
                "synthetic size must be >= {MIN_SIZE}, got {}",
                self.size
            )));
        }
        let palettes = [
            &self.eyeshadow_palette,
            &self.lip_palette,
            &self.blush_palette,
            &self.skin_palette,
        ];
        if palettes.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidConfig("palettes must not be empty".into()));
        }
        if self.eyeshadow_blobs.0 > self.eyeshadow_blobs.1 {
            return Err(Error::InvalidConfig("eyeshadow_blobs range is reversed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub layers: Vec<MakeupLayer>,
    pub bares: Vec<UvMap>,
    pub face: FaceMask,
}

/// Files written by [`write_synthetic`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntheticManifest {
    pub bases: Vec<PathBuf>,
    pub alphas: Vec<PathBuf>,
    pub bares: Vec<PathBuf>,
    pub face_mask: PathBuf,
}

/// A soft-edged region contributing opacity and color.
struct Region {
    color: Rgb,
    shape: Shape,
    opacity: f64,
}

enum Shape {
    Blob { cx: f64, cy: f64, sigma: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Region {
    /// Opacity at normalized coordinates; zero outside the region.
    fn alpha(&self, u: f64, v: f64) -> f64 {
        match self.shape {
            Shape::Blob { cx, cy, sigma } => {
                let d2 = ((u - cx).powi(2) + (v - cy).powi(2)) / (sigma * sigma);
                let floor = (-BLOB_CUTOFF * BLOB_CUTOFF / 2.0).exp();
                let g = (-d2 / 2.0).exp();
                self.opacity * ((g - floor) / (1.0 - floor)).max(0.0)
            }
            Shape::Ellipse { cx, cy, rx, ry } => {
                let rho = ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
                let t = ((1.0 - rho) / 0.35).clamp(0.0, 1.0);
                self.opacity * t * t * (3.0 - 2.0 * t)
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn pick_color(rng: &mut ChaCha8Rng, palette: &[Rgb], jitter: f64) -> Rgb {
    let base = palette[rng.random_range(0..palette.len())];
    base.map(|c| (c + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0))
}

fn sample_regions(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Region> {
    let mut regions = Vec::new();

    let shadow = pick_color(rng, &spec.eyeshadow_palette, 0.05);
    let blobs = rng.random_range(spec.eyeshadow_blobs.0..=spec.eyeshadow_blobs.1);
    for _ in 0..blobs {
        let dx = rng.random_range(-0.06..0.06);
        let dy = rng.random_range(-0.07..-0.01);
        let sigma = uniform(rng, spec.blob_spread);
        let opacity = uniform(rng, spec.eyeshadow_opacity);
        let jitter = (rng.random_range(-0.005..0.005), rng.random_range(-0.005..0.005));
        regions.push(Region {
            color: shadow,
            shape: Shape::Blob {
                cx: LEFT_EYE.0 + dx,
                cy: LEFT_EYE.1 + dy,
                sigma,
            },
            opacity,
        });
        regions.push(Region {
            color: shadow,
            shape: Shape::Blob {
                cx: 1.0 - LEFT_EYE.0 - dx + jitter.0,
                cy: LEFT_EYE.1 + dy + jitter.1,
                sigma,
            },
            opacity,
        });
    }

    regions.push(Region {
        color: pick_color(rng, &spec.lip_palette, 0.05),
        shape: Shape::Ellipse {
            cx: 0.5,
            cy: uniform(rng, spec.lip_center_y),
            rx: uniform(rng, spec.lip_half_width),
            ry: uniform(rng, spec.lip_half_height),
        },
        opacity: uniform(rng, spec.lip_opacity),
    });

    if rng.random_bool(spec.blush_probability.clamp(0.0, 1.0)) {
        let color = pick_color(rng, &spec.blush_palette, 0.03);
        let sigma = rng.random_range(0.05..0.07);
        let opacity = uniform(rng, spec.blush_opacity);
        for cx in [CHEEK.0, 1.0 - CHEEK.0] {
            regions.push(Region {
                color,
                shape: Shape::Blob {
                    cx,
                    cy: CHEEK.1,
                    sigma,
                },
                opacity,
            });
        }
    }
    regions
}

fn render_layer(size: usize, regions: &[Region]) -> Result<MakeupLayer> {
    let mut bases = Vec::with_capacity(size * size * 3);
    let mut alpha = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
            let mut transparent = 1.0;
            let mut weight = 0.0;
            let mut color = [0.0; 3];
            for r in regions {
                let a = r.alpha(u, v);
                if a > 0.0 {
                    transparent *= 1.0 - a;
                    weight += a;
                    for c in 0..3 {
                        color[c] += a * r.color[c];
                    }
                }
            }
            if weight > 0.0 {
                bases.extend(color.iter().map(|c| c / weight));
                alpha.push(1.0 - transparent);
            } else {
                bases.extend_from_slice(&NEUTRAL_BASES);
                alpha.push(0.0);
            }
        }
    }
    MakeupLayer::new(
        UvMap::new(size, size, 3, bases)?,
        UvMap::new(size, size, 1, alpha)?,
    )
}

fn render_bare(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<UvMap> {
    let tone = pick_color(rng, &spec.skin_palette, 0.03);
    // Low-frequency shading from a few broad bumps.
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.15..0.35),
                rng.random_range(-0.06..0.06),
            )
        })
        .collect();
    let size = spec.size;
    UvMap::from_fn(size, size, 3, |x, y, c| {
        let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
        let shade: f64 = bumps
            .iter()
            .map(|&(bx, by, s, amp)| amp * (-((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        (tone[c] * (1.0 + shade)).clamp(0.0, 1.0)
    })
}

/// Elliptical face region shared by every sample.
pub fn face_mask(size: usize) -> FaceMask {
    FaceMask::from_fn(size, size, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
        ((u - FACE_CENTER.0) / FACE_AXES.0).powi(2) + ((v - FACE_CENTER.1) / FACE_AXES.1).powi(2) <= 1.0
    })
}

/// Generates the corpus in memory; identical specs give identical output.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = Vec::with_capacity(spec.count);
    let mut bares = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let regions = sample_regions(spec, &mut rng);
        layers.push(render_layer(spec.size, &regions)?);
        bares.push(render_bare(spec, &mut rng)?);
    }
    Ok(SyntheticCorpus {
        layers,
        bares,
        face: face_mask(spec.size),
    })
}

pub fn bases_file(index: usize) -> String {
    format!("makeup_{index:03}_bases.png")
}

pub fn alpha_file(index: usize) -> String {
    format!("makeup_{index:03}_alpha.png")
}

pub fn bare_file(index: usize) -> String {
    format!("bare_{index:03}.png")
}

pub const FACE_MASK_FILE: &str = "face_mask.png";

/// Generates the corpus and writes it as 16-bit PNGs plus an 8-bit face mask.
pub fn write_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<SyntheticManifest> {
    let out_dir = out_dir.as_ref();
    let corpus = generate(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = SyntheticManifest {
        bases: Vec::new(),
        alphas: Vec::new(),
        bares: Vec::new(),
        face_mask: out_dir.join(FACE_MASK_FILE),
    };
    for (i, (layer, bare)) in corpus.layers.iter().zip(&corpus.bares).enumerate() {
        let paths = (
            out_dir.join(bases_file(i)),
            out_dir.join(alpha_file(i)),
            out_dir.join(bare_file(i)),
        );
        save_texture(layer.bases(), &paths.0, BitDepth::Sixteen)?;
        save_texture(layer.alpha(), &paths.1, BitDepth::Sixteen)?;
        save_texture(bare, &paths.2, BitDepth::Sixteen)?;
        manifest.bases.push(paths.0);
        manifest.alphas.push(paths.1);
        manifest.bares.push(paths.2);
    }
    corpus.face.save(&manifest.face_mask)?;
    Ok(manifest)
}
