//! Linear PCA makeup prior: `M = mean + B * coeffs`.
//!
//! The basis is stored with orthonormal columns and the per-component corpus
//! standard deviations are kept separately, so projection is a transposed
//! multiply and sampling scales are explicit. Model parameters are held in
//! `f32`, the precision of the on-disk payload, and all arithmetic on them is
//! done in `f64` with a fixed summation order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::uvtex::{flatten, unflatten, MakeupLayer, LAYER_CHANNELS};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.bin";

/// Component count used by the full-resolution model.
pub const DEFAULT_COMPONENTS: usize = 100;

const PAR_CHUNK: usize = 4096;

/// Coefficient vector selecting one makeup style, in raw basis units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientsJson", into = "CoefficientsJson")]
pub struct Coefficients(Vec<f64>);

#[derive(Serialize, Deserialize)]
struct CoefficientsJson {
    k: usize,
    values: Vec<f64>,
}

impl TryFrom<CoefficientsJson> for Coefficients {
    type Error = String;

    fn try_from(json: CoefficientsJson) -> std::result::Result<Self, String> {
        if json.values.len() != json.k {
            return Err(format!(
                "coefficient count {} does not match k = {}",
                json.values.len(),
                json.k
            ));
        }
        Ok(Coefficients(json.values))
    }
}

impl From<Coefficients> for CoefficientsJson {
    fn from(c: Coefficients) -> Self {
        CoefficientsJson {
            k: c.0.len(),
            values: c.0,
        }
    }
}

impl Coefficients {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "coefficient {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let coeffs: Coefficients = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        Coefficients::new(coeffs.0)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("coefficients serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaPrior {
    width: usize,
    height: usize,
    k: usize,
    mean: Vec<f32>,
    /// Column-major `D x k`.
    basis: Vec<f32>,
    stddevs: Vec<f32>,
}

/// What `build_pca` actually produced relative to what was asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildReport {
    pub samples: usize,
    pub requested_k: usize,
    pub rank: usize,
    pub k: usize,
}

impl BuildReport {
    pub fn was_truncated(&self) -> bool {
        self.k < self.requested_k
    }
}

impl PcaPrior {
    pub fn from_parts(
        width: usize,
        height: usize,
        mean: Vec<f32>,
        basis: Vec<f32>,
        stddevs: Vec<f32>,
    ) -> Result<Self> {
        let dim = width * height * LAYER_CHANNELS;
        if mean.len() != dim {
            return Err(Error::LengthMismatch {
                context: "prior mean",
                expected: dim,
                found: mean.len(),
            });
        }
        let k = stddevs.len();
        if basis.len() != dim * k {
            return Err(Error::LengthMismatch {
                context: "prior basis",
                expected: dim * k,
                found: basis.len(),
            });
        }
        let finite = mean.iter().chain(&basis).chain(&stddevs).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("prior contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            k,
            mean,
            basis,
            stddevs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Flattened layer length `D = width * height * 4`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn basis(&self) -> &[f32] {
        &self.basis
    }

    pub fn column(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.basis[i * d..(i + 1) * d]
    }

    pub fn stddevs(&self) -> &[f32] {
        &self.stddevs
    }

    pub fn mean_layer(&self) -> MakeupLayer {
        let v: Vec<f64> = self.mean.iter().map(|&m| f64::from(m).clamp(0.0, 1.0)).collect();
        unflatten(&v, self.width, self.height).expect("mean has layer shape")
    }

    /// Largest `|B^T B - I|` entry.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.k {
            for j in i..self.k {
                let dot: f64 = self
                    .column(i)
                    .iter()
                    .zip(self.column(j))
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    fn check_coeffs(&self, coeffs: &Coefficients) -> Result<()> {
        if coeffs.len() != self.k {
            return Err(Error::LengthMismatch {
                context: "coefficients",
                expected: self.k,
                found: coeffs.len(),
            });
        }
        Ok(())
    }

    /// `mean + B * coeffs` without clamping.
    pub fn decode_raw(&self, coeffs: &Coefficients) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs)?;
        let d = self.dim();
        let mut out: Vec<f64> = self.mean.iter().map(|&m| f64::from(m)).collect();
        out.par_chunks_mut(PAR_CHUNK)
            .enumerate()
            .for_each(|(chunk, slot)| {
                let start = chunk * PAR_CHUNK;
                for (i, &c) in coeffs.values().iter().enumerate() {
                    let col = &self.basis[i * d + start..i * d + start + slot.len()];
                    for (o, &b) in slot.iter_mut().zip(col) {
                        *o += c * f64::from(b);
                    }
                }
            });
        Ok(out)
    }

    /// Decodes a layer, clamping every channel to `[0, 1]`.
    pub fn decode(&self, coeffs: &Coefficients) -> Result<MakeupLayer> {
        let raw = self.decode_raw(coeffs)?;
        let clamped: Vec<f64> = raw.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        unflatten(&clamped, self.width, self.height)
    }

    /// `B^T * v` for a vector in layer space.
    pub fn pullback(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim());
        (0..self.k)
            .into_par_iter()
            .map(|i| {
                self.column(i)
                    .iter()
                    .zip(v)
                    .map(|(&b, &x)| f64::from(b) * x)
                    .sum()
            })
            .collect()
    }

    /// Least-squares coefficients of a flattened layer vector.
    pub fn project_vector(&self, v: &[f64]) -> Result<Coefficients> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch {
                context: "projected vector",
                expected: self.dim(),
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v
            .iter()
            .zip(&self.mean)
            .map(|(&x, &m)| x - f64::from(m))
            .collect();
        Ok(Coefficients(self.pullback(&centered)))
    }

    pub fn project(&self, layer: &MakeupLayer) -> Result<Coefficients> {
        if layer.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                context: "projected layer",
                expected: self.dims(),
                found: layer.dims(),
            });
        }
        self.project_vector(&flatten(layer))
    }

    /// Draws `coeffs_i ~ N(0, (scale * stddev_i)^2)` from a seeded generator.
    pub fn sample(&self, seed: u64, scale: f64) -> Coefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = self
            .stddevs
            .iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale * f64::from(s)
            })
            .collect();
        Coefficients(values)
    }
}

/// Permutation-independent mean: each coordinate is summed in sorted order.
fn sorted_mean(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = rows.len();
    (0..dim)
        .into_par_iter()
        .with_min_len(256)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Builds the prior from a corpus of same-sized layers.
///
/// The centered `N x D` data matrix is decomposed through its `N x N` Gram
/// matrix, which is cheap because the corpus is far smaller than the texture
/// dimension. Left singular directions are lifted back to layer space,
/// re-orthonormalized, and sign-fixed so the largest-magnitude entry of each
/// column is positive. If the corpus rank is below `k`, `k` shrinks to the rank.
pub fn build_pca(corpus: &[MakeupLayer], k: usize) -> Result<(PcaPrior, BuildReport)> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    if k == 0 {
        return Err(Error::InvalidConfig("component count must be at least 1".into()));
    }
    let dims = first.dims();
    for layer in corpus {
        if layer.dims() != dims {
            return Err(Error::DimensionMismatch {
                context: "corpus sample",
                expected: dims,
                found: layer.dims(),
            });
        }
    }
    let n = corpus.len();
    let dim = dims.0 * dims.1 * LAYER_CHANNELS;

    let mut rows: Vec<Vec<f64>> = corpus.par_iter().map(flatten).collect();
    let mean = sorted_mean(&rows, dim);
    rows.par_iter_mut().for_each(|r| {
        for (x, m) in r.iter_mut().zip(&mean) {
            *x -= m;
        }
    });

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let dots: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum())
        .collect();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for (&(a, b), &v) in pairs.iter().zip(&dots) {
        gram[(a, b)] = v;
        gram[(b, a)] = v;
    }
    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let sigmas: Vec<f64> = order
        .iter()
        .map(|&i| eigen.eigenvalues[i].max(0.0).sqrt())
        .collect();

    // Gram eigenvalues carry absolute error ~ eps * lambda_max * n.
    let top = sigmas.first().copied().unwrap_or(0.0);
    let tol = (10.0 * top * (n as f64 * f64::EPSILON).sqrt())
        .max(1e-12 * ((n * dim) as f64).sqrt());
    let rank = sigmas.iter().take_while(|&&s| s > tol).count();
    let k_eff = k.min(rank);

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k_eff);
    for (slot, &src) in order.iter().take(k_eff).enumerate() {
        let v = eigen.eigenvectors.column(src);
        let sigma = sigmas[slot];
        let mut u = vec![0.0f64; dim];
        for (row, &w) in rows.iter().zip(v.iter()) {
            for (o, &x) in u.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        for o in &mut u {
            *o /= sigma;
        }
        // Two passes of modified Gram-Schmidt against the accepted columns.
        for _ in 0..2 {
            for prev in &columns {
                let dot: f64 = prev.iter().zip(&u).map(|(p, x)| p * x).sum();
                for (o, p) in u.iter_mut().zip(prev) {
                    *o -= dot * p;
                }
            }
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for o in &mut u {
            *o /= norm;
        }
        fix_sign(&mut u);
        columns.push(u);
    }

    let denom = if n > 1 { ((n - 1) as f64).sqrt() } else { f64::INFINITY };
    let stddevs: Vec<f32> = sigmas[..k_eff].iter().map(|s| (s / denom) as f32).collect();
    let basis: Vec<f32> = columns.iter().flatten().map(|&v| v as f32).collect();
    let mean: Vec<f32> = mean.iter().map(|&v| v as f32).collect();

    let prior = PcaPrior::from_parts(dims.0, dims.1, mean, basis, stddevs)?;
    let report = BuildReport {
        samples: n,
        requested_k: k,
        rank,
        k: k_eff,
    };
    Ok((prior, report))
}

/// Makes the first largest-magnitude entry positive.
pub fn fix_sign(column: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in column.iter().enumerate() {
        if v.abs() > column[best].abs() {
            best = i;
        }
    }
    if column.get(best).is_some_and(|&v| v < 0.0) {
        for v in column.iter_mut() {
            *v = -*v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub mean_bytes: u64,
    pub basis_bytes: u64,
    pub stddevs_bytes: u64,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

fn section_bytes(dim: usize, k: usize) -> (u64, u64, u64) {
    let f = std::mem::size_of::<f32>() as u64;
    (dim as u64 * f, (dim * k) as u64 * f, k as u64 * f)
}

/// Writes `manifest.json` and `payload.bin` into `dir`, creating it if needed.
pub fn save_model(prior: &PcaPrior, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut payload = Vec::with_capacity(4 * (prior.mean.len() + prior.basis.len() + prior.k));
    for v in prior.mean.iter().chain(&prior.basis).chain(&prior.stddevs) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let (mean_bytes, basis_bytes, stddevs_bytes) = section_bytes(prior.dim(), prior.k);
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        width: prior.width,
        height: prior.height,
        k: prior.k,
        mean_bytes,
        basis_bytes,
        stddevs_bytes,
        payload_bytes: payload.len() as u64,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };

    let payload_path = dir.join(PAYLOAD_FILE);
    fs::write(&payload_path, &payload).map_err(|e| Error::io(&payload_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<PcaPrior> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::CorruptManifest(e.to_string()))?;

    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::CorruptManifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.width == 0 || manifest.height == 0 {
        return Err(Error::CorruptManifest("zero texture size".into()));
    }
    let dim = manifest.width * manifest.height * LAYER_CHANNELS;
    let (mean_bytes, basis_bytes, stddevs_bytes) = section_bytes(dim, manifest.k);
    let declared = (manifest.mean_bytes, manifest.basis_bytes, manifest.stddevs_bytes);
    if declared != (mean_bytes, basis_bytes, stddevs_bytes)
        || manifest.payload_bytes != mean_bytes + basis_bytes + stddevs_bytes
    {
        return Err(Error::CorruptManifest(format!(
            "section sizes {declared:?} / total {} inconsistent with {}x{} k={}",
            manifest.payload_bytes, manifest.width, manifest.height, manifest.k
        )));
    }

    let payload_path = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    if payload.len() as u64 != manifest.payload_bytes {
        // Infer the k the payload would hold, when its length allows one.
        let floats = payload.len() / 4;
        let implied = (payload.len() % 4 == 0 && floats >= dim && (floats - dim) % (dim + 1) == 0)
            .then(|| (floats - dim) / (dim + 1));
        let implied = match implied {
            Some(k) => format!("payload is sized for k={k}"),
            None => "payload matches no whole component count".to_string(),
        };
        return Err(Error::SizeMismatch(format!(
            "manifest k={} expects {} bytes, payload has {} bytes; {implied}",
            manifest.k,
            manifest.payload_bytes,
            payload.len()
        )));
    }
    let actual = hex::encode(Sha256::digest(&payload));
    if !actual.eq_ignore_ascii_case(&manifest.payload_sha256) {
        return Err(Error::ChecksumMismatch {
            expected: manifest.payload_sha256,
            actual,
        });
    }

    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let (mean, rest) = floats.split_at(dim);
    let (basis, stddevs) = rest.split_at(dim * manifest.k);
    PcaPrior::from_parts(
        manifest.width,
        manifest.height,
        mean.to_vec(),
        basis.to_vec(),
        stddevs.to_vec(),
    )
}
