//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use makeup_prior::prior::build_pca;
use makeup_prior::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use makeup_prior::uvtex::{compose_alpha_blend, flatten, FaceMask, MakeupLayer, UvMap};
use makeup_prior::{Coefficients, PcaPrior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synthetic(seed: u64, count: usize, size: usize) -> SyntheticCorpus {
    generate(&SyntheticSpec {
        seed,
        count,
        size,
        ..SyntheticSpec::default()
    })
    .expect("synthetic corpus")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Principal directions of a sample set, computed without any linear algebra crate.
pub struct OracleSvd {
    pub mean: Vec<f64>,
    /// Singular values of the centered data matrix, descending.
    pub singular: Vec<f64>,
    /// Unit left singular vectors in sample space, one per singular value.
    pub directions: Vec<Vec<f64>>,
}

impl OracleSvd {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular.first().copied().unwrap_or(0.0);
        self.singular.iter().filter(|&&s| s > rel_tol * top).count()
    }

    pub fn stddevs(&self, rank: usize) -> Vec<f64> {
        let n = self.singular.len() as f64;
        self.singular[..rank].iter().map(|s| s / (n - 1.0).sqrt()).collect()
    }
}

/// One-sided Jacobi SVD of the centered samples (columns of length D).
pub fn jacobi_svd(samples: &[Vec<f64>]) -> OracleSvd {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cols: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|c| {
            let s = norm(&c);
            let u = if s > 0.0 { c.iter().map(|x| x / s).collect() } else { c };
            (s, u)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (singular, directions) = pairs.into_iter().unzip();
    OracleSvd {
        mean,
        singular,
        directions,
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Setting for gradient checks where every loss term is differentiable.
///
/// Layers ramp left to right so no pixel matches its mirror, every value sits
/// well inside (0, 1), and the target is offset from the composite by at least
/// 0.01 per channel so no photometric residual is near zero.
pub struct SmoothProblem {
    pub prior: PcaPrior,
    pub samples: Vec<MakeupLayer>,
    pub bare: UvMap,
    pub target: UvMap,
    pub face: FaceMask,
}

pub const SMOOTH_SIZE: usize = 64;
pub const SMOOTH_SAMPLES: usize = 9;
const SMOOTH_MODES: usize = 8;
const SMOOTH_AMPLITUDE: f64 = 2.5e-4;

fn smooth_mode(m: usize, x: usize, y: usize, ch: usize) -> f64 {
    let s = SMOOTH_SIZE as f64;
    let fx = (m % 4 + 1) as f64;
    let fy = (m / 4 + 1 + ch) as f64;
    let phase = 0.7 * (m * 4 + ch) as f64;
    (std::f64::consts::PI * fx * (x as f64 + 0.5) / s + phase).sin()
        * (std::f64::consts::PI * fy * (y as f64 + 0.5) / s).cos()
}

pub fn smooth_problem(seed: u64) -> SmoothProblem {
    let n = SMOOTH_SIZE;
    let ramp = |x: usize, lo: f64, hi: f64| lo + (hi - lo) * x as f64 / (n - 1) as f64;
    let mut r = rng(seed);
    let samples: Vec<MakeupLayer> = (0..SMOOTH_SAMPLES)
        .map(|_| {
            let c: Vec<f64> = (0..SMOOTH_MODES)
                .map(|_| r.random_range(-SMOOTH_AMPLITUDE..SMOOTH_AMPLITUDE))
                .collect();
            let pert = |x, y, ch| {
                (0..SMOOTH_MODES)
                    .map(|m| c[m] * smooth_mode(m, x, y, ch))
                    .sum::<f64>()
            };
            let bases = UvMap::from_fn(n, n, 3, |x, y, ch| {
                ramp(x, 0.3, 0.7) + 0.05 * ch as f64 + pert(x, y, ch)
            })
            .unwrap();
            let alpha = UvMap::from_fn(n, n, 1, |x, y, _| ramp(x, 0.2, 0.8) + pert(x, y, 3)).unwrap();
            MakeupLayer::new(bases, alpha).unwrap()
        })
        .collect();
    let (prior, report) = build_pca(&samples, SMOOTH_MODES).unwrap();
    assert_eq!(report.k, SMOOTH_MODES);
    let bare = UvMap::from_fn(n, n, 3, |x, y, ch| {
        0.45 + 0.1 * ((x + 2 * y + 5 * ch) as f64 * 0.05).sin()
    })
    .unwrap();
    let composite = compose_alpha_blend(&prior.mean_layer(), &bare).unwrap();
    let target_values = composite
        .values()
        .iter()
        .map(|&v| {
            let offset = r.random_range(0.01..0.05);
            if r.random_bool(0.5) {
                v + offset
            } else {
                v - offset
            }
        })
        .collect();
    let target = UvMap::new(n, n, 3, target_values).unwrap();
    SmoothProblem {
        prior,
        samples,
        bare,
        target,
        face: FaceMask::full(n, n),
    }
}

/// Random convex combination of the projections of `samples`.
pub fn convex_point(prior: &PcaPrior, samples: &[MakeupLayer], r: &mut impl Rng) -> Coefficients {
    let weights: Vec<f64> = (0..samples.len()).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; prior.k()];
    for (w, s) in weights.iter().zip(samples) {
        let c = prior.project(s).unwrap();
        for (a, v) in acc.iter_mut().zip(c.values()) {
            *a += w / total * v;
        }
    }
    Coefficients::new(acc).unwrap()
}

/// True when the unclamped decode of `coeffs` stays within `[-tol, 1 + tol]`.
pub fn clamp_free(prior: &PcaPrior, coeffs: &Coefficients, tol: f64) -> bool {
    prior
        .decode_raw(coeffs)
        .unwrap()
        .iter()
        .all(|&v| v >= -tol && v <= 1.0 + tol)
}

pub fn flat_samples(layers: &[MakeupLayer]) -> Vec<Vec<f64>> {
    layers.iter().map(flatten).collect()
}

/// Direct evaluation of the SSIM formula for two constant images.
pub fn constant_ssim(a: f64, b: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)
}

/// Brute-force binary dilation with a square element of odd side `k`.
pub fn brute_dilate(mask: &FaceMask, k: usize) -> FaceMask {
    let r = (k / 2) as isize;
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    FaceMask::from_fn(mask.width(), mask.height(), |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize)
            })
        })
    })
}

/// `‖a − b‖∞ / max(1, ‖b‖∞)`.
pub fn rel_inf_error(a: &Coefficients, truth: &Coefficients) -> f64 {
    let scale = truth.values().iter().map(|v| v.abs()).fold(1.0, f64::max);
    max_abs_diff(a.values(), truth.values()) / scale
}

/// Largest distance of the unclamped decode from [0, 1].
pub fn clamp_excess(prior: &PcaPrior, coeffs: &Coefficients) -> f64 {
    prior
        .decode_raw(coeffs)
        .unwrap()
        .iter()
        .map(|&v| (-v).max(v - 1.0).max(0.0))
        .fold(0.0, f64::max)
}

/// Smallest masked |composite − target| and smallest masked mirror asymmetry at `coeffs`.
pub fn kink_margins(p: &SmoothProblem, coeffs: &Coefficients) -> (f64, f64) {
    let layer = p.prior.decode(coeffs).unwrap();
    let composite = compose_alpha_blend(&layer, &p.bare).unwrap();
    let residual = composite
        .values()
        .iter()
        .zip(p.target.values())
        .map(|(a, b)| (a - b).abs())
        .fold(f64::INFINITY, f64::min);
    let flat = flatten(&layer);
    let n = SMOOTH_SIZE;
    let mut asym = f64::INFINITY;
    for y in 0..n {
        for x in 0..n {
            for ch in 0..4 {
                let a = flat[(y * n + x) * 4 + ch];
                let b = flat[(y * n + (n - 1 - x)) * 4 + ch];
                asym = asym.min((a - b).abs());
            }
        }
    }
    (residual, asym)
}
