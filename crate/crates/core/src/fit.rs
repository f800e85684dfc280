//! Coefficient estimation against a makeup-applied albedo.
//!
//! The objective is a weighted sum of four terms, all averaged over the face
//! mask so the weights do not depend on resolution:
//!
//! * `pho`: L1 between the alpha-blended composite and the target,
//! * `reg`: squared L2 norm of the coefficients,
//! * `sym`: L1 between the decoded layer and its mirror image (all 4 channels),
//! * `alpha`: L1 norm of the decoded alpha matte.
//!
//! Gradients are exact subgradients: `sign(0) = 0`, and entries of the decoded
//! layer that the `[0, 1]` clamp is holding pass no gradient.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::prior::{Coefficients, PcaPrior};
use crate::uvtex::{
    compose_alpha_blend, horizontal_mirror_indices, unflatten, FaceMask, UvMap, LAYER_CHANNELS,
};

/// Alpha gain used by [`warm_start`] when turning a color difference into opacity.
pub const WARM_START_GAIN: f64 = 2.0;
/// Pseudo-alpha above which [`warm_start`] takes the target color as the bases.
pub const WARM_START_ALPHA_CUTOFF: f64 = 0.05;

const CONVERGENCE_WINDOW: usize = 5;
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub w_pho: f64,
    pub w_reg: f64,
    pub w_sym: f64,
    pub w_alpha: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub moment1: f64,
    pub moment2: f64,
    pub epsilon: f64,
    /// Symmetry partner of each pixel, row-major. `None` means the horizontal mirror.
    pub mirror_map: Option<Vec<usize>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            w_pho: 100.0,
            w_reg: 1e-4,
            w_sym: 8.0,
            w_alpha: 1.0,
            step_size: 1e-2,
            iterations: 40,
            moment1: 0.9,
            moment2: 0.999,
            epsilon: 1e-8,
            mirror_map: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_pho", self.w_pho),
            ("w_reg", self.w_reg),
            ("w_sym", self.w_sym),
            ("w_alpha", self.w_alpha),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        for (name, b) in [("moment1", self.moment1), ("moment2", self.moment2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Same config with every loss weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Self {
        Self {
            w_pho: self.w_pho * factor,
            w_reg: self.w_reg * factor,
            w_sym: self.w_sym * factor,
            w_alpha: self.w_alpha * factor,
            ..self.clone()
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: FitConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Weighted loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pho: f64,
    pub reg: f64,
    pub sym: f64,
    pub alpha: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Lowest-loss iterate seen, including the initial point.
    pub coefficients: Coefficients,
    /// One entry per evaluated iterate; `history[0]` is the initial point.
    pub history: Vec<LossBreakdown>,
    pub best_iteration: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn best_loss(&self) -> LossBreakdown {
        self.history[self.best_iteration]
    }

    /// CSV with header `iteration,pho,reg,sym,alpha,total`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,pho,reg,sym,alpha,total\n");
        for (i, h) in self.history.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                h.pho, h.reg, h.sym, h.alpha, h.total
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub original: Coefficients,
    pub refit: Coefficients,
    /// Mean squared coefficient difference.
    pub coeff_distance: f64,
    /// Face-region RMSE between the refit composite and the transferred image.
    pub composite_rmse: f64,
}

/// Validated fitting inputs with the mask and mirror map resolved to indices.
struct Problem<'a> {
    prior: &'a PcaPrior,
    bare: &'a [f64],
    target: &'a [f64],
    pixels: Vec<usize>,
    mirror: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(
        prior: &'a PcaPrior,
        bare: &'a UvMap,
        target: &'a UvMap,
        face: &FaceMask,
        cfg: &FitConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let dims = prior.dims();
        for (map, context) in [(bare, "bare albedo"), (target, "target albedo")] {
            map.expect_channels(3, context)?;
            map.expect_dims(dims, context)?;
        }
        if face.dims() != dims {
            return Err(Error::DimensionMismatch {
                context: "face mask",
                expected: dims,
                found: face.dims(),
            });
        }
        let pixels: Vec<usize> = face.indices().collect();
        if pixels.is_empty() {
            return Err(Error::EmptyMask);
        }
        let count = dims.0 * dims.1;
        let mirror = match &cfg.mirror_map {
            Some(map) => {
                if map.len() != count {
                    return Err(Error::LengthMismatch {
                        context: "mirror map",
                        expected: count,
                        found: map.len(),
                    });
                }
                if let Some(bad) = map.iter().find(|&&q| q >= count) {
                    return Err(Error::InvalidConfig(format!(
                        "mirror map entry {bad} out of range for {count} pixels"
                    )));
                }
                map.clone()
            }
            None => horizontal_mirror_indices(dims.0, dims.1),
        };
        Ok(Self {
            prior,
            bare: bare.values(),
            target: target.values(),
            pixels,
            mirror,
        })
    }

    fn evaluate(
        &self,
        coeffs: &Coefficients,
        cfg: &FitConfig,
        with_gradient: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let raw = self.prior.decode_raw(coeffs)?;
        let layer: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let n = self.pixels.len() as f64;
        let mut grad = with_gradient.then(|| vec![0.0f64; raw.len()]);

        let pho_scale = cfg.w_pho / (3.0 * n);
        let sym_scale = cfg.w_sym / (LAYER_CHANNELS as f64 * n);
        let alpha_scale = cfg.w_alpha / n;
        let (mut pho, mut sym, mut alpha) = (0.0, 0.0, 0.0);

        for &p in &self.pixels {
            let base = p * LAYER_CHANNELS;
            let a = layer[base + 3];
            for ch in 0..3 {
                let b = layer[base + ch];
                let skin = self.bare[p * 3 + ch];
                let blended = b * a + (1.0 - a) * skin;
                let composite = blended.clamp(0.0, 1.0);
                let r = composite - self.target[p * 3 + ch];
                pho += r.abs();
                if let Some(g) = grad.as_mut() {
                    if composite == blended {
                        let s = pho_scale * sign(r);
                        g[base + ch] += s * a;
                        g[base + 3] += s * (b - skin);
                    }
                }
            }

            let q = self.mirror[p] * LAYER_CHANNELS;
            for ch in 0..LAYER_CHANNELS {
                let r = layer[base + ch] - layer[q + ch];
                sym += r.abs();
                if let Some(g) = grad.as_mut() {
                    let s = sym_scale * sign(r);
                    g[base + ch] += s;
                    g[q + ch] -= s;
                }
            }

            alpha += a.abs();
            if let Some(g) = grad.as_mut() {
                g[base + 3] += alpha_scale * sign(a);
            }
        }

        let reg: f64 = coeffs.values().iter().map(|c| c * c).sum();
        let pho = pho_scale * pho;
        let sym = sym_scale * sym;
        let alpha = alpha_scale * alpha;
        let reg = cfg.w_reg * reg;
        let loss = LossBreakdown {
            pho,
            reg,
            sym,
            alpha,
            total: pho + reg + sym + alpha,
        };

        let grad = grad.map(|mut g| {
            for (gv, rv) in g.iter_mut().zip(&raw) {
                if !(0.0..=1.0).contains(rv) {
                    *gv = 0.0;
                }
            }
            let mut out = self.prior.pullback(&g);
            for (o, c) in out.iter_mut().zip(coeffs.values()) {
                *o += 2.0 * cfg.w_reg * c;
            }
            out
        });
        Ok((loss, grad))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn total_loss(
    prior: &PcaPrior,
    coeffs: &Coefficients,
    bare: &UvMap,
    target: &UvMap,
    face: &FaceMask,
    cfg: &FitConfig,
) -> Result<LossBreakdown> {
    let problem = Problem::new(prior, bare, target, face, cfg)?;
    Ok(problem.evaluate(coeffs, cfg, false)?.0)
}

/// Subgradient of [`total_loss`] with respect to the coefficients.
pub fn loss_gradient(
    prior: &PcaPrior,
    coeffs: &Coefficients,
    bare: &UvMap,
    target: &UvMap,
    face: &FaceMask,
    cfg: &FitConfig,
) -> Result<Vec<f64>> {
    let problem = Problem::new(prior, bare, target, face, cfg)?;
    let (_, grad) = problem.evaluate(coeffs, cfg, true)?;
    Ok(grad.expect("gradient requested"))
}

/// Bias-corrected Adam on the total loss, returning the best iterate.
pub fn fit_coeffs(
    prior: &PcaPrior,
    bare: &UvMap,
    target: &UvMap,
    face: &FaceMask,
    cfg: &FitConfig,
    init: &Coefficients,
) -> Result<FitResult> {
    let problem = Problem::new(prior, bare, target, face, cfg)?;
    let k = prior.k();
    if init.len() != k {
        return Err(Error::LengthMismatch {
            context: "initial coefficients",
            expected: k,
            found: init.len(),
        });
    }

    let mut current = init.values().to_vec();
    let mut m = vec![0.0f64; k];
    let mut v = vec![0.0f64; k];
    let (first, mut grad) = problem.evaluate(init, cfg, cfg.iterations > 0)?;
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(first);
    let mut best = (0usize, first.total, current.clone());

    for t in 1..=cfg.iterations {
        let g = grad.take().expect("gradient available");
        let bias1 = 1.0 - cfg.moment1.powi(t as i32);
        let bias2 = 1.0 - cfg.moment2.powi(t as i32);
        for i in 0..k {
            m[i] = cfg.moment1 * m[i] + (1.0 - cfg.moment1) * g[i];
            v[i] = cfg.moment2 * v[i] + (1.0 - cfg.moment2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            current[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        let coeffs = Coefficients::new(current.clone())?;
        let (loss, g) = problem.evaluate(&coeffs, cfg, t < cfg.iterations)?;
        grad = g;
        history.push(loss);
        if loss.total < best.1 {
            best = (t, loss.total, current.clone());
        }
    }

    let converged = has_converged(&history);
    Ok(FitResult {
        coefficients: Coefficients::from_vec_unchecked(best.2),
        history,
        best_iteration: best.0,
        converged,
    })
}

/// Best-so-far total loss improved by less than the tolerance over the last window.
fn has_converged(history: &[LossBreakdown]) -> bool {
    if history.len() <= CONVERGENCE_WINDOW {
        return false;
    }
    let best_upto = |end: usize| {
        history[..end]
            .iter()
            .map(|h| h.total)
            .fold(f64::INFINITY, f64::min)
    };
    let before = best_upto(history.len() - CONVERGENCE_WINDOW);
    let now = best_upto(history.len());
    if before <= 0.0 {
        return true;
    }
    (before - now) / before < CONVERGENCE_TOL
}

/// Initial coefficients for a makeup-applied target over a known bare face.
///
/// Starts from [`warm_start_heuristic`] and refines it with damped
/// Gauss-Newton steps on the squared composite error over the whole texture
/// (see [`refine_composite`]).
pub fn warm_start(prior: &PcaPrior, bare: &UvMap, target: &UvMap) -> Result<Coefficients> {
    let init = warm_start_heuristic(prior, bare, target)?;
    refine_composite(prior, bare, target, &init, WARM_START_REFINE_STEPS)
}

/// Gauss-Newton steps taken by [`warm_start`].
pub const WARM_START_REFINE_STEPS: usize = 20;

/// Pseudo-layer projection: opacity is guessed from the largest per-channel
/// color change (times [`WARM_START_GAIN`]); where that guess exceeds
/// [`WARM_START_ALPHA_CUTOFF`] the target color stands in for the bases,
/// elsewhere the prior's mean bases. The pseudo-layer is projected onto the prior.
pub fn warm_start_heuristic(prior: &PcaPrior, bare: &UvMap, target: &UvMap) -> Result<Coefficients> {
    let dims = prior.dims();
    for (map, context) in [(bare, "bare albedo"), (target, "target albedo")] {
        map.expect_channels(3, context)?;
        map.expect_dims(dims, context)?;
    }
    let mean = prior.mean();
    let mut pseudo = Vec::with_capacity(prior.dim());
    for p in 0..bare.pixel_count() {
        let t = target.pixel(p);
        let s = bare.pixel(p);
        let diff = (0..3).map(|c| (t[c] - s[c]).abs()).fold(0.0, f64::max);
        let a = (diff * WARM_START_GAIN).clamp(0.0, 1.0);
        for c in 0..3 {
            let b = if a > WARM_START_ALPHA_CUTOFF {
                t[c]
            } else {
                f64::from(mean[p * LAYER_CHANNELS + c]).clamp(0.0, 1.0)
            };
            pseudo.push(b);
        }
        pseudo.push(a);
    }
    let layer = unflatten(&pseudo, dims.0, dims.1)?;
    prior.project(&layer)
}

/// Squared composite error `sum (A_m - target)^2` over all pixels, its
/// Gauss-Newton normal matrix `J^T J` and right-hand side `J^T r`.
fn composite_normal_equations(
    prior: &PcaPrior,
    bare: &[f64],
    target: &[f64],
    coeffs: &Coefficients,
    with_system: bool,
) -> Result<(f64, Option<(DMatrix<f64>, DVector<f64>)>)> {
    let k = prior.k();
    let d = prior.dim();
    let raw = prior.decode_raw(coeffs)?;
    let basis = prior.basis();
    let mut cost = 0.0;
    let mut jtj = DMatrix::<f64>::zeros(k, k);
    let mut jtr = DVector::<f64>::zeros(k);
    let mut row = vec![0.0f64; k];
    for p in 0..raw.len() / LAYER_CHANNELS {
        let base = p * LAYER_CHANNELS;
        let a_raw = raw[base + 3];
        let a = a_raw.clamp(0.0, 1.0);
        let a_free = a == a_raw;
        for ch in 0..3 {
            let b_raw = raw[base + ch];
            let b = b_raw.clamp(0.0, 1.0);
            let skin = bare[p * 3 + ch];
            let r = b * a + (1.0 - a) * skin - target[p * 3 + ch];
            cost += r * r;
            if !with_system {
                continue;
            }
            let db = if b == b_raw { a } else { 0.0 };
            let da = if a_free { b - skin } else { 0.0 };
            if db == 0.0 && da == 0.0 {
                continue;
            }
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = db * f64::from(basis[i * d + base + ch])
                    + da * f64::from(basis[i * d + base + 3]);
            }
            for i in 0..k {
                if row[i] == 0.0 {
                    continue;
                }
                jtr[i] += row[i] * r;
                for j in i..k {
                    jtj[(i, j)] += row[i] * row[j];
                }
            }
        }
    }
    if !with_system {
        return Ok((cost, None));
    }
    for i in 0..k {
        for j in 0..i {
            jtj[(i, j)] = jtj[(j, i)];
        }
    }
    Ok((cost, Some((jtj, jtr))))
}

/// Levenberg-Marquardt refinement of `init` on the squared composite error.
///
/// Steps that do not lower the error are rejected and the damping grows;
/// accepted steps shrink it. Returns the best point reached.
pub fn refine_composite(
    prior: &PcaPrior,
    bare: &UvMap,
    target: &UvMap,
    init: &Coefficients,
    steps: usize,
) -> Result<Coefficients> {
    let dims = prior.dims();
    for (map, context) in [(bare, "bare albedo"), (target, "target albedo")] {
        map.expect_channels(3, context)?;
        map.expect_dims(dims, context)?;
    }
    if init.len() != prior.k() {
        return Err(Error::LengthMismatch {
            context: "initial coefficients",
            expected: prior.k(),
            found: init.len(),
        });
    }
    let k = prior.k();
    let mut current = init.clone();
    let mut damping = 1e-3;
    let (mut cost, mut system) =
        composite_normal_equations(prior, bare.values(), target.values(), &current, true)?;
    for _ in 0..steps {
        let Some((jtj, jtr)) = system.as_ref() else {
            break;
        };
        let mut lhs = jtj.clone();
        for i in 0..k {
            lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12);
        }
        let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-jtr))) else {
            damping *= 10.0;
            continue;
        };
        let trial_values: Vec<f64> = current
            .values()
            .iter()
            .zip(delta.iter())
            .map(|(c, d)| c + d)
            .collect();
        let trial = Coefficients::new(trial_values)?;
        let (trial_cost, _) =
            composite_normal_equations(prior, bare.values(), target.values(), &trial, false)?;
        if trial_cost < cost {
            let shrink = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
            current = trial;
            damping = (damping * 0.3).max(1e-9);
            let next = composite_normal_equations(prior, bare.values(), target.values(), &current, true)?;
            cost = next.0;
            system = next.1;
            if shrink < 1e-12 {
                break;
            }
        } else {
            damping *= 10.0;
            if damping > 1e8 {
                break;
            }
        }
    }
    Ok(current)
}

/// Transfers `coeffs` onto another bare face, re-estimates them from the
/// transferred albedo, and reports how far the estimate drifted.
pub fn cycle_check(
    prior: &PcaPrior,
    coeffs: &Coefficients,
    bare_other: &UvMap,
    face: &FaceMask,
    cfg: &FitConfig,
) -> Result<CycleReport> {
    cycle_check_from(prior, coeffs, bare_other, face, cfg, None)
}

/// [`cycle_check`] with an explicit refit starting point instead of [`warm_start`].
pub fn cycle_check_from(
    prior: &PcaPrior,
    coeffs: &Coefficients,
    bare_other: &UvMap,
    face: &FaceMask,
    cfg: &FitConfig,
    init: Option<&Coefficients>,
) -> Result<CycleReport> {
    let transferred = compose_alpha_blend(&prior.decode(coeffs)?, bare_other)?;
    let init = match init {
        Some(c) => c.clone(),
        None => warm_start(prior, bare_other, &transferred)?,
    };
    let fit = fit_coeffs(prior, bare_other, &transferred, face, cfg, &init)?;
    let refit = fit.coefficients;
    let recomposed = compose_alpha_blend(&prior.decode(&refit)?, bare_other)?;
    let composite_rmse = rmse(&recomposed, &transferred, face)?;
    let coeff_distance = refit
        .values()
        .iter()
        .zip(coeffs.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / coeffs.len().max(1) as f64;
    Ok(CycleReport {
        original: coeffs.clone(),
        refit,
        coeff_distance,
        composite_rmse,
    })
}
