//! Makeup transfer and interpolation on top of a fitted prior.

use crate::error::{Error, Result};
use crate::prior::{Coefficients, PcaPrior};
use crate::uvtex::{compose_alpha_blend, MakeupLayer, UvMap};

/// Applies the makeup encoded by `coeffs` to a different bare face.
pub fn transfer(prior: &PcaPrior, coeffs: &Coefficients, bare_new: &UvMap) -> Result<UvMap> {
    compose_alpha_blend(&prior.decode(coeffs)?, bare_new)
}

fn check_len(a: &Coefficients, b: &Coefficients) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            context: "coefficient interpolation",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `(1 - t) * a + t * b`.
pub fn lerp_coeffs(a: &Coefficients, b: &Coefficients, t: f64) -> Result<Coefficients> {
    check_len(a, b)?;
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    Coefficients::new(values)
}

/// Takes coefficient `i` from `b` where `take_from_b[i]` is set, else from `a`.
///
/// Grouping the indices (e.g. low-order components from one style, the rest
/// from another) is left to the caller.
pub fn mix_coeffs(a: &Coefficients, b: &Coefficients, take_from_b: &[bool]) -> Result<Coefficients> {
    check_len(a, b)?;
    if take_from_b.len() != a.len() {
        return Err(Error::LengthMismatch {
            context: "mixing mask",
            expected: a.len(),
            found: take_from_b.len(),
        });
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .zip(take_from_b)
        .map(|((&x, &y), &pick)| if pick { y } else { x })
        .collect();
    Coefficients::new(values)
}

/// Bilinear blend of four corner styles.
///
/// `c00` sits at `(u, v) = (0, 0)`, `c10` at `(1, 0)`, `c01` at `(0, 1)` and
/// `c11` at `(1, 1)`.
pub fn bilerp_coeffs(
    c00: &Coefficients,
    c01: &Coefficients,
    c10: &Coefficients,
    c11: &Coefficients,
    u: f64,
    v: f64,
) -> Result<Coefficients> {
    check_len(c00, c01)?;
    check_len(c00, c10)?;
    check_len(c00, c11)?;
    let w00 = (1.0 - u) * (1.0 - v);
    let w10 = u * (1.0 - v);
    let w01 = (1.0 - u) * v;
    let w11 = u * v;
    let values = (0..c00.len())
        .map(|i| {
            w00 * c00.values()[i]
                + w10 * c10.values()[i]
                + w01 * c01.values()[i]
                + w11 * c11.values()[i]
        })
        .collect();
    Coefficients::new(values)
}

/// Scales the alpha matte by `t`, leaving the bases untouched.
pub fn fade_alpha(layer: &MakeupLayer, t: f64) -> Result<MakeupLayer> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("fade factor {t} outside [0, 1]")));
    }
    let alpha = layer.alpha();
    let values = alpha.values().iter().map(|a| a * t).collect();
    MakeupLayer::new(
        layer.bases().clone(),
        UvMap::new(alpha.width(), alpha.height(), 1, values)?,
    )
}

/// Pixelwise blend of two makeup layers, bases and alpha alike.
pub fn lerp_layers(a: &MakeupLayer, b: &MakeupLayer, t: f64) -> Result<MakeupLayer> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            context: "layer interpolation",
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let mix = |x: &UvMap, y: &UvMap| {
        let values = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(&p, &q)| {
                if p == q {
                    p
                } else {
                    ((1.0 - t) * p + t * q).clamp(0.0, 1.0)
                }
            })
            .collect();
        UvMap::new(x.width(), x.height(), x.channels(), values)
    };
    MakeupLayer::new(mix(a.bases(), b.bases())?, mix(a.alpha(), b.alpha())?)
}
