//! UV texture data model, PNG interchange and the compositing formulas.
//!
//! Every texture is a row-major, channel-interleaved grid of reals with a
//! nominal range of `[0, 1]`. A makeup layer pairs a 3-channel bases texture
//! with a 1-channel alpha matte; its flattened vector form is row-major with
//! `(r, g, b, a)` per pixel, and every other module relies on that order.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb, Rgba};

use crate::error::{Error, Result};

/// Channels per pixel of a flattened makeup layer.
pub const LAYER_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct UvMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl UvMap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidTexture(format!(
                "channel count must be 1, 3 or 4, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidTexture(format!(
                "empty texture {width}x{height}"
            )));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                context: "texture values",
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTexture(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a map by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + channel]
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    /// Returns a copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    pub(crate) fn expect_channels(&self, channels: usize, context: &'static str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::LengthMismatch {
                context,
                expected: channels,
                found: self.channels,
            });
        }
        Ok(())
    }

    pub(crate) fn expect_dims(&self, dims: (usize, usize), context: &'static str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                context,
                expected: dims,
                found: self.dims(),
            });
        }
        Ok(())
    }
}

/// Binary per-pixel membership on a texture grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FaceMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                context: "mask bits",
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Nonzero in a single-channel map means inside.
    pub fn from_uvmap(map: &UvMap) -> Result<Self> {
        map.expect_channels(1, "mask channels")?;
        Ok(Self {
            width: map.width(),
            height: map.height(),
            bits: map.values().iter().map(|&v| v > 0.0).collect(),
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Indices of the selected pixels in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn intersect(&self, other: &FaceMask) -> Result<FaceMask> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                context: "mask intersection",
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(FaceMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn is_subset_of(&self, other: &FaceMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_uvmap(&self) -> UvMap {
        UvMap {
            width: self.width,
            height: self.height,
            channels: 1,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_uvmap(&load_texture(path, 1)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_texture(&self.to_uvmap(), path, BitDepth::Eight)
    }
}

/// A makeup bases texture paired with its alpha matte.
#[derive(Debug, Clone, PartialEq)]
pub struct MakeupLayer {
    bases: UvMap,
    alpha: UvMap,
}

impl MakeupLayer {
    pub fn new(bases: UvMap, alpha: UvMap) -> Result<Self> {
        bases.expect_channels(3, "makeup bases channels")?;
        alpha.expect_channels(1, "alpha matte channels")?;
        alpha.expect_dims(bases.dims(), "makeup layer")?;
        if let Some(v) = alpha.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidTexture(format!(
                "alpha value {v} outside [0, 1]"
            )));
        }
        Ok(Self { bases, alpha })
    }

    pub fn bases(&self) -> &UvMap {
        &self.bases
    }

    pub fn alpha(&self) -> &UvMap {
        &self.alpha
    }

    pub fn width(&self) -> usize {
        self.bases.width()
    }

    pub fn height(&self) -> usize {
        self.bases.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bases.dims()
    }

    pub fn into_parts(self) -> (UvMap, UvMap) {
        (self.bases, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads an 8- or 16-bit PNG and maps samples to `[0, 1]`.
pub fn load_texture(path: impl AsRef<Path>, expected_channels: usize) -> Result<UvMap> {
    let path = path.as_ref();
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(decode_err("not a PNG file".into()));
    }
    let image = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let (width, height) = (image.width() as usize, image.height() as usize);

    let (channels, values): (usize, Vec<f64>) = match image {
        DynamicImage::ImageLuma8(b) => (1, scale_u8(b.as_raw())),
        DynamicImage::ImageLumaA8(b) => (2, scale_u8(b.as_raw())),
        DynamicImage::ImageRgb8(b) => (3, scale_u8(b.as_raw())),
        DynamicImage::ImageRgba8(b) => (4, scale_u8(b.as_raw())),
        DynamicImage::ImageLuma16(b) => (1, scale_u16(b.as_raw())),
        DynamicImage::ImageLumaA16(b) => (2, scale_u16(b.as_raw())),
        DynamicImage::ImageRgb16(b) => (3, scale_u16(b.as_raw())),
        DynamicImage::ImageRgba16(b) => (4, scale_u16(b.as_raw())),
        other => {
            return Err(decode_err(format!(
                "unsupported sample layout {:?}",
                other.color()
            )))
        }
    };
    if channels != expected_channels {
        return Err(Error::ChannelMismatch {
            path: path.to_path_buf(),
            expected: expected_channels,
            found: channels,
        });
    }
    UvMap::new(width, height, channels, values)
}

fn scale_u8(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 255.0).collect()
}

fn scale_u16(raw: &[u16]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 65535.0).collect()
}

/// Quantizes one value for storage: clamp to `[0, 1]`, then round.
pub fn quantize(value: f64, depth: BitDepth) -> u16 {
    (value.clamp(0.0, 1.0) * depth.max_value()).round() as u16
}

pub fn save_texture(map: &UvMap, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (map.width() as u32, map.height() as u32);
    let encode_err = |e: image::ImageError| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };

    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = map.values().iter().map(|&v| quantize(v, depth) as u8).collect();
            match map.channels() {
                1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).map(DynamicImage::from),
                3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).map(DynamicImage::from),
                _ => ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, raw).map(DynamicImage::from),
            }
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = map.values().iter().map(|&v| quantize(v, depth)).collect();
            match map.channels() {
                1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).map(DynamicImage::from),
                3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).map(DynamicImage::from),
                _ => ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, raw).map(DynamicImage::from),
            }
        }
    };
    let image = result.ok_or_else(|| Error::InvalidTexture("buffer size mismatch".into()))?;
    image.save_with_format(path, ImageFormat::Png).map_err(encode_err)
}

fn check_bare(bare: &UvMap, dims: (usize, usize), context: &'static str) -> Result<()> {
    bare.expect_channels(3, context)?;
    bare.expect_dims(dims, context)
}

/// Alpha blending of a makeup layer over a bare-skin albedo, before clamping.
pub(crate) fn blend_unclamped(layer: &MakeupLayer, bare: &UvMap) -> Vec<f64> {
    let bases = layer.bases.values();
    let alpha = layer.alpha.values();
    let skin = bare.values();
    let mut out = Vec::with_capacity(skin.len());
    for (p, &a) in alpha.iter().enumerate() {
        for c in 0..3 {
            let i = p * 3 + c;
            out.push(bases[i] * a + (1.0 - a) * skin[i]);
        }
    }
    out
}

/// `A_m = M_b * M_a + (1 - M_a) * A_b`, clamped to `[0, 1]`.
pub fn compose_alpha_blend(layer: &MakeupLayer, bare: &UvMap) -> Result<UvMap> {
    check_bare(bare, layer.dims(), "alpha blend")?;
    let values = blend_unclamped(layer, bare)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    UvMap::new(layer.width(), layer.height(), 3, values)
}

/// Premultiplied display form `M_v = M_b * M_a`.
pub fn compose_visual(layer: &MakeupLayer) -> UvMap {
    let bases = layer.bases.values();
    let alpha = layer.alpha.values();
    let values = bases
        .iter()
        .enumerate()
        .map(|(i, &b)| b * alpha[i / 3])
        .collect();
    UvMap {
        width: layer.width(),
        height: layer.height(),
        channels: 3,
        values,
    }
}

/// Additive residual makeup `A'_m = clamp(A_b + M_delta)`.
pub fn compose_residual(bare: &UvMap, residual: &UvMap) -> Result<UvMap> {
    bare.expect_channels(3, "residual bare channels")?;
    check_bare(residual, bare.dims(), "residual makeup")?;
    let values = bare
        .values()
        .iter()
        .zip(residual.values())
        .map(|(b, r)| (b + r).clamp(0.0, 1.0))
        .collect();
    UvMap::new(bare.width(), bare.height(), 3, values)
}

/// Pixel correspondence of the left-right mirror: index `y*w + x` maps to `y*w + (w-1-x)`.
pub fn horizontal_mirror_indices(width: usize, height: usize) -> Vec<usize> {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| y * width + (width - 1 - x)))
        .collect()
}

pub fn mirror_horizontal(map: &UvMap) -> UvMap {
    let ch = map.channels();
    let mut values = Vec::with_capacity(map.values().len());
    for src in horizontal_mirror_indices(map.width(), map.height()) {
        values.extend_from_slice(&map.values()[src * ch..(src + 1) * ch]);
    }
    UvMap { values, ..*map }
}

/// Vectorizes a layer as row-major pixels of `(r, g, b, a)`.
pub fn flatten(layer: &MakeupLayer) -> Vec<f64> {
    let bases = layer.bases.values();
    let alpha = layer.alpha.values();
    let mut out = Vec::with_capacity(alpha.len() * LAYER_CHANNELS);
    for (p, &a) in alpha.iter().enumerate() {
        out.extend_from_slice(&bases[p * 3..p * 3 + 3]);
        out.push(a);
    }
    out
}

pub fn unflatten(values: &[f64], width: usize, height: usize) -> Result<MakeupLayer> {
    let expected = width * height * LAYER_CHANNELS;
    if values.len() != expected {
        return Err(Error::LengthMismatch {
            context: "flattened layer",
            expected,
            found: values.len(),
        });
    }
    let mut bases = Vec::with_capacity(width * height * 3);
    let mut alpha = Vec::with_capacity(width * height);
    for px in values.chunks_exact(LAYER_CHANNELS) {
        bases.extend_from_slice(&px[..3]);
        alpha.push(px[3]);
    }
    MakeupLayer::new(
        UvMap::new(width, height, 3, bases)?,
        UvMap::new(width, height, 1, alpha)?,
    )
}
