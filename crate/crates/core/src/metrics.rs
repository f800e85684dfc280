//! Region-restricted image metrics: RMSE, SSIM and histogram-matching distance,
//! plus the binary dilation used to grow eye regions from a label map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uvtex::{FaceMask, UvMap};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const HM_BINS: usize = 256;

/// Eye regions are grown with this square element, this many times.
pub const EYE_DILATION_KERNEL: usize = 15;
pub const EYE_DILATION_ITERATIONS: usize = 3;

/// Label codes of the segmentation maps.
pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const SKIN: u8 = 1;
    pub const LEFT_BROW: u8 = 2;
    pub const RIGHT_BROW: u8 = 3;
    pub const LEFT_EYE: u8 = 4;
    pub const RIGHT_EYE: u8 = 5;
    pub const NOSE: u8 = 6;
    pub const UPPER_LIP: u8 = 7;
    pub const MOUTH: u8 = 8;
    pub const LOWER_LIP: u8 = 9;
}

fn check_pair(a: &UvMap, b: &UvMap, mask: &FaceMask) -> Result<()> {
    a.expect_channels(3, "metric input")?;
    b.expect_channels(3, "metric input")?;
    b.expect_dims(a.dims(), "metric input")?;
    if mask.dims() != a.dims() {
        return Err(Error::DimensionMismatch {
            context: "metric mask",
            expected: a.dims(),
            found: mask.dims(),
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Root mean square error over masked pixels and all channels.
pub fn rmse(a: &UvMap, b: &UvMap, mask: &FaceMask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in mask.indices() {
        for (x, y) in a.pixel(p).iter().zip(b.pixel(p)) {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Mean windowed SSIM over the channels, averaged over window centers that
/// lie inside the mask. Only centers whose full window fits in the image count.
pub fn ssim(a: &UvMap, b: &UvMap, mask: &FaceMask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let r = SSIM_WINDOW / 2;
    let centers: Vec<(usize, usize)> = (r..h - r)
        .flat_map(|y| (r..w - r).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    if centers.is_empty() {
        return Err(Error::EmptyMask);
    }

    let window = gaussian_window();
    let mut per_channel = [0.0f64; 3];
    for (ch, acc) in per_channel.iter_mut().enumerate() {
        for &(cx, cy) in &centers {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wt = window[dy * SSIM_WINDOW + dx];
                    let (x, y) = (cx + dx - r, cy + dy - r);
                    let va = a.get(x, y, ch);
                    let vb = b.get(x, y, ch);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
            *acc += num / den;
        }
        *acc /= centers.len() as f64;
    }
    Ok(per_channel.iter().sum::<f64>() / 3.0)
}

/// Cumulative histogram of one channel with the mean sample value of each bin.
struct BinnedCdf {
    /// `(cdf, representative)` for each non-empty bin, in increasing order.
    points: Vec<(f64, f64)>,
    /// Index into `points` for every bin, `usize::MAX` if empty.
    slot: Vec<usize>,
}

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * HM_BINS as f64) as usize).min(HM_BINS - 1)
}

impl BinnedCdf {
    fn new(mut values: Vec<f64>) -> Self {
        // Sorted accumulation keeps the result independent of pixel order.
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mut counts = vec![0usize; HM_BINS];
        let mut sums = vec![0.0f64; HM_BINS];
        for &v in &values {
            let j = bin_of(v);
            counts[j] += 1;
            sums[j] += v;
        }
        let mut points = Vec::new();
        let mut slot = vec![usize::MAX; HM_BINS];
        let mut cumulative = 0usize;
        for j in 0..HM_BINS {
            if counts[j] > 0 {
                cumulative += counts[j];
                slot[j] = points.len();
                points.push((cumulative as f64 / n, sums[j] / counts[j] as f64));
            }
        }
        Self { points, slot }
    }

    fn quantile_of(&self, v: f64) -> (f64, f64) {
        self.points[self.slot[bin_of(v)]]
    }

    /// Piecewise-linear inverse CDF through the bin points.
    fn inverse(&self, q: f64) -> f64 {
        let i = self.points.partition_point(|&(c, _)| c < q);
        if i == 0 {
            return self.points[0].1;
        }
        if i == self.points.len() {
            return self.points[i - 1].1;
        }
        let (c1, v1) = self.points[i];
        if c1 == q {
            return v1;
        }
        let (c0, v0) = self.points[i - 1];
        v0 + (q - c0) / (c1 - c0) * (v1 - v0)
    }
}

/// Histogram-matching distance between the masked color distributions of `a` and `b`.
///
/// Per channel, each masked sample of `a` is mapped through `a`'s binned CDF
/// and `b`'s inverse binned CDF; the distance is the mean squared difference
/// between `a` at bin resolution and its matched value, averaged over channels.
/// Bins are represented by the mean of the samples they hold, so it is zero
/// when both distributions agree bin for bin.
pub fn hm_distance(a: &UvMap, b: &UvMap, mask: &FaceMask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let pixels: Vec<usize> = mask.indices().collect();
    let mut total = 0.0;
    for ch in 0..3 {
        let mut va: Vec<f64> = pixels.iter().map(|&p| a.pixel(p)[ch]).collect();
        va.sort_by(f64::total_cmp);
        let vb: Vec<f64> = pixels.iter().map(|&p| b.pixel(p)[ch]).collect();
        let cdf_a = BinnedCdf::new(va.clone());
        let cdf_b = BinnedCdf::new(vb);
        let sum: f64 = va
            .iter()
            .map(|&v| {
                let (q, own) = cdf_a.quantile_of(v);
                let matched = cdf_b.inverse(q);
                (own - matched) * (own - matched)
            })
            .sum();
        total += sum / pixels.len() as f64;
    }
    Ok(total / 3.0)
}

/// Binary dilation with a `kernel_size` square, applied `iterations` times.
/// Pixels outside the grid count as empty.
pub fn dilate(mask: &FaceMask, kernel_size: usize, iterations: usize) -> Result<FaceMask> {
    if kernel_size % 2 == 0 {
        return Err(Error::EvenKernel(kernel_size));
    }
    let r = kernel_size / 2;
    let (w, h) = mask.dims();
    let mut current = mask.bits().to_vec();
    for _ in 0..iterations {
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                horiz[y * w + x] = (lo..=hi).any(|xx| current[y * w + xx]);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let lo = y.saturating_sub(r);
                let hi = (y + r).min(h - 1);
                current[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
            }
        }
    }
    FaceMask::new(w, h, current)
}

/// Face, eye and lip masks on one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSet {
    pub face: FaceMask,
    pub eyes: FaceMask,
    pub lips: FaceMask,
}

impl RegionSet {
    pub fn face_only(face: FaceMask) -> Self {
        let (w, h) = face.dims();
        Self {
            face,
            eyes: FaceMask::empty(w, h),
            lips: FaceMask::empty(w, h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub regions: RegionSet,
    /// Codes outside the schema; their pixels were ignored.
    pub unknown_codes: Vec<u8>,
}

/// Splits an integer-coded label map (8-bit codes scaled to `[0, 1]`) into regions.
pub fn regions_from_labels(label_map: &UvMap) -> Result<Segmentation> {
    label_map.expect_channels(1, "label map channels")?;
    let (w, h) = label_map.dims();
    let codes: Vec<u8> = label_map
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut unknown: Vec<u8> = codes.iter().copied().filter(|&c| c > labels::LOWER_LIP).collect();
    unknown.sort_unstable();
    unknown.dedup();

    let select = |f: fn(u8) -> bool| FaceMask::new(w, h, codes.iter().map(|&c| f(c)).collect());
    let face = select(|c| (labels::SKIN..=labels::LOWER_LIP).contains(&c))?;
    let eye_seed = select(|c| (labels::LEFT_BROW..=labels::RIGHT_EYE).contains(&c))?;
    let lips = select(|c| (labels::UPPER_LIP..=labels::LOWER_LIP).contains(&c))?;
    let eyes = dilate(&eye_seed, EYE_DILATION_KERNEL, EYE_DILATION_ITERATIONS)?;
    Ok(Segmentation {
        regions: RegionSet { face, eyes, lips },
        unknown_codes: unknown,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub region: String,
    pub value: f64,
}

/// RMSE and SSIM on the face, HM on the face and on the eye and lip regions
/// (each intersected with the face). Empty regions are skipped.
pub fn evaluate_regions(pred: &UvMap, reference: &UvMap, regions: &RegionSet) -> Result<Vec<MetricRecord>> {
    let record = |metric: &str, region: &str, value: f64| MetricRecord {
        metric: metric.to_string(),
        region: region.to_string(),
        value,
    };
    let face = &regions.face;
    let mut out = vec![
        record("rmse", "face", rmse(pred, reference, face)?),
        record("ssim", "face", ssim(pred, reference, face)?),
        record("hm", "face", hm_distance(pred, reference, face)?),
    ];
    for (name, region) in [("eyes", &regions.eyes), ("lips", &regions.lips)] {
        let inside = region.intersect(face)?;
        if !inside.is_empty() {
            out.push(record("hm", name, hm_distance(pred, reference, &inside)?));
        }
    }
    Ok(out)
}
