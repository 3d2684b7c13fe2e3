//! Crop sampling and photometric augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Image;
use crate::error::{AclipError, Result};
use crate::geometry::CropRect;

/// Samples a crop whose area fraction is uniform in `[scale_min, scale_max]`.
/// The aspect ratio `w / h` is log-uniform over the part of `aspect` that
/// fits inside the image at the drawn area, so no draw is ever rejected.
pub fn random_resized_crop(
    rng: &mut impl Rng,
    scale_min: f64,
    scale_max: f64,
    aspect: (f64, f64),
) -> Result<CropRect> {
    if !(0.0 < scale_min && scale_min <= scale_max && scale_max <= 1.0) {
        return Err(AclipError::Argument(format!(
            "crop scale [{scale_min}, {scale_max}] outside (0, 1]"
        )));
    }
    if !(0.0 < aspect.0 && aspect.0 <= 1.0 && 1.0 <= aspect.1) {
        return Err(AclipError::Argument(format!("aspect bounds {aspect:?} must bracket 1")));
    }
    let area = if scale_min == scale_max {
        scale_min
    } else {
        rng.gen_range(scale_min..=scale_max)
    };
    // w = sqrt(area r) <= 1 and h = sqrt(area / r) <= 1.
    let lo = aspect.0.ln().max(area.ln());
    let hi = aspect.1.ln().min(-area.ln());
    let log_ratio = if lo < hi { rng.gen_range(lo..=hi) } else { 0.0 };
    let ratio = log_ratio.exp();
    let w = (area * ratio).sqrt().min(1.0);
    let h = (area / ratio).sqrt().min(1.0);
    let x0 = rng.gen::<f64>() * (1.0 - w);
    let y0 = rng.gen::<f64>() * (1.0 - h);
    CropRect::new(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0))
}

/// Probabilities and ranges of the photometric pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorPolicy {
    /// Brightness and contrast factors are drawn from `1 +- jitter`.
    pub jitter: f64,
    pub jitter_p: f64,
    pub grayscale_p: f64,
    pub solarize_p: f64,
    pub solarize_threshold: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for ColorPolicy {
    fn default() -> Self {
        Self {
            jitter: 0.4,
            jitter_p: 0.8,
            grayscale_p: 0.2,
            solarize_p: 0.2,
            solarize_threshold: 0.5,
            blur_p: 0.5,
            blur_sigma: (0.1, 2.0),
        }
    }
}

impl ColorPolicy {
    /// Every stage disabled.
    pub fn off() -> Self {
        Self {
            jitter_p: 0.0,
            grayscale_p: 0.0,
            solarize_p: 0.0,
            blur_p: 0.0,
            ..Self::default()
        }
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn coin(rng: &mut impl Rng, p: f64) -> bool {
    p > 0.0 && rng.gen::<f64>() < p
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    wt * plane[y * w + xx]
                })
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    wt * tmp[yy * w + x]
                })
                .sum();
        }
    }
}

/// Brightness/contrast jitter, grayscale, solarize and Gaussian blur, each
/// applied with its own probability, in that order. Output is clamped to
/// `[0, 1]`. With every probability at zero the image is returned unchanged.
pub fn color_augment(img: &Image, rng: &mut impl Rng, policy: &ColorPolicy) -> Image {
    let mut out = img.clone();
    let (h, w) = (img.height(), img.width());
    let mut touched = false;
    if coin(rng, policy.jitter_p) {
        let lo = (1.0 - policy.jitter).max(0.0);
        let hi = 1.0 + policy.jitter;
        let brightness = rng.gen_range(lo..=hi);
        let contrast = rng.gen_range(lo..=hi);
        let data = out.data_mut();
        for v in data.iter_mut() {
            *v *= brightness;
        }
        let n = h * w;
        let mean: f64 = (0..n)
            .map(|i| (0..3).map(|c| LUMA[c] * data[c * n + i]).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        for v in data.iter_mut() {
            *v = mean + contrast * (*v - mean);
        }
        touched = true;
    }
    if coin(rng, policy.grayscale_p) {
        let n = h * w;
        let data = out.data_mut();
        for i in 0..n {
            let y: f64 = (0..3).map(|c| LUMA[c] * data[c * n + i]).sum();
            for c in 0..3 {
                data[c * n + i] = y;
            }
        }
        touched = true;
    }
    if coin(rng, policy.solarize_p) {
        for v in out.data_mut() {
            if *v > policy.solarize_threshold {
                *v = 1.0 - *v;
            }
        }
        touched = true;
    }
    if coin(rng, policy.blur_p) {
        let (lo, hi) = policy.blur_sigma;
        let sigma = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let kernel = gaussian_kernel(sigma);
        for c in 0..Image::CHANNELS {
            blur_plane(out.plane_mut(c), h, w, &kernel);
        }
        touched = true;
    }
    if touched {
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    out
}
