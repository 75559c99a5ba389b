//! Colour jitter used as the strong perturbation of unlabelled images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::ImageBatch;

/// Maximum deviation of each jitter factor from identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift in turns, at most 0.5.
    pub hue: f64,
}

impl Default for JitterStrength {
    fn default() -> Self {
        Self { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1 }
    }
}

impl JitterStrength {
    pub const NONE: Self = Self { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 };
}

/// Concrete factors drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: Option<f32>,
    pub contrast: Option<f32>,
    pub saturation: Option<f32>,
    pub hue: Option<f32>,
}

impl JitterStrength {
    /// Draws one set of factors per image. Zero-strength stages are skipped.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<JitterFactors> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factor = |s: f64, centre: f64| {
            (s > 0.0).then(|| rng.random_range((centre - s).max(0.0)..=centre + s) as f32)
        };
        (0..n)
            .map(|_| JitterFactors {
                brightness: factor(self.brightness, 1.0),
                contrast: factor(self.contrast, 1.0),
                saturation: factor(self.saturation, 1.0),
                hue: factor(self.hue.min(0.5), 0.0),
            })
            .collect()
    }
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Applies brightness, contrast, saturation and hue in that order, clamping to `[0, 1]`.
pub fn apply_jitter(batch: &ImageBatch, factors: &[JitterFactors]) -> ImageBatch {
    assert_eq!(factors.len(), batch.n, "one factor set per image");
    let hw = batch.h * batch.w;
    let mut out = batch.clone();
    for (b, f) in factors.iter().enumerate() {
        let img = &mut out.data[b * 3 * hw..(b + 1) * 3 * hw];
        if let Some(k) = f.brightness {
            img.iter_mut().for_each(|v| *v = (*v * k).clamp(0.0, 1.0));
        }
        if let Some(k) = f.contrast {
            let mean = (0..hw).map(|p| gray(img[p], img[hw + p], img[2 * hw + p])).sum::<f32>() / hw as f32;
            img.iter_mut().for_each(|v| *v = (k * *v + (1.0 - k) * mean).clamp(0.0, 1.0));
        }
        if let Some(k) = f.saturation {
            for p in 0..hw {
                let g = gray(img[p], img[hw + p], img[2 * hw + p]);
                for c in 0..3 {
                    let v = &mut img[c * hw + p];
                    *v = (k * *v + (1.0 - k) * g).clamp(0.0, 1.0);
                }
            }
        }
        if let Some(shift) = f.hue {
            for p in 0..hw {
                let (h, s, v) = rgb_to_hsv(img[p], img[hw + p], img[2 * hw + p]);
                let (r, g, bl) = hsv_to_rgb(h + shift, s, v);
                img[p] = r;
                img[hw + p] = g;
                img[2 * hw + p] = bl;
            }
        }
    }
    out
}
