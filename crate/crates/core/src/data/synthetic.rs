//! Procedural lesion-like images for smoke tests and benchmarks.
//!
//! Each image is a vignetted, textured reddish background with one or two
//! lighter irregular blobs (the foreground) and a few specular highlights that
//! are not part of the mask.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::DatasetSpec;
use crate::error::{io_err, Error, Result};

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    cos: f64,
    sin: f64,
    aspect: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, min_r: f64, max_r: f64) -> Self {
        let angle = rng.random_range(0.0..TAU);
        Self {
            cx: rng.random_range(0.2..0.8),
            cy: rng.random_range(0.2..0.8),
            radius: rng.random_range(min_r..max_r),
            cos: angle.cos(),
            sin: angle.sin(),
            aspect: rng.random_range(0.6..1.0),
            harmonics: (2..5)
                .map(|k| (k as f64, rng.random_range(0.0..0.15), rng.random_range(0.0..TAU)))
                .collect(),
        }
    }

    /// Signed distance-like value in pixels, positive inside.
    fn depth(&self, x: f64, y: f64, size: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = (-dx * self.sin + dy * self.cos) / self.aspect;
        let rho = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        let r = self.radius * (1.0 + self.harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).sin()).sum::<f64>());
        (r - rho) * size * self.aspect.sqrt()
    }
}

struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64, max_freq: f64) -> Self {
        let dir = rng.random_range(0.0..TAU);
        let f = rng.random_range(1.0..max_freq);
        Self { amp: rng.random_range(0.3 * amp..amp), fx: f * dir.cos(), fy: f * dir.sin(), phase: rng.random_range(0.0..TAU) }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.amp * (TAU * (self.fx * x + self.fy * y) + self.phase).sin()
    }
}

/// Renders one RGB image (HWC) and its binary mask.
pub fn render_sample(size: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let bg = [rng.random_range(0.58..0.70), rng.random_range(0.24..0.32), rng.random_range(0.20..0.28)];
        let tint = [rng.random_range(0.18..0.25), rng.random_range(0.22..0.30), rng.random_range(0.0..0.05)];
        let bg_tex: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, 0.05, 5.0)).collect();
        let fg_tex: Vec<Wave> = (0..2).map(|_| Wave::random(&mut rng, 0.06, 12.0)).collect();
        let blobs: Vec<Blob> = (0..if rng.random_bool(0.8) { 1 } else { 2 })
            .map(|_| Blob::random(&mut rng, 0.08, 0.26))
            .collect();
        let highlights: Vec<Blob> = (0..rng.random_range(0..3)).map(|_| Blob::random(&mut rng, 0.01, 0.03)).collect();
        let s = size as f64;
        let mut rgb = Vec::with_capacity(size * size * 3);
        let mut mask = Vec::with_capacity(size * size);
        for py in 0..size {
            for px in 0..size {
                let (x, y) = ((px as f64 + 0.5) / s, (py as f64 + 0.5) / s);
                let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
                let shade = 1.0 - 0.9 * r2 + bg_tex.iter().map(|w| w.at(x, y)).sum::<f64>();
                let depth = blobs.iter().map(|b| b.depth(x, y, s)).fold(f64::MIN, f64::max);
                let alpha = (0.5 + depth / 1.5).clamp(0.0, 1.0);
                let fg_shade = fg_tex.iter().map(|w| w.at(x, y)).sum::<f64>();
                let spec = highlights.iter().map(|b| (0.5 + b.depth(x, y, s) / 2.0).clamp(0.0, 1.0)).fold(0.0, f64::max);
                for c in 0..3 {
                    let base = bg[c] * shade;
                    let lesion = (bg[c] + tint[c]) * (shade + fg_shade);
                    let v = base + alpha * (lesion - base);
                    let v = v + spec * (0.97 - v) + rng.random_range(-0.03..0.03);
                    rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
                mask.push((depth >= 0.0) as u8);
            }
        }
        let frac = mask.iter().filter(|&&m| m == 1).count() as f64 / (size * size) as f64;
        if (0.02..0.45).contains(&frac) {
            return (rgb, mask);
        }
    }
}

fn save_rgb(path: &Path, size: usize, rgb: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(size as u32, size as u32, rgb).expect("buffer sized for image");
    img.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

fn save_mask(path: &Path, size: usize, mask: &[u8]) -> Result<()> {
    let img = GrayImage::from_fn(size as u32, size as u32, |x, y| Luma([mask[y as usize * size + x as usize] * 255]));
    img.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

/// Writes a dataset directory with `n_labeled + n_unlabeled + n_test` images.
/// Masks are written for the labelled and test splits only.
pub fn make_synthetic_dataset(
    root: &Path,
    n_labeled: usize,
    n_unlabeled: usize,
    n_test: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetSpec> {
    if image_size < 8 {
        return Err(Error::Config(format!("image_size {image_size} too small")));
    }
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut lists = [Vec::new(), Vec::new(), Vec::new()];
    let splits = [(0, n_labeled, "l"), (1, n_unlabeled, "u"), (2, n_test, "t")];
    let mut index = 0u64;
    for (list, n, tag) in splits {
        for i in 0..n {
            let stem = format!("syn_{tag}{i:04}");
            let (rgb, mask) = render_sample(image_size, seed.wrapping_mul(1_000_003).wrapping_add(index));
            index += 1;
            save_rgb(&images.join(format!("{stem}.png")), image_size, rgb)?;
            if list != 1 {
                save_mask(&masks.join(format!("{stem}.png")), image_size, &mask)?;
            }
            lists[list].push(stem);
        }
    }
    let spec = DatasetSpec::new(root, image_size);
    for (list, name) in lists.iter().zip([&spec.labeled_list, &spec.unlabeled_list, &spec.test_list]) {
        let path = root.join(name);
        let mut text = list.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_has_valid_foreground() {
        for seed in 0..20 {
            let (a, m) = render_sample(48, seed);
            let (b, m2) = render_sample(48, seed);
            assert_eq!(a, b);
            assert_eq!(m, m2);
            let frac = m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64;
            assert!(frac > 0.0 && frac < 0.5);
        }
    }
}
