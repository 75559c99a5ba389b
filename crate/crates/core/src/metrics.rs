//! Per-image segmentation scores: Dice, IoU, MAE, weighted F-measure and
//! structure measure, following the conventions of the common salient-object
//! and polyp benchmark toolkits.

use serde::Serialize;

use crate::error::{Error, Result};

/// Binarisation threshold for Dice and IoU (`pred > THRESHOLD`).
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ImageScores {
    pub dice: f64,
    pub iou: f64,
    pub fbw: f64,
    pub s_alpha: f64,
    pub mae: f64,
}

/// Means of per-image scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(rename = "mDice")]
    pub m_dice: f64,
    #[serde(rename = "mIoU")]
    pub m_iou: f64,
    #[serde(rename = "Fbw")]
    pub fbw: f64,
    #[serde(rename = "Salpha")]
    pub s_alpha: f64,
    #[serde(rename = "MAE")]
    pub mae: f64,
    pub n_images: usize,
}

impl MetricsReport {
    pub fn from_scores(scores: &[ImageScores]) -> Self {
        let n = scores.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: fn(&ImageScores) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
        Self {
            m_dice: mean(|s| s.dice),
            m_iou: mean(|s| s.iou),
            fbw: mean(|s| s.fbw),
            s_alpha: mean(|s| s.s_alpha),
            mae: mean(|s| s.mae),
            n_images: n,
        }
    }
}

/// Scores one prediction map (values in `[0, 1]`) against a binary mask, both `h x w` row-major.
pub fn eval_pair(pred: &[f64], gt: &[u8], h: usize, w: usize) -> Result<ImageScores> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::Dimension(format!(
            "prediction of {} and mask of {} values for a {h}x{w} image",
            pred.len(),
            gt.len()
        )));
    }
    if h * w == 0 {
        return Err(Error::Dimension("empty image".into()));
    }
    if let Some(v) = gt.iter().find(|&&v| v > 1) {
        return Err(Error::Validation(format!("mask value {v} is not binary")));
    }
    if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("prediction value {v} outside [0, 1]")));
    }
    let gtb: Vec<bool> = gt.iter().map(|&v| v == 1).collect();
    let (dice, iou) = dice_iou(pred, &gtb);
    let mae = pred.iter().zip(gt).map(|(&p, &g)| (p - g as f64).abs()).sum::<f64>() / (h * w) as f64;
    Ok(ImageScores { dice, iou, fbw: weighted_fmeasure(pred, &gtb, h, w), s_alpha: s_measure(pred, &gtb, h, w), mae })
}

/// Dice and IoU of `pred > 0.5`; both are 1 when prediction and mask are empty.
pub fn dice_iou(pred: &[f64], gt: &[bool]) -> (f64, f64) {
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let pb = p > THRESHOLD;
        inter += (pb && g) as usize;
        np += pb as usize;
        ng += g as usize;
    }
    if np + ng == 0 {
        return (1.0, 1.0);
    }
    let union = np + ng - inter;
    (2.0 * inter as f64 / (np + ng) as f64, inter as f64 / union as f64)
}

/// Exact Euclidean distance transform: for every pixel, the squared distance to
/// the nearest `true` pixel of `seeds` and that pixel's flat index.
/// Requires at least one seed.
pub fn distance_transform(seeds: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    const INF: f64 = f64::INFINITY;
    // Column pass: nearest seed row per column.
    let mut col_d = vec![INF; h * w];
    let mut col_row = vec![usize::MAX; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if seeds[y * w + x] {
                last = Some(y);
            }
            if let Some(r) = last {
                col_d[y * w + x] = ((y - r) * (y - r)) as f64;
                col_row[y * w + x] = r;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if seeds[y * w + x] {
                next = Some(y);
            }
            if let Some(r) = next {
                let d = ((r - y) * (r - y)) as f64;
                if d < col_d[y * w + x] {
                    col_d[y * w + x] = d;
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    // Row pass: lower envelope of parabolas f(q) + (x - q)^2.
    let mut dist = vec![INF; h * w];
    let mut idx = vec![usize::MAX; h * w];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for y in 0..h {
        let f = &col_d[y * w..(y + 1) * w];
        let sources: Vec<usize> = (0..w).filter(|&q| f[q].is_finite()).collect();
        if sources.is_empty() {
            continue;
        }
        let mut k = 0;
        v[0] = sources[0];
        z[0] = -INF;
        z[1] = INF;
        for &q in &sources[1..] {
            loop {
                let p = v[k];
                let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    // k == 0 and the new parabola dominates everywhere.
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = INF;
                }
                break;
            }
        }
        let mut k = 0;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let q = v[k];
            let dx = x as f64 - q as f64;
            dist[y * w + x] = dx * dx + f[q];
            idx[y * w + x] = col_row[y * w + q] * w + q;
        }
    }
    (dist, idx)
}

fn gaussian_kernel7() -> [[f64; 7]; 7] {
    let sigma: f64 = 5.0;
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// Weighted F-measure with beta^2 = 1. An empty mask scores 1 for an all-zero
/// prediction and 0 otherwise.
pub fn weighted_fmeasure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    if !gt.iter().any(|&g| g) {
        return if pred.iter().all(|&p| p == 0.0) { 1.0 } else { 0.0 };
    }
    let (dist2, nearest) = distance_transform(gt, h, w);
    let e: Vec<f64> = pred.iter().zip(gt).map(|(&p, &g)| (p - g as u8 as f64).abs()).collect();
    let et: Vec<f64> = (0..h * w).map(|i| if gt[i] { e[i] } else { e[nearest[i]] }).collect();
    let k = gaussian_kernel7();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as isize + i as isize - 3;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, &kv) in row.iter().enumerate() {
                    let xx = x as isize + j as isize - 3;
                    if xx >= 0 && xx < w as isize {
                        acc += kv * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let (mut tp_loss, mut fp, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        let min_e = if gt[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        if gt[i] {
            tp_loss += min_e;
            n_fg += 1;
        } else {
            let b = 2.0 - (0.5f64.ln() / 5.0 * dist2[i].sqrt()).exp();
            fp += min_e * b;
        }
    }
    let tpw = n_fg as f64 - tp_loss;
    let r = 1.0 - tp_loss / n_fg as f64;
    let p = if tpw + fp > 0.0 { tpw / (tpw + fp) } else { 0.0 };
    if r + p > 0.0 {
        2.0 * r * p / (r + p)
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_ddof1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn s_object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_ddof1(values))
}

fn object_score(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * s_object(&fg) + (1.0 - u) * s_object(&bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let (x, y) = (mean(pred), mean(gt));
    if n == 1 {
        return 1.0 - (x - y).abs();
    }
    let d = (n - 1) as f64;
    let sx = pred.iter().map(|p| (p - x) * (p - x)).sum::<f64>() / d;
    let sy = gt.iter().map(|g| (g - y) * (g - y)).sum::<f64>() / d;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / d;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// 1-based split point `(x, y)` at the rounded foreground centroid (round half to even).
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] {
                sy += y as f64;
                sx += x as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return ((w as f64 / 2.0).round_ties_even() as usize + 1, (h as f64 / 2.0).round_ties_even() as usize + 1);
    }
    ((sx / n as f64).round_ties_even() as usize + 1, (sy / n as f64).round_ties_even() as usize + 1)
}

fn region_score(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let (cx, cy) = (cx.min(w), cy.min(h));
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let area = (h * w) as f64;
    let mut score = 0.0;
    let mut weight_left = 1.0;
    for (qi, &(y0, y1, x0, x1)) in quads.iter().enumerate() {
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pred[y * w + x]);
                g.push(gt[y * w + x] as u8 as f64);
            }
        }
        let weight = if qi == 3 { weight_left } else { ((y1 - y0) * (x1 - x0)) as f64 / area };
        weight_left -= weight;
        score += weight * ssim(&p, &g);
    }
    score
}

/// Structure measure with alpha = 0.5 (object and region terms).
pub fn s_measure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let y = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    if y == 0.0 {
        1.0 - mean(pred)
    } else if y == 1.0 {
        mean(pred)
    } else {
        (0.5 * object_score(pred, gt) + 0.5 * region_score(pred, gt, h, w)).max(0.0)
    }
}
