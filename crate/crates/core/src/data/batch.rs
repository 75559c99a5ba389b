use decseg_tensor::{Array, Elem};

use crate::error::{Error, Result};

/// RGB images in `[0, 1]`, stored NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl ImageBatch {
    pub const CHANNELS: usize = 3;

    pub fn new(n: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * Self::CHANNELS * h * w {
            return Err(Error::Dimension(format!(
                "{} values for a {n}x{}x{h}x{w} image batch",
                data.len(),
                Self::CHANNELS
            )));
        }
        Ok(Self { n, h, w, data })
    }

    /// Builds a batch from 8-bit CHW images of equal size.
    pub fn from_u8(h: usize, w: usize, images: &[&[u8]]) -> Result<Self> {
        let data = images.iter().flat_map(|im| im.iter().map(|&v| v as f32 / 255.0)).collect();
        Self::new(images.len(), h, w, data)
    }

    pub fn image(&self, b: usize) -> &[f32] {
        let len = Self::CHANNELS * self.h * self.w;
        &self.data[b * len..(b + 1) * len]
    }

    pub fn to_array<T: Elem>(&self) -> Array<T> {
        Array::new(
            [self.n, Self::CHANNELS, self.h, self.w],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("length checked at construction")
    }

    pub fn from_array<T: Elem>(a: &Array<T>) -> Result<Self> {
        let (n, c, h, w) = a.dims4()?;
        if c != Self::CHANNELS {
            return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
        }
        Self::new(n, h, w, a.data().iter().map(|&v| Elem::to_f64(v) as f32).collect())
    }

    /// 2x2 box average, i.e. half-pixel bilinear resampling to half size.
    pub fn downsample_half(&self) -> Result<Self> {
        if self.h % 2 != 0 || self.w % 2 != 0 {
            return Err(Error::Dimension(format!("cannot halve a {}x{} image", self.h, self.w)));
        }
        let (oh, ow) = (self.h / 2, self.w / 2);
        let planes = self.n * Self::CHANNELS;
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let src = &self.data[p * self.h * self.w..(p + 1) * self.h * self.w];
            for y in 0..oh {
                let (r0, r1) = (&src[2 * y * self.w..], &src[(2 * y + 1) * self.w..]);
                for x in 0..ow {
                    out.push(0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]));
                }
            }
        }
        Self::new(self.n, oh, ow, out)
    }
}

/// Binary (or class-index) label maps, stored NHW.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::Dimension(format!("{} labels for a {n}x{h}x{w} map", data.len())));
        }
        Ok(Self { n, h, w, data })
    }

    /// Fails unless every label is 0 or 1.
    pub fn validate_binary(&self) -> Result<()> {
        match self.data.iter().find(|&&v| v > 1) {
            Some(v) => Err(Error::Validation(format!("label value {v} is not binary"))),
            None => Ok(()),
        }
    }

    pub fn map(&self, b: usize) -> &[u8] {
        &self.data[b * self.h * self.w..(b + 1) * self.h * self.w]
    }

    /// Nearest-neighbour resampling (`src = floor(dst * in / out)`).
    pub fn resize_nearest(&self, oh: usize, ow: usize) -> Self {
        let ys: Vec<usize> = (0..oh).map(|y| (y * self.h / oh).min(self.h - 1)).collect();
        let xs: Vec<usize> = (0..ow).map(|x| (x * self.w / ow).min(self.w - 1)).collect();
        let mut data = Vec::with_capacity(self.n * oh * ow);
        for b in 0..self.n {
            let m = self.map(b);
            for &y in &ys {
                data.extend(xs.iter().map(|&x| m[y * self.w + x]));
            }
        }
        Self { n: self.n, h: oh, w: ow, data }
    }

    /// Per-pixel argmax over the channel axis of `[n, c, h, w]` scores.
    /// Ties resolve to the lower class.
    pub fn argmax<T: Elem>(scores: &Array<T>) -> Result<Self> {
        let (n, c, h, w) = scores.dims4()?;
        let hw = h * w;
        let d = scores.data();
        let mut data = Vec::with_capacity(n * hw);
        for b in 0..n {
            for p in 0..hw {
                let mut best = 0;
                for k in 1..c {
                    if d[(b * c + k) * hw + p] > d[(b * c + best) * hw + p] {
                        best = k;
                    }
                }
                data.push(best as u8);
            }
        }
        Self::new(n, h, w, data)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v > 0).count() as f64 / self.data.len().max(1) as f64
    }
}
