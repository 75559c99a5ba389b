use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use decseg_tensor::{resize_bilinear, Array};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{ImageBatch, LabelMap};
use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

impl Split {
    pub fn has_masks(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }
}

/// A dataset directory:
///
/// ```text
/// root/images/<stem>.png|jpg   root/masks/<stem>.png
/// root/labeled.txt  root/unlabeled.txt  root/test.txt
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub labeled_list: String,
    pub unlabeled_list: String,
    pub test_list: String,
    /// Images are resized to `image_size` squared on load.
    pub image_size: usize,
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, image_size: usize) -> Self {
        Self {
            root: root.into(),
            labeled_list: "labeled.txt".into(),
            unlabeled_list: "unlabeled.txt".into(),
            test_list: "test.txt".into(),
            image_size,
        }
    }

    fn list_path(&self, split: Split) -> PathBuf {
        self.root.join(match split {
            Split::Labeled => &self.labeled_list,
            Split::Unlabeled => &self.unlabeled_list,
            Split::Test => &self.test_list,
        })
    }

    /// Stems listed for a split. A missing unlabelled list means no unlabelled data.
    pub fn stems(&self, split: Split) -> Result<Vec<String>> {
        let path = self.list_path(split);
        if split == Split::Unlabeled && !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn image_path(&self, stem: &str) -> Result<PathBuf> {
        IMAGE_EXTS
            .iter()
            .map(|ext| self.root.join("images").join(format!("{stem}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Load { stem: stem.into(), reason: "no image file".into() })
    }

    pub fn mask_path(&self, stem: &str) -> Result<PathBuf> {
        let p = self.root.join("masks").join(format!("{stem}.png"));
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Load { stem: stem.into(), reason: "no mask file".into() })
        }
    }

    /// Checks size constraints, list disjointness and that every listed file exists.
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::Config(format!("image_size {} is not a positive multiple of 32", self.image_size)));
        }
        let labeled = self.stems(Split::Labeled)?;
        if labeled.is_empty() {
            return Err(Error::Validation("labelled split is empty".into()));
        }
        let unlabeled = self.stems(Split::Unlabeled)?;
        let l: BTreeSet<_> = labeled.iter().collect();
        if let Some(dup) = unlabeled.iter().find(|s| l.contains(s)) {
            return Err(Error::Validation(format!("`{dup}` is both labelled and unlabelled")));
        }
        for split in [Split::Labeled, Split::Unlabeled, Split::Test] {
            let stems = if split == Split::Labeled { labeled.clone() } else { self.stems(split)? };
            for stem in &stems {
                self.image_path(stem)?;
                if split.has_masks() {
                    self.mask_path(stem)?;
                }
            }
        }
        Ok(())
    }
}

fn open(stem: &str, path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Load { stem: stem.into(), reason: e.to_string() })
}

/// Reads an RGB image, bilinearly resized to `size`², as 8-bit CHW.
pub fn load_image(stem: &str, path: &Path, size: usize) -> Result<Vec<u8>> {
    let rgb = open(stem, path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut chw = vec![0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            chw[c * h * w + i] = px.0[c] as f32;
        }
    }
    let arr = Array::new([1, 3, h, w], chw)?;
    let arr = if (h, w) == (size, size) { arr } else { resize_bilinear(&arr, size, size)? };
    Ok(arr.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
}

/// Reads a mask, binarised at half its maximum value, nearest-resized to `size`².
pub fn load_mask(stem: &str, path: &Path, size: usize) -> Result<Vec<u8>> {
    let luma = open(stem, path)?.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let max = luma.pixels().map(|p| p.0[0]).max().unwrap_or(0);
    let bin: Vec<u8> = luma
        .pixels()
        .map(|p| (max > 0 && 2 * p.0[0] as u32 >= max as u32) as u8)
        .collect();
    Ok(LabelMap::new(1, h, w, bin)?.resize_nearest(size, size).data)
}

/// One split held in memory at the target resolution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub stems: Vec<String>,
    pub size: usize,
    images: Vec<Vec<u8>>,
    masks: Option<Vec<Vec<u8>>>,
}

impl Dataset {
    pub fn load(spec: &DatasetSpec, split: Split) -> Result<Self> {
        let stems = spec.stems(split)?;
        let size = spec.image_size;
        let images = stems
            .iter()
            .map(|s| load_image(s, &spec.image_path(s)?, size))
            .collect::<Result<Vec<_>>>()?;
        let masks = if split.has_masks() {
            Some(stems.iter().map(|s| load_mask(s, &spec.mask_path(s)?, size)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self { stems, size, images, masks })
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn has_masks(&self) -> bool {
        self.masks.is_some()
    }

    pub fn images(&self, idx: &[usize]) -> Result<ImageBatch> {
        let ims: Vec<&[u8]> = idx.iter().map(|&i| self.images[i].as_slice()).collect();
        ImageBatch::from_u8(self.size, self.size, &ims)
    }

    pub fn masks(&self, idx: &[usize]) -> Result<LabelMap> {
        let masks = self
            .masks
            .as_ref()
            .ok_or_else(|| Error::Validation("split has no masks".into()))?;
        let data = idx.iter().flat_map(|&i| masks[i].iter().copied()).collect();
        LabelMap::new(idx.len(), self.size, self.size, data)
    }
}

/// Deterministic batch order: epoch `e` visits a permutation seeded by `(seed, e)`,
/// and step `k` takes positions `k*batch .. (k+1)*batch` of the concatenated epochs.
#[derive(Clone, Copy, Debug)]
pub struct BatchSampler {
    pub len: usize,
    pub batch: usize,
    pub seed: u64,
}

impl BatchSampler {
    fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64);
        p.shuffle(&mut rng);
        p
    }

    pub fn indices(&self, step: usize) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.batch);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for pos in step * self.batch..(step + 1) * self.batch {
            let epoch = pos / self.len;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.permutation(epoch)));
            }
            out.push(cached.as_ref().expect("just set").1[pos % self.len]);
        }
        out
    }
}

/// Loads a split and draws its first batch. Masks are returned for splits that have them.
pub fn load_batch(
    spec: &DatasetSpec,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<(ImageBatch, Option<LabelMap>)> {
    let ds = Dataset::load(spec, split)?;
    if ds.is_empty() {
        return Err(Error::Validation("split is empty".into()));
    }
    let idx = BatchSampler { len: ds.len(), batch: batch_size, seed }.indices(0);
    let masks = if ds.has_masks() { Some(ds.masks(&idx)?) } else { None };
    Ok((ds.images(&idx)?, masks))
}
