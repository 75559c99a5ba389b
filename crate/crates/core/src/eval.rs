//! Inference with the fused decoder, dataset evaluation and mask export.

use std::fs;
use std::path::{Path, PathBuf};

use decseg_tensor::{resize_bilinear, Array, Tape};
use image::GrayImage;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data::{load_image, Dataset, DatasetSpec, ImageBatch, Split};
use crate::error::{io_err, Error, Result};
use crate::metrics::{eval_pair, ImageScores, MetricsReport, THRESHOLD};
use crate::model::DecSegNet;
use crate::nn::{ParamStore, Session};

const EVAL_BATCH: usize = 4;

/// A network in evaluation mode. Generators are never built.
pub struct Predictor {
    net: DecSegNet,
    store: ParamStore<f32>,
    image_size: usize,
}

impl Predictor {
    fn build(cfg: &TrainConfig) -> Result<(DecSegNet, ParamStore<f32>)> {
        let mut model = cfg.model();
        model.use_cc = false;
        let mut store = ParamStore::new(cfg.seed);
        let net = DecSegNet::new(&model, &mut store)?;
        Ok((net, store))
    }

    /// Copies the matching tensors of a training store.
    pub fn from_store(cfg: &TrainConfig, source: &ParamStore<f32>) -> Result<Self> {
        let (net, mut store) = Self::build(cfg)?;
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let value = source
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("source parameters lack `{name}`")))?;
            store.set(id, value.clone())?;
        }
        Ok(Self { net, store, image_size: cfg.image_size })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<f32>(path)?;
        let meta = loaded
            .meta
            .as_ref()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no model header", path.display())))?;
        let (net, mut store) = Self::build(&meta.config)?;
        loaded.restore_into(&mut store, &[])?;
        Ok(Self { net, store, image_size: meta.config.image_size })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Foreground probability maps (row-major `h x w`) of the final decoder.
    pub fn predict(&mut self, batch: &ImageBatch) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::<f32>::no_grad();
        let mut s = Session::new(&tape, &mut self.store, false);
        let x = tape.constant(batch.to_array());
        let out = self.net.forward(&mut s, x)?;
        let probs = out.final_output().probs.value();
        let (n, _, h, w) = probs.dims4()?;
        let hw = h * w;
        Ok((0..n)
            .map(|b| probs.data()[(2 * b + 1) * hw..(2 * b + 2) * hw].iter().map(|&v| v as f64).collect())
            .collect())
    }
}

/// Scores the test split. With `csv`, writes one row per image and a final `mean` row.
pub fn eval_dataset(
    predictor: &mut Predictor,
    spec: &DatasetSpec,
    csv: Option<&Path>,
) -> Result<(MetricsReport, Vec<(String, ImageScores)>)> {
    let spec = DatasetSpec { image_size: predictor.image_size, ..spec.clone() };
    let ds = Dataset::load(&spec, Split::Test)?;
    if ds.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let size = ds.size;
    let mut rows = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let preds = predictor.predict(&ds.images(chunk)?)?;
        let masks = ds.masks(chunk)?;
        for (k, &i) in chunk.iter().enumerate() {
            let pred: Vec<f64> = preds[k].iter().map(|v| v.clamp(0.0, 1.0)).collect();
            rows.push((ds.stems[i].clone(), eval_pair(&pred, masks.map(k), size, size)?));
        }
    }
    let scores: Vec<ImageScores> = rows.iter().map(|r| r.1).collect();
    let report = MetricsReport::from_scores(&scores);
    if let Some(path) = csv {
        write_metrics_csv(path, &rows, &report)?;
    }
    Ok((report, rows))
}

fn write_metrics_csv(path: &Path, rows: &[(String, ImageScores)], report: &MetricsReport) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io { path: path.into(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["image", "dice", "iou", "fbw", "s_alpha", "mae"]).map_err(csv_err)?;
    for (stem, s) in rows {
        w.serialize((stem, s.dice, s.iou, s.fbw, s.s_alpha, s.mae)).map_err(csv_err)?;
    }
    w.serialize(("mean", report.m_dice, report.m_iou, report.fbw, report.s_alpha, report.mae))
        .map_err(csv_err)?;
    w.flush().map_err(io_err(path))
}

/// Predicts a binary mask for one image file and writes it as `<stem>.png`
/// (values 0 and 255) at the source resolution.
pub fn predict_file(predictor: &mut Predictor, input: &Path, output_dir: &Path) -> Result<PathBuf> {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("cannot name output for {}", input.display())))?
        .to_string();
    let (w, h) = image::image_dimensions(input).map_err(|e| Error::Load { stem: stem.clone(), reason: e.to_string() })?;
    let size = predictor.image_size();
    let img = load_image(&stem, input, size)?;
    let batch = ImageBatch::from_u8(size, size, &[&img])?;
    let prob = predictor.predict(&batch)?.remove(0);
    let prob = Array::new([1, 1, size, size], prob)?;
    let (h, w) = (h as usize, w as usize);
    let full = if (h, w) == (size, size) { prob } else { resize_bilinear(&prob, h, w)? };
    let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if full.data()[y as usize * w + x as usize] > THRESHOLD { 255 } else { 0 }])
    });
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let out = output_dir.join(format!("{stem}.png"));
    mask.save(&out).map_err(|source| Error::Image { path: out.clone(), source })?;
    Ok(out)
}
