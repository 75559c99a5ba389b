//! Optimiser, learning-rate schedule and the semi-supervised training loop.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use decseg_tensor::{Array, Elem, Tape};

use crate::checkpoint::{self, CheckpointMeta, MOMENTUM_PREFIX};
use crate::config::TrainConfig;
use crate::data::{apply_jitter, BatchSampler, Dataset, ImageBatch, LabelMap, Split};
use crate::error::{io_err, Error, Result};
use crate::eval::{eval_dataset, Predictor};
use crate::losses::{
    cross_generative_loss, perturbation_consistency_loss, scale_consistency_loss, supervised_loss, total_loss,
    LossReport, LossTerms,
};
use crate::metrics::MetricsReport;
use crate::model::{torch_key_to_local, Backbone, DecSegNet};
use crate::nn::{ParamId, ParamStore, Session};

/// `lr0 * (1 - step / max_iters)^power`.
pub fn poly_lr(step: usize, max_iters: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_iters == 0 || step > max_iters {
        return Err(Error::Range(format!("step {step} outside 0..={max_iters}")));
    }
    Ok(lr0 * (1.0 - step as f64 / max_iters as f64).powf(power))
}

/// SGD with momentum and L2 weight decay (PyTorch update order).
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<ParamId, Array<T>>,
}

impl<T: Elem> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: BTreeMap::new() }
    }

    /// Updates every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: Vec<(ParamId, Array<T>)>, lr: f64) {
        let (mu, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        for (id, mut g) in grads {
            let p = store.get_mut(id);
            if self.weight_decay != 0.0 {
                for (gv, &pv) in g.data_mut().iter_mut().zip(p.data()) {
                    *gv += wd * pv;
                }
            }
            let update = if self.momentum != 0.0 {
                match self.buffers.get_mut(&id) {
                    Some(buf) => {
                        for (b, &gv) in buf.data_mut().iter_mut().zip(g.data()) {
                            *b = mu * *b + gv;
                        }
                    }
                    None => {
                        self.buffers.insert(id, g.clone());
                    }
                }
                &self.buffers[&id]
            } else {
                &g
            };
            for (pv, &u) in p.data_mut().iter_mut().zip(update.data()) {
                *pv -= lr * u;
            }
        }
    }

    pub fn buffers(&self) -> &BTreeMap<ParamId, Array<T>> {
        &self.buffers
    }

    pub fn set_buffer(&mut self, id: ParamId, value: Array<T>) {
        self.buffers.insert(id, value);
    }
}

fn mix(seed: u64, step: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const LABELED_STREAM: u64 = 0x6c61_6265_6c65_6400;
const UNLABELED_STREAM: u64 = 0x756e_6c61_6265_6c00;
const JITTER_STREAM: u64 = 0x6a69_7474_6572_0000;

/// Network, parameters and optimiser state.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: DecSegNet,
    pub store: ParamStore<f32>,
    pub opt: Sgd<f32>,
    /// Completed optimiser steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(cfg.seed);
        let net = DecSegNet::new(&cfg.model(), &mut store)?;
        let mut t = Self { cfg: cfg.clone(), net, store, opt: Sgd::new(cfg.momentum, cfg.weight_decay), step: 0 };
        if !cfg.pretrained.as_os_str().is_empty() {
            t.load_pretrained(&cfg.pretrained.clone())?;
        }
        if !cfg.init_from.as_os_str().is_empty() {
            checkpoint::load::<f32>(&cfg.init_from)?.restore_into(&mut t.store, &["g1.", "g2."])?;
        }
        Ok(t)
    }

    /// Restores parameters, optimiser state and step counter from a checkpoint written by [`save`](Self::save).
    /// `cfg` must describe the same architecture; schedule settings such as `max_iters` may differ.
    pub fn resume(cfg: &TrainConfig, path: &Path) -> Result<Self> {
        let loaded = checkpoint::load::<f32>(path)?;
        let meta = loaded
            .meta
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no training header", path.display())))?;
        if meta.config.model() != cfg.model() {
            return Err(Error::Checkpoint("checkpoint architecture differs from the configuration".into()));
        }
        let mut cfg = cfg.clone();
        cfg.pretrained = PathBuf::new();
        cfg.init_from = PathBuf::new();
        let mut t = Self::new(&cfg)?;
        loaded.restore_into(&mut t.store, &[])?;
        for id in t.store.trainable().collect::<Vec<_>>() {
            if let Some(m) = loaded.tensors.get(&format!("{MOMENTUM_PREFIX}{}", t.store.name(id))) {
                t.opt.set_buffer(id, m.clone());
            }
        }
        t.step = meta.step;
        Ok(t)
    }

    /// Loads backbone weights. Accepts reference PyTorch key names or local `encoder.*` names.
    pub fn load_pretrained(&mut self, path: &Path) -> Result<()> {
        let torch_keys = self.cfg.backbone == Backbone::Res2net50;
        let loaded = checkpoint::load::<f32>(path)?;
        let mut found = 0;
        for (key, value) in &loaded.tensors {
            let local = if key.starts_with("encoder.") {
                Some(key.clone())
            } else if torch_keys {
                torch_key_to_local(key, "encoder")
            } else {
                None
            };
            if let Some(id) = local.and_then(|k| self.store.id(&k)) {
                self.store.set(id, value.clone())?;
                found += 1;
            }
        }
        let expected = self.store.names_with_prefix("encoder.").count();
        if found != expected {
            return Err(Error::Checkpoint(format!(
                "{} provides {found} of {expected} backbone tensors",
                path.display()
            )));
        }
        Ok(())
    }

    pub fn lr(&self) -> Result<f64> {
        poly_lr(self.step, self.cfg.max_iters, self.cfg.lr0, self.cfg.poly_power)
    }

    /// One optimiser step on a labelled batch and, if given, an unlabelled batch.
    pub fn train_step(&mut self, x_l: &ImageBatch, y_l: &LabelMap, x_u: Option<&ImageBatch>) -> Result<LossReport> {
        if self.step >= self.cfg.max_iters {
            return Err(Error::Range(format!("training already finished at step {}", self.step)));
        }
        let lr = self.lr()?;
        let cfg = &self.cfg;
        let net = &self.net;
        let tape = Tape::<f32>::new();
        let mut s = Session::new(&tape, &mut self.store, true);
        let mut terms = LossTerms::default();

        let xl_half = x_l.downsample_half()?;
        let (a, b) = (tape.constant(x_l.to_array()), tape.constant(xl_half.to_array()));
        let out_l = net.forward_pair(&mut s, a, b)?;
        terms.l_s = Some(supervised_loss(&out_l.full, &out_l.half, out_l.fused.as_ref(), y_l)?);
        if cfg.use_sc {
            terms.l_sc_l = Some(scale_consistency_loss(&out_l.full, &out_l.half)?);
        }

        if let Some(x_u) = x_u.filter(|b| b.n > 0) {
            let factors = cfg.jitter().sample(x_u.n, mix(cfg.seed ^ JITTER_STREAM, self.step));
            let xu_half = x_u.downsample_half()?;
            let x_p = apply_jitter(x_u, &factors);
            let xp_half = apply_jitter(&xu_half, &factors);
            let (a, b) = (tape.constant(x_u.to_array()), tape.constant(xu_half.to_array()));
            let out_u = net.forward_pair(&mut s, a, b)?;
            let (a, b) = (tape.constant(x_p.to_array()), tape.constant(xp_half.to_array()));
            let out_p = net.forward_pair(&mut s, a, b)?;
            if cfg.use_sc {
                terms.l_sc_u = Some(scale_consistency_loss(&out_u.full, &out_u.half)?);
                terms.l_sc_p = Some(scale_consistency_loss(&out_p.full, &out_p.half)?);
            }
            let mut pairs = vec![(&out_u.full, &out_p.full), (&out_u.half, &out_p.half)];
            if let (Some(u), Some(p)) = (&out_u.fused, &out_p.fused) {
                pairs.push((u, p));
            }
            terms.l_spc = Some(perturbation_consistency_loss(&pairs)?);
            if let Some((g1, g2)) = net.generators() {
                let (z_u, z_p) = (out_u.final_output().logits, out_p.final_output().logits);
                terms.l_cc = Some(cross_generative_loss(&mut s, z_u, z_p, x_u, &x_p, g1, g2)?);
            }
        }

        let (loss, report) = total_loss(&terms, &cfg.loss_weights())?;
        if let Some(loss) = loss {
            let mut grads = tape.backward(loss)?;
            let param_grads = s.param_grads(&mut grads);
            drop(s);
            self.opt.step(&mut self.store, param_grads, lr);
        }
        self.step += 1;
        Ok(report)
    }

    /// Writes parameters, momentum buffers and the step counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let extra: Vec<(String, Array<f32>)> = self
            .opt
            .buffers()
            .iter()
            .map(|(&id, buf)| (format!("{MOMENTUM_PREFIX}{}", self.store.name(id)), buf.clone()))
            .collect();
        let meta = CheckpointMeta { config: self.cfg.clone(), step: self.step };
        checkpoint::save(path, &meta, &self.store, &extra)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Predictor::from_store(&self.cfg, &self.store)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop once this many steps are complete (the schedule still spans `max_iters`).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub checkpoint: PathBuf,
    /// Reports of the steps run by this call, in order.
    pub reports: Vec<LossReport>,
    pub metrics: Option<MetricsReport>,
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS_CSV: &str = "metrics.csv";

fn log_writer(path: &Path, append: bool) -> Result<csv::Writer<fs::File>> {
    let exists = path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !(append && exists) {
        w.write_record(["step", "L_S", "L_SC_l", "L_SC_u", "L_SC_p", "L_SPC", "L_CC", "total", "lr"])
            .map_err(|e| Error::Io { path: path.into(), source: e.into() })?;
    }
    Ok(w)
}

/// Trains according to `cfg`, logging every step to `train_log.csv` in the output
/// directory and writing checkpoints there. The test split is evaluated at the end.
pub fn fit(cfg: &TrainConfig, opts: &FitOptions) -> Result<FitSummary> {
    cfg.validate()?;
    let spec = cfg.dataset();
    spec.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut trainer = match &opts.resume {
        Some(p) => Trainer::resume(cfg, p)?,
        None => Trainer::new(cfg)?,
    };
    let labeled = Dataset::load(&spec, Split::Labeled)?;
    let unlabeled = Dataset::load(&spec, Split::Unlabeled)?;
    let ls = BatchSampler { len: labeled.len(), batch: cfg.batch_labeled, seed: cfg.seed ^ LABELED_STREAM };
    let us = BatchSampler { len: unlabeled.len(), batch: cfg.batch_unlabeled, seed: cfg.seed ^ UNLABELED_STREAM };
    log::info!(
        "training {} labelled / {} unlabelled images, {} parameters, steps {}..{}",
        labeled.len(),
        unlabeled.len(),
        trainer.store.num_trainable(),
        trainer.step,
        cfg.max_iters
    );

    let log_path = out.join(TRAIN_LOG);
    let mut log = log_writer(&log_path, opts.resume.is_some())?;
    let end = opts.stop_after.unwrap_or(cfg.max_iters).min(cfg.max_iters);
    let mut reports = Vec::new();
    while trainer.step < end {
        let step = trainer.step;
        let lr = trainer.lr()?;
        let li = ls.indices(step);
        let (x_l, y_l) = (labeled.images(&li)?, labeled.masks(&li)?);
        let x_u = if unlabeled.is_empty() { None } else { Some(unlabeled.images(&us.indices(step))?) };
        let r = trainer.train_step(&x_l, &y_l, x_u.as_ref())?;
        log.serialize((step, r.l_s, r.l_sc_l, r.l_sc_u, r.l_sc_p, r.l_spc, r.l_cc, r.total, lr))
            .map_err(|e| Error::Io { path: log_path.clone(), source: e.into() })?;
        if step % 50 == 0 || step + 1 == end {
            log::info!("step {step}: total {:.4} (L_S {:.4}) lr {lr:.5}", r.total, r.l_s);
        }
        reports.push(r);
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 && trainer.step < cfg.max_iters {
            trainer.save(&out.join(format!("checkpoint_{:06}.safetensors", trainer.step)))?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;

    let finished = trainer.step >= cfg.max_iters;
    let checkpoint = if finished {
        out.join("final.safetensors")
    } else {
        out.join(format!("checkpoint_{:06}.safetensors", trainer.step))
    };
    trainer.save(&checkpoint)?;

    let metrics = if finished && !cfg.skip_final_eval && !spec.stems(Split::Test)?.is_empty() {
        let mut p = trainer.predictor()?;
        let (report, _) = eval_dataset(&mut p, &spec, Some(&out.join(METRICS_CSV)))?;
        log::info!("test mDice {:.4} mIoU {:.4}", report.m_dice, report.m_iou);
        Some(report)
    } else {
        None
    };
    Ok(FitSummary { checkpoint, reports, metrics })
}
