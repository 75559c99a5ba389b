//! Flat TOML training configuration and the published recipe presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, JitterStrength};
use crate::error::{io_err, Error, Result};
use crate::losses::LossWeights;
use crate::model::{Backbone, FusionKind, ModelConfig, RES2NET50_CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    // data
    pub data_root: PathBuf,
    pub labeled_list: String,
    pub unlabeled_list: String,
    pub test_list: String,
    pub image_size: usize,
    pub normalize_input: bool,

    // model
    pub backbone: Backbone,
    pub stage_channels: [usize; 5],
    pub cfa_channels: [usize; 4],
    pub decoder_channels: [usize; 5],
    pub reduction_ratio: usize,
    pub fusion: FusionKind,
    pub generator_widths: Vec<usize>,
    /// Safetensors file with backbone weights (`encoder.*` names, or reference
    /// PyTorch names for res2net50); empty for none.
    pub pretrained: PathBuf,
    /// Checkpoint whose parameters initialise the whole network (generators may
    /// be absent); empty for none. Applied after `pretrained`.
    pub init_from: PathBuf,

    // objective switches
    pub use_sc: bool,
    pub use_dcf: bool,
    pub use_cc: bool,
    pub use_cfa: bool,
    pub weight_sup: f64,
    pub weight_sc: f64,
    pub weight_spc: f64,
    pub weight_cc: f64,

    // optimisation
    pub max_iters: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,

    // perturbation
    pub jitter_brightness: f64,
    pub jitter_contrast: f64,
    pub jitter_saturation: f64,
    pub jitter_hue: f64,

    // output
    pub output_dir: PathBuf,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Skip the test-split evaluation at the end of training.
    pub skip_final_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let j = JitterStrength::default();
        Self {
            data_root: PathBuf::from("data"),
            labeled_list: "labeled.txt".into(),
            unlabeled_list: "unlabeled.txt".into(),
            test_list: "test.txt".into(),
            image_size: 96,
            normalize_input: m.normalize_input,
            backbone: m.backbone,
            stage_channels: m.stage_channels,
            cfa_channels: m.cfa_channels,
            decoder_channels: m.decoder_channels,
            reduction_ratio: m.reduction_ratio,
            fusion: m.fusion,
            generator_widths: m.generator_widths,
            pretrained: PathBuf::new(),
            init_from: PathBuf::new(),
            use_sc: true,
            use_dcf: m.use_dcf,
            use_cc: m.use_cc,
            use_cfa: m.use_cfa,
            weight_sup: 1.0,
            weight_sc: 1.0,
            weight_spc: 1.0,
            weight_cc: 1.0,
            max_iters: 300,
            batch_labeled: 3,
            batch_unlabeled: 3,
            lr0: 1e-2,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            jitter_brightness: j.brightness,
            jitter_contrast: j.contrast,
            jitter_saturation: j.saturation,
            jitter_hue: j.hue,
            output_dir: PathBuf::from("runs/decseg"),
            checkpoint_every: 0,
            skip_final_eval: false,
        }
    }
}

/// Dataset families with published training settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Polyp,
    SkinLesion,
    BrainMri,
}

impl Recipe {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "polyp" => Ok(Self::Polyp),
            "skin" | "skin_lesion" => Ok(Self::SkinLesion),
            "brain" | "brain_mri" => Ok(Self::BrainMri),
            other => Err(Error::Config(format!("unknown recipe `{other}` (polyp, skin, brain)"))),
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: Res2Net-50 backbone, 10k iterations, 3 labelled +
    /// 3 unlabelled images per step, SGD from lr 1e-2 with poly decay.
    pub fn recipe(recipe: Recipe) -> Self {
        Self {
            image_size: match recipe {
                Recipe::Polyp | Recipe::SkinLesion => 352,
                Recipe::BrainMri => 256,
            },
            normalize_input: true,
            backbone: Backbone::Res2net50,
            stage_channels: RES2NET50_CHANNELS,
            cfa_channels: [64, 64, 128, 256],
            decoder_channels: [64, 64, 128, 256, 512],
            max_iters: 10_000,
            checkpoint_every: 1000,
            output_dir: PathBuf::from("runs/decseg"),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_labeled < 1 || self.batch_unlabeled < 1 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return bad(format!("image_size {} is not a positive multiple of 32", self.image_size));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.poly_power < 0.0 {
            return bad("momentum must lie in [0, 1); weight_decay and poly_power must be non-negative".into());
        }
        if self.use_cc {
            let stride = 1usize << self.generator_widths.len();
            if self.image_size % stride != 0 {
                return bad(format!("image_size {} is not a multiple of the generator stride {stride}", self.image_size));
            }
        }
        for (name, w) in [
            ("weight_sup", self.weight_sup),
            ("weight_sc", self.weight_sc),
            ("weight_spc", self.weight_spc),
            ("weight_cc", self.weight_cc),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            stage_channels: self.stage_channels,
            cfa_channels: self.cfa_channels,
            decoder_channels: self.decoder_channels,
            reduction_ratio: self.reduction_ratio,
            fusion: self.fusion,
            generator_widths: self.generator_widths.clone(),
            normalize_input: self.normalize_input,
            use_cfa: self.use_cfa,
            use_dcf: self.use_dcf,
            use_cc: self.use_cc,
        }
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            root: self.data_root.clone(),
            labeled_list: self.labeled_list.clone(),
            unlabeled_list: self.unlabeled_list.clone(),
            test_list: self.test_list.clone(),
            image_size: self.image_size,
        }
    }

    pub fn jitter(&self) -> JitterStrength {
        JitterStrength {
            brightness: self.jitter_brightness,
            contrast: self.jitter_contrast,
            saturation: self.jitter_saturation,
            hue: self.jitter_hue,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { sup: self.weight_sup, sc: self.weight_sc, spc: self.weight_spc, cc: self.weight_cc }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies `key=value` overrides. Values are parsed
    /// as TOML and fall back to plain strings.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Compute device selected by `DECSEG_DEVICE`. Only the CPU is supported.
pub fn device_from_env() -> Result<&'static str> {
    match std::env::var("DECSEG_DEVICE") {
        Err(_) => Ok("cpu"),
        Ok(v) if v.eq_ignore_ascii_case("cpu") || v.is_empty() => Ok("cpu"),
        Ok(v) => Err(Error::Config(format!("unsupported device `{v}`; only `cpu` is available"))),
    }
}
