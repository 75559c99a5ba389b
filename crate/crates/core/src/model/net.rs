use decseg_tensor::{Elem, Var};
use serde::{Deserialize, Serialize};

use super::dcf::{Fusion, FusionKind};
use super::decoder::{Decoder, DecoderState, Scale, SegOutput};
use super::encoder::{Backbone, Encoder, FeaturePyramid};
use super::generator::Generator;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};

/// Architecture of the whole segmentation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub stage_channels: [usize; 5],
    /// Output width of the attention fusion at levels 1..4.
    pub cfa_channels: [usize; 4],
    /// Width of decoder features `h1..h5`.
    pub decoder_channels: [usize; 5],
    pub reduction_ratio: usize,
    pub fusion: FusionKind,
    pub generator_widths: Vec<usize>,
    /// Subtract the ImageNet mean and divide by its std before the backbone.
    pub normalize_input: bool,
    pub use_cfa: bool,
    /// Builds the fusion modules and the fused decoder.
    pub use_dcf: bool,
    /// Builds the two reconstruction generators.
    pub use_cc: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::TinyCnn,
            stage_channels: [16, 32, 64, 128, 256],
            cfa_channels: [16, 32, 64, 128],
            decoder_channels: [16, 32, 64, 128, 256],
            reduction_ratio: 4,
            fusion: FusionKind::Dcf,
            generator_widths: vec![32, 64, 128],
            normalize_input: false,
            use_cfa: true,
            use_dcf: true,
            use_cc: true,
        }
    }
}

/// Outputs of the three decoders for one input and its half-scale copy.
#[derive(Clone, Debug)]
pub struct DualOutput<'t, T> {
    pub full: SegOutput<'t, T>,
    pub half: SegOutput<'t, T>,
    pub fused: Option<SegOutput<'t, T>>,
    pub full_state: DecoderState<'t, T>,
    pub half_state: DecoderState<'t, T>,
}

impl<'t, T> DualOutput<'t, T> {
    /// The prediction used at inference: the fused decoder when present, the full-scale one otherwise.
    pub fn final_output(&self) -> &SegOutput<'t, T> {
        self.fused.as_ref().unwrap_or(&self.full)
    }
}

struct FusedBranch {
    fusions: Vec<Fusion>,
    decoder: Decoder,
}

pub struct DecSegNet {
    cfg: ModelConfig,
    pub encoder: Encoder,
    pub d1: Decoder,
    pub d2: Decoder,
    fused: Option<FusedBranch>,
    generators: Option<(Generator, Generator)>,
}

impl DecSegNet {
    /// Registers every parameter of the enabled modules in `store`.
    pub fn new<T: Elem>(cfg: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let cfa = cfg.use_cfa.then_some((cfg.cfa_channels, cfg.reduction_ratio));
        let encoder = Encoder::new(store, cfg.backbone, cfg.stage_channels, cfa, cfg.normalize_input)?;
        let inputs = encoder.output_channels();
        let widths = cfg.decoder_channels;
        let d1 = Decoder::new(store, "d1", inputs, widths, Scale::Full)?;
        let d2 = Decoder::new(store, "d2", inputs, widths, Scale::Half)?;
        let fused = if cfg.use_dcf {
            let fusions = (0..5)
                .map(|k| Fusion::new(store, cfg.fusion, &format!("dcf.level{}", k + 1), widths[k]))
                .collect::<Result<Vec<_>>>()?;
            Some(FusedBranch { fusions, decoder: Decoder::new(store, "df", widths, widths, Scale::Full)? })
        } else {
            None
        };
        let generators = if cfg.use_cc {
            Some((
                Generator::new(store, "g1", 2, &cfg.generator_widths)?,
                Generator::new(store, "g2", 2, &cfg.generator_widths)?,
            ))
        } else {
            None
        };
        Ok(Self { cfg: cfg.clone(), encoder, d1, d2, fused, generators })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn fusions(&self) -> Option<&[Fusion]> {
        self.fused.as_ref().map(|f| f.fusions.as_slice())
    }

    pub fn generators(&self) -> Option<(&Generator, &Generator)> {
        self.generators.as_ref().map(|(a, b)| (a, b))
    }

    /// Encoder followed by one scale-specific decoder.
    pub fn decode_scale<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        x: Var<'t, T>,
        scale: Scale,
    ) -> Result<(FeaturePyramid<'t, T>, SegOutput<'t, T>, DecoderState<'t, T>)> {
        let (_, _, h, w) = x.dims4()?;
        let pyramid = self.encoder.encode(s, x)?;
        let inputs = self.encoder.fuse(s, &pyramid)?;
        let decoder = match scale {
            Scale::Full => &self.d1,
            Scale::Half => &self.d2,
        };
        let (out, state) = decoder.forward(s, inputs[4], &inputs[..4], (h, w))?;
        Ok((pyramid, out, state))
    }

    /// Fuses the hidden features of both scale-specific decoders and decodes them.
    pub fn decode_fused<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        full: &DecoderState<'t, T>,
        half: &DecoderState<'t, T>,
        out_size: (usize, usize),
    ) -> Result<SegOutput<'t, T>> {
        let branch = self
            .fused
            .as_ref()
            .ok_or_else(|| Error::Config("fused decoder is disabled".into()))?;
        if full.features.len() != 5 || half.features.len() != 5 {
            return Err(Error::Consistency("decoder states must hold five levels".into()));
        }
        let mut fused = Vec::with_capacity(5);
        for (k, m) in branch.fusions.iter().enumerate() {
            let (a, b) = (full.features[k], half.features[k]);
            if a.shape()[0] != b.shape()[0] {
                return Err(Error::Consistency(format!(
                    "decoder states have batch sizes {} and {}",
                    a.shape()[0],
                    b.shape()[0]
                )));
            }
            fused.push(m.forward(s, a, b)?);
        }
        let (out, _) = branch.decoder.forward(s, fused[4], &fused[..4], out_size)?;
        Ok(out)
    }

    /// Runs D1 on `x_full`, D2 on `x_half` and, when enabled, the fused decoder.
    pub fn forward_pair<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        x_full: Var<'t, T>,
        x_half: Var<'t, T>,
    ) -> Result<DualOutput<'t, T>> {
        let (_, _, h, w) = x_full.dims4()?;
        let (_, _, hh, hw) = x_half.dims4()?;
        if 2 * hh != h || 2 * hw != w {
            return Err(Error::Dimension(format!("half-scale input {hh}x{hw} for a {h}x{w} input")));
        }
        let (_, full, full_state) = self.decode_scale(s, x_full, Scale::Full)?;
        let (_, half, half_state) = self.decode_scale(s, x_half, Scale::Half)?;
        let fused = if self.fused.is_some() {
            Some(self.decode_fused(s, &full_state, &half_state, (h, w))?)
        } else {
            None
        };
        Ok(DualOutput { full, half, fused, full_state, half_state })
    }

    /// [`forward_pair`](Self::forward_pair) with the half-scale input made by bilinear halving.
    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<DualOutput<'t, T>> {
        let (_, _, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("cannot halve a {h}x{w} input")));
        }
        let half = x.resize_bilinear(h / 2, w / 2)?;
        self.forward_pair(s, x, half)
    }
}
