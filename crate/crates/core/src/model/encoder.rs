use decseg_tensor::{Array, Elem, Var};
use serde::{Deserialize, Serialize};

use super::cfa::Cfa;
use super::res2net::{Res2Net50, RES2NET50_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{ConvBnRelu, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Five stride-2 ConvBNReLU blocks; widths come from `stage_channels`.
    TinyCnn,
    Res2net50,
}

/// Five feature maps at strides 2, 4, 8, 16 and 32 (ceil sizes).
#[derive(Clone, Debug)]
pub struct FeaturePyramid<'t, T> {
    pub levels: Vec<Var<'t, T>>,
}

enum Trunk {
    Tiny(Vec<ConvBnRelu>),
    Res2Net(Box<Res2Net50>),
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Backbone plus the optional attention fusion of adjacent levels.
pub struct Encoder {
    trunk: Trunk,
    cfa: Option<Vec<Cfa>>,
    channels: [usize; 5],
    normalize: bool,
}

impl Encoder {
    /// Input height and width must be multiples of this.
    pub const SIZE_MULTIPLE: usize = 16;

    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        backbone: Backbone,
        stage_channels: [usize; 5],
        cfa_channels: Option<([usize; 4], usize)>,
        normalize: bool,
    ) -> Result<Self> {
        let (trunk, channels) = match backbone {
            Backbone::TinyCnn => {
                let mut cin = 3;
                let mut stages = Vec::new();
                for (k, &c) in stage_channels.iter().enumerate() {
                    if c == 0 {
                        return Err(Error::Config("stage channel count must be positive".into()));
                    }
                    stages.push(ConvBnRelu::new(store, &format!("encoder.stage{}", k + 1), cin, c, 3, 2, 1)?);
                    cin = c;
                }
                (Trunk::Tiny(stages), stage_channels)
            }
            Backbone::Res2net50 => {
                if stage_channels != RES2NET50_CHANNELS {
                    return Err(Error::Config(format!(
                        "res2net50 has stage channels {RES2NET50_CHANNELS:?}, configured {stage_channels:?}"
                    )));
                }
                (Trunk::Res2Net(Box::new(Res2Net50::new(store, "encoder")?)), RES2NET50_CHANNELS)
            }
        };
        let cfa = match cfa_channels {
            Some((out, r)) => Some(
                (0..4)
                    .map(|i| Cfa::new(store, &format!("cfa.level{}", i + 1), channels[i], channels[i + 1], out[i], r))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Self { trunk, cfa, channels, normalize })
    }

    pub fn stage_channels(&self) -> [usize; 5] {
        self.channels
    }

    /// Channels of the five maps handed to a decoder.
    pub fn output_channels(&self) -> [usize; 5] {
        let mut c = self.channels;
        if let Some(cfa) = &self.cfa {
            for (i, m) in cfa.iter().enumerate() {
                c[i] = m.out_channels();
            }
        }
        c
    }

    pub fn has_cfa(&self) -> bool {
        self.cfa.is_some()
    }

    pub fn encode<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<FeaturePyramid<'t, T>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::Dimension(format!("expected an RGB input, got {c} channels")));
        }
        if h == 0 || w == 0 || h % Self::SIZE_MULTIPLE != 0 || w % Self::SIZE_MULTIPLE != 0 {
            return Err(Error::Dimension(format!(
                "input {h}x{w} is not a multiple of {}",
                Self::SIZE_MULTIPLE
            )));
        }
        let x = if self.normalize {
            let tape = s.tape();
            let mean = tape.constant(Array::new([1, 3, 1, 1], IMAGENET_MEAN.map(T::of).to_vec())?);
            let inv = tape.constant(Array::new([1, 3, 1, 1], IMAGENET_STD.map(|v| T::of(1.0 / v)).to_vec())?);
            x.sub(mean)?.mul(inv)?
        } else {
            x
        };
        let levels = match &self.trunk {
            Trunk::Tiny(stages) => {
                let mut h = x;
                let mut levels = Vec::with_capacity(5);
                for stage in stages {
                    h = stage.forward(s, h)?;
                    levels.push(h);
                }
                levels
            }
            Trunk::Res2Net(net) => net.forward(s, x)?,
        };
        Ok(FeaturePyramid { levels })
    }

    /// Decoder inputs: attention-fused levels 1..4 (or the raw ones) and level 5 as is.
    pub fn fuse<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        pyramid: &FeaturePyramid<'t, T>,
    ) -> Result<Vec<Var<'t, T>>> {
        let f = &pyramid.levels;
        match &self.cfa {
            Some(cfa) => {
                let mut out = Vec::with_capacity(5);
                for (i, m) in cfa.iter().enumerate() {
                    out.push(m.forward(s, f[i], f[i + 1])?.output);
                }
                out.push(f[4]);
                Ok(out)
            }
            None => Ok(f.clone()),
        }
    }
}

/// Spatial size of pyramid level `k` (1-based) for an `h`x`w` input.
pub fn level_size(h: usize, w: usize, k: u32) -> (usize, usize) {
    let d = 1usize << k;
    (h.div_ceil(d), w.div_ceil(d))
}
