//! Fusion of same-level decoder features from the full- and half-scale branches.

use decseg_tensor::{Elem, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Conv2d, ConvBnRelu, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Complementary enhancement in both directions with learned per-pixel blend weights.
    Dcf,
    /// Concatenation followed by two convolutions.
    Basic,
}

pub struct DcfOutput<'t, T> {
    /// Full-resolution branch after absorbing the half-scale features.
    pub rec_full: Var<'t, T>,
    /// Half-scale branch after absorbing the full-scale features, upsampled.
    pub rec_half: Var<'t, T>,
    /// Blend weights `[n, 2, h, w]`; channel 0 weighs `rec_full`.
    pub alpha: Var<'t, T>,
    pub output: Var<'t, T>,
}

/// One side of the exchange: `smooth(own(x) + u * sigmoid(u))` with `u = other(y)`.
struct Branch {
    other: ConvBnRelu,
    own: ConvBnRelu,
    smooth: ConvBnRelu,
}

impl Branch {
    fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            other: ConvBnRelu::same3(store, &format!("{name}.other"), c, c)?,
            own: ConvBnRelu::same3(store, &format!("{name}.own"), c, c)?,
            smooth: ConvBnRelu::same3(store, &format!("{name}.smooth"), c, c)?,
        })
    }

    fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        own: Var<'t, T>,
        other_resized: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let u = self.other.forward(s, other_resized)?;
        let comp = u.mul(u.sigmoid())?;
        let o = self.own.forward(s, own)?;
        self.smooth.forward(s, o.add(comp)?)
    }
}

pub struct Dcf {
    full: Branch,
    half: Branch,
    blend: Conv2d,
}

impl Dcf {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            full: Branch::new(store, &format!("{name}.full"), channels)?,
            half: Branch::new(store, &format!("{name}.half"), channels)?,
            blend: Conv2d::pointwise(store, &format!("{name}.blend"), 2 * channels, 2)?,
        })
    }

    pub fn blend_layer(&self) -> &Conv2d {
        &self.blend
    }

    /// `h_full` and `h_half` are the same decoder level of the two branches.
    pub fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        h_full: Var<'t, T>,
        h_half: Var<'t, T>,
    ) -> Result<DcfOutput<'t, T>> {
        let (_, c, h1, w1) = h_full.dims4()?;
        let (_, _, h2, w2) = h_half.dims4()?;
        let rec_full = self.full.forward(s, h_full, h_half.resize_bilinear(h1, w1)?)?;
        let rec_half = self
            .half
            .forward(s, h_half, h_full.resize_bilinear(h2, w2)?)?
            .resize_bilinear(h1, w1)?;
        let alpha = self
            .blend
            .forward(s, Var::concat_channels(&[rec_full, rec_half])?)?
            .softmax_channels()?;
        let a_full = alpha.narrow_channels(0, 1)?;
        let a_half = alpha.narrow_channels(1, 1)?;
        debug_assert_eq!(rec_full.shape()[1], c);
        let output = rec_full.mul(a_full)?.add(rec_half.mul(a_half)?)?;
        Ok(DcfOutput { rec_full, rec_half, alpha, output })
    }
}

/// Ablation baseline: `conv(conv(concat(h_full, up(h_half))))`.
pub struct BasicFusion {
    convs: [ConvBnRelu; 2],
}

impl BasicFusion {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            convs: [
                ConvBnRelu::same3(store, &format!("{name}.conv1"), 2 * channels, channels)?,
                ConvBnRelu::same3(store, &format!("{name}.conv2"), channels, channels)?,
            ],
        })
    }

    pub fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        h_full: Var<'t, T>,
        h_half: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (_, _, h1, w1) = h_full.dims4()?;
        let x = Var::concat_channels(&[h_full, h_half.resize_bilinear(h1, w1)?])?;
        let x = self.convs[0].forward(s, x)?;
        self.convs[1].forward(s, x)
    }
}

pub enum Fusion {
    Dcf(Dcf),
    Basic(BasicFusion),
}

impl Fusion {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, kind: FusionKind, name: &str, channels: usize) -> Result<Self> {
        Ok(match kind {
            FusionKind::Dcf => Fusion::Dcf(Dcf::new(store, name, channels)?),
            FusionKind::Basic => Fusion::Basic(BasicFusion::new(store, name, channels)?),
        })
    }

    pub fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        h_full: Var<'t, T>,
        h_half: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self {
            Fusion::Dcf(m) => Ok(m.forward(s, h_full, h_half)?.output),
            Fusion::Basic(m) => m.forward(s, h_full, h_half),
        }
    }
}
