use decseg_tensor::{Elem, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    Half,
}

/// Two-class prediction of one decoder.
#[derive(Clone, Copy, Debug)]
pub struct SegOutput<'t, T> {
    pub logits: Var<'t, T>,
    /// Softmax of `logits` over the class axis.
    pub probs: Var<'t, T>,
    pub scale: Scale,
}

/// Hidden features `h1..h5` of a decoder, shallowest first.
#[derive(Clone, Debug)]
pub struct DecoderState<'t, T> {
    pub features: Vec<Var<'t, T>>,
}

pub const NUM_CLASSES: usize = 2;

/// U-shaped decoder over five levels: two convolutions at the deepest level,
/// then per level a stride-2 transposed convolution, concatenation with the
/// skip input and two more convolutions, and finally a transposed-convolution
/// head back to input resolution.
pub struct Decoder {
    deep: [ConvBnRelu; 2],
    ups: Vec<ConvTranspose2d>,
    blocks: Vec<[ConvBnRelu; 2]>,
    head_up: ConvTranspose2d,
    head_bn: BatchNorm2d,
    head: Conv2d,
    scale: Scale,
}

impl Decoder {
    /// `inputs[k]` is the channel count of the level-`k+1` input (index 4 is
    /// the deepest one); `widths[k]` is the width of `h_{k+1}`.
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: [usize; 5],
        widths: [usize; 5],
        scale: Scale,
    ) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        let p = |s: String| format!("{name}.{s}");
        let deep = [
            ConvBnRelu::same3(store, &p("level5.conv1".into()), inputs[4], widths[4])?,
            ConvBnRelu::same3(store, &p("level5.conv2".into()), widths[4], widths[4])?,
        ];
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for k in (0..4).rev() {
            let l = k + 1;
            ups.push(ConvTranspose2d::up2(store, &p(format!("level{l}.up")), widths[k + 1], widths[k], true)?);
            blocks.push([
                ConvBnRelu::same3(store, &p(format!("level{l}.conv1")), widths[k] + inputs[k], widths[k])?,
                ConvBnRelu::same3(store, &p(format!("level{l}.conv2")), widths[k], widths[k])?,
            ]);
        }
        Ok(Self {
            deep,
            ups,
            blocks,
            head_up: ConvTranspose2d::up2(store, &p("head.up".into()), widths[0], widths[0], false)?,
            head_bn: BatchNorm2d::new(store, &p("head.bn".into()), widths[0])?,
            head: Conv2d::pointwise(store, &p("head.out".into()), widths[0], NUM_CLASSES)?,
            scale,
        })
    }

    /// `skips` holds levels 1..4; the output has spatial size `out_size`.
    pub fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        deepest: Var<'t, T>,
        skips: &[Var<'t, T>],
        out_size: (usize, usize),
    ) -> Result<(SegOutput<'t, T>, DecoderState<'t, T>)> {
        if skips.len() != 4 {
            return Err(Error::Dimension(format!("expected 4 skip inputs, got {}", skips.len())));
        }
        let mut h = self.deep[0].forward(s, deepest)?;
        h = self.deep[1].forward(s, h)?;
        let mut features = vec![h];
        for (i, k) in (0..4).rev().enumerate() {
            let skip = skips[k];
            let (_, _, sh, sw) = skip.dims4()?;
            let up = self.ups[i].forward(s, h)?;
            let (_, _, uh, uw) = up.dims4()?;
            if uh < sh || uw < sw {
                return Err(Error::Dimension(format!("upsampled {uh}x{uw} smaller than skip {sh}x{sw}")));
            }
            let up = if (uh, uw) == (sh, sw) { up } else { up.crop(sh, sw)? };
            h = self.blocks[i][0].forward(s, Var::concat_channels(&[up, skip])?)?;
            h = self.blocks[i][1].forward(s, h)?;
            features.push(h);
        }
        features.reverse();
        let up = self.head_up.forward(s, h)?;
        let (_, _, uh, uw) = up.dims4()?;
        let (oh, ow) = out_size;
        if uh < oh || uw < ow {
            return Err(Error::Dimension(format!("head output {uh}x{uw} smaller than {oh}x{ow}")));
        }
        let up = if (uh, uw) == (oh, ow) { up } else { up.crop(oh, ow)? };
        let up = self.head_bn.forward(s, up)?.relu();
        let logits = self.head.forward(s, up)?;
        let probs = logits.softmax_channels()?;
        Ok((SegOutput { logits, probs, scale: self.scale }, DecoderState { features }))
    }
}
