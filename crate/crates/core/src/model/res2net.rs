//! Res2Net-50 v1b (26w x 4s) trunk.
//!
//! Tensor names follow the widely distributed ImageNet checkpoint with the
//! stem renamed to `stage1` and `layerK` renamed to `stage{K+1}`; see
//! [`torch_key_to_local`].

use decseg_tensor::{AvgPoolOptions, Elem, Var};

use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, ParamStore, Session};

const BASE_WIDTH: usize = 26;
const SCALE: usize = 4;
const EXPANSION: usize = 4;

/// Output channels of the five pyramid levels.
pub const RES2NET50_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Elem>(
        store: &mut ParamStore<T>,
        conv: &str,
        bn: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, conv, cin, cout, k, stride, pad, false)?,
            bn: BatchNorm2d::new(store, bn, cout)?,
        })
    }

    fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(s, x)?;
        self.bn.forward(s, y)
    }
}

struct Bottle2neck {
    conv1: ConvBn,
    convs: Vec<ConvBn>,
    conv3: ConvBn,
    width: usize,
    stride: usize,
    stage: bool,
    downsample: Option<ConvBn>,
}

impl Bottle2neck {
    fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        inplanes: usize,
        planes: usize,
        stride: usize,
        first: bool,
    ) -> Result<Self> {
        let width = planes * BASE_WIDTH / 64;
        let p = |s: &str| format!("{name}.{s}");
        let convs = (0..SCALE - 1)
            .map(|i| ConvBn::new(store, &p(&format!("convs.{i}")), &p(&format!("bns.{i}")), width, width, 3, stride, 1))
            .collect::<Result<Vec<_>>>()?;
        let out = planes * EXPANSION;
        let downsample = if first && (stride != 1 || inplanes != out) {
            Some(ConvBn::new(store, &p("downsample.1"), &p("downsample.2"), inplanes, out, 1, 1, 0)?)
        } else {
            None
        };
        Ok(Self {
            conv1: ConvBn::new(store, &p("conv1"), &p("bn1"), inplanes, width * SCALE, 1, 1, 0)?,
            convs,
            conv3: ConvBn::new(store, &p("conv3"), &p("bn3"), width * SCALE, out, 1, 1, 0)?,
            width,
            stride,
            stage: first,
            downsample,
        })
    }

    fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.conv1.forward(s, x)?.relu();
        let spx: Vec<_> = (0..SCALE).map(|i| out.narrow_channels(i * self.width, self.width)).collect::<std::result::Result<_, _>>()?;
        let mut parts = Vec::with_capacity(SCALE);
        let mut sp = spx[0];
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                sp = if self.stage { spx[i] } else { sp.add(spx[i])? };
            }
            sp = conv.forward(s, sp)?.relu();
            parts.push(sp);
        }
        let last = spx[SCALE - 1];
        parts.push(if self.stage {
            last.avg_pool2d(AvgPoolOptions {
                kernel: 3,
                stride: self.stride,
                pad: 1,
                ceil_mode: false,
                count_include_pad: true,
            })?
        } else {
            last
        });
        let out = self.conv3.forward(s, Var::concat_channels(&parts)?)?;
        let residual = match &self.downsample {
            Some(ds) => {
                let pooled = if self.stride == 1 {
                    x
                } else {
                    x.avg_pool2d(AvgPoolOptions {
                        kernel: self.stride,
                        stride: self.stride,
                        pad: 0,
                        ceil_mode: true,
                        count_include_pad: false,
                    })?
                };
                ds.forward(s, pooled)?
            }
            None => x,
        };
        Ok(out.add(residual)?.relu())
    }
}

pub struct Res2Net50 {
    stem: [ConvBn; 3],
    layers: Vec<Vec<Bottle2neck>>,
}

impl Res2Net50 {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, prefix: &str) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.stage1.{s}");
        let stem = [
            ConvBn::new(store, &p("conv1.0"), &p("conv1.1"), 3, 32, 3, 2, 1)?,
            ConvBn::new(store, &p("conv1.3"), &p("conv1.4"), 32, 32, 3, 1, 1)?,
            ConvBn::new(store, &p("conv1.6"), &p("bn1"), 32, 64, 3, 1, 1)?,
        ];
        let mut inplanes = 64;
        let mut layers = Vec::new();
        for (li, (&planes, &blocks)) in [64, 128, 256, 512].iter().zip(&[3, 4, 6, 3]).enumerate() {
            let stride = if li == 0 { 1 } else { 2 };
            let mut layer = Vec::new();
            for b in 0..blocks {
                let name = format!("{prefix}.stage{}.{b}", li + 2);
                let first = b == 0;
                layer.push(Bottle2neck::new(store, &name, inplanes, planes, if first { stride } else { 1 }, first)?);
                inplanes = planes * EXPANSION;
            }
            layers.push(layer);
        }
        Ok(Self { stem, layers })
    }

    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut h = self.stem[0].forward(s, x)?.relu();
        h = self.stem[1].forward(s, h)?.relu();
        let f1 = self.stem[2].forward(s, h)?.relu();
        let mut levels = vec![f1];
        let mut h = f1.max_pool2d(3, 2, 1)?;
        for layer in &self.layers {
            for block in layer {
                h = block.forward(s, h)?;
            }
            levels.push(h);
        }
        Ok(levels)
    }
}

/// Maps a key of the reference PyTorch checkpoint (`conv1.0.weight`,
/// `layer2.0.convs.1.weight`, ...) to the local name under `prefix`.
/// Returns `None` for tensors the trunk does not use (the classifier, `num_batches_tracked`).
pub fn torch_key_to_local(key: &str, prefix: &str) -> Option<String> {
    let key = key.strip_prefix("module.").unwrap_or(key);
    if key.ends_with("num_batches_tracked") || key.starts_with("fc.") {
        return None;
    }
    if key.starts_with("conv1.") || key.starts_with("bn1.") {
        return Some(format!("{prefix}.stage1.{key}"));
    }
    let rest = key.strip_prefix("layer")?;
    let (idx, tail) = rest.split_once('.')?;
    let idx: usize = idx.parse().ok()?;
    (1..=4).contains(&idx).then(|| format!("{prefix}.stage{}.{tail}", idx + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torch_keys_map_to_stages() {
        assert_eq!(torch_key_to_local("conv1.0.weight", "encoder").unwrap(), "encoder.stage1.conv1.0.weight");
        assert_eq!(torch_key_to_local("bn1.running_var", "encoder").unwrap(), "encoder.stage1.bn1.running_var");
        assert_eq!(
            torch_key_to_local("layer3.5.bns.2.bias", "encoder").unwrap(),
            "encoder.stage4.5.bns.2.bias"
        );
        assert_eq!(torch_key_to_local("fc.weight", "encoder"), None);
        assert_eq!(torch_key_to_local("layer1.0.bn1.num_batches_tracked", "encoder"), None);
    }
}
