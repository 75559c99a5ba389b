//! Small encoder-decoder that maps segmentation logits back to an RGB image.

use decseg_tensor::{Elem, Var};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, ParamStore, Session};

pub struct Generator {
    down: Vec<ConvBnRelu>,
    up: Vec<(ConvTranspose2d, BatchNorm2d)>,
    out: Conv2d,
}

impl Generator {
    /// `widths` are the channel counts of the stride-2 stages, shallowest first.
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, in_channels: usize, widths: &[usize]) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config("generator needs at least one positive width".into()));
        }
        let mut down = Vec::new();
        let mut cin = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            down.push(ConvBnRelu::new(store, &format!("{name}.down{}", i + 1), cin, w, 3, 2, 1)?);
            cin = w;
        }
        let mut up = Vec::new();
        for i in (0..widths.len()).rev() {
            let cout = if i == 0 { widths[0] } else { widths[i - 1] };
            let l = widths.len() - i;
            up.push((
                ConvTranspose2d::up2(store, &format!("{name}.up{l}"), cin, cout, false)?,
                BatchNorm2d::new(store, &format!("{name}.up{l}.bn"), cout)?,
            ));
            cin = cout;
        }
        Ok(Self { down, up, out: Conv2d::pointwise(store, &format!("{name}.out"), cin, 3)? })
    }

    pub fn stride(&self) -> usize {
        1 << self.down.len()
    }

    /// Maps `[n, c, h, w]` to an image in `(0, 1)`; `h` and `w` must be multiples of [`stride`](Self::stride).
    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, _, h, w) = x.dims4()?;
        let st = self.stride();
        if h % st != 0 || w % st != 0 {
            return Err(Error::Dimension(format!("generator input {h}x{w} is not a multiple of {st}")));
        }
        let mut y = x;
        for d in &self.down {
            y = d.forward(s, y)?;
        }
        for (t, bn) in &self.up {
            let u = t.forward(s, y)?;
            y = bn.forward(s, u)?.relu();
        }
        Ok(self.out.forward(s, y)?.sigmoid())
    }
}
