//! Cross-level feature aggregation: fuses a pyramid level with the next
//! deeper one and reweights channels with a squeeze-excitation style gate.

use decseg_tensor::{Elem, Var};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, ParamStore, Session};

pub struct Cfa {
    proj_cur: Conv2d,
    proj_next: Conv2d,
    merge: ConvBnRelu,
    squeeze: Conv2d,
    excite: Conv2d,
    refine: ConvBnRelu,
    out: usize,
}

/// Output of one fusion plus the intermediates exposed for inspection.
pub struct CfaOutput<'t, T> {
    /// Merged features before the channel gate.
    pub merged: Var<'t, T>,
    /// Channel weights in `(0, 1)`, shape `[n, c, 1, 1]`.
    pub weights: Var<'t, T>,
    pub output: Var<'t, T>,
}

impl Cfa {
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        c_cur: usize,
        c_next: usize,
        out: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || out % reduction != 0 {
            return Err(Error::Config(format!(
                "fusion width {out} is not divisible by reduction ratio {reduction}"
            )));
        }
        let p = |s: &str| format!("{name}.{s}");
        Ok(Self {
            proj_cur: Conv2d::pointwise(store, &p("proj_cur"), c_cur, out)?,
            proj_next: Conv2d::pointwise(store, &p("proj_next"), c_next, out)?,
            merge: ConvBnRelu::same3(store, &p("merge"), 2 * out, out)?,
            squeeze: Conv2d::pointwise(store, &p("squeeze"), out, out / reduction)?,
            excite: Conv2d::pointwise(store, &p("excite"), out / reduction, out)?,
            refine: ConvBnRelu::same3(store, &p("refine"), out, out)?,
            out,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out
    }

    pub fn excite_layer(&self) -> &Conv2d {
        &self.excite
    }

    pub fn forward<'t, T: Elem>(
        &self,
        s: &mut Session<'t, '_, T>,
        cur: Var<'t, T>,
        next: Var<'t, T>,
    ) -> Result<CfaOutput<'t, T>> {
        let (_, _, h, w) = cur.dims4()?;
        let a = self.proj_cur.forward(s, cur)?;
        let b = self.proj_next.forward(s, next)?.resize_bilinear(h, w)?;
        let merged = self.merge.forward(s, Var::concat_channels(&[a, b])?)?;
        let g = self.squeeze.forward(s, merged.global_avg_pool()?)?.relu();
        let weights = self.excite.forward(s, g)?.sigmoid();
        let gated = merged.mul(weights)?.add(merged)?;
        let output = self.refine.forward(s, gated)?;
        Ok(CfaOutput { merged, weights, output })
    }
}
