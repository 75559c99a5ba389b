use crate::array::Array;
use crate::elem::Elem;
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;

impl<'t, T: Elem> Var<'t, T> {
    /// Concatenates rank-4 values along the channel axis.
    pub fn concat_channels(items: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = items.first().ok_or_else(|| invalid("concat_channels", "empty list"))?;
        let values: Vec<_> = items.iter().map(|v| v.value()).collect();
        let (n, _, h, w) = values[0].dims4()?;
        let mut widths = Vec::with_capacity(values.len());
        for v in &values {
            let (vn, vc, vh, vw) = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(vc);
        }
        let c: usize = widths.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c * hw);
        for b in 0..n {
            for (v, &vc) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[b * vc * hw..(b + 1) * vc * hw]);
            }
        }
        let out = Array::new([n, c, h, w], out)?;
        Ok(first.tape().push(
            out,
            items,
            Box::new(move |g, needs| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&vc, &need)| {
                        let piece = need.then(|| g.narrow_channels(start, vc).expect("in range"));
                        start += vc;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = x.narrow_channels(start, len)?;
        Ok(self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let hw = h * w;
                let mut dx = Array::zeros(shape.clone());
                let dd = dx.data_mut();
                for b in 0..n {
                    let dst = (b * c + start) * hw;
                    dd[dst..dst + len * hw].copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Keeps the top-left `oh x ow` window of every plane.
    pub fn crop(self, oh: usize, ow: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if (oh, ow) == (h, w) {
            return Ok(self);
        }
        if oh > h || ow > w {
            return Err(invalid("crop", format!("{oh}x{ow} exceeds {h}x{w}")));
        }
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for y in 0..oh {
                let base = p * h * w + y * w;
                out.extend_from_slice(&x.data()[base..base + ow]);
            }
        }
        let out = Array::new([n, c, oh, ow], out)?;
        Ok(self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Array::zeros([n, c, h, w]);
                let dd = dx.data_mut();
                for p in 0..n * c {
                    for y in 0..oh {
                        let src = (p * oh + y) * ow;
                        let dst = p * h * w + y * w;
                        dd[dst..dst + ow].copy_from_slice(&g.data()[src..src + ow]);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}
