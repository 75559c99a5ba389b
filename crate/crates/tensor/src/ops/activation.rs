use crate::array::Array;
use crate::elem::Elem;
use crate::error::{invalid, Result};
use crate::tape::Var;

/// `(outer, channels, inner)` view of an array whose axis 1 is the channel axis.
pub(crate) fn channel_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(invalid(op, format!("needs a channel axis, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Numerically stable softmax over axis 1.
pub fn softmax_channels<T: Elem>(x: &Array<T>) -> Result<Array<T>> {
    let (n, c, inner) = channel_layout("softmax", x.shape())?;
    let mut out = Array::zeros(x.shape().to_vec());
    let (xd, od) = (x.data(), out.data_mut());
    for b in 0..n {
        let base = b * c * inner;
        for p in 0..inner {
            let mut m = T::neg_infinity();
            for k in 0..c {
                m = m.max(xd[base + k * inner + p]);
            }
            let mut s = T::zero();
            for k in 0..c {
                let e = (xd[base + k * inner + p] - m).exp();
                od[base + k * inner + p] = e;
                s += e;
            }
            for k in 0..c {
                od[base + k * inner + p] /= s;
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Elem>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Elem> Var<'t, T> {
    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v.max(T::zero()));
        self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                vec![Some(
                    g.zip_map(&x, |g, x| if x > T::zero() { g } else { T::zero() })
                        .expect("same shape"),
                )]
            }),
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = self.value().map(sigmoid_scalar);
        let y = out.clone();
        self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                vec![Some(
                    g.zip_map(&y, |g, y| g * y * (T::one() - y))
                        .expect("same shape"),
                )]
            }),
        )
    }

    /// Softmax over axis 1.
    pub fn softmax_channels(self) -> Result<Var<'t, T>> {
        let out = softmax_channels(&self.value())?;
        let y = out.clone();
        Ok(self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                let (n, c, inner) = channel_layout("softmax", y.shape()).expect("checked");
                let mut dx = Array::zeros(y.shape().to_vec());
                let (gd, yd, dd) = (g.data(), y.data(), dx.data_mut());
                for b in 0..n {
                    let base = b * c * inner;
                    for p in 0..inner {
                        let mut dot = T::zero();
                        for k in 0..c {
                            let i = base + k * inner + p;
                            dot += gd[i] * yd[i];
                        }
                        for k in 0..c {
                            let i = base + k * inner + p;
                            dd[i] = yd[i] * (gd[i] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}
