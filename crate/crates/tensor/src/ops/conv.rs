//! 2-D convolution and transposed convolution (NCHW) via im2col + GEMM.

use std::rc::Rc;

use crate::array::Array;
use crate::elem::Elem;
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;

/// Geometry of a convolution from a `c x h x w` plane stack to `oh x ow` outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox*s + kx - pad` lies in `[0, w)`.
    #[inline]
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        valid_range(k, self.pad, self.stride, self.w, self.ow)
    }

    #[inline]
    fn valid_rows(&self, k: usize) -> (usize, usize) {
        valid_range(k, self.pad, self.stride, self.h, self.oh)
    }
}

#[inline]
fn valid_range(k: usize, pad: usize, s: usize, len: usize, out: usize) -> (usize, usize) {
    // o*s + k - pad >= 0  <=>  o >= ceil((pad - k)/s)
    let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
    // o*s + k - pad < len  <=>  o < (len + pad - k)/s rounded up
    let hi = if len + pad > k {
        ((len + pad - k).div_ceil(s)).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn im2col<T: Elem>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let ohw = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ry0, ry1) = g.valid_rows(ky);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                let (rx0, rx1) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < ry0 || oy >= ry1 || rx0 >= rx1 {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    out_row[..rx0].fill(T::zero());
                    out_row[rx1..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = rx0 + kx - g.pad;
                        out_row[rx0..rx1].copy_from_slice(&src[ix0..ix0 + (rx1 - rx0)]);
                    } else {
                        for ox in rx0..rx1 {
                            out_row[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back into `x` (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Elem>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let ohw = g.cols();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ry0, ry1) = g.valid_rows(ky);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                let (rx0, rx1) = g.valid_cols(kx);
                if rx0 >= rx1 {
                    continue;
                }
                for oy in ry0..ry1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let in_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in rx0..rx1 {
                        dst[ox * g.stride + kx - g.pad] += in_row[ox];
                    }
                }
            }
        }
    }
}

/// Output size of a strided convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

fn add_bias<T: Elem>(y: &mut [T], bias: &[T], hw: usize) {
    for (o, chunk) in y.chunks_mut(hw).enumerate() {
        let b = bias[o % bias.len()];
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Elem>(g: &Array<T>, channels: usize) -> Array<T> {
    let (n, c, h, w) = g.dims4().expect("rank 4");
    debug_assert_eq!(c, channels);
    let hw = h * w;
    let mut db = Array::zeros([channels]);
    let dd = db.data_mut();
    for b in 0..n {
        for o in 0..c {
            let base = (b * c + o) * hw;
            dd[o] += g.data()[base..base + hw].iter().copied().sum::<T>();
        }
    }
    db
}

fn check_bias<T: Elem>(op: &'static str, bias: Option<&Var<'_, T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let shape = b.shape();
        if shape != [channels] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: shape,
                rhs: vec![channels],
            });
        }
    }
    Ok(())
}

impl<'t, T: Elem> Var<'t, T> {
    /// Cross-correlation with weight `[out, in, kh, kw]`, zero padding.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let wv = weight.value();
        let (n, c, h, w) = x.dims4()?;
        let (o, wc, kh, kw) = wv.dims4()?;
        if wc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        check_bias("conv2d", bias.as_ref(), o)?;
        let (oh, ow) = match (conv_out_len(h, kh, stride, pad), conv_out_len(w, kw, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w}"))),
        };
        let g = ConvGeom { c, h, w, kh, kw, stride, pad, oh, ow };
        let (rows, cols) = (g.rows(), g.cols());
        let mut y = Array::zeros([n, o, oh, ow]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
        for b in 0..n {
            let xb = &x.data()[b * c * h * w..(b + 1) * c * h * w];
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            let yb = &mut y.data_mut()[b * o * cols..(b + 1) * o * cols];
            T::gemm(o, rows, cols, T::one(), wv.data(), rows as isize, 1, src, cols as isize, 1, T::zero(), yb, cols as isize, 1);
        }
        let bias_val = bias.map(|b| b.value());
        if let Some(bv) = &bias_val {
            add_bias(y.data_mut(), bv.data(), cols);
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape().push(
            y,
            &parents,
            Box::new(move |gy, needs| conv2d_backward(&x, &wv, gy, &g, needs)),
        ))
    }

    /// Transposed convolution with weight `[in, out, kh, kw]`.
    ///
    /// Output size is `(h - 1) * stride - 2 * pad + kh` per axis.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let wv = weight.value();
        let (n, cin, h, w) = x.dims4()?;
        let (wc, cout, kh, kw) = wv.dims4()?;
        if wc != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: x.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(invalid("conv_transpose2d", "stride must be positive"));
        }
        check_bias("conv_transpose2d", bias.as_ref(), cout)?;
        let oh = ((h - 1) * stride + kh)
            .checked_sub(2 * pad)
            .ok_or_else(|| invalid("conv_transpose2d", "padding too large"))?;
        let ow = ((w - 1) * stride + kw)
            .checked_sub(2 * pad)
            .ok_or_else(|| invalid("conv_transpose2d", "padding too large"))?;
        // the equivalent forward convolution maps the output back onto the input grid
        let g = ConvGeom { c: cout, h: oh, w: ow, kh, kw, stride, pad, oh: h, ow: w };
        let (rows, hw) = (g.rows(), h * w);
        let mut y = Array::zeros([n, cout, oh, ow]);
        let mut col = vec![T::zero(); rows * hw];
        for b in 0..n {
            let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
            // col = W^T x, W stored as cin x rows
            T::gemm(rows, cin, hw, T::one(), wv.data(), 1, rows as isize, xb, hw as isize, 1, T::zero(), &mut col, hw as isize, 1);
            let yb = &mut y.data_mut()[b * cout * oh * ow..(b + 1) * cout * oh * ow];
            col2im(&col, &g, yb);
        }
        let bias_val = bias.map(|b| b.value());
        if let Some(bv) = &bias_val {
            add_bias(y.data_mut(), bv.data(), oh * ow);
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape().push(
            y,
            &parents,
            Box::new(move |gy, needs| conv_transpose2d_backward(&x, &wv, gy, &g, needs)),
        ))
    }
}

fn conv2d_backward<T: Elem>(
    x: &Rc<Array<T>>,
    wv: &Rc<Array<T>>,
    gy: &Array<T>,
    g: &ConvGeom,
    needs: &[bool],
) -> Vec<Option<Array<T>>> {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let o = wv.shape()[0];
    let (rows, cols) = (g.rows(), g.cols());
    let mut dx = needs[0].then(|| Array::zeros(x.shape().to_vec()));
    let mut dw = needs[1].then(|| Array::zeros(wv.shape().to_vec()));
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
    let mut dcol = if g.is_pointwise() || dx.is_none() { Vec::new() } else { vec![T::zero(); rows * cols] };
    for b in 0..n {
        let gyb = &gy.data()[b * o * cols..(b + 1) * o * cols];
        let xb = &x.data()[b * c * h * w..(b + 1) * c * h * w];
        if let Some(dw) = dw.as_mut() {
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            // dW += gy_b * col^T
            T::gemm(o, cols, rows, T::one(), gyb, cols as isize, 1, src, 1, cols as isize, T::one(), dw.data_mut(), rows as isize, 1);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * c * h * w..(b + 1) * c * h * w];
            if g.is_pointwise() {
                T::gemm(rows, o, cols, T::one(), wv.data(), 1, rows as isize, gyb, cols as isize, 1, T::zero(), dxb, cols as isize, 1);
            } else {
                T::gemm(rows, o, cols, T::one(), wv.data(), 1, rows as isize, gyb, cols as isize, 1, T::zero(), &mut dcol, cols as isize, 1);
                col2im(&dcol, g, dxb);
            }
        }
    }
    let mut out = vec![dx, dw];
    if needs.len() > 2 {
        out.push(needs[2].then(|| bias_grad(gy, o)));
    }
    out
}

fn conv_transpose2d_backward<T: Elem>(
    x: &Rc<Array<T>>,
    wv: &Rc<Array<T>>,
    gy: &Array<T>,
    g: &ConvGeom,
    needs: &[bool],
) -> Vec<Option<Array<T>>> {
    let (n, cin, h, w) = x.dims4().expect("rank 4");
    let cout = g.c;
    let (rows, hw) = (g.rows(), h * w);
    let ohw = g.h * g.w;
    let mut dx = needs[0].then(|| Array::zeros(x.shape().to_vec()));
    let mut dw = needs[1].then(|| Array::zeros(wv.shape().to_vec()));
    let mut dcol = vec![T::zero(); rows * hw];
    for b in 0..n {
        let gyb = &gy.data()[b * cout * ohw..(b + 1) * cout * ohw];
        im2col(gyb, g, &mut dcol);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * cin * hw..(b + 1) * cin * hw];
            T::gemm(cin, rows, hw, T::one(), wv.data(), rows as isize, 1, &dcol, hw as isize, 1, T::zero(), dxb, hw as isize, 1);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
            T::gemm(cin, hw, rows, T::one(), xb, hw as isize, 1, &dcol, 1, hw as isize, T::one(), dw.data_mut(), rows as isize, 1);
        }
    }
    let mut out = vec![dx, dw];
    if needs.len() > 2 {
        out.push(needs[2].then(|| bias_grad(gy, cout)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &Array<f64>, w: &Array<f64>, stride: usize, pad: usize) -> Array<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        Array::from_fn([n, o, oh, ow], |i| {
            let ox = i % ow;
            let oy = (i / ow) % oh;
            let oc = (i / (ow * oh)) % o;
            let b = i / (ow * oh * o);
            let mut s = 0.0;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        s += x.data()[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                            * w.data()[((oc * c + ci) * kh + ky) * kw + kx];
                    }
                }
            }
            s
        })
    }

    fn pseudo(i: usize, salt: f64) -> f64 {
        ((i as f64 + 1.0) * 0.7548776662 + salt).fract() * 2.0 - 1.0
    }

    #[test]
    fn conv2d_matches_naive_across_geometries() {
        for &(h, w, k, s, p) in &[(5, 7, 3, 1, 1), (6, 6, 3, 2, 1), (7, 5, 3, 2, 1), (4, 4, 1, 1, 0), (5, 5, 2, 2, 0), (3, 3, 3, 1, 0)] {
            let x = Array::from_fn([2, 3, h, w], |i| pseudo(i, 0.1));
            let wt = Array::from_fn([4, 3, k, k], |i| pseudo(i, 0.3));
            let tape = Tape::<f64>::no_grad();
            let y = tape
                .constant(x.clone())
                .conv2d(tape.constant(wt.clone()), None, s, p)
                .unwrap()
                .value();
            let want = naive_conv(&x, &wt, s, p);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{h}x{w} k{k} s{s} p{p}");
            }
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> for shared weights
        let (h, w, k, s, p) = (7, 5, 3, 2, 1);
        let x = Array::from_fn([1, 3, h, w], |i| pseudo(i, 0.2));
        let wt = Array::from_fn([4, 3, k, k], |i| pseudo(i, 0.5));
        let tape = Tape::<f64>::no_grad();
        let cx = tape.constant(x.clone()).conv2d(tape.constant(wt.clone()), None, s, p).unwrap().value();
        let y = Array::from_fn(cx.shape().to_vec(), |i| pseudo(i, 0.9));
        let ty = tape
            .constant(y.clone())
            .conv_transpose2d(tape.constant(wt), None, s, p)
            .unwrap()
            .value();
        let (_, _, th, tw) = ty.dims4().unwrap();
        assert_eq!((th, tw), (h, w));
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let mut rhs = 0.0;
        for c in 0..3 {
            for i in 0..th {
                for j in 0..tw {
                    rhs += x.data()[(c * h + i) * w + j] * ty.data()[(c * th + i) * tw + j];
                }
            }
        }
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transpose_upsamples_2x() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Array::full([1, 2, 3, 3], 1.0));
        let w = tape.constant(Array::full([2, 5, 2, 2], 0.5));
        let b = tape.constant(Array::full([5], 0.25));
        let y = x.conv_transpose2d(w, Some(b), 2, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 5, 6, 6]);
        assert!(y.value().data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn valid_range_handles_padding_edges() {
        // k=0, pad=1, stride=2, len=5, out=3: ix = 2*o - 1 valid for o in 1..3
        assert_eq!(valid_range(0, 1, 2, 5, 3), (1, 3));
        // k=2, pad=1: ix = 2*o + 1 valid for 2*o+1 < 5 -> o in 0..2
        assert_eq!(valid_range(2, 1, 2, 5, 3), (0, 2));
    }
}
