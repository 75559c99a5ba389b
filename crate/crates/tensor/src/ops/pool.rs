//! Pooling and resampling over the spatial axes of NCHW arrays.

use crate::array::Array;
use crate::elem::Elem;
use crate::error::{invalid, Result};
use crate::tape::Var;

/// Source taps of one output coordinate for bilinear resampling.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

/// Half-pixel-centre bilinear taps (`align_corners = false`).
fn bilinear_taps<T: Elem>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l1 = src - i0 as f64;
            Tap { i0, i1, w0: T::of(1.0 - l1), w1: T::of(l1) }
        })
        .collect()
}

/// Bilinear resize of a plain array (no gradient).
pub fn resize_bilinear<T: Elem>(x: &Array<T>, oh: usize, ow: usize) -> Result<Array<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(invalid("resize_bilinear", "empty spatial size"));
    }
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let mut y = Array::zeros([n, c, oh, ow]);
    let (xd, yd) = (x.data(), y.data_mut());
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut yd[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            let row = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, b) in tx.iter().enumerate() {
                row[ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                    + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
            }
        }
    }
    Ok(y)
}

fn resize_bilinear_backward<T: Elem>(g: &Array<T>, h: usize, w: usize) -> Array<T> {
    let (n, c, oh, ow) = g.dims4().expect("rank 4");
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let mut dx = Array::zeros([n, c, h, w]);
    let (gd, dd) = (g.data(), dx.data_mut());
    for p in 0..n * c {
        let src = &gd[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dd[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                dst[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                dst[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                dst[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
            }
        }
    }
    dx
}

/// Output length of a pooling window along one axis.
fn pool_out_len(len: usize, k: usize, s: usize, p: usize, ceil_mode: bool) -> Option<usize> {
    let span = (len + 2 * p).checked_sub(k)?;
    let mut out = if ceil_mode { span.div_ceil(s) } else { span / s } + 1;
    if ceil_mode && (out - 1) * s >= len + p {
        out -= 1;
    }
    Some(out)
}

/// Options for [`Var::avg_pool2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AvgPoolOptions {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub ceil_mode: bool,
    pub count_include_pad: bool,
}

impl<'t, T: Elem> Var<'t, T> {
    /// Bilinear resize to `oh x ow` with half-pixel centres.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (_, _, h, w) = x.dims4()?;
        if (h, w) == (oh, ow) {
            return Ok(self);
        }
        let y = resize_bilinear(&x, oh, ow)?;
        Ok(self.tape().push(
            y,
            &[self],
            Box::new(move |g, _| vec![Some(resize_bilinear_backward(g, h, w))]),
        ))
    }

    /// Global average pooling to `[n, c, 1, 1]`.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let y = Array::from_fn([n, c, 1, 1], |p| x.data()[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv);
        Ok(self.tape().push(
            y,
            &[self],
            Box::new(move |g, _| {
                let gd = g.data();
                vec![Some(Array::from_fn([n, c, h, w], |i| gd[i / hw] * inv))]
            }),
        ))
    }

    pub fn avg_pool2d(self, opts: AvgPoolOptions) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let AvgPoolOptions { kernel: k, stride: s, pad: p, ceil_mode, count_include_pad } = opts;
        if s == 0 || k == 0 {
            return Err(invalid("avg_pool2d", "kernel and stride must be positive"));
        }
        let (oh, ow) = match (pool_out_len(h, k, s, p, ceil_mode), pool_out_len(w, k, s, p, ceil_mode)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("avg_pool2d", "window larger than padded input")),
        };
        // (start, end, divisor) per output row/col
        let window = move |o: usize, len: usize| {
            let start = (o * s) as isize - p as isize;
            let end_pad = (start + k as isize).min((len + p) as isize);
            let padded = (end_pad - start) as usize;
            let a = start.max(0) as usize;
            let b = (end_pad.min(len as isize)).max(0) as usize;
            (a, b.max(a), padded)
        };
        let mut y = Array::zeros([n, c, oh, ow]);
        let xd = x.data();
        {
            let yd = y.data_mut();
            for pl in 0..n * c {
                let src = &xd[pl * h * w..(pl + 1) * h * w];
                for oy in 0..oh {
                    let (y0, y1, py) = window(oy, h);
                    for ox in 0..ow {
                        let (x0, x1, px) = window(ox, w);
                        let div = if count_include_pad { py * px } else { (y1 - y0) * (x1 - x0) };
                        let mut acc = T::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc += src[iy * w + ix];
                            }
                        }
                        yd[(pl * oh + oy) * ow + ox] = if div > 0 { acc / T::of(div as f64) } else { T::zero() };
                    }
                }
            }
        }
        Ok(self.tape().push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Array::zeros([n, c, h, w]);
                let (gd, dd) = (g.data(), dx.data_mut());
                for pl in 0..n * c {
                    for oy in 0..oh {
                        let (y0, y1, py) = window(oy, h);
                        for ox in 0..ow {
                            let (x0, x1, px) = window(ox, w);
                            let div = if count_include_pad { py * px } else { (y1 - y0) * (x1 - x0) };
                            if div == 0 {
                                continue;
                            }
                            let v = gd[(pl * oh + oy) * ow + ox] / T::of(div as f64);
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    dd[pl * h * w + iy * w + ix] += v;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(self, kernel: usize, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        if stride == 0 || kernel == 0 || pad * 2 > kernel {
            return Err(invalid("max_pool2d", "invalid kernel/stride/padding"));
        }
        let (oh, ow) = match (pool_out_len(h, kernel, stride, pad, false), pool_out_len(w, kernel, stride, pad, false)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid("max_pool2d", "window larger than padded input")),
        };
        let mut y = Array::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; n * c * oh * ow];
        let xd = x.data();
        {
            let yd = y.data_mut();
            for pl in 0..n * c {
                for oy in 0..oh {
                    let ys = (oy * stride) as isize - pad as isize;
                    for ox in 0..ow {
                        let xs = (ox * stride) as isize - pad as isize;
                        let mut best = T::neg_infinity();
                        let mut best_i = None;
                        for iy in ys.max(0)..(ys + kernel as isize).min(h as isize) {
                            for ix in xs.max(0)..(xs + kernel as isize).min(w as isize) {
                                let i = pl * h * w + iy as usize * w + ix as usize;
                                if best_i.is_none() || xd[i] > best {
                                    best = xd[i];
                                    best_i = Some(i);
                                }
                            }
                        }
                        let o = (pl * oh + oy) * ow + ox;
                        yd[o] = best;
                        arg[o] = best_i.expect("pad < kernel keeps every window non-empty");
                    }
                }
            }
        }
        Ok(self.tape().push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Array::zeros([n, c, h, w]);
                let dd = dx.data_mut();
                for (o, &i) in arg.iter().enumerate() {
                    dd[i] += g.data()[o];
                }
                vec![Some(dx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn half_scale_bilinear_is_2x2_average() {
        let x = Array::<f64>::from_fn([1, 1, 4, 4], |i| i as f64);
        let y = resize_bilinear(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn upsample_2x_matches_quarter_weights() {
        let x = Array::<f64>::new([1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let y = resize_bilinear(&x, 2, 4).unwrap();
        // columns: src = -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped at edge)
        assert_eq!(&y.data()[..4], &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn constants_are_preserved() {
        let x = Array::<f32>::full([1, 2, 6, 10], 0.7);
        for (oh, ow) in [(3, 5), (12, 20), (7, 3)] {
            let y = resize_bilinear(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        }
    }

    #[test]
    fn avg_pool_ceil_mode_excludes_padding() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Array::from_fn([1, 1, 3, 3], |i| i as f64));
        let opts = AvgPoolOptions { kernel: 2, stride: 2, pad: 0, ceil_mode: true, count_include_pad: false };
        let y = x.avg_pool2d(opts).unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 3.5, 6.5, 8.0]);
    }

    #[test]
    fn avg_pool_counts_padding_when_asked() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Array::full([1, 1, 2, 2], 1.0));
        let opts = AvgPoolOptions { kernel: 3, stride: 1, pad: 1, ceil_mode: false, count_include_pad: true };
        let y = x.avg_pool2d(opts).unwrap().value();
        assert_eq!(y.data(), &[4.0 / 9.0; 4]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Array::from_fn([1, 1, 4, 4], |i| i as f64));
        let y = x.max_pool2d(3, 2, 1).unwrap();
        assert_eq!(y.value().data(), &[5.0, 7.0, 13.0, 15.0]);
        let g = tape.backward(y.sum_all()).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(gx.data()[5], 1.0);
        assert_eq!(gx.sum(), 4.0);
    }
}
