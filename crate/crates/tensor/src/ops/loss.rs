//! Fused loss kernels with analytic gradients.

use crate::array::Array;
use crate::elem::Elem;
use crate::error::{invalid, Result, TensorError};
use crate::ops::activation::softmax_channels;
use crate::tape::Var;

fn check_targets(op: &'static str, shape: &[usize], classes: usize, targets: &[u8]) -> Result<(usize, usize, usize)> {
    let [n, c, h, w] = shape[..] else {
        return Err(TensorError::Rank { op, expected: 4, got: shape.to_vec() });
    };
    if c != classes && classes != 0 {
        return Err(invalid(op, format!("expected {classes} channels, got {c}")));
    }
    if targets.len() != n * h * w {
        return Err(invalid(op, format!("{} targets for {n}x{h}x{w} pixels", targets.len())));
    }
    if let Some(bad) = targets.iter().find(|&&t| t as usize >= c) {
        return Err(invalid(op, format!("target class {bad} out of range for {c} channels")));
    }
    Ok((n, c, h * w))
}

impl<'t, T: Elem> Var<'t, T> {
    /// Mean pixel-wise cross entropy of logits `[n, c, h, w]` against class indices `[n, h, w]`.
    pub fn cross_entropy(self, targets: &[u8]) -> Result<Var<'t, T>> {
        let logits = self.value();
        let (n, c, hw) = check_targets("cross_entropy", logits.shape(), 0, targets)?;
        let probs = softmax_channels(&logits)?;
        let count = T::of((n * hw) as f64);
        let ld = logits.data();
        let mut total = T::zero();
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut m = T::neg_infinity();
                for k in 0..c {
                    m = m.max(ld[base + k * hw + p]);
                }
                let mut s = T::zero();
                for k in 0..c {
                    s += (ld[base + k * hw + p] - m).exp();
                }
                let t = targets[b * hw + p] as usize;
                total += m + s.ln() - ld[base + t * hw + p];
            }
        }
        let targets = targets.to_vec();
        Ok(self.tape().push(
            Array::scalar(total / count),
            &[self],
            Box::new(move |g, _| {
                let scale = g.item() / count;
                let mut dx = probs;
                let dd = dx.data_mut();
                for b in 0..n {
                    for p in 0..hw {
                        let t = targets[b * hw + p] as usize;
                        dd[b * c * hw + t * hw + p] -= T::one();
                    }
                }
                for v in dd.iter_mut() {
                    *v *= scale;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Soft Dice loss on channel `channel` of a probability map, averaged over images:
    /// `1 - (2|P∩G| + smooth) / (|P| + |G| + smooth)`.
    pub fn dice_loss(self, targets: &[u8], channel: usize, smooth: f64) -> Result<Var<'t, T>> {
        let probs = self.value();
        let (n, c, hw) = check_targets("dice_loss", probs.shape(), 0, targets)?;
        if channel >= c {
            return Err(invalid("dice_loss", format!("channel {channel} out of {c}")));
        }
        let smooth = T::of(smooth);
        let pd = probs.data();
        let is_fg = |b: usize, p: usize| targets[b * hw + p] as usize == channel;
        let mut parts = Vec::with_capacity(n);
        let mut total = T::zero();
        for b in 0..n {
            let base = b * c * hw + channel * hw;
            let (mut inter, mut psum, mut gsum) = (T::zero(), T::zero(), T::zero());
            for p in 0..hw {
                let v = pd[base + p];
                psum += v;
                if is_fg(b, p) {
                    inter += v;
                    gsum += T::one();
                }
            }
            let num = T::of(2.0) * inter + smooth;
            let den = psum + gsum + smooth;
            total += T::one() - num / den;
            parts.push((num, den));
        }
        let fg: Vec<bool> = (0..n * hw).map(|i| is_fg(i / hw, i % hw)).collect();
        let nf = T::of(n as f64);
        Ok(self.tape().push(
            Array::scalar(total / nf),
            &[self],
            Box::new(move |g, _| {
                let mut dx = Array::zeros([n, c, hw]);
                let dd = dx.data_mut();
                let scale = g.item() / nf;
                for (b, &(num, den)) in parts.iter().enumerate() {
                    let base = b * c * hw + channel * hw;
                    for p in 0..hw {
                        let gi = if fg[b * hw + p] { T::of(2.0) } else { T::zero() };
                        // d/dp [1 - num/den] = -(gi*den - num) / den^2
                        dd[base + p] = -(gi * den - num) / (den * den) * scale;
                    }
                }
                let dx = dx.reshape(probs.shape().to_vec()).expect("same numel");
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let diff = a.zip_map(&b, |x, y| x - y)?;
        let count = T::of(diff.len() as f64);
        let loss = diff.data().iter().map(|&d| d * d).sum::<T>() / count;
        Ok(self.tape().push(
            Array::scalar(loss),
            &[self, other],
            Box::new(move |g, needs| {
                let k = T::of(2.0) * g.item() / count;
                vec![
                    needs[0].then(|| diff.map(|d| d * k)),
                    needs[1].then(|| diff.map(|d| -d * k)),
                ]
            }),
        ))
    }
}
