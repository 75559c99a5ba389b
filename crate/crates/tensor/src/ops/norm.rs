use crate::array::Array;
use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::tape::Var;

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running-statistics updates.
    pub var_unbiased: Vec<T>,
}

fn check_affine<T: Elem>(op: &'static str, c: usize, gamma: &Var<'_, T>, beta: &Var<'_, T>) -> Result<()> {
    for p in [gamma, beta] {
        let s = p.shape();
        if s != [c] {
            return Err(TensorError::ShapeMismatch { op, lhs: s, rhs: vec![c] });
        }
    }
    Ok(())
}

impl<'t, T: Elem> Var<'t, T> {
    /// Batch normalisation over `(n, h, w)` using the statistics of this batch.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: f64,
    ) -> Result<(Var<'t, T>, BatchStats<T>)> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        check_affine("batch_norm", c, &gamma, &beta)?;
        let (gv, bv) = (gamma.value(), beta.value());
        let hw = h * w;
        let m = n * hw;
        let mf = T::of(m as f64);
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                mean[ch] += xd[base..base + hw].iter().copied().sum::<T>();
            }
        }
        for v in &mut mean {
            *v /= mf;
        }
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let mu = mean[ch];
                var[ch] += xd[base..base + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
        }
        for v in &mut var {
            *v /= mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let mut xhat = Array::zeros(x.shape().to_vec());
        let mut y = Array::zeros(x.shape().to_vec());
        {
            let (hd, yd) = (xhat.data_mut(), y.data_mut());
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let (mu, is, g, bb) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
                    for i in base..base + hw {
                        let xh = (xd[i] - mu) * is;
                        hd[i] = xh;
                        yd[i] = g * xh + bb;
                    }
                }
            }
        }
        let stats = BatchStats {
            mean,
            var_unbiased: var
                .iter()
                .map(|&v| if m > 1 { v * mf / T::of((m - 1) as f64) } else { v })
                .collect(),
        };
        let out = self.tape().push(
            y,
            &[self, gamma, beta],
            Box::new(move |gy, needs| {
                let gd = gy.data();
                let hd = xhat.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            sum_dy[ch] += gd[i];
                            sum_dy_xhat[ch] += gd[i] * hd[i];
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = Array::zeros(gy.shape().to_vec());
                    let dd = dx.data_mut();
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let k = gv.data()[ch] * inv_std[ch] / mf;
                            let (s1, s2) = (sum_dy[ch], sum_dy_xhat[ch]);
                            for i in base..base + hw {
                                dd[i] = k * (mf * gd[i] - s1 - hd[i] * s2);
                            }
                        }
                    }
                    dx
                });
                let dgamma = needs[1].then(|| Array::new([c], sum_dy_xhat.clone()).expect("len c"));
                let dbeta = needs[2].then(|| Array::new([c], sum_dy).expect("len c"));
                vec![dx, dgamma, dbeta]
            }),
        );
        Ok((out, stats))
    }

    /// Batch normalisation with fixed statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        check_affine("batch_norm", c, &gamma, &beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![running_mean.len(), running_var.len()],
                rhs: vec![c, c],
            });
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let hw = h * w;
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let rm = running_mean.to_vec();
        let mut y = Array::zeros(x.shape().to_vec());
        let (xd, yd) = (x.data(), y.data_mut());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let scale = gv.data()[ch] * inv_std[ch];
                let shift = bv.data()[ch] - rm[ch] * scale;
                for i in base..base + hw {
                    yd[i] = xd[i] * scale + shift;
                }
            }
        }
        Ok(self.tape().push(
            y,
            &[self, gamma, beta],
            Box::new(move |gy, needs| {
                let gd = gy.data();
                let xd = x.data();
                let mut dx = needs[0].then(|| Array::zeros(gy.shape().to_vec()));
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let scale = gv.data()[ch] * inv_std[ch];
                        for i in base..base + hw {
                            dbeta[ch] += gd[i];
                            dgamma[ch] += gd[i] * (xd[i] - rm[ch]) * inv_std[ch];
                        }
                        if let Some(dx) = dx.as_mut() {
                            for i in base..base + hw {
                                dx.data_mut()[i] = gd[i] * scale;
                            }
                        }
                    }
                }
                vec![
                    dx,
                    needs[1].then(|| Array::new([c], dgamma).expect("len c")),
                    needs[2].then(|| Array::new([c], dbeta).expect("len c")),
                ]
            }),
        ))
    }
}
