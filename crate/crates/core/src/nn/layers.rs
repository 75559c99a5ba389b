use decseg_tensor::{Elem, Var};

use super::params::{Init, ParamId, ParamKind, ParamStore};
use super::session::Session;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let weight = store.register(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            ParamKind::Trainable,
            Init::Uniform { fan_in },
        )?;
        let bias = if bias {
            Some(store.register(&format!("{name}.bias"), &[cout], ParamKind::Trainable, Init::Uniform { fan_in })?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride, pad })
    }

    /// 1x1 convolution with bias.
    pub fn pointwise<T: Elem>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, 1, 1, 0, true)
    }

    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(x.conv2d(w, b, self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl ConvTranspose2d {
    /// Kernel-2, stride-2 upsampling layer.
    pub fn up2<T: Elem>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        let fan_in = cout * 4;
        let weight = store.register(
            &format!("{name}.weight"),
            &[cin, cout, 2, 2],
            ParamKind::Trainable,
            Init::Uniform { fan_in },
        )?;
        let bias = if bias {
            Some(store.register(&format!("{name}.bias"), &[cout], ParamKind::Trainable, Init::Uniform { fan_in })?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride: 2 })
    }

    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(x.conv_transpose2d(w, b, self.stride, 0)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let c = [channels];
        Ok(Self {
            gamma: store.register(&format!("{name}.weight"), &c, ParamKind::Trainable, Init::Constant(1.0))?,
            beta: store.register(&format!("{name}.bias"), &c, ParamKind::Trainable, Init::Constant(0.0))?,
            running_mean: store.register(&format!("{name}.running_mean"), &c, ParamKind::Buffer, Init::Constant(0.0))?,
            running_var: store.register(&format!("{name}.running_var"), &c, ParamKind::Buffer, Init::Constant(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// Batch statistics (and a running-average update) in training mode,
    /// running statistics otherwise.
    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        if s.training() {
            let (y, stats) = x.batch_norm_train(g, b, self.eps)?;
            let m = T::of(self.momentum);
            let keep = T::one() - m;
            let store = s.store_mut();
            for (buf, fresh) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var_unbiased)] {
                for (r, &v) in store.get_mut(buf).data_mut().iter_mut().zip(fresh) {
                    *r = keep * *r + m * v;
                }
            }
            Ok(y)
        } else {
            let rm = s.store().get(self.running_mean).data().to_vec();
            let rv = s.store().get(self.running_var).data().to_vec();
            Ok(x.batch_norm_eval(g, b, &rm, &rv, self.eps)?)
        }
    }
}

/// `ReLU(BN(conv(x)))`, with a bias-free convolution.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, pad, false)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    /// 3x3, stride 1, "same" padding.
    pub fn same3<T: Elem>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, 3, 1, 1)
    }

    pub fn forward<'t, T: Elem>(&self, s: &mut Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(s, x)?;
        Ok(self.bn.forward(s, y)?.relu())
    }
}
