//! Elementwise arithmetic with equal-rank broadcasting, plus reductions.

use std::rc::Rc;

use crate::array::{broadcast_shape, for_each_broadcast, reduce_to, Array};
use crate::elem::Elem;
use crate::error::{invalid, Result};
use crate::tape::Var;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }

    #[inline]
    fn apply<T: Elem>(self, a: T, b: T) -> T {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
        }
    }
}

fn check_tape<T: Elem>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.same_tape(b) {
        Ok(())
    } else {
        Err(invalid(op, "operands live on different tapes"))
    }
}

fn binary<'t, T: Elem>(a: Var<'t, T>, b: Var<'t, T>, op: BinOp) -> Result<Var<'t, T>> {
    check_tape(op.name(), &a, &b)?;
    let av = a.value();
    let bv = b.value();
    let out_shape = broadcast_shape(op.name(), av.shape(), bv.shape())?;
    let out = if av.shape() == bv.shape() {
        av.zip_map(&bv, |x, y| op.apply(x, y))?
    } else {
        let mut out = Array::zeros(out_shape.clone());
        let (ad, bd) = (av.data(), bv.data());
        let od = out.data_mut();
        for_each_broadcast(av.shape(), bv.shape(), &out_shape, |o, i, j| {
            od[o] = op.apply(ad[i], bd[j]);
        });
        out
    };
    Ok(a.tape().push(
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
            let ga = needs[0].then(|| match op {
                BinOp::Add | BinOp::Sub => reduce_to(g, &sa),
                BinOp::Mul => reduce_to(&mul_broadcast(g, &bv), &sa),
            });
            let gb = needs[1].then(|| match op {
                BinOp::Add => reduce_to(g, &sb),
                BinOp::Sub => reduce_to(&g.map(|v| -v), &sb),
                BinOp::Mul => reduce_to(&mul_broadcast(g, &av), &sb),
            });
            vec![ga, gb]
        }),
    ))
}

/// `g * x` where `x` broadcasts to `g`'s shape.
fn mul_broadcast<T: Elem>(g: &Array<T>, x: &Rc<Array<T>>) -> Array<T> {
    if g.shape() == x.shape() {
        return g.zip_map(x, |a, b| a * b).expect("same shape");
    }
    let mut out = Array::zeros(g.shape().to_vec());
    let (gd, xd) = (g.data(), x.data());
    let od = out.data_mut();
    for_each_broadcast(g.shape(), x.shape(), g.shape(), |o, i, j| od[o] = gd[i] * xd[j]);
    out
}

impl<'t, T: Elem> Var<'t, T> {
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary(self, rhs, BinOp::Add)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary(self, rhs, BinOp::Sub)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary(self, rhs, BinOp::Mul)
    }

    /// `k * self`.
    pub fn scale(self, k: f64) -> Var<'t, T> {
        let k = T::of(k);
        let out = self.value().map(|v| v * k);
        self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(g.map(|v| v * k))]),
        )
    }

    /// `self + k`.
    pub fn add_scalar(self, k: f64) -> Var<'t, T> {
        let k = T::of(k);
        let out = self.value().map(|v| v + k);
        self.tape()
            .push(out, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn sqr(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| {
                let two = T::of(2.0);
                vec![Some(g.zip_map(&x, |g, x| two * g * x).expect("same shape"))]
            }),
        )
    }

    /// Sum of all elements as a one-element array.
    pub fn sum_all(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Array::scalar(x.sum());
        self.tape().push(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(Array::full(shape, g.item()))]),
        )
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sums a list of same-shaped values.
    pub fn sum_of(items: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let (first, rest) = items
            .split_first()
            .ok_or_else(|| invalid("sum_of", "empty list"))?;
        rest.iter().try_fold(*first, |acc, v| acc.add(*v))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Tape};

    #[test]
    fn broadcast_mul_gradients() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(Array::from_fn([1, 2, 2, 2], |i| i as f64));
        let w = tape.variable(Array::new([1, 2, 1, 1], vec![2.0, -1.0]).unwrap());
        let y = x.mul(w).unwrap().sum_all();
        assert_eq!(y.value().item(), 2.0 * (0.0 + 1.0 + 2.0 + 3.0) - (4.0 + 5.0 + 6.0 + 7.0));
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[6.0, 22.0]);
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn sub_gradient_sign() {
        let tape = Tape::<f64>::new();
        let a = tape.variable(Array::scalar(1.0));
        let b = tape.variable(Array::scalar(4.0));
        let y = a.sub(b).unwrap().sqr();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().item(), -6.0);
        assert_eq!(g.get(b).unwrap().item(), 6.0);
    }

    #[test]
    fn mismatched_shapes_error() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Array::zeros([1, 2, 3, 3]));
        let b = tape.constant(Array::zeros([1, 3, 3, 3]));
        assert!(a.add(b).is_err());
    }
}
