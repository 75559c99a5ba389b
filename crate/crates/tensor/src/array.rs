use crate::elem::Elem;
use crate::error::{invalid, Result, TensorError};

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Elem> Array<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(
                "Array::new",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(n, c, h, w)` of a rank-4 array.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op: "dims4",
                expected: 4,
                got: self.shape.clone(),
            }),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Elem>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    /// Channel slice `[n, start..start+len, h, w]` of a rank-4 array.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(invalid(
                "narrow_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Ok(Self {
            shape: vec![n, len, h, w],
            data,
        })
    }

    /// Sample `b` of a batched array as a batch of one.
    pub fn sample(&self, b: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| invalid("sample", "rank 0"))?;
        if b >= n {
            return Err(invalid("sample", format!("index {b} out of {n}")));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
        })
    }
}

/// Shape that `a` and `b` broadcast to (equal rank, size-1 axes stretch).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    // innermost axis is walked in a tight loop
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut o = 0;
    loop {
        let mut pa = 0;
        let mut pb = 0;
        for d in 0..rank - 1 {
            pa += idx[d] * sa[d];
            pb += idx[d] * sb[d];
        }
        for j in 0..inner {
            f(o + j, pa + j * ia, pb + j * ib);
        }
        o += inner;
        if o >= total {
            break;
        }
        let mut d = rank - 1;
        loop {
            d -= 1;
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to<T: Elem>(grad: &Array<T>, shape: &[usize]) -> Array<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Array::zeros(shape.to_vec());
    let out_shape = grad.shape().to_vec();
    let data = grad.data();
    let dst = out.data_mut();
    for_each_broadcast(shape, shape, &out_shape, |o, a, _| dst[a] += data[o]);
    out
}
