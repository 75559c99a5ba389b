use decseg::nn::ParamStore;
use decseg::{Array, Elem};

/// Returns `Err` with a formatted message when the condition fails.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn noise(shape: &[usize], seed: u64) -> Array<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Array::from_fn(shape.to_vec(), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// Sets every tensor of `store` whose name starts with `prefix` to zero.
pub fn zero_params<T: Elem>(store: &mut ParamStore<T>, prefix: &str) {
    let names: Vec<String> = store.names_with_prefix(prefix).map(str::to_string).collect();
    assert!(!names.is_empty(), "no parameters under {prefix}");
    for name in names {
        let id = store.id(&name).unwrap();
        let shape = store.get(id).shape().to_vec();
        store.set(id, Array::zeros(shape)).unwrap();
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
