use std::collections::BTreeMap;

use decseg_tensor::{Array, Elem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimiser.
    Trainable,
    /// Running statistics and other non-gradient state.
    Buffer,
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    value: Array<T>,
}

/// How a freshly registered tensor is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    Constant(f64),
}

/// Named tensors of a model, in registration order.
///
/// Initial values depend only on the store seed and the tensor name, so two
/// modules registered under different names are independent and a module's
/// starting point does not change when other modules are added or removed.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    seed: u64,
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, usize>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl<T: Elem> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { seed, entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, shape: &[usize], kind: ParamKind, init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Constant(v) => vec![T::of(v); len],
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
                (0..len).map(|_| T::of(rng.random_range(-bound..bound))).collect()
            }
        };
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            kind,
            value: Array::new(shape.to_vec(), data)?,
        });
        self.index.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == ParamKind::Trainable)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Array<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a tensor's value, keeping its shape fixed.
    pub fn set(&mut self, id: ParamId, value: Array<T>) -> Result<()> {
        let cur = &mut self.entries[id.0];
        if cur.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "`{}` expects shape {:?}, got {:?}",
                cur.name,
                cur.value.shape(),
                value.shape()
            )));
        }
        cur.value = value;
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|id| self.get(id).len()).sum()
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().map(|e| e.name.as_str()).filter(move |n| n.starts_with(prefix))
    }
}
