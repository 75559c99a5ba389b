use std::collections::BTreeMap;

use decseg_tensor::{Array, Elem, Grads, Tape, Var};

use super::params::{ParamId, ParamKind, ParamStore};

/// One forward pass: a tape, the parameters it reads and the train/eval mode.
///
/// Each parameter enters the tape at most once, so gradients from every use
/// accumulate on the same leaf.
pub struct Session<'t, 's, T: Elem> {
    tape: &'t Tape<T>,
    store: &'s mut ParamStore<T>,
    training: bool,
    leaves: BTreeMap<ParamId, Var<'t, T>>,
}

impl<'t, 's, T: Elem> Session<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s mut ParamStore<T>, training: bool) -> Self {
        Self { tape, store, training, leaves: BTreeMap::new() }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var<'t, T> {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = match self.store.kind(id) {
            ParamKind::Trainable => self.tape.variable(value),
            ParamKind::Buffer => self.tape.constant(value),
        };
        self.leaves.insert(id, v);
        v
    }

    /// Gradients of every trainable parameter touched by this session.
    pub fn param_grads(&self, grads: &mut Grads<T>) -> Vec<(ParamId, Array<T>)> {
        self.leaves
            .iter()
            .filter(|(&id, _)| self.store.kind(id) == ParamKind::Trainable)
            .filter_map(|(&id, &v)| grads.take(v).map(|g| (id, g)))
            .collect()
    }
}
