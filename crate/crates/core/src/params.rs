//! Named parameter storage and the per-pass binding of parameters onto a tape.

use std::ops::{Deref, DerefMut};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    offset: usize,
}

/// Ordered set of named tensors. Order is the registration order, which is
/// also the layout of flattened gradient vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    scalars: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let len = value.len();
        self.entries.push(Entry {
            name,
            value,
            offset: self.scalars,
        });
        self.scalars += len;
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.scalars
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn offset(&self, id: ParamId) -> usize {
        self.entries[id.0].offset
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalars);
        for e in &self.entries {
            out.extend_from_slice(e.value.data());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.scalars, "flat parameter length");
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[e.offset..e.offset + n]);
        }
    }

    /// Visit every scalar together with its flat index.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        for e in &mut self.entries {
            let base = e.offset;
            for (i, v) in e.value.data_mut().iter_mut().enumerate() {
                f(base + i, v);
            }
        }
    }
}

/// A tape plus lazily bound parameters for one forward/backward pass.
pub struct Graph<'s> {
    tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'s> Graph<'s> {
    /// Parameters are bound as gradient-tracking leaves.
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable: true,
        }
    }

    /// Parameters are bound as constants; no gradients are tracked.
    pub fn frozen(store: &'s ParamStore) -> Self {
        Graph {
            trainable: false,
            ..Graph::new(store)
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    /// Flat gradient in store layout; parameters never touched stay zero.
    pub fn param_grads(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.store.num_scalars()];
        for id in self.store.ids() {
            if let Some(v) = self.bound[id.0] {
                if let Some(g) = self.tape.grad(v) {
                    let off = self.store.offset(id);
                    out[off..off + g.len()].copy_from_slice(g.data());
                }
            }
        }
        out
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
