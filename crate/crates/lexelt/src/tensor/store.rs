//! Named parameter storage and value binding for graph evaluation.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::{Rng, Tensor};

/// Sources of tensors consulted by `Graph::evaluate` for input and parameter
/// nodes.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<Rc<Tensor>>;
}

/// Plain map of per-call inputs.
#[derive(Clone, Debug, Default)]
pub struct InputMap {
    map: BTreeMap<String, Rc<Tensor>>,
}

impl InputMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> &mut Self {
        self.map.insert(name.into(), Rc::new(t));
        self
    }
}

impl Bindings for InputMap {
    fn lookup(&self, name: &str) -> Option<Rc<Tensor>> {
        self.map.get(name).cloned()
    }
}

/// Looks sources up left to right.
pub struct BindChain<'a>(pub &'a [&'a dyn Bindings]);

impl Bindings for BindChain<'_> {
    fn lookup(&self, name: &str) -> Option<Rc<Tensor>> {
        self.0.iter().find_map(|b| b.lookup(name))
    }
}

#[derive(Clone, Debug)]
struct ParamEntry {
    value: Rc<Tensor>,
    trainable: bool,
    /// Row 0 (the PAD row of an embedding table) is held at zero during
    /// training when set.
    freeze_row0: bool,
}

/// Ordered collection of named trainable tensors.
///
/// Iteration order is the lexicographic name order, which makes optimizer
/// updates and serialization deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(
            name.into(),
            ParamEntry {
                value: Rc::new(value),
                trainable: true,
                freeze_row0: false,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| e.value.as_ref())
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        if let Some(e) = self.entries.get_mut(name) {
            e.value = Rc::new(value);
        }
    }

    /// Mutable access to a parameter's values (clones only if a graph still
    /// holds the tensor).
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| Rc::make_mut(&mut e.value))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(e) = self.entries.get_mut(name) {
            e.trainable = trainable;
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn set_freeze_row0(&mut self, name: &str, freeze: bool) {
        if let Some(e) = self.entries.get_mut(name) {
            e.freeze_row0 = freeze;
        }
    }

    pub fn freezes_row0(&self, name: &str) -> bool {
        self.entries
            .get(name)
            .map(|e| e.freeze_row0)
            .unwrap_or(false)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.value.as_ref()))
    }

    /// Glorot-uniform initialized matrix.
    pub fn glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).unwrap());
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(&[rows, cols]));
    }

    pub fn filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f64) {
        self.insert(name, Tensor::filled(&[rows, cols], value));
    }

    pub fn normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        sd: f64,
        rng: &mut Rng,
    ) {
        let data = (0..rows * cols).map(|_| rng.normal(0.0, sd)).collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).unwrap());
    }

    /// Squared L2 norm over every trainable parameter.
    pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
        grads
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl Bindings for ParamStore {
    fn lookup(&self, name: &str) -> Option<Rc<Tensor>> {
        self.entries.get(name).map(|e| e.value.clone())
    }
}
