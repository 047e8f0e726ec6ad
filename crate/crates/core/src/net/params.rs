use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    fn initial_value(self) -> f64 {
        match self {
            ParamKind::BnGamma | ParamKind::BnRunningVar => 1.0,
            _ => 0.0,
        }
    }
}

/// Receives parameter declarations while a network is assembled.
pub trait ParamSink {
    fn declare(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> ParamId;
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Arc<Tensor<T>>,
}

/// Named parameters and buffers of one network, in declaration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Element> ParamSink for ParamStore<T> {
    fn declare(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            kind,
            value: Arc::new(Tensor::full(shape, T::of(kind.initial_value()))),
        });
        id
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; copies only if a tape still holds the value.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Replaces a value by name, checking the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        let current = self.get(id).shape();
        if current != value.shape() {
            return Err(Error::shape(
                "param_set",
                name.to_string(),
                format!("expected {current:?}, got {:?}", value.shape()),
            ));
        }
        self.entries[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].kind.trainable())
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: Arc::new(e.value.cast()),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Records declarations without allocating values.
#[derive(Clone, Debug, Default)]
pub struct ShapeCollector {
    pub declared: Vec<(String, ParamKind, Vec<usize>)>,
}

impl ParamSink for ShapeCollector {
    fn declare(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> ParamId {
        self.declared.push((name, kind, shape));
        ParamId(self.declared.len() - 1)
    }
}
