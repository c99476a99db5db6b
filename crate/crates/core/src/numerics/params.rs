use indexmap::IndexMap;

use crate::error::{arg_err, Error, Result};

use super::array::{Array, Real};

/// A named trainable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Array<T>,
    /// `None` until a backward pass or [`ParamStore::zero_grad`] fills it.
    pub grad: Option<Array<T>>,
    pub m: Array<T>,
    pub v: Array<T>,
}

/// Parameters in insertion order, addressed by unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return arg_err(format!("duplicate parameter '{name}'"));
        }
        let shape = value.shape().to_vec();
        self.params.insert(name, Param { value, grad: None, m: Array::zeros(&shape), v: Array::zeros(&shape) });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Array<T>> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::State(format!("parameter '{name}' is not loaded")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn by_index(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub(crate) fn by_index_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(Array::zeros(p.value.shape()));
        }
    }

    /// Copy with values converted to another precision (moments reset).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.insert(name.clone(), p.value.cast()).expect("names are unique");
        }
        out
    }
}
