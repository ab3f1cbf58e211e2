//! Name-keyed registries of interchangeable strategies.
//!
//! Conductance laws, linear solvers and test functions are all described in
//! configuration files by a [`NamedSpec`] (`{"kind": ..., "params": {...}}`)
//! and turned into trait objects by looking the kind up in a [`Registry`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A strategy name plus free-form parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

impl NamedSpec {
    pub fn new(kind: impl Into<String>, params: Value) -> Self {
        Self {
            kind: kind.into(),
            params,
        }
    }

    pub fn f64_param(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::param(format!("{}: missing numeric parameter `{key}`", self.kind)))
    }

    pub fn f64_param_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::param(format!("{}: parameter `{key}` is not a number", self.kind))),
        }
    }

    pub fn vec_param(&self, key: &str) -> Result<Vec<f64>> {
        let arr = self
            .params
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::param(format!("{}: missing array parameter `{key}`", self.kind)))?;
        arr.iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::param(format!("{}: `{key}` must contain numbers", self.kind)))
            })
            .collect()
    }
}

impl fmt::Display for NamedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind, self.params)
    }
}

pub type Factory<T> = Box<dyn Fn(&NamedSpec) -> Result<Box<T>> + Send + Sync>;

/// Maps strategy names to factories producing boxed trait objects.
pub struct Registry<T: ?Sized> {
    what: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(what: &'static str) -> Self {
        Self {
            what,
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&NamedSpec) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &NamedSpec) -> Result<Box<T>> {
        match self.factories.get(&spec.kind) {
            Some(f) => f(spec),
            None => Err(Error::UnknownStrategy {
                kind: self.what,
                name: spec.kind.clone(),
                known: self.names().join(", "),
            }),
        }
    }
}
