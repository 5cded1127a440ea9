//! Name-keyed registries of interchangeable strategies.
//!
//! Each numerical family in the crate (tail evaluators, threshold searches,
//! click samplers, classical comparison curves) exposes its variants through a
//! [`Registry`], so configuration files and command-line flags can select an
//! implementation by name at runtime.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type Factory<T, A> = fn(&A) -> Result<Arc<T>>;

struct Entry<T: ?Sized, A> {
    name: &'static str,
    summary: &'static str,
    build: Factory<T, A>,
}

/// A registry of trait-object strategies built from an argument of type `A`.
pub struct Registry<T: ?Sized, A = ()> {
    family: &'static str,
    entries: Vec<Entry<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: Vec::new(),
        }
    }

    /// Registers a strategy. A later registration under the same name replaces
    /// the earlier one.
    pub fn register(&mut self, name: &'static str, summary: &'static str, build: Factory<T, A>) -> &mut Self {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry { name, summary, build });
        self
    }

    pub fn with(mut self, name: &'static str, summary: &'static str, build: Factory<T, A>) -> Self {
        self.register(name, summary, build);
        self
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|e| e.name)
    }

    pub fn describe(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.entries.iter().map(|e| (e.name, e.summary))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn build_with(&self, name: &str, arg: &A) -> Result<Arc<T>> {
        match self.entries.iter().find(|e| e.name == name) {
            Some(entry) => (entry.build)(arg),
            None => Err(Error::UnknownStrategy {
                family: self.family,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

impl<T: ?Sized> Registry<T, ()> {
    pub fn build(&self, name: &str) -> Result<Arc<T>> {
        self.build_with(name, &())
    }
}

impl<T: ?Sized, A> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names().collect::<Vec<_>>())
            .finish()
    }
}
