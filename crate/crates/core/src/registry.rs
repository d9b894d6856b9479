//! Name-keyed registries of interchangeable strategies.
//!
//! Fusion variants, routers, MAC-counting conventions, architecture families
//! and the built-in model catalog are all registered here by name and looked
//! up at runtime from config files or CLI flags.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub valid: Vec<String>,
}

impl fmt::Display for UnknownName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown {} '{}' (valid: {})",
            self.kind,
            self.name,
            self.valid.join(", ")
        )
    }
}

type Make<T> = Box<dyn Fn() -> Arc<T> + Send + Sync>;

struct Entry<T: ?Sized> {
    name: String,
    aliases: &'static [&'static str],
    make: Make<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, make: impl Fn() -> Arc<T> + Send + Sync + 'static) -> Self {
        self.register(name, &[], make);
        self
    }

    pub fn with_aliases(
        mut self,
        name: &str,
        aliases: &'static [&'static str],
        make: impl Fn() -> Arc<T> + Send + Sync + 'static,
    ) -> Self {
        self.register(name, aliases, make);
        self
    }

    pub fn register(
        &mut self,
        name: &str,
        aliases: &'static [&'static str],
        make: impl Fn() -> Arc<T> + Send + Sync + 'static,
    ) {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate {} '{name}'",
            self.kind
        );
        self.entries.push(Entry {
            name: name.to_ascii_lowercase(),
            aliases,
            make: Box::new(make),
        });
    }

    /// Case-insensitive lookup by canonical name or alias.
    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownName> {
        let key = name.trim().to_ascii_lowercase();
        self.entries
            .iter()
            .find(|e| e.name == key || e.aliases.contains(&key.as_str()))
            .map(|e| (e.make)())
            .ok_or_else(|| UnknownName {
                kind: self.kind,
                name: name.to_string(),
                valid: self.names().into_iter().map(String::from).collect(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_ok()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
