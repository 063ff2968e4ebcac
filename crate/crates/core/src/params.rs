//! Named parameter tensors and their on-disk directory layout.
//!
//! A parameter directory holds one SGTF file per tensor plus `manifest.txt`,
//! which lists `name file` pairs in a fixed order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sgtf::{self, Precision};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";

/// A group of named trainable tensors with a stable visiting order.
pub trait ParamGroup {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn to_store(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::default();
        self.visit(&mut |name, t| store.insert(format!("{prefix}{name}"), t.clone()));
        store
    }

    /// Overwrites every tensor from `store`, checking names and shapes.
    fn load_from(&mut self, store: &ParamStore, prefix: &str) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match store.get(&key) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => err = Some(Error::shape("load params", t.shape(), src.shape())),
                None => err = Some(Error::Format(format!("missing parameter {key:?}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn insert(&mut self, name: String, t: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: ParamStore) {
        for (n, t) in other.entries {
            self.insert(n, t);
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (name, t) in &self.entries {
            if name.is_empty() || name.contains(char::is_whitespace) || name.contains('/') {
                return Err(Error::InvalidArgument(format!("bad parameter name {name:?}")));
            }
            let file = format!("{name}.sgtf");
            sgtf::write(dir.join(&file), t, precision)?;
            manifest.push_str(&format!("{name} {file}\n"));
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut store = ParamStore::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(name), Some(file), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected `name file`".into(),
                });
            };
            store.insert(name.to_string(), sgtf::read(dir.join(file))?);
        }
        Ok(store)
    }
}
