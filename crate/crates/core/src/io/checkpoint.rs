//! Checkpoint directories: a manifest of metadata plus one tensor file per
//! named array (parameters, optimizer moments, anything else a trainer
//! wants back).
//!
//! Tensor files are numbered `tensor_00000.lam3d` in insertion order and the
//! manifest maps index to logical name, so names never leak into filenames.

use std::fs;
use std::path::Path;

use super::manifest::Manifest;
use super::tensor_file::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: Manifest,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            meta: Manifest::new(),
            tensors: Vec::new(),
        }
    }

    /// Adds a named tensor. Names must be unique within the checkpoint.
    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        if self.tensors.iter().any(|(n, _, _)| n == name) {
            return Err(Error::data(format!(
                "checkpoint: duplicate tensor name '{}'",
                name
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "checkpoint: tensor '{}' shape {:?} wants {} values, got {}",
                name,
                shape,
                numel,
                data.len()
            )));
        }
        self.tensors.push((name.to_string(), shape.to_vec(), data));
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn require(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensor(name)
            .ok_or_else(|| Error::data(format!("checkpoint: missing tensor '{}'", name)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = Manifest::new();
    m.set("format.version", 1);
    for key in ckpt.meta.keys() {
        if key.starts_with("tensor.") || key == "format.version" {
            return Err(Error::data(format!(
                "checkpoint: metadata key '{}' is reserved",
                key
            )));
        }
        m.set(key, ckpt.meta.get(key).unwrap());
    }
    m.set("tensor.count", ckpt.tensors.len());
    for (i, (name, shape, data)) in ckpt.tensors.iter().enumerate() {
        m.set(&format!("tensor.{}.name", i), name);
        write_tensor_file(&dir.join(format!("tensor_{:05}.lam3d", i)), shape, data)?;
    }
    m.write_to(&dir.join("manifest.txt"))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let m = Manifest::read_from(&dir.join("manifest.txt"))?;
    let version: u32 = m.require_parsed("format.version")?;
    if version != 1 {
        return Err(Error::data(format!(
            "checkpoint: unsupported format version {}",
            version
        )));
    }
    let count: usize = m.require_parsed("tensor.count")?;
    let mut ckpt = Checkpoint::new();
    for key in m.keys() {
        if key == "format.version" || key.starts_with("tensor.") {
            continue;
        }
        ckpt.meta.set(key, m.get(key).unwrap());
    }
    for i in 0..count {
        let name = m.require(&format!("tensor.{}.name", i))?;
        let (shape, data) = read_tensor_file(&dir.join(format!("tensor_{:05}.lam3d", i)))?;
        ckpt.add(name, &shape, data)?;
    }
    Ok(ckpt)
}
