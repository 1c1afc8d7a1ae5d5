//! Step result cache keyed by capability, input-data hash and parameters.
//! Entries live in memory and, when a directory is given, on disk so a
//! later process can reuse them.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::RwLock;

use rcdiag_core::domain::Capability;
use serde_json::{json, Value};

use crate::io;

#[derive(Default)]
pub struct StepCache {
    mem: RwLock<HashMap<String, Value>>,
    dir: Option<PathBuf>,
}

impl StepCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: PathBuf) -> Self {
        Self { mem: RwLock::default(), dir: Some(dir) }
    }

    /// serde_json maps are ordered, so serializing the payload is canonical.
    pub fn key(capability: Capability, data_hash: &str, params: &Value) -> String {
        io::sha256_hex(json!([capability.tag(), data_hash, params]).to_string().as_bytes())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.mem.read().expect("cache poisoned").get(key) {
            return Some(v.clone());
        }
        let v: Value = io::read_json(&self.path(key)?).ok()?;
        self.mem.write().expect("cache poisoned").insert(key.to_string(), v.clone());
        Some(v)
    }

    /// Last writer wins on identical keys.
    pub fn put(&self, key: &str, value: &Value) {
        self.mem.write().expect("cache poisoned").insert(key.to_string(), value.clone());
        if let Some(p) = self.path(key) {
            // a lost disk entry only costs a recomputation later
            let _ = io::write_atomic(&p, |tmp| io::write_json(tmp, value));
        }
    }

    pub fn clear(&self) {
        self.mem.write().expect("cache poisoned").clear();
        if let Some(dir) = &self.dir {
            if let Ok(entries) = fs::read_dir(dir) {
                for e in entries.flatten() {
                    let _ = fs::remove_file(e.path());
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.mem.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
