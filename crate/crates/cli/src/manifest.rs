use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record written once per output directory. Feeding it back via
/// `--config` reruns the command with the same resolved settings.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    /// SHA-256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let versions = BTreeMap::from([
            ("fosr".to_string(), fosr::VERSION.to_string()),
            ("fosr-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            input_hashes: BTreeMap::new(),
            seed,
            versions,
            wall_seconds: 0.0,
        })
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every file below `dir`, sorted, for hashing archive inputs.
pub fn files_below(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Resolves settings with precedence flags > config file > defaults.
///
/// `flags` serializes only the options given on the command line. The config
/// file is either a bare settings object or a previous run manifest.
pub fn resolve<T>(flags: &impl Serialize, config: Option<&Path>) -> Result<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut merged = serde_json::to_value(T::default())?;
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut file: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if file.get("command").is_some() {
            if let Some(inner) = file.get_mut("config") {
                file = inner.take();
            }
        }
        overlay(&mut merged, file);
    }
    overlay(&mut merged, serde_json::to_value(flags)?);
    serde_json::from_value(merged).context("invalid settings")
}

fn overlay(base: &mut Value, top: Value) {
    let (Value::Object(b), Value::Object(t)) = (base, top) else {
        return;
    };
    let t: Map<String, Value> = t;
    for (k, v) in t {
        if !v.is_null() {
            b.insert(k, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default, Serialize, Deserialize, Debug, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct S {
        a: u32,
        b: f64,
        c: Option<String>,
    }

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"a": 3, "b": 2.5}"#).unwrap();
        let s: S = resolve(&Flags { a: Some(7) }, Some(&path)).unwrap();
        assert_eq!(s, S { a: 7, b: 2.5, c: None });
        let s: S = resolve(&Flags { a: None }, Some(&path)).unwrap();
        assert_eq!(s.a, 3);
        let s: S = resolve(&Flags { a: None }, None).unwrap();
        assert_eq!(s, S::default());
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("x", &S { a: 4, b: 1.0, c: None }, None).unwrap();
        m.write(dir.path()).unwrap();
        let s: S = resolve(&Flags { a: None }, Some(&dir.path().join(RUN_MANIFEST))).unwrap();
        assert_eq!(s.a, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"z": 1}"#).unwrap();
        assert!(resolve::<S>(&Flags { a: None }, Some(&path)).is_err());
    }
}
