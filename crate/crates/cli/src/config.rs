//! Config-file merging and run manifests.
//!
//! A config file is either a plain JSON object of subcommand options or a
//! `run_manifest.json` written by an earlier run. Options given on the
//! command line override the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Overlays the non-null command-line options on the config file's options.
pub fn merge<T: Serialize + DeserializeOwned>(
    subcommand: &str,
    cli: &T,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<T> {
    let mut merged = match config {
        Some(path) => load_config(subcommand, path)?,
        None => Map::new(),
    };
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        unreachable!("option structs serialize to objects");
    };
    for (k, v) in flags {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    if let Some(seed) = seed {
        merged.insert("seed".into(), Value::from(seed));
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

fn load_config(subcommand: &str, path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("{}: cannot read config", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))?;
    let Value::Object(mut obj) = value else {
        bail!("{}: config must be a JSON object", path.display());
    };
    if let (Some(Value::String(sub)), Some(Value::Object(_))) =
        (obj.get("subcommand"), obj.get("config"))
    {
        if sub != subcommand {
            bail!(
                "{}: manifest is for `{sub}`, not `{subcommand}`",
                path.display()
            );
        }
        let Some(Value::Object(cfg)) = obj.remove("config") else {
            unreachable!()
        };
        return Ok(cfg);
    }
    Ok(obj)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("{}: cannot read input", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct InputDigest<'a> {
    path: &'a Path,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, T> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config: &'a T,
    inputs: Map<String, Value>,
}

/// Writes `run_manifest.json` into `dir`.
///
/// `inputs` pairs option names with input paths; each file is hashed.
pub fn write_manifest<T: Serialize>(
    dir: &Path,
    subcommand: &str,
    config: &T,
    inputs: &[(&str, &Path)],
) -> Result<PathBuf> {
    let mut digests = Map::new();
    for (name, path) in inputs {
        let d = InputDigest {
            path,
            sha256: sha256_file(path)?,
        };
        digests.insert((*name).to_string(), serde_json::to_value(d)?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config,
        inputs: digests,
    };
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("{}: cannot write manifest", path.display()))?;
    Ok(path)
}
