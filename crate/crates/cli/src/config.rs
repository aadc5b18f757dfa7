//! Loading the run config: a JSON file (or the defaults) plus dotted-path
//! `--set` overrides applied before validation.

use std::path::Path;

use foresight_core::config::RunConfig;
use serde_json::Value;

use crate::error::{CliError, Result};

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON
/// when it can be, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields a key")
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let where_ = path.map(|p| p.display().to_string()).unwrap_or_else(|| "<defaults>".into());
    RunConfig::from_json(&doc.to_string()).map_err(|e| match e {
        foresight_core::Error::Config(m) => CliError::Config(format!("{where_}: {m}")),
        other => other.into(),
    })
}
