//! Flag/config-file merging.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Builds the resolved settings for a command. Keys from the optional JSON
/// config file are overridden by flags given on the command line; anything
/// still missing takes the type's serde default.
pub fn resolve<T>(flags: &impl Serialize, file: Option<&Path>) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize,
{
    let mut merged = match file {
        Some(path) => read_object(path)?,
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs are objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    let resolved: T = serde_json::from_value(Value::Object(merged.clone()))
        .map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    let Value::Object(known) = serde_json::to_value(&resolved).expect("config serializes") else {
        unreachable!("configs are objects")
    };
    if let Some(k) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Usage(format!("unknown configuration key '{k}'")));
    }
    Ok(resolved)
}

fn read_object(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Writes the resolved settings as `run.json` in `dir`.
pub fn record(dir: &Path, command: &str, resolved: &impl Serialize) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut doc = Map::new();
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("config".into(), serde_json::to_value(resolved).expect("config serializes"));
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("json") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}
