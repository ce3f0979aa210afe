use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Keys shared by every command; they may appear in the file as well as on the command line.
pub const GLOBAL_KEYS: [&str; 4] = ["seed", "threads", "out", "format"];

pub fn load(path: Option<&Path>) -> Result<Map<String, Value>, String> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    match serde_json::to_value(table).map_err(|e| e.to_string())? {
        Value::Object(map) => Ok(map),
        _ => Err("config must be a table".into()),
    }
}

/// Command parameters from the file with every flag given on the command line laid over them.
pub fn merge<T: Serialize + DeserializeOwned>(file: &Map<String, Value>, flags: &T) -> Result<T, String> {
    let mut merged: Map<String, Value> =
        file.iter().filter(|(k, _)| !GLOBAL_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    if let Value::Object(over) = serde_json::to_value(flags).map_err(|e| e.to_string())? {
        for (k, v) in over {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| format!("invalid config: {e}"))
}
