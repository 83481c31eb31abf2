use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Contents of a `--config` file. Either an object keyed by command name
/// (plus an optional top-level `seed`), or a run manifest, in which case its
/// resolved config and seed are replayed.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text)? {
            Value::Object(root) => Ok(Self { root }),
            _ => Err(CliError::input(format!("config {} is not a JSON object", path.display()))),
        }
    }

    fn is_manifest(&self) -> bool {
        self.root.contains_key("command") && self.root.contains_key("config")
    }

    pub fn section(&self, command: &str) -> CliResult<Value> {
        if self.is_manifest() {
            if self.root.get("command").and_then(Value::as_str) != Some(command) {
                return Err(CliError::input(format!("manifest does not describe '{command}'")));
            }
            return Ok(self.root["config"].clone());
        }
        Ok(self.root.get(command).cloned().unwrap_or(Value::Null))
    }

    pub fn seed(&self) -> CliResult<Option<u64>> {
        match self.root.get("seed") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| CliError::input("config seed must be a non-negative integer")),
        }
    }
}

/// Overlays `top` on `base`. Objects merge key by key; nulls in `top` leave
/// `base` untouched.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Default, then file section, then flags.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(section: Value, flags: Value) -> CliResult<T> {
    let mut v = serde_json::to_value(T::default())?;
    merge(&mut v, section);
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| CliError::input(format!("bad config: {e}")))
}
