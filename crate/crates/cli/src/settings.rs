//! Layered settings: built-in defaults, then an optional config file, then
//! command line flags.
//!
//! A config file is either a JSON object or `key = value` lines (`#` starts a
//! comment). Values on `key = value` lines are read as JSON when they parse,
//! as a list when they contain commas, and as plain strings otherwise. Keys
//! may use dashes or underscores.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::usage;

pub type ConfigMap = Map<String, Value>;

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

fn scalar(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

pub fn parse_config(text: &str) -> anyhow::Result<ConfigMap> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let value: Value = serde_json::from_str(trimmed).context("parsing JSON config")?;
        let Value::Object(map) = value else { unreachable!() };
        return Ok(map.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect());
    }
    let mut map = ConfigMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected key = value", no + 1)).into());
        };
        let v = v.trim();
        let value = match serde_json::from_str::<Value>(v) {
            Ok(parsed) => parsed,
            Err(_) if v.contains(',') => {
                Value::Array(v.split(',').map(|t| scalar(t.trim())).collect())
            }
            Err(_) => Value::String(v.to_string()),
        };
        map.insert(normalize_key(k), value);
    }
    Ok(map)
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigMap> {
    match path {
        None => Ok(ConfigMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in config file {}", p.display()))
        }
    }
}

/// Merges `S::default()`, the config file and the flags that were given.
/// Unknown keys and ill-typed values are usage errors.
pub fn resolve<S, A>(file: &ConfigMap, flags: &A) -> anyhow::Result<S>
where
    S: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(S::default())? else {
        unreachable!("settings serialize as objects")
    };
    for (k, v) in file {
        merged.insert(k.clone(), v.clone());
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("settings: {e}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct S {
        dim_hidden: usize,
        lr: Option<f64>,
        name: String,
        list: Vec<f64>,
    }

    #[derive(Serialize)]
    struct Flags {
        dim_hidden: Option<usize>,
        lr: Option<f64>,
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = parse_config("dim-hidden = 64\nlr = 0.1 # comment\nname = abc\nlist = 1, 2.5\n").unwrap();
        let s: S = resolve(&file, &Flags { dim_hidden: Some(128), lr: None }).unwrap();
        assert_eq!(
            s,
            S {
                dim_hidden: 128,
                lr: Some(0.1),
                name: "abc".into(),
                list: vec![1.0, 2.5]
            }
        );
        let s: S = resolve(&ConfigMap::new(), &Flags { dim_hidden: None, lr: None }).unwrap();
        assert_eq!(s, S::default());
    }

    #[test]
    fn json_config_and_unknown_keys() {
        let file = parse_config(r#"{"dim-hidden": 3, "list": [1]}"#).unwrap();
        let s: S = resolve(&file, &Flags { dim_hidden: None, lr: None }).unwrap();
        assert_eq!((s.dim_hidden, s.list), (3, vec![1.0]));
        let bad = parse_config("bogus = 1").unwrap();
        assert!(resolve::<S, _>(&bad, &Flags { dim_hidden: None, lr: None }).is_err());
        assert!(parse_config("no equals sign").is_err());
    }
}
