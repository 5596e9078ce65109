//! Run-config loading: JSON file, then `--override key=value`, then `--seed`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Splits `a.b.c=value`. The value is read as JSON when it parses, else as a string.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override key `{key}` has an empty segment")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.split('.').map(String::from).collect(), value))
}

/// Sets `path` inside `root`, creating objects where the path runs through
/// missing keys or nulls. Numeric segments index arrays.
pub fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let Some((last, parents)) = path.split_last() else {
        *root = value;
        return Ok(());
    };
    let mut node = root;
    for seg in parents {
        node = child(node, seg, path)?;
    }
    match node {
        Value::Array(items) => {
            let slot = array_slot(items, last, path)?;
            *slot = value;
        }
        Value::Object(map) => {
            map.insert(last.clone(), value);
        }
        Value::Null => {
            let mut map = Map::new();
            map.insert(last.clone(), value);
            *node = Value::Object(map);
        }
        _ => return Err(not_container(path)),
    }
    Ok(())
}

fn child<'a>(node: &'a mut Value, seg: &str, path: &[String]) -> Result<&'a mut Value> {
    if node.is_null() {
        *node = Value::Object(Map::new());
    }
    match node {
        Value::Object(map) => Ok(map.entry(seg.to_string()).or_insert(Value::Null)),
        Value::Array(items) => array_slot(items, seg, path),
        _ => Err(not_container(path)),
    }
}

fn array_slot<'a>(items: &'a mut [Value], seg: &str, path: &[String]) -> Result<&'a mut Value> {
    let len = items.len();
    seg.parse::<usize>()
        .ok()
        .and_then(|i| items.get_mut(i))
        .ok_or_else(|| {
            CliError::Config(format!(
                "`{}`: `{seg}` is not an index into an array of {len}",
                path.join(".")
            ))
        })
}

fn not_container(path: &[String]) -> CliError {
    CliError::Config(format!("`{}` runs through a scalar value", path.join(".")))
}

/// Resolves a run config and returns it together with its full JSON echo.
///
/// `seed` is a value and the dot path it lands at, e.g. `run.seed`.
pub fn resolve<T>(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<(u64, &str)>,
) -> Result<(T, Value)>
where
    T: Serialize + DeserializeOwned + Default,
{
    let base: T = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => T::default(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?;
    for raw in overrides {
        let (path, v) = parse_override(raw)?;
        set_path(&mut value, &path, v)?;
    }
    if let Some((seed, seed_path)) = seed {
        let path: Vec<String> = seed_path.split('.').map(String::from).collect();
        set_path(&mut value, &path, Value::from(seed))?;
    }
    let config: T =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    // Echo the typed config so defaults filled in by serde appear explicitly.
    let echo = serde_json::to_value(&config).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((config, echo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        steps: usize,
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        seed: u64,
        inner: Inner,
        dims: [usize; 3],
        limit: Option<f64>,
    }

    fn ov(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a.b=3").unwrap().1, json!(3));
        assert_eq!(parse_override("a=abc").unwrap().1, json!("abc"));
        assert_eq!(parse_override("a=[1,2]").unwrap().1, json!([1, 2]));
        assert_eq!(parse_override("a=x=y").unwrap().1, json!("x=y"));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn overrides_then_seed() {
        let (c, echo): (Outer, _) = resolve(
            None,
            &ov(&["inner.steps=7", "inner.name=run", "dims.1=4", "limit=2.5", "seed=1"]),
            Some((9, "seed")),
        )
        .unwrap();
        assert_eq!(c.inner, Inner { steps: 7, name: "run".into() });
        assert_eq!(c.dims, [0, 4, 0]);
        assert_eq!(c.limit, Some(2.5));
        assert_eq!(c.seed, 9);
        assert_eq!(echo["inner"]["steps"], json!(7));
    }

    #[test]
    fn unknown_keys_and_bad_paths_are_rejected() {
        let r: Result<(Outer, _)> = resolve(None, &ov(&["inner.stepz=1"]), None);
        assert!(matches!(r, Err(CliError::Config(_))));
        let r: Result<(Outer, _)> = resolve(None, &ov(&["dims.5=1"]), None);
        assert!(r.is_err());
        let r: Result<(Outer, _)> = resolve(None, &ov(&["seed.x=1"]), None);
        assert!(r.is_err());
    }

    #[test]
    fn file_then_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"inner": {"steps": 3}}"#).unwrap();
        let (c, echo): (Outer, _) = resolve(Some(&path), &[], None).unwrap();
        assert_eq!(c.inner.steps, 3);
        fs::write(&path, serde_json::to_string(&echo).unwrap()).unwrap();
        let (again, echo2): (Outer, _) = resolve(Some(&path), &[], None).unwrap();
        assert_eq!(again, c);
        assert_eq!(echo2, echo);
    }
}
