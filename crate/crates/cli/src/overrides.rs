//! `--set key=value` handling over YAML documents.

use serde_yaml::{Mapping, Value};

use crate::UsageError;

/// Splits `sets` into workload and `space.`-prefixed assignments.
pub fn partition(sets: &[String]) -> (Vec<String>, Vec<String>) {
    let (space, workload): (Vec<&String>, Vec<&String>) = sets.iter().partition(|s| s.starts_with("space."));
    (
        workload.into_iter().cloned().collect(),
        space.into_iter().map(|s| s["space.".len()..].to_string()).collect(),
    )
}

/// Applies dotted-key assignments to `doc`. Values are parsed as YAML, so
/// `batch_sweep=[1,2,4]` and `modes=[aggregated]` work.
pub fn apply(doc: &mut Value, sets: &[String]) -> Result<(), UsageError> {
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set {set}: expected KEY=VALUE")))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(UsageError(format!("--set {set}: empty key segment")));
        }
        let value: Value = serde_yaml::from_str(raw).map_err(|e| UsageError(format!("--set {set}: {e}")))?;
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if node.is_null() {
                *node = Value::Mapping(Mapping::new());
            }
            let map = node
                .as_mapping_mut()
                .ok_or_else(|| UsageError(format!("--set {set}: {} is not a mapping", parts[..i].join("."))))?;
            let k = Value::String((*part).to_string());
            if i + 1 == parts.len() {
                map.insert(k, value.clone());
                break;
            }
            node = map.entry(k).or_insert(Value::Null);
        }
    }
    Ok(())
}
