//! Dotted-key overrides on JSON configuration trees.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Sets `key` (dotted path, e.g. `train.model.encoder.hidden_dim`) in `tree`
/// to `raw`, read as JSON when it parses and as a string otherwise. Every
/// path component must already exist.
pub fn apply_override(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(())
}

/// Parses `key=value` and applies it.
pub fn apply_assignment(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    apply_override(tree, key.trim(), raw.trim())
}

/// Loads `T` from optional JSON text layered over `T::default()`, then
/// applies the overrides in order.
pub fn layered<T>(file: Option<&str>, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let base: T = match file {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::json("configuration", e))?,
        None => T::default(),
    };
    let mut tree = serde_json::to_value(&base).expect("configuration serialises");
    for o in overrides {
        apply_assignment(&mut tree, o)?;
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;

    #[test]
    fn overrides_nested_keys() {
        let cfg: TrainConfig = layered(
            None,
            &[
                "model.encoder.hidden_dim=16".into(),
                "scheduled_sampling.1=30".into(),
                "ablation.decode_mode=git-nt".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.encoder.hidden_dim, 16);
        assert_eq!(cfg.scheduled_sampling, [10, 30]);
        assert_eq!(cfg.ablation.decode_mode, crate::recdec::DecodeMode::GitNt);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        assert!(layered::<TrainConfig>(None, &["model.nope=1".into()]).is_err());
        assert!(layered::<TrainConfig>(None, &["epochs=many".into()]).is_err());
        assert!(layered::<TrainConfig>(None, &["epochs".into()]).is_err());
        assert!(layered::<TrainConfig>(Some(r#"{"bogus": 1}"#), &[]).is_err());
    }
}
