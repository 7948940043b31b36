//! TOML config files with dotted-path `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{DcenError, Result};

/// Parses the right-hand side of an override. Anything that is not a valid
/// TOML value is taken as a bare string, so `mode=scm_only` works unquoted.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` assignment, creating intermediate tables.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        DcenError::InvalidArgument(format!("override `{assignment}` is not of the form key=value"))
    })?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(DcenError::InvalidArgument(format!("bad override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = root;
    for key in parents {
        let entry = table.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            DcenError::InvalidArgument(format!("override `{path}`: `{key}` is not a table"))
        })?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Recursively overlays `top` onto `base`. Tables merge key by key; any
/// other value, arrays included, replaces the base value.
fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Starts from `T::default()`, overlays the TOML `text` and then each
/// override in order, and deserializes. Nested tables may be partial;
/// unknown keys are rejected by the target type. `origin` names the source
/// in error messages.
pub fn from_toml<T: DeserializeOwned + Serialize + Default>(
    text: &str,
    origin: &str,
    overrides: &[String],
) -> Result<T> {
    let mut table = Table::try_from(T::default()).expect("defaults serialize to a table");
    let file: Table = toml::from_str(text).map_err(|e| DcenError::parse(origin, e.message().to_string()))?;
    merge(&mut table, file);
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| DcenError::Config(format!("{origin}: {}", e.message())))
}

/// [`from_toml`] on the file at `path`, or on defaults alone.
pub fn load<T: DeserializeOwned + Serialize + Default>(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| DcenError::io(p, e))?;
            from_toml(&text, &p.display().to_string(), overrides)
        }
        None => from_toml("", "<defaults>", overrides),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{TrainConfig, TrainMode};

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg: TrainConfig = load(
            None,
            &[
                "lambda1=0.5".into(),
                "mode=scm_only".into(),
                "model.embed_dim=16".into(),
                "augmentation_preset=\"crop\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.lambda1, 0.5);
        assert_eq!(cfg.mode, TrainMode::ScmOnly);
        assert_eq!(cfg.model.embed_dim, 16);
        assert_eq!(cfg.augmentation_preset.as_deref(), Some("crop"));
    }

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "steps = 7\nseed = 3\n[model]\nembed_dim = 8\n").unwrap();
        let cfg: TrainConfig = load(Some(&p), &["seed=4".into(), "augmentation.out_size=16".into()]).unwrap();
        assert_eq!((cfg.steps, cfg.seed), (7, 4));
        assert_eq!(cfg.model.embed_dim, 8);
        assert_eq!(cfg.model.conv_widths, TrainConfig::default().model.conv_widths);
        assert_eq!(cfg.augmentation.out_size, 16);
        assert_eq!(cfg.augmentation.ops, TrainConfig::default().augmentation.ops);
    }

    #[test]
    fn bad_overrides_are_errors() {
        assert!(load::<TrainConfig>(None, &["lambda1".into()]).is_err());
        assert!(load::<TrainConfig>(None, &["lamda1=1".into()]).is_err());
        assert!(load::<TrainConfig>(None, &["steps=3".into(), "steps.x=1".into()]).is_err());
        assert!(load::<TrainConfig>(None, &["lambda1=abc".into()]).is_err());
    }
}
