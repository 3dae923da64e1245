//! Config file plus flag merging.
//!
//! A subcommand's settings come from an optional JSON object (`--config`)
//! overlaid with every flag given on the command line. Keys unknown to the
//! subcommand are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad invocation: unknown keys, missing required settings, out-of-range
/// values. Reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn as_object(v: Value, what: &str) -> anyhow::Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(usage(format!("{what} must be a JSON object, got {other}"))),
    }
}

/// Merge `flags` over the file at `config` and decode the result as `R`.
pub fn resolve<A: Serialize, R: Serialize + DeserializeOwned>(
    command: &str,
    config: Option<&Path>,
    flags: &A,
) -> anyhow::Result<R> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            as_object(v, "config file")?
        }
        None => Map::new(),
    };
    let flags = as_object(serde_json::to_value(flags)?, "flags")?;
    for (k, v) in flags {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    let resolved: R =
        serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("{command}: {e}")))?;
    log::info!("{command} config: {}", serde_json::to_string(&resolved)?);
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize)]
    struct Flags {
        a: Option<u32>,
        b: Option<String>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Resolved {
        a: u32,
        b: String,
        c: bool,
    }

    impl Default for Resolved {
        fn default() -> Self {
            Self {
                a: 1,
                b: "x".into(),
                c: false,
            }
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let f = write(r#"{"a": 5, "c": true}"#);
        let r: Resolved = resolve("t", Some(f.path()), &Flags { a: None, b: Some("y".into()) }).unwrap();
        assert_eq!(r, Resolved { a: 5, b: "y".into(), c: true });
        let r: Resolved = resolve("t", Some(f.path()), &Flags { a: Some(9), b: None }).unwrap();
        assert_eq!(r.a, 9);
        let r: Resolved = resolve("t", None, &Flags { a: None, b: None }).unwrap();
        assert_eq!(r, Resolved::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let f = write(r#"{"a": 5, "zzz": 1}"#);
        let e = resolve::<_, Resolved>("t", Some(f.path()), &Flags { a: None, b: None }).unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some(), "{e}");
        let f = write("[1, 2]");
        assert!(resolve::<_, Resolved>("t", Some(f.path()), &Flags { a: None, b: None }).is_err());
    }
}
