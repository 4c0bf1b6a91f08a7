//! Stable hashing of configuration values, for artifact provenance.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Recursively sorts object keys so the serialization is canonical.
fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut sorted: Vec<(&String, &Value)> = map.iter().collect();
            sorted.sort_by_key(|(k, _)| k.as_str());
            Value::Object(
                sorted
                    .into_iter()
                    .map(|(k, v)| (k.clone(), canonicalize(v)))
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Hex-encoded SHA-256 prefix (16 chars) of the canonical JSON form.
pub fn fingerprint(value: &Value) -> String {
    let canonical = canonicalize(value).to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Fingerprint of any serializable config.
pub fn fingerprint_of<T: serde::Serialize>(value: &T) -> String {
    fingerprint(&serde_json::to_value(value).expect("configs serialize infallibly"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_matter() {
        let a = json!({"b": 1, "a": {"y": 2, "x": 3}});
        let b = json!({"a": {"x": 3, "y": 2}, "b": 1});
        assert_eq!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn values_do_matter() {
        let a = json!({"a": 1});
        let b = json!({"a": 2});
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }
}
