//! Privacy audit of a response body.

use regionrisk::aggregate::MIN_CELL;
use serde_json::{Map, Value};

/// Checks a JSON body for patient identifiers and small cells.
///
/// Rejects `patient_id` / `member` keys, strings shaped like patient ids,
/// counts below [`MIN_CELL`], and any number other than `week` inside an
/// object whose `n_patients` is withheld.
pub fn audit(v: &Value) -> Result<(), String> {
    walk(v, "$")
}

fn walk(v: &Value, path: &str) -> Result<(), String> {
    match v {
        Value::Object(map) => object(map, path),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, c)| walk(c, &format!("{path}[{i}]"))),
        Value::String(s) if looks_like_patient_id(s) => Err(format!("{path} holds a patient id")),
        _ => Ok(()),
    }
}

fn object(map: &Map<String, Value>, path: &str) -> Result<(), String> {
    for key in ["patient_id", "member"] {
        if map.contains_key(key) {
            return Err(format!("{path}.{key} present"));
        }
    }
    if map.get("n_patients").is_some_and(Value::is_null) {
        for (k, c) in map.iter().filter(|(k, _)| k.as_str() != "week") {
            no_numbers(c, &format!("{path}.{k}"))?;
        }
    }
    for key in ["n_patients", "existing", "incoming", "outgoing"] {
        if let Some(n) = map.get(key).and_then(Value::as_u64) {
            if n < MIN_CELL as u64 {
                return Err(format!("{path}.{key} = {n}"));
            }
        }
    }
    if let Some(counts) = map.get("counts").and_then(Value::as_array) {
        if let Some(c) = counts.iter().filter_map(Value::as_u64).find(|&c| c < MIN_CELL as u64) {
            return Err(format!("{path}.counts holds {c}"));
        }
    }
    map.iter().try_for_each(|(k, c)| walk(c, &format!("{path}.{k}")))
}

fn no_numbers(v: &Value, path: &str) -> Result<(), String> {
    match v {
        Value::Number(_) => Err(format!("{path} is a number under a withheld count")),
        Value::Object(map) => map
            .iter()
            .filter(|(k, _)| k.as_str() != "week")
            .try_for_each(|(k, c)| no_numbers(c, &format!("{path}.{k}"))),
        Value::Array(items) => items.iter().try_for_each(|c| no_numbers(c, path)),
        _ => Ok(()),
    }
}

/// `P` followed by seven digits, as the cohort generator names patients.
fn looks_like_patient_id(s: &str) -> bool {
    s.len() == 8 && s.starts_with('P') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_each_kind_of_leak() {
        assert!(audit(&json!({ "patient_id": "x" })).is_err());
        assert!(audit(&json!({ "ids": ["P0000012"] })).is_err());
        assert!(audit(&json!({ "n_patients": 4 })).is_err());
        assert!(audit(&json!({ "n_patients": null, "week": 3, "value": 1.5 })).is_err());
        assert!(audit(&json!({ "n_patients": null, "detail": { "bars": [0.2] } })).is_err());
        assert!(audit(&json!({ "counts": [null, 7, 2] })).is_err());
        assert!(audit(&json!({ "groups": { "incoming": 1 } })).is_err());
    }

    #[test]
    fn passes_clean_bodies() {
        assert!(audit(&json!({ "n_patients": null, "week": 3, "value": null, "suppressed": true })).is_ok());
        assert!(audit(&json!({ "n_patients": 5, "value": 0.1, "counts": [null, 5, 12] })).is_ok());
        assert!(audit(&json!({ "region_id": "10001", "name": "P-county" })).is_ok());
    }
}
