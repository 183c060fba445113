//! Minimal JSON Schema checker covering the keywords used by the files in
//! `schemas/`. Any other keyword is rejected so schema edits cannot slip
//! past unchecked.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use regex::Regex;
use serde_json::Value;

const ANNOTATIONS: [&str; 4] = ["$schema", "$id", "title", "description"];
const CHECKED: [&str; 12] = [
    "$ref",
    "$defs",
    "type",
    "enum",
    "required",
    "properties",
    "additionalProperties",
    "items",
    "minItems",
    "maxItems",
    "minimum",
    "pattern",
];

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

pub fn load_schema(name: &str) -> Value {
    let path = schema_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type `{other}`"),
    }
}

fn check(root: &Value, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let obj = schema.as_object().expect("schema node must be an object");
    for key in obj.keys() {
        assert!(
            ANNOTATIONS.contains(&key.as_str()) || CHECKED.contains(&key.as_str()),
            "unsupported schema keyword `{key}`"
        );
    }
    if let Some(r) = obj.get("$ref").and_then(Value::as_str) {
        let target = root
            .pointer(r.trim_start_matches('#'))
            .unwrap_or_else(|| panic!("dangling $ref {r}"));
        check(root, target, v, at, errors);
    }
    if let Some(ty) = obj.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad `type`"),
        };
        if !ok {
            errors.push(format!("{at}: expected type {ty}, got {v}"));
            return;
        }
    }
    if let Some(options) = obj.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            errors.push(format!("{at}: {v} not in {options:?}"));
        }
    }
    if let (Some(min), Some(x)) = (obj.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            errors.push(format!("{at}: {x} < minimum {min}"));
        }
    }
    if let (Some(p), Some(s)) = (obj.get("pattern").and_then(Value::as_str), v.as_str()) {
        if !Regex::new(p).unwrap().is_match(s) {
            errors.push(format!("{at}: `{s}` does not match {p}"));
        }
    }
    if let Some(map) = v.as_object() {
        if let Some(req) = obj.get("required").and_then(Value::as_array) {
            for k in req {
                if !map.contains_key(k.as_str().unwrap()) {
                    errors.push(format!("{at}: missing required `{}`", k.as_str().unwrap()));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (k, child) in map {
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(root, s, child, &format!("{at}/{k}"), errors),
                None if obj.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected key `{k}`"))
                }
                None => {}
            }
        }
    }
    if let Some(items) = v.as_array() {
        if let Some(n) = obj.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < n {
                errors.push(format!("{at}: {} items < minItems {n}", items.len()));
            }
        }
        if let Some(n) = obj.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > n {
                errors.push(format!("{at}: {} items > maxItems {n}", items.len()));
            }
        }
        if let Some(s) = obj.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(root, s, item, &format!("{at}/{i}"), errors);
            }
        }
    }
}

/// All violations of `schema` by `value`; empty means valid.
pub fn violations(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, schema, value, "", &mut errors);
    errors
}

pub fn assert_valid(schema_name: &str, path: &Path) {
    let schema = load_schema(schema_name);
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).unwrap();
    let errors = violations(&schema, &value);
    assert!(
        errors.is_empty(),
        "{} violates {schema_name}:\n{}",
        path.display(),
        errors.join("\n")
    );
}
