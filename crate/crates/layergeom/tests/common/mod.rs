// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use std::path::Path;

use layergeom::core::{Dtype, Matrix};
use layergeom::io::write_matrix;
use layergeom::manifest::{LayerEntry, RunManifest, SampleMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(n, d, |_, _| r.random::<f64>())
}

/// Writes `layers` as `layer_XX.lmrx` plus `manifest.json` in `dir`.
pub fn write_run(dir: &Path, model: &str, step: Option<u64>, layers: &[(usize, Matrix)]) -> std::path::PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut entries = Vec::new();
    for (index, m) in layers {
        let name = format!("layer_{index:02}.lmrx");
        write_matrix(dir.join(&name), m, Dtype::F64).unwrap();
        entries.push(LayerEntry { layer_index: *index, matrix_path: name });
    }
    let manifest = RunManifest {
        model_name: model.into(),
        checkpoint_step: step,
        layers: entries,
        sample_meta: SampleMeta { n_contexts: layers[0].1.rows(), context_words: 20, seed: 0 },
        unembedding_path: None,
        norm_params_path: None,
        target_ids_path: None,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

pub fn load_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Validates `value` against the JSON Schema subset used by the report schema:
/// `type`, `const`, `enum`, `required`, `properties`, `additionalProperties: false`,
/// `items`, `oneOf`, local `$ref`, and numeric bounds. Returns every violation.
pub fn schema_errors(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, schema, value, "$", &mut errors);
    errors
}

fn resolve<'a>(root: &'a Value, node: &'a Value) -> &'a Value {
    match node.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let pointer = r.strip_prefix('#').expect("local reference");
            resolve(root, root.pointer(pointer).unwrap_or_else(|| panic!("dangling reference {r}")))
        }
        None => node,
    }
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "string" => v.is_string(),
        "array" => v.is_array(),
        "object" => v.is_object(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type {other}"),
    }
}

fn check(root: &Value, node: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let node = resolve(root, node);
    if let Some(t) = node.get("type") {
        let names: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword"),
        };
        if !names.iter().any(|n| type_matches(n, v)) {
            errors.push(format!("{at}: expected {names:?}, found {v}"));
            return;
        }
    }
    if let Some(c) = node.get("const") {
        if c != v {
            errors.push(format!("{at}: expected constant {c}"));
        }
    }
    if let Some(Value::Array(options)) = node.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{at}: {v} not in {options:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        let bound = |k: &str| node.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|b| x < b)
            || bound("maximum").is_some_and(|b| x > b)
            || bound("exclusiveMinimum").is_some_and(|b| x <= b)
            || bound("exclusiveMaximum").is_some_and(|b| x >= b)
        {
            errors.push(format!("{at}: {x} out of bounds"));
        }
    }
    if let Some(Value::Array(options)) = node.get("oneOf") {
        let passing = options
            .iter()
            .filter(|o| {
                let mut e = Vec::new();
                check(root, o, v, at, &mut e);
                e.is_empty()
            })
            .count();
        if passing != 1 {
            errors.push(format!("{at}: {passing} oneOf branches match"));
        }
    }
    if let Value::Object(obj) = v {
        let props = node.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(req)) = node.get("required") {
            for r in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(r) {
                    errors.push(format!("{at}: missing {r}"));
                }
            }
        }
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(root, s, child, &format!("{at}.{k}"), errors),
                None if node.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Value::Array(items), Some(s)) = (v, node.get("items")) {
        for (i, child) in items.iter().enumerate() {
            check(root, s, child, &format!("{at}[{i}]"), errors);
        }
    }
}
