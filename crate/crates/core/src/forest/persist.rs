//! Model files: compact JSON with sorted keys and shortest round-trip
//! numbers, optionally gzip-compressed. Saving the same model twice gives
//! the same bytes.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde_json::{Map, Value};

use super::{ForestError, ForestModel, ForestParams, TreeNode, CLASS_COUNT};
use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::numfmt::fmt_g17;

const FORMAT_VERSION: u64 = 1;

pub fn save_model(model: &ForestModel) -> String {
    let p = model.params();
    let mut out = String::new();
    out.push_str("{\"class_labels\":[1,2,3,4],\"feature_names\":[");
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{name}\"");
    }
    let _ = write!(
        out,
        "],\"format_version\":{FORMAT_VERSION},\"params\":{{\"bootstrap\":{},\"max_depth\":{},\"min_samples_leaf\":{},\"mtry\":{},\"n_trees\":{},\"seed\":{}}},\"trees\":[",
        p.bootstrap, p.max_depth, p.min_samples_leaf, p.mtry, p.n_trees, p.seed
    );
    for (i, t) in model.trees().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_node(&mut out, t);
    }
    out.push_str("]}\n");
    out
}

fn write_node(out: &mut String, node: &TreeNode) {
    match node {
        TreeNode::Internal { feature, threshold, left, right } => {
            let _ = write!(out, "{{\"feature\":{feature},\"left\":");
            write_node(out, left);
            out.push_str(",\"right\":");
            write_node(out, right);
            let _ = write!(out, ",\"threshold\":{}}}", fmt_g17(*threshold));
        }
        TreeNode::Leaf { counts } => {
            let [a, b, c, d] = counts;
            let _ = write!(out, "{{\"counts\":[{a},{b},{c},{d}]}}");
        }
    }
}

/// Writes the model to `path`, gzip-compressed when the name ends in `.gz`.
pub fn save_model_file(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    let json = save_model(model);
    let gz = path.extension().is_some_and(|e| e == "gz");
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(json.as_bytes())?;
        enc.finish()?.flush()?;
    } else {
        file.write_all(json.as_bytes())?;
        file.flush()?;
    }
    Ok(())
}

/// Parses a model from JSON bytes or gzip-compressed JSON.
pub fn load_model(bytes: &[u8]) -> Result<ForestModel, ForestError> {
    let text;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut buf = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut buf)
            .map_err(|e| ForestError::MalformedModel(format!("gzip: {e}")))?;
        text = buf;
        &text[..]
    } else {
        bytes
    };
    let value: Value = serde_json::from_slice(bytes).map_err(|e| malformed(format!("json: {e}")))?;
    from_value(&value)
}

pub fn load_model_file(path: &Path) -> Result<ForestModel, ForestError> {
    load_model(&std::fs::read(path)?)
}

fn malformed(msg: impl Into<String>) -> ForestError {
    ForestError::MalformedModel(msg.into())
}

fn object<'a>(v: &'a Value, what: &str, keys: &[&str]) -> Result<&'a Map<String, Value>, ForestError> {
    let map = v.as_object().ok_or_else(|| malformed(format!("{what} is not an object")))?;
    if map.len() != keys.len() || keys.iter().any(|k| !map.contains_key(*k)) {
        let found: Vec<&str> = map.keys().map(String::as_str).collect();
        return Err(malformed(format!("{what} has keys {found:?}, expected {keys:?}")));
    }
    Ok(map)
}

fn uint(v: &Value, what: &str) -> Result<u64, ForestError> {
    v.as_u64().ok_or_else(|| malformed(format!("{what} is not a non-negative integer")))
}

fn usize_field(v: &Value, what: &str) -> Result<usize, ForestError> {
    usize::try_from(uint(v, what)?).map_err(|_| malformed(format!("{what} is too large")))
}

fn from_value(v: &Value) -> Result<ForestModel, ForestError> {
    let root = object(v, "model", &["class_labels", "feature_names", "format_version", "params", "trees"])?;
    let version = uint(&root["format_version"], "format_version")?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported format_version {version}")));
    }
    if root["class_labels"] != serde_json::json!([1, 2, 3, 4]) {
        return Err(malformed("class_labels must be [1,2,3,4]"));
    }
    if root["feature_names"] != serde_json::json!(FEATURE_NAMES) {
        return Err(malformed("feature_names do not match this build"));
    }
    let p =
        object(&root["params"], "params", &["bootstrap", "max_depth", "min_samples_leaf", "mtry", "n_trees", "seed"])?;
    let params = ForestParams {
        n_trees: usize_field(&p["n_trees"], "n_trees")?,
        max_depth: usize_field(&p["max_depth"], "max_depth")?,
        min_samples_leaf: usize_field(&p["min_samples_leaf"], "min_samples_leaf")?,
        mtry: usize_field(&p["mtry"], "mtry")?,
        seed: uint(&p["seed"], "seed")?,
        bootstrap: p["bootstrap"].as_bool().ok_or_else(|| malformed("bootstrap is not a boolean"))?,
    };
    params.validate().map_err(|e| malformed(e.to_string()))?;
    let trees = root["trees"].as_array().ok_or_else(|| malformed("trees is not an array"))?;
    if trees.len() != params.n_trees {
        return Err(malformed(format!("n_trees is {} but {} trees are stored", params.n_trees, trees.len())));
    }
    let trees = trees
        .iter()
        .enumerate()
        .map(|(i, t)| node_from_value(t, 0, params.max_depth).map_err(|e| malformed(format!("tree {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForestModel::from_parts(params, trees))
}

fn node_from_value(v: &Value, depth: usize, max_depth: usize) -> Result<TreeNode, String> {
    let map = v.as_object().ok_or("node is not an object")?;
    if map.len() == 1 && map.contains_key("counts") {
        let arr = map["counts"].as_array().filter(|a| a.len() == CLASS_COUNT).ok_or("counts must hold 4 integers")?;
        let mut counts = [0u32; CLASS_COUNT];
        for (c, v) in counts.iter_mut().zip(arr) {
            *c = v.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or("counts must hold 4 integers")?;
        }
        if counts.iter().all(|&c| c == 0) {
            return Err("leaf with no samples".into());
        }
        return Ok(TreeNode::Leaf { counts });
    }
    let keys = ["feature", "left", "right", "threshold"];
    if map.len() != keys.len() || keys.iter().any(|k| !map.contains_key(*k)) {
        return Err("node must be a leaf {counts} or a split {feature,left,right,threshold}".into());
    }
    if depth >= max_depth {
        return Err(format!("split at depth {depth} exceeds max_depth {max_depth}"));
    }
    let feature = map["feature"]
        .as_u64()
        .filter(|&f| (f as usize) < FEATURE_COUNT)
        .ok_or_else(|| format!("feature index {} out of range", map["feature"]))? as usize;
    let threshold = map["threshold"].as_f64().filter(|t| t.is_finite()).ok_or("threshold is not a finite number")?;
    Ok(TreeNode::Internal {
        feature,
        threshold,
        left: Box::new(node_from_value(&map["left"], depth + 1, max_depth)?),
        right: Box::new(node_from_value(&map["right"], depth + 1, max_depth)?),
    })
}
