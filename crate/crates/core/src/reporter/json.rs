use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::{json, Map, Value};

use super::ReportError;
use crate::calltree::{CallTree, CallTreeNode, TreeMetadata, ROOT_NAME};

pub const SCHEMA_VERSION: u64 = 1;

fn node_value(n: &CallTreeNode) -> Value {
    json!({
        "name": n.name,
        "inclusive": n.inclusive,
        "self": n.self_count,
        "children": n.children.values().map(node_value).collect::<Vec<_>>(),
    })
}

/// The tree as a schema v1 document value (children in normalized order).
pub fn tree_document(tree: &CallTree) -> Value {
    let tree = tree.snapshot();
    let m = &tree.metadata;
    json!({
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "target": m.target,
            "source_mode": m.source_mode,
            "period_ns": m.period_ns,
            "start_ns": m.start_ns,
            "end_ns": m.end_ns,
            "total_samples": tree.total_samples,
        },
        "root": node_value(&tree.root),
    })
}

struct NodeOut<'a>(&'a CallTreeNode);

impl Serialize for NodeOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        struct Kids<'a>(&'a CallTreeNode);
        impl Serialize for Kids<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_seq(self.0.normalized_children().into_iter().map(NodeOut))
            }
        }
        let n = self.0;
        let mut m = s.serialize_map(Some(4))?;
        m.serialize_entry("children", &Kids(n))?;
        m.serialize_entry("inclusive", &n.inclusive)?;
        m.serialize_entry("name", &n.name)?;
        m.serialize_entry("self", &n.self_count)?;
        m.end()
    }
}

// fields in key order: the derive emits them as declared
#[derive(Serialize)]
struct MetaOut<'a> {
    end_ns: u64,
    period_ns: u64,
    source_mode: &'a str,
    start_ns: u64,
    target: &'a str,
    total_samples: u64,
}

#[derive(Serialize)]
struct DocOut<'a> {
    metadata: MetaOut<'a>,
    root: NodeOut<'a>,
    schema_version: u64,
}

/// Canonical text: sorted keys, two-space indent, trailing newline. Written
/// straight from the tree; equal to pretty-printing [`tree_document`].
pub fn to_canonical_string(tree: &CallTree) -> String {
    let m = &tree.metadata;
    let doc = DocOut {
        metadata: MetaOut {
            end_ns: m.end_ns,
            period_ns: m.period_ns,
            source_mode: &m.source_mode,
            start_ns: m.start_ns,
            target: &m.target,
            total_samples: tree.total_samples,
        },
        root: NodeOut(&tree.root),
        schema_version: SCHEMA_VERSION,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("trees always serialize");
    s.push('\n');
    s
}

fn mismatch(msg: impl Into<String>) -> ReportError {
    ReportError::SchemaMismatch(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value, ReportError> {
    obj.get(key).ok_or_else(|| mismatch(format!("{at}: missing field `{key}`")))
}

fn uint(obj: &Map<String, Value>, key: &str, at: &str) -> Result<u64, ReportError> {
    field(obj, key, at)?
        .as_u64()
        .ok_or_else(|| mismatch(format!("{at}: `{key}` must be a non-negative integer")))
}

fn string(obj: &Map<String, Value>, key: &str, at: &str) -> Result<String, ReportError> {
    field(obj, key, at)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| mismatch(format!("{at}: `{key}` must be a string")))
}

fn only_keys(obj: &Map<String, Value>, allowed: &[&str], at: &str) -> Result<(), ReportError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(mismatch(format!("{at}: unknown field `{k}`"))),
        None => Ok(()),
    }
}

fn parse_node(v: &Value, path: &mut Vec<String>) -> Result<CallTreeNode, ReportError> {
    let at = if path.is_empty() { "root".to_string() } else { path.join("/") };
    let obj = v.as_object().ok_or_else(|| mismatch(format!("{at}: node must be an object")))?;
    only_keys(obj, &["name", "inclusive", "self", "children"], &at)?;
    let name = string(obj, "name", &at)?;
    path.push(name.clone());
    let here = path.join("/");
    let mut node = CallTreeNode::new(name);
    node.inclusive = uint(obj, "inclusive", &here)?;
    node.self_count = uint(obj, "self", &here)?;
    let children = field(obj, "children", &here)?
        .as_array()
        .ok_or_else(|| mismatch(format!("{here}: `children` must be an array")))?;
    for c in children {
        let child = parse_node(c, path)?;
        if node.children.contains_key(&child.name) {
            return Err(ReportError::InvariantViolation {
                path: here,
                detail: format!("duplicate child {:?}", child.name),
            });
        }
        node.children.insert(child.name.clone(), child);
    }
    let sum: u64 = node.children.values().map(|c| c.inclusive).sum();
    if node.inclusive != node.self_count + sum {
        return Err(ReportError::InvariantViolation {
            path: here,
            detail: format!(
                "inclusive {} != self {} + children {}",
                node.inclusive, node.self_count, sum
            ),
        });
    }
    if path.len() > 1 && node.inclusive == 0 {
        return Err(ReportError::InvariantViolation {
            path: here,
            detail: "node with zero samples".into(),
        });
    }
    path.pop();
    Ok(node)
}

/// Validates a parsed document and rebuilds the tree it describes.
pub fn tree_from_value(doc: &Value) -> Result<CallTree, ReportError> {
    let obj = doc.as_object().ok_or_else(|| mismatch("document must be an object"))?;
    match obj.get("schema_version").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(mismatch(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
        None => return Err(mismatch("missing or non-integer schema_version")),
    }
    only_keys(obj, &["schema_version", "metadata", "root"], "document")?;
    let meta = field(obj, "metadata", "document")?
        .as_object()
        .ok_or_else(|| mismatch("metadata must be an object"))?;
    only_keys(
        meta,
        &["target", "source_mode", "period_ns", "start_ns", "end_ns", "total_samples"],
        "metadata",
    )?;
    let metadata = TreeMetadata {
        target: string(meta, "target", "metadata")?,
        source_mode: string(meta, "source_mode", "metadata")?,
        period_ns: uint(meta, "period_ns", "metadata")?,
        start_ns: uint(meta, "start_ns", "metadata")?,
        end_ns: uint(meta, "end_ns", "metadata")?,
    };
    let total = uint(meta, "total_samples", "metadata")?;
    let root = parse_node(field(obj, "root", "document")?, &mut Vec::new())?;
    if root.name != ROOT_NAME {
        return Err(ReportError::InvariantViolation {
            path: root.name.clone(),
            detail: format!("root must be named {ROOT_NAME:?}"),
        });
    }
    if root.self_count != 0 {
        return Err(ReportError::InvariantViolation {
            path: ROOT_NAME.into(),
            detail: format!("root self must be 0, found {}", root.self_count),
        });
    }
    if root.inclusive != total {
        return Err(ReportError::InvariantViolation {
            path: ROOT_NAME.into(),
            detail: format!("inclusive {} != total_samples {total}", root.inclusive),
        });
    }
    let mut tree = CallTree {
        root,
        total_samples: total,
        metadata,
    };
    tree.root.normalize();
    Ok(tree)
}

pub fn tree_from_str(text: &str) -> Result<CallTree, ReportError> {
    let mut de = serde_json::Deserializer::from_str(text);
    // call stacks can be deep; the tree's own depth is the only limit
    de.disable_recursion_limit();
    let value: Value = serde::Deserialize::deserialize(&mut de).map_err(|e| mismatch(format!("invalid JSON: {e}")))?;
    de.end().map_err(|e| mismatch(format!("invalid JSON: {e}")))?;
    tree_from_value(&value)
}
