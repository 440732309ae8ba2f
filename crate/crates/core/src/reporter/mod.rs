//! Serialization of trees and breakdowns.
//!
//! Every export is a pure function of its input. Tree documents are
//! canonical: exporting, importing and exporting again yields the same
//! bytes.

mod html;
mod json;
mod svg;

use std::path::Path;

use thiserror::Error;

use crate::analyzer::BreakdownRow;
use crate::calltree::CallTree;

pub use html::{extract_data_block, DATA_BLOCK_ID, VIEWER_JS};
pub use json::{to_canonical_string, tree_document, tree_from_str, tree_from_value, SCHEMA_VERSION};

/// JSON Schema of the tree document.
pub const TREE_DOCUMENT_SCHEMA: &str = include_str!("../../assets/tree-document.schema.json");

pub const CSV_HEADER: [&str; 4] = ["name", "count", "share", "depth"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invariant violated at {path}: {detail}")]
    InvariantViolation { path: String, detail: String },
}

impl ReportError {
    pub fn is_permission_denied(&self) -> bool {
        matches!(self, ReportError::Io { source, .. } if source.kind() == std::io::ErrorKind::PermissionDenied)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    std::fs::write(path, bytes).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn export_json(tree: &CallTree, path: &Path) -> Result<(), ReportError> {
    write(path, to_canonical_string(tree).as_bytes())
}

pub fn import_json(path: &Path) -> Result<CallTree, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    tree_from_str(&text)
}

/// CSV text: header `name,count,share,depth`, shares to six decimals, LF
/// line endings, quoting only where a name needs it.
pub fn csv_string(rows: &[BreakdownRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.name.as_str(),
            &r.count.to_string(),
            &format!("{:.6}", r.share),
            &r.depth.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("rows are UTF-8")
}

pub fn export_csv(rows: &[BreakdownRow], path: &Path) -> Result<(), ReportError> {
    write(path, csv_string(rows).as_bytes())
}

/// Parses a breakdown table written by [`export_csv`].
pub fn read_csv(text: &str) -> Result<Vec<BreakdownRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| ReportError::SchemaMismatch(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::SchemaMismatch(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize()
        .map(|rec| rec.map_err(|e| ReportError::SchemaMismatch(e.to_string())))
        .collect()
}

pub fn svg_string(groups: &[(String, Vec<BreakdownRow>)]) -> String {
    svg::render_breakdown(groups)
}

pub fn export_svg_breakdown(groups: &[(String, Vec<BreakdownRow>)], path: &Path) -> Result<(), ReportError> {
    write(path, svg_string(groups).as_bytes())
}

pub fn html_string(tree: &CallTree) -> String {
    html::render(tree)
}

pub fn export_html(tree: &CallTree, path: &Path) -> Result<(), ReportError> {
    write(path, html_string(tree).as_bytes())
}
