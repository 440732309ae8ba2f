//! Views over call-tree snapshots.
//!
//! [`compose`] runs the fixed pipeline
//! subtree → blacklist → truncate → flatten (optional) → whitelist.
//! Blacklisting changes totals; whitelisting only hides rows.

mod pattern;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calltree::{CallTree, CallTreeNode, TreeMetadata};

pub use pattern::{any_match, compile_all, Pattern};

/// Suffix of the row carrying a node's self samples on levels below it.
pub const SELF_SUFFIX: &str = " [self]";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyzeError {
    #[error("invalid pattern {pattern:?} at position {position}: {reason}")]
    PatternInvalid {
        pattern: String,
        position: usize,
        reason: String,
    },
    #[error("pattern {0:?} matched no function")]
    NoMatch(String),
    #[error("level must be -1 or at least 1, got {0}")]
    InvalidLevel(i64),
    #[error("pattern {0:?} is both whitelisted and blacklisted")]
    ConflictingFilters(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSpec {
    pub root: Option<String>,
    pub level: i64,
    pub whitelist: Vec<String>,
    pub blacklist: Vec<String>,
    pub flatten: bool,
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            root: None,
            level: -1,
            whitelist: Vec::new(),
            blacklist: Vec::new(),
            flatten: false,
        }
    }
}

impl ViewSpec {
    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if self.level != -1 && self.level < 1 {
            return Err(AnalyzeError::InvalidLevel(self.level));
        }
        if let Some(dup) = self.whitelist.iter().find(|w| self.blacklist.contains(w)) {
            return Err(AnalyzeError::ConflictingFilters(dup.clone()));
        }
        if let Some(r) = &self.root {
            Pattern::new(r)?;
        }
        compile_all(&self.whitelist)?;
        compile_all(&self.blacklist)?;
        Ok(())
    }

    /// Number of levels kept, or `None` for full depth.
    pub fn levels(&self) -> Option<usize> {
        (self.level >= 1).then_some(self.level as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub name: String,
    pub count: u64,
    pub share: f64,
    pub depth: usize,
}

/// Output of [`compose`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewResult {
    pub spec: ViewSpec,
    pub metadata: TreeMetadata,
    /// View tree after subtree, blacklist and truncation; children of its
    /// root are the view roots.
    pub tree: CallTree,
    pub rows: Vec<BreakdownRow>,
    /// Denominator of every share: samples in the view after blacklisting.
    pub total: u64,
}

/// Extracts every outermost node matching `pattern` together with its
/// subtree. Matches with the same name are merged into one top-level node.
pub fn subtree(snapshot: &CallTree, pattern: &Pattern) -> Result<CallTree, AnalyzeError> {
    if pattern.is_root() {
        return Ok(snapshot.snapshot());
    }
    let mut out = CallTree::with_metadata(snapshot.metadata.clone());
    fn collect(n: &CallTreeNode, p: &Pattern, out: &mut CallTreeNode) {
        for c in n.children.values() {
            if p.matches(&c.name) {
                out.children
                    .entry(c.name.clone())
                    .or_insert_with(|| CallTreeNode::new(c.name.clone()))
                    .absorb(c);
            } else {
                collect(c, p, out);
            }
        }
    }
    collect(&snapshot.root, pattern, &mut out.root);
    if out.root.children.is_empty() && !snapshot.is_empty() {
        return Err(AnalyzeError::NoMatch(pattern.as_str().to_string()));
    }
    out.root.inclusive = out.root.children_sum();
    out.total_samples = out.root.inclusive;
    out.root.normalize();
    Ok(out)
}

/// Keeps `k` levels below the tree root; each node on the last kept level
/// absorbs its descendants into its self count.
pub fn truncate(tree: &CallTree, k: usize) -> CallTree {
    fn cut(n: &mut CallTreeNode, remaining: usize) {
        if remaining == 0 {
            n.self_count = n.inclusive;
            n.children.clear();
            return;
        }
        for c in n.children.values_mut() {
            cut(c, remaining - 1);
        }
    }
    let mut out = tree.clone();
    for c in out.root.children.values_mut() {
        cut(c, k.max(1) - 1);
    }
    out
}

/// Removes every node matching a blacklist pattern with its subtree,
/// subtracting the removed samples from all ancestors. Ancestors left with
/// no samples are removed too.
pub fn apply_blacklist(tree: &CallTree, blacklist: &[Pattern]) -> CallTree {
    if blacklist.is_empty() {
        return tree.clone();
    }
    // returns the number of samples removed below (and including) n
    fn prune(n: &mut CallTreeNode, bl: &[Pattern]) -> u64 {
        let mut removed = 0;
        n.children.retain(|_, c| {
            if any_match(bl, &c.name) {
                removed += c.inclusive;
                false
            } else {
                true
            }
        });
        for c in n.children.values_mut() {
            removed += prune(c, bl);
        }
        n.children.retain(|_, c| c.inclusive > 0);
        n.inclusive -= removed;
        removed
    }
    let mut out = tree.clone();
    let removed = prune(&mut out.root, blacklist);
    out.total_samples -= removed;
    out
}

/// Restricts rows to names matching a whitelist pattern; counts and shares
/// are left untouched. An empty whitelist keeps everything.
pub fn apply_whitelist(rows: Vec<BreakdownRow>, whitelist: &[Pattern]) -> Vec<BreakdownRow> {
    if whitelist.is_empty() {
        return rows;
    }
    rows.into_iter()
        .filter(|r| any_match(whitelist, r.name.strip_suffix(SELF_SUFFIX).unwrap_or(&r.name)))
        .collect()
}

/// Blacklist on the tree, then whitelist on its flattened rows.
pub fn apply_filters(
    tree: &CallTree,
    whitelist: &[Pattern],
    blacklist: &[Pattern],
) -> (CallTree, Vec<BreakdownRow>) {
    let tree = apply_blacklist(tree, blacklist);
    let rows = apply_whitelist(flatten(&tree), whitelist);
    (tree, rows)
}

/// Per-name count of samples whose stack contains the name at least once.
pub fn flatten(tree: &CallTree) -> Vec<BreakdownRow> {
    flatten_from(&tree.root, tree.root.inclusive)
}

fn flatten_from(root: &CallTreeNode, total: u64) -> Vec<BreakdownRow> {
    fn go<'a>(n: &'a CallTreeNode, open: &mut HashMap<&'a str, usize>, acc: &mut BTreeMap<&'a str, u64>) {
        let depth = open.entry(&n.name).or_insert(0);
        if *depth == 0 {
            *acc.entry(&n.name).or_insert(0) += n.inclusive;
        }
        *depth += 1;
        for c in n.children.values() {
            go(c, open, acc);
        }
        *open.get_mut(n.name.as_str()).unwrap() -= 1;
    }
    let mut acc = BTreeMap::new();
    let mut open = HashMap::new();
    for c in root.children.values() {
        go(c, &mut open, &mut acc);
    }
    sort_rows(
        acc.into_iter()
            .map(|(name, count)| BreakdownRow {
                name: name.to_string(),
                count,
                share: share(count, total),
                depth: 0,
            })
            .collect(),
    )
}

fn share(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

fn sort_rows(mut rows: Vec<BreakdownRow>) -> Vec<BreakdownRow> {
    rows.sort_by(|a, b| {
        a.depth
            .cmp(&b.depth)
            .then(b.count.cmp(&a.count))
            .then_with(|| a.name.cmp(&b.name))
    });
    rows
}

/// Per-level rows: at each depth, nodes merged by name plus a `[self]` row
/// for every shallower node with self samples, so each level partitions the
/// total. `skip` levels directly below the root are treated as view roots
/// and produce no rows of their own.
fn level_rows(tree: &CallTree, skip: usize, max_depth: usize) -> Vec<BreakdownRow> {
    let total = tree.root.inclusive;
    let mut per_depth: BTreeMap<(usize, String), u64> = BTreeMap::new();
    fn go(
        n: &CallTreeNode,
        depth: usize,
        skip: usize,
        max_depth: usize,
        out: &mut BTreeMap<(usize, String), u64>,
    ) {
        if depth > skip {
            *out.entry((depth - skip, n.name.clone())).or_insert(0) += n.inclusive;
        }
        // samples ending here still count on every deeper level
        if depth > 0 && depth >= skip && n.self_count > 0 {
            let key = format!("{}{SELF_SUFFIX}", n.name);
            for deeper in depth - skip + 1..=max_depth {
                *out.entry((deeper, key.clone())).or_insert(0) += n.self_count;
            }
        }
        for c in n.children.values() {
            go(c, depth + 1, skip, max_depth, out);
        }
    }
    go(&tree.root, 0, skip, max_depth, &mut per_depth);
    sort_rows(
        per_depth
            .into_iter()
            .map(|((depth, name), count)| BreakdownRow {
                share: share(count, total),
                name,
                count,
                depth,
            })
            .collect(),
    )
}

/// Applies a view spec to a snapshot. Pure in `(spec, snapshot)`.
pub fn compose(spec: &ViewSpec, snapshot: &CallTree) -> Result<ViewResult, AnalyzeError> {
    spec.validate()?;
    let whitelist = compile_all(&spec.whitelist)?;
    let blacklist = compile_all(&spec.blacklist)?;
    let root = spec.root.as_deref().map(Pattern::new).transpose()?;
    let rooted = root.as_ref().is_some_and(|p| !p.is_root());

    let mut tree = match &root {
        Some(p) => subtree(snapshot, p)?,
        None => snapshot.snapshot(),
    };
    tree = apply_blacklist(&tree, &blacklist);
    // levels count from the matched node when a root is given
    let skip = rooted as usize;
    if let Some(k) = spec.levels() {
        tree = truncate(&tree, k + skip);
    }
    tree.root.normalize();

    let total = tree.root.inclusive;
    let rows = if spec.flatten {
        flatten_from(&tree.root, total)
    } else {
        let max_depth = tree.root.max_depth().saturating_sub(skip);
        level_rows(&tree, skip, max_depth)
    };
    let rows = apply_whitelist(rows, &whitelist);
    Ok(ViewResult {
        spec: spec.clone(),
        metadata: snapshot.metadata.clone(),
        tree,
        rows,
        total,
    })
}
