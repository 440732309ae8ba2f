//! Prefix-merged call tree.
//!
//! Stacks that share a prefix share nodes; a function reached from two
//! different callers gets two distinct nodes. Every node carries an
//! inclusive counter (samples passing through it) and a self counter
//! (samples ending at it), with `inclusive = self + Σ children.inclusive`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROOT_NAME: &str = "<root>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("cannot ingest an empty stack")]
    EmptyStack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallTreeNode {
    pub name: String,
    pub inclusive: u64,
    pub self_count: u64,
    pub children: IndexMap<String, CallTreeNode>,
}

impl CallTreeNode {
    pub fn new(name: impl Into<String>) -> Self {
        CallTreeNode {
            name: name.into(),
            inclusive: 0,
            self_count: 0,
            children: IndexMap::new(),
        }
    }

    pub fn child(&self, name: &str) -> Option<&CallTreeNode> {
        self.children.get(name)
    }

    /// Follows a path of names below this node.
    pub fn descend<S: AsRef<str>>(&self, path: &[S]) -> Option<&CallTreeNode> {
        path.iter().try_fold(self, |n, p| n.children.get(p.as_ref()))
    }

    pub fn children_sum(&self) -> u64 {
        self.children.values().map(|c| c.inclusive).sum()
    }

    /// Sorts children by descending inclusive count, then name, recursively.
    pub fn normalize(&mut self) {
        self.children.sort_by(|_, a, _, b| normalized_order(a, b));
        for c in self.children.values_mut() {
            c.normalize();
        }
    }

    /// Adds `other`'s counters into `self`, matching children by name.
    pub fn absorb(&mut self, other: &CallTreeNode) {
        self.inclusive += other.inclusive;
        self.self_count += other.self_count;
        for (name, oc) in &other.children {
            self.children
                .entry(name.clone())
                .or_insert_with(|| CallTreeNode::new(name.clone()))
                .absorb(oc);
        }
    }

    /// Children in the order [`normalize`](Self::normalize) would leave them.
    pub fn normalized_children(&self) -> Vec<&CallTreeNode> {
        let mut v: Vec<&CallTreeNode> = self.children.values().collect();
        v.sort_by(|a, b| normalized_order(a, b));
        v
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.values().map(CallTreeNode::node_count).sum::<usize>()
    }

    pub fn max_depth(&self) -> usize {
        self.children.values().map(|c| 1 + c.max_depth()).max().unwrap_or(0)
    }

    /// Visits every node with its depth (this node is depth 0).
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a CallTreeNode, usize)) {
        fn go<'a>(n: &'a CallTreeNode, d: usize, f: &mut impl FnMut(&'a CallTreeNode, usize)) {
            f(n, d);
            for c in n.children.values() {
                go(c, d + 1, f);
            }
        }
        go(self, 0, f);
    }
}

fn normalized_order(a: &CallTreeNode, b: &CallTreeNode) -> std::cmp::Ordering {
    b.inclusive.cmp(&a.inclusive).then_with(|| a.name.cmp(&b.name))
}

/// Session information that travels with a tree into reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMetadata {
    pub target: String,
    pub source_mode: String,
    pub period_ns: u64,
    pub start_ns: u64,
    pub end_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallTree {
    pub root: CallTreeNode,
    pub total_samples: u64,
    pub metadata: TreeMetadata,
}

impl Default for CallTree {
    fn default() -> Self {
        Self::new()
    }
}

impl CallTree {
    pub fn new() -> Self {
        CallTree {
            root: CallTreeNode::new(ROOT_NAME),
            total_samples: 0,
            metadata: TreeMetadata::default(),
        }
    }

    pub fn with_metadata(metadata: TreeMetadata) -> Self {
        CallTree {
            metadata,
            ..Self::new()
        }
    }

    /// Merges one root-first stack into the tree.
    pub fn ingest<S: AsRef<str>>(&mut self, stack: &[S]) -> Result<(), TreeError> {
        self.ingest_n(stack, 1)
    }

    /// Equivalent to calling [`ingest`](Self::ingest) `count` times.
    pub fn ingest_n<S: AsRef<str>>(&mut self, stack: &[S], count: u64) -> Result<(), TreeError> {
        if stack.is_empty() {
            return Err(TreeError::EmptyStack);
        }
        let mut node = &mut self.root;
        node.inclusive += count;
        for name in stack {
            let name = name.as_ref();
            // avoid allocating the key when the child already exists
            let idx = match node.children.get_index_of(name) {
                Some(i) => i,
                None => node.children.insert_full(name.to_string(), CallTreeNode::new(name)).0,
            };
            node = &mut node.children[idx];
            node.inclusive += count;
        }
        node.self_count += count;
        self.total_samples += count;
        Ok(())
    }

    pub fn ingest_resolved(&mut self, stack: &crate::symbolizer::ResolvedStack) -> Result<(), TreeError> {
        let names: Vec<&str> = stack.names().collect();
        self.ingest(&names)?;
        if stack.timestamp != 0 {
            if self.metadata.start_ns == 0 || stack.timestamp < self.metadata.start_ns {
                self.metadata.start_ns = stack.timestamp;
            }
            self.metadata.end_ns = self.metadata.end_ns.max(stack.timestamp);
        }
        Ok(())
    }

    /// A deep copy with children in normalized order.
    pub fn snapshot(&self) -> CallTree {
        let mut t = self.clone();
        t.root.normalize();
        t
    }

    pub fn is_empty(&self) -> bool {
        self.total_samples == 0
    }

    pub fn node(&self, path: &[&str]) -> Option<&CallTreeNode> {
        self.root.descend(path)
    }

    /// Checks every structural invariant, naming the first offending node.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.root.inclusive != self.total_samples {
            return Err(format!(
                "{ROOT_NAME}: inclusive {} != total_samples {}",
                self.root.inclusive, self.total_samples
            ));
        }
        if self.root.self_count != 0 {
            return Err(format!("{ROOT_NAME}: self must be 0, found {}", self.root.self_count));
        }
        fn check(n: &CallTreeNode, path: &mut Vec<String>, is_root: bool) -> Result<(), String> {
            path.push(n.name.clone());
            if n.inclusive != n.self_count + n.children_sum() {
                return Err(format!(
                    "{}: inclusive {} != self {} + children {}",
                    path.join("/"),
                    n.inclusive,
                    n.self_count,
                    n.children_sum()
                ));
            }
            if !is_root && n.inclusive == 0 {
                return Err(format!("{}: materialized node with zero count", path.join("/")));
            }
            for (k, c) in &n.children {
                if *k != c.name {
                    return Err(format!("{}: child key {k:?} != name {:?}", path.join("/"), c.name));
                }
                check(c, path, false)?;
            }
            path.pop();
            Ok(())
        }
        check(&self.root, &mut Vec::new(), true)
    }
}

/// Node-wise merge of two trees; the result is normalized.
pub fn merge_trees(a: &CallTree, b: &CallTree) -> CallTree {
    let mut out = a.clone();
    out.merge_from(b);
    out.root.normalize();
    out
}

impl CallTree {
    /// Adds `other` into `self` without renormalizing.
    pub fn merge_from(&mut self, other: &CallTree) {
        self.root.absorb(&other.root);
        self.total_samples += other.total_samples;
        let (m, o) = (&mut self.metadata, &other.metadata);
        if *m == TreeMetadata::default() {
            *m = o.clone();
        } else if other.total_samples > 0 {
            if o.start_ns != 0 && (m.start_ns == 0 || o.start_ns < m.start_ns) {
                m.start_ns = o.start_ns;
            }
            m.end_ns = m.end_ns.max(o.end_ns);
        }
    }
}
