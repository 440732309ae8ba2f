//! Batch kernels with a data-parallel and a sequential implementation.
//!
//! With the `parallel` feature (on by default) the top-level functions use
//! rayon; without it they fall back to [`seq`]. Both produce the same
//! results: resolution keeps input order, and tree building merges per-chunk
//! trees, which is order-independent up to child order (compare snapshots).

use crate::calltree::CallTree;
use crate::source::RawSample;
use crate::symbolizer::{resolve, ResolvedStack, SymbolSnapshot};

/// Stacks per independently built partial tree.
pub const TREE_CHUNK: usize = 2048;

pub mod seq {
    use super::*;

    pub fn resolve_batch(samples: &[RawSample], snap: &SymbolSnapshot) -> Vec<ResolvedStack> {
        samples.iter().map(|s| resolve(s, snap)).collect()
    }

    pub fn build_tree(stacks: &[ResolvedStack]) -> CallTree {
        let mut t = CallTree::new();
        for s in stacks {
            let _ = t.ingest_resolved(s);
        }
        t
    }
}

#[cfg(feature = "parallel")]
pub mod par {
    use rayon::prelude::*;

    use super::*;

    pub fn resolve_batch(samples: &[RawSample], snap: &SymbolSnapshot) -> Vec<ResolvedStack> {
        samples.par_iter().map(|s| resolve(s, snap)).collect()
    }

    pub fn build_tree(stacks: &[ResolvedStack]) -> CallTree {
        if stacks.len() <= TREE_CHUNK {
            return seq::build_tree(stacks);
        }
        stacks
            .par_chunks(TREE_CHUNK)
            .map(seq::build_tree)
            .reduce(CallTree::new, |mut a, b| {
                a.merge_from(&b);
                a
            })
    }
}

#[cfg(feature = "parallel")]
pub use par::{build_tree, resolve_batch};
#[cfg(not(feature = "parallel"))]
pub use seq::{build_tree, resolve_batch};

/// True when the default kernels run in parallel.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
