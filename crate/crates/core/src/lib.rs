//! Sampling call-stack profiler for long-running processes.
//!
//! The crate is organised as a pipeline:
//!
//! * [`source`] produces [`source::RawSample`]s, either from the kernel's
//!   perf sampling interface (Linux only) or by replaying a folded-stack file.
//! * [`symbolizer`] turns raw frame addresses into demangled function names.
//! * [`calltree`] merges resolved stacks into a prefix tree with inclusive and
//!   self counters.
//! * [`analyzer`] derives views (subtree, k-level truncation, flattening,
//!   whitelist/blacklist) from tree snapshots.
//! * [`detector`] watches windowed runtime shares and fires checkpoint actions
//!   when a function dominates for too long.
//! * [`reporter`] writes canonical JSON, CSV, SVG and self-contained HTML.
//! * [`launcher`] ties it together: it runs a target in its own control
//!   group, samples it and emits the artifacts.

pub mod analyzer;
pub mod calltree;
pub mod config;
pub mod detector;
pub mod launcher;
pub mod parallel;
pub mod pipeline;
pub mod reporter;
pub mod source;
pub mod symbolizer;

pub use calltree::{CallTree, CallTreeNode, TreeMetadata};
pub use source::{RawSample, SampleSession, SourceConfig, SourceStats};
pub use symbolizer::{ResolvedFrame, ResolvedStack, Symbolizer};
pub use analyzer::{BreakdownRow, Pattern, ViewResult, ViewSpec};
pub use detector::{Detector, DetectorEvent, DetectorRule};
