//! Address-to-name resolution.
//!
//! User frames go through the target's module map and the symbol tables of
//! the mapped ELF images; kernel frames go through the kernel symbol list;
//! replayed frames map back to their interned names. Resolution never fails:
//! anything unknown becomes a canonical `[unknown@0x...]` placeholder.

pub mod demangle;
pub mod elf;
pub mod kallsyms;
pub mod maps;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{FrameContext, MmapEvent, NameTable, RawSample};
pub use demangle::demangle;
pub use elf::{load_symbols, LoadSegment};
pub use kallsyms::{load_kernel_symbols, load_kernel_symbols_from, KernelSymbols};
pub use maps::{load_maps, MapEntry, ModuleMap};

/// Lowest kernel-half address on x86-64.
const KERNEL_SPACE_START: u64 = 0xffff_8000_0000_0000;

#[derive(Debug, Error)]
pub enum SymbolizeError {
    #[error("not an ELF image: {0}")]
    NotAnElf(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no such process: {0}")]
    NoSuchTarget(u32),
    #[error("permission denied reading {0}")]
    PermissionDenied(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolSource {
    StaticSymtab,
    DynamicSymtab,
    KernelList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    /// Module-relative (link-time) address; absolute for kernel symbols.
    pub value: u64,
    /// Size in bytes, 0 when unknown.
    pub size: u64,
    pub mangled: String,
    pub demangled: String,
    pub source: SymbolSource,
}

/// Function symbols of one module, sorted by address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<Symbol>,
    segments: Vec<LoadSegment>,
}

impl SymbolTable {
    pub fn new(mut symbols: Vec<Symbol>, segments: Vec<LoadSegment>) -> Self {
        // sized symbols first within one address so they are preferred
        symbols.sort_by(|a, b| a.value.cmp(&b.value).then(b.size.cmp(&a.size)).then(a.mangled.cmp(&b.mangled)));
        SymbolTable { symbols, segments }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    /// Finds the symbol covering `addr` and the offset into it.
    ///
    /// A sized symbol covers `[value, value + size)`; a size-0 symbol covers
    /// everything up to the next symbol.
    pub fn lookup(&self, addr: u64) -> Option<(&Symbol, u64)> {
        let idx = self.symbols.partition_point(|s| s.value <= addr);
        let last = self.symbols.get(idx.checked_sub(1)?)?;
        let group_start = self.symbols[..idx].partition_point(|s| s.value < last.value);
        self.symbols[group_start..idx]
            .iter()
            .find(|s| s.size == 0 || addr - s.value < s.size)
            .map(|s| (s, addr - s.value))
    }

    /// Maps a file offset to the link-time address via the load segments.
    pub fn file_offset_to_vaddr(&self, off: u64) -> u64 {
        self.segments
            .iter()
            .find(|s| off >= s.offset && off - s.offset < s.filesz)
            .map(|s| off - s.offset + s.vaddr)
            .unwrap_or(off)
    }
}

/// One symbolized frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedFrame {
    pub name: String,
    pub module: String,
    pub offset: u64,
    pub origin: FrameContext,
}

/// A root-first sequence of resolved frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResolvedStack {
    pub timestamp: u64,
    pub pid: u32,
    pub tid: u32,
    pub frames: Vec<ResolvedFrame>,
}

impl ResolvedStack {
    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.frames.iter().map(|f| f.name.as_str())
    }

    /// Builds a stack from root-first names, as replay would produce.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        ResolvedStack {
            timestamp: 0,
            pid: 0,
            tid: 0,
            frames: names
                .iter()
                .map(|n| ResolvedFrame {
                    name: n.as_ref().to_string(),
                    module: "[replay]".into(),
                    offset: 0,
                    origin: FrameContext::User,
                })
                .collect(),
        }
    }
}

pub fn placeholder(addr: u64) -> String {
    format!("[unknown@0x{addr:016x}]")
}

/// An immutable view of everything needed to resolve a batch.
#[derive(Debug, Clone, Default)]
pub struct SymbolSnapshot {
    pub maps: HashMap<u32, Arc<ModuleMap>>,
    /// Tables keyed by host path of the image.
    pub tables: HashMap<PathBuf, Arc<SymbolTable>>,
    pub kernel: Arc<SymbolTable>,
    pub replay: Option<Arc<NameTable>>,
}

fn unresolved(addr: u64, module: &str, origin: FrameContext) -> ResolvedFrame {
    ResolvedFrame {
        name: placeholder(addr),
        module: module.to_string(),
        offset: 0,
        origin,
    }
}

fn resolve_kernel(snap: &SymbolSnapshot, addr: u64, lookup: u64) -> ResolvedFrame {
    match snap.kernel.lookup(lookup) {
        Some((sym, _)) => ResolvedFrame {
            name: sym.demangled.clone(),
            module: "[kernel]".into(),
            offset: addr - sym.value,
            origin: FrameContext::Kernel,
        },
        None => unresolved(addr, "[kernel]", FrameContext::Kernel),
    }
}

fn resolve_user(snap: &SymbolSnapshot, pid: u32, addr: u64, lookup: u64, origin: FrameContext) -> ResolvedFrame {
    let Some(map) = snap.maps.get(&pid) else {
        return unresolved(addr, "[unknown]", origin);
    };
    let Some(entry) = map.find(lookup) else {
        return unresolved(addr, "[unknown]", origin);
    };
    let table = entry
        .is_file_backed()
        .then(|| snap.tables.get(&map.host_path(&entry.path)))
        .flatten();
    let Some(table) = table else {
        return unresolved(addr, &entry.path, origin);
    };
    let vaddr = table.file_offset_to_vaddr(entry.file_offset(lookup));
    match table.lookup(vaddr) {
        Some((sym, off)) => ResolvedFrame {
            name: sym.demangled.clone(),
            module: entry.path.clone(),
            offset: off + (addr - lookup),
            origin,
        },
        None => unresolved(addr, &entry.path, origin),
    }
}

/// Resolves one sample against a snapshot. Output is root-first and has
/// exactly as many frames as the sample.
pub fn resolve(sample: &RawSample, snap: &SymbolSnapshot) -> ResolvedStack {
    let mut frames = Vec::with_capacity(sample.frames.len());
    for (i, (&addr, &ctx)) in sample.frames.iter().zip(&sample.contexts).enumerate() {
        if let Some(names) = &snap.replay {
            if let Some(name) = names.lookup(addr) {
                frames.push(ResolvedFrame {
                    name: name.to_string(),
                    module: "[replay]".into(),
                    offset: 0,
                    origin: ctx,
                });
                continue;
            }
        }
        // Every frame but the first of a context run is a return address;
        // step back into the call instruction before looking it up.
        let precise = i == 0 || sample.contexts[i - 1] != ctx;
        let lookup = if precise { addr } else { addr.saturating_sub(1) };
        let frame = match ctx {
            FrameContext::Kernel => resolve_kernel(snap, addr, lookup),
            FrameContext::User => resolve_user(snap, sample.pid, addr, lookup, ctx),
            FrameContext::Unknown if addr >= KERNEL_SPACE_START => resolve_kernel(snap, addr, lookup),
            FrameContext::Unknown => resolve_user(snap, sample.pid, addr, lookup, ctx),
        };
        frames.push(frame);
    }
    frames.reverse();
    ResolvedStack {
        timestamp: sample.timestamp,
        pid: sample.pid,
        tid: sample.tid,
        frames,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CacheKey {
    mtime: Option<SystemTime>,
    size: u64,
}

fn cache_key(path: &Path) -> Option<CacheKey> {
    let md = std::fs::metadata(path).ok()?;
    Some(CacheKey {
        mtime: md.modified().ok(),
        size: md.len(),
    })
}

/// Owns symbol caches and per-process module maps, and hands out immutable
/// snapshots for resolution.
#[derive(Debug, Default)]
pub struct Symbolizer {
    kernel: Arc<SymbolTable>,
    tables: HashMap<PathBuf, (CacheKey, Arc<SymbolTable>)>,
    maps: HashMap<u32, Arc<ModuleMap>>,
    stale: HashSet<u32>,
    replay: Option<Arc<NameTable>>,
    current: Arc<SymbolSnapshot>,
    dirty: bool,
    closed: bool,
    rescans: u64,
}

impl Symbolizer {
    pub fn new() -> Self {
        Symbolizer {
            dirty: true,
            ..Default::default()
        }
    }

    /// A symbolizer for live sampling: loads the kernel symbol list.
    pub fn for_live() -> Self {
        let mut s = Self::new();
        match load_kernel_symbols() {
            Ok(k) => s.kernel = Arc::new(k.table),
            Err(e) => log::warn!("kernel symbols unavailable: {e}"),
        }
        s
    }

    pub fn for_replay(names: Arc<NameTable>) -> Self {
        let mut s = Self::new();
        s.replay = Some(names);
        s
    }

    pub fn set_kernel_table(&mut self, table: SymbolTable) {
        self.kernel = Arc::new(table);
        self.dirty = true;
    }

    pub fn set_replay_names(&mut self, names: Arc<NameTable>) {
        self.replay = Some(names);
        self.dirty = true;
    }

    /// Marks the target's module map stale; the next [`prepare`](Self::prepare)
    /// rescans it. Hints after [`close`](Self::close) are ignored.
    pub fn remap_hint(&mut self, event: &MmapEvent) {
        if self.closed {
            return;
        }
        self.stale.insert(event.pid);
    }

    pub fn close(&mut self) {
        self.closed = true;
        self.stale.clear();
    }

    /// Number of module-map rescans performed so far.
    pub fn rescans(&self) -> u64 {
        self.rescans
    }

    pub fn map_generation(&self, pid: u32) -> Option<u64> {
        self.maps.get(&pid).map(|m| m.generation)
    }

    /// Installs a module map directly (used when maps come from elsewhere).
    pub fn insert_map(&mut self, map: ModuleMap) {
        self.load_tables_for(&map);
        self.maps.insert(map.pid, Arc::new(map));
        self.dirty = true;
    }

    fn load_tables_for(&mut self, map: &ModuleMap) {
        for entry in map.entries.iter().filter(|e| e.is_file_backed()) {
            let host = map.host_path(&entry.path);
            let Some(key) = cache_key(&host) else { continue };
            if matches!(self.tables.get(&host), Some((k, _)) if *k == key) {
                continue;
            }
            let table = match load_symbols(&host) {
                Ok(t) => t,
                Err(e) => {
                    log::debug!("no symbols for {}: {e}", host.display());
                    SymbolTable::default()
                }
            };
            self.tables.insert(host, (key, Arc::new(table)));
            self.dirty = true;
        }
    }

    fn rescan(&mut self, pid: u32) {
        let generation = self.maps.get(&pid).map_or(0, |m| m.generation);
        self.rescans += 1;
        match load_maps(pid) {
            Ok(mut map) => {
                map.generation = generation + 1;
                self.load_tables_for(&map);
                self.maps.insert(pid, Arc::new(map));
            }
            Err(e) => {
                log::debug!("cannot read maps of {pid}: {e}");
                // remember the attempt so exited processes are not retried every batch
                let mut map = self.maps.get(&pid).map(|m| (**m).clone()).unwrap_or_default();
                map.pid = pid;
                map.generation = generation + 1;
                self.maps.insert(pid, Arc::new(map));
            }
        }
        self.dirty = true;
    }

    /// Makes sure every process in `samples` has a current module map, then
    /// returns the snapshot to resolve against.
    pub fn prepare(&mut self, samples: &[RawSample]) -> Arc<SymbolSnapshot> {
        let needs_maps = samples.iter().any(|s| {
            s.frames
                .iter()
                .any(|&a| !NameTable::is_replay_address(a) && a < KERNEL_SPACE_START)
        });
        let mut scanned = HashSet::new();
        if needs_maps && !self.closed {
            let pids: HashSet<u32> = samples.iter().map(|s| s.pid).filter(|&p| p != 0).collect();
            for pid in pids {
                if !self.maps.contains_key(&pid) {
                    self.rescan(pid);
                    scanned.insert(pid);
                }
            }
        }
        // any number of hints since the last batch cost one rescan
        let pending: Vec<u32> = self.stale.drain().collect();
        for pid in pending {
            if self.maps.contains_key(&pid) && scanned.insert(pid) {
                self.rescan(pid);
            }
        }
        if self.dirty {
            self.current = Arc::new(SymbolSnapshot {
                maps: self.maps.clone(),
                tables: self.tables.iter().map(|(k, (_, t))| (k.clone(), t.clone())).collect(),
                kernel: self.kernel.clone(),
                replay: self.replay.clone(),
            });
            self.dirty = false;
        }
        self.current.clone()
    }

    pub fn snapshot(&self) -> Arc<SymbolSnapshot> {
        self.current.clone()
    }
}
