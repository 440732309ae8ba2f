//! Folded-stack replay.
//!
//! Each line is `frame1;frame2;...;frameN[ count]`, root first. Frame names
//! are interned and encoded as addresses in a reserved, non-canonical range
//! so replayed samples travel through the same symbolization path as live
//! ones.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use super::{FrameContext, RawSample, SourceError};

/// Start of the address range used for replayed frames. Addresses in
/// `[base, base + 2^32)` never occur in real call chains on x86-64 or
/// aarch64 because they are not canonical.
pub const REPLAY_ADDRESS_BASE: u64 = 0x5eed_0000_0000_0000;

pub(crate) const REPLAY_BATCH: usize = 4096;

/// Interned frame names of a replay session.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct NameTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl NameTable {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn address_of(id: u32) -> u64 {
        REPLAY_ADDRESS_BASE + id as u64
    }

    /// Returns the name for an address in the replay range.
    pub fn lookup(&self, addr: u64) -> Option<&str> {
        let id = addr.checked_sub(REPLAY_ADDRESS_BASE)?;
        if id > u32::MAX as u64 {
            return None;
        }
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn is_replay_address(addr: u64) -> bool {
        (REPLAY_ADDRESS_BASE..REPLAY_ADDRESS_BASE + (1 << 32)).contains(&addr)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One parsed folded line: root-first frames plus its repeat count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldedLine {
    pub frames: Vec<String>,
    pub count: u64,
}

/// Parses a single folded line. Returns `Ok(None)` for blank and comment lines.
pub fn parse_folded_line(line: &str) -> Result<Option<FoldedLine>, String> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.trim_start().starts_with('#') {
        return Ok(None);
    }
    let (stack, count) = match line.rsplit_once(' ') {
        Some((stack, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => {
            let count = tail.parse::<u64>().map_err(|e| format!("bad count {tail:?}: {e}"))?;
            (stack.trim_end(), count)
        }
        _ => (line, 1),
    };
    if stack.is_empty() {
        return Err("missing stack".into());
    }
    let frames: Vec<String> = stack.split(';').map(str::to_string).collect();
    if let Some(pos) = frames.iter().position(|f| f.trim().is_empty()) {
        return Err(format!("empty frame at position {}", pos + 1));
    }
    Ok(Some(FoldedLine { frames, count }))
}

/// Parses a whole folded file.
pub fn parse_folded(text: &str) -> Result<Vec<FoldedLine>, SourceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_folded_line(line) {
            Ok(Some(l)) => out.push(l),
            Ok(None) => {}
            Err(reason) => return Err(SourceError::ParseError { line: i + 1, reason }),
        }
    }
    Ok(out)
}

/// Decodes a whole folded trace into samples at once, with the name table
/// needed to resolve them.
pub fn samples_from_folded(text: &str, period: Duration) -> Result<(Vec<RawSample>, Arc<NameTable>), SourceError> {
    let mut b = ReplayBackend::from_lines(parse_folded(text)?, period);
    Ok((b.next_batch(usize::MAX), b.names()))
}

pub(crate) struct ReplayBackend {
    names: Arc<NameTable>,
    /// Leaf-first encoded frames and repeat counts, in file order.
    runs: Vec<(Vec<u64>, u64)>,
    run: usize,
    emitted_in_run: u64,
    next_index: u64,
    period_ns: u64,
}

impl ReplayBackend {
    pub(crate) fn open(path: &Path, period: Duration) -> Result<Self, SourceError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                SourceError::NoSuchTarget(format!("trace file {} not found", path.display()))
            }
            _ => SourceError::Io(e),
        })?;
        Ok(Self::from_lines(parse_folded(&text)?, period))
    }

    pub(crate) fn from_lines(lines: Vec<FoldedLine>, period: Duration) -> Self {
        let mut names = NameTable::default();
        let runs = lines
            .into_iter()
            .map(|l| {
                let frames = l
                    .frames
                    .iter()
                    .rev()
                    .map(|f| NameTable::address_of(names.intern(f)))
                    .collect();
                (frames, l.count)
            })
            .collect();
        ReplayBackend {
            names: Arc::new(names),
            runs,
            run: 0,
            emitted_in_run: 0,
            next_index: 0,
            period_ns: period.as_nanos() as u64,
        }
    }

    pub(crate) fn names(&self) -> Arc<NameTable> {
        self.names.clone()
    }

    pub(crate) fn is_exhausted(&self) -> bool {
        self.run >= self.runs.len()
    }

    pub(crate) fn next_batch(&mut self, max: usize) -> Vec<RawSample> {
        let mut out = Vec::new();
        while out.len() < max && self.run < self.runs.len() {
            let (frames, count) = &self.runs[self.run];
            if self.emitted_in_run >= *count {
                self.run += 1;
                self.emitted_in_run = 0;
                continue;
            }
            self.next_index += 1;
            out.push(RawSample {
                timestamp: self.next_index * self.period_ns,
                pid: 0,
                tid: 0,
                cpu: 0,
                frames: frames.clone(),
                contexts: vec![FrameContext::User; frames.len()],
            });
            self.emitted_in_run += 1;
        }
        out
    }
}
