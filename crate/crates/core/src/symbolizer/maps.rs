//! `/proc/<pid>/maps` parsing.

use std::path::PathBuf;

use super::SymbolizeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapEntry {
    pub start: u64,
    pub end: u64,
    pub offset: u64,
    /// Path as the target sees it (or a pseudo name such as `[vdso]`).
    pub path: String,
    pub executable: bool,
}

impl MapEntry {
    /// Translates a runtime address into a file offset within the image,
    /// removing the load bias of position-independent code.
    pub fn file_offset(&self, addr: u64) -> u64 {
        addr.wrapping_sub(self.start.wrapping_sub(self.offset))
    }

    pub fn is_file_backed(&self) -> bool {
        self.path.starts_with('/')
    }
}

/// Executable mappings of one process, sorted by start address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleMap {
    pub pid: u32,
    pub entries: Vec<MapEntry>,
    pub generation: u64,
    /// Prefix under which the target's files are visible to us.
    pub root: PathBuf,
}

impl ModuleMap {
    pub fn find(&self, addr: u64) -> Option<&MapEntry> {
        let idx = self.entries.partition_point(|e| e.start <= addr);
        let e = self.entries.get(idx.checked_sub(1)?)?;
        (addr < e.end).then_some(e)
    }

    /// Host path for a module path as seen by the target.
    pub fn host_path(&self, module: &str) -> PathBuf {
        if self.root.as_os_str().is_empty() {
            PathBuf::from(module)
        } else {
            self.root.join(module.trim_start_matches('/'))
        }
    }
}

/// Parses maps text, keeping executable mappings only.
pub fn parse_maps(text: &str) -> Result<Vec<MapEntry>, String> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut fields = line.splitn(6, char::is_whitespace);
        let range = fields.next().ok_or("missing range")?;
        let perms = fields.next().ok_or("missing perms")?;
        let offset = fields.next().ok_or("missing offset")?;
        let _dev = fields.next();
        let _inode = fields.next();
        let path = fields.next().unwrap_or("").trim().to_string();
        let (s, e) = range.split_once('-').ok_or_else(|| format!("bad range {range:?}"))?;
        let start = u64::from_str_radix(s, 16).map_err(|_| format!("bad start {s:?}"))?;
        let end = u64::from_str_radix(e, 16).map_err(|_| format!("bad end {e:?}"))?;
        let offset = u64::from_str_radix(offset, 16).map_err(|_| format!("bad offset {offset:?}"))?;
        let executable = perms.as_bytes().get(2) == Some(&b'x');
        if !executable || start >= end {
            continue;
        }
        let path = path.strip_suffix(" (deleted)").map(str::to_string).unwrap_or(path);
        out.push(MapEntry {
            start,
            end,
            offset,
            path,
            executable,
        });
    }
    out.sort_by_key(|e| e.start);
    Ok(out)
}

pub fn load_maps(pid: u32) -> Result<ModuleMap, SymbolizeError> {
    let path = format!("/proc/{pid}/maps");
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => SymbolizeError::NoSuchTarget(pid),
        std::io::ErrorKind::PermissionDenied => SymbolizeError::PermissionDenied(path.clone()),
        _ => SymbolizeError::Io {
            path: path.clone(),
            source: e,
        },
    })?;
    let entries = parse_maps(&text).map_err(|e| SymbolizeError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    Ok(ModuleMap {
        pid,
        entries,
        generation: 1,
        root: PathBuf::from(format!("/proc/{pid}/root")),
    })
}
