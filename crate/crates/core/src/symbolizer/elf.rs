//! Minimal ELF64 little-endian reader: function symbols and load segments.

use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;

use super::{Symbol, SymbolSource, SymbolTable, SymbolizeError};
use crate::symbolizer::demangle::demangle;

const SHT_SYMTAB: u32 = 2;
const SHT_DYNSYM: u32 = 11;
const PT_LOAD: u32 = 1;
const STT_FUNC: u8 = 2;
const STT_GNU_IFUNC: u8 = 10;
const SHN_UNDEF: u16 = 0;

/// Anything we can read ELF bytes from.
pub trait ReadAt {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
}

impl ReadAt for [u8] {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
        let end = start.checked_add(buf.len()).ok_or(io::ErrorKind::UnexpectedEof)?;
        let src = self.get(start..end).ok_or(io::ErrorKind::UnexpectedEof)?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

impl ReadAt for File {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.read_exact_at(buf, offset)
    }
}

/// A `PT_LOAD` segment, used to translate file offsets to link-time addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSegment {
    pub offset: u64,
    pub vaddr: u64,
    pub filesz: u64,
}

struct Section {
    kind: u32,
    offset: u64,
    size: u64,
    link: u32,
    entsize: u64,
}

fn read_vec<R: ReadAt + ?Sized>(r: &R, offset: u64, len: u64) -> io::Result<Vec<u8>> {
    let len = usize::try_from(len).map_err(|_| io::Error::other("section too large"))?;
    let mut v = vec![0u8; len];
    r.read_at(offset, &mut v)?;
    Ok(v)
}

fn u16le(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes(b[o..o + 2].try_into().unwrap())
}
fn u32le(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}
fn u64le(b: &[u8], o: usize) -> u64 {
    u64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}

fn cstr(strtab: &[u8], off: usize) -> Option<&str> {
    let tail = strtab.get(off..)?;
    let end = tail.iter().position(|&b| b == 0)?;
    std::str::from_utf8(&tail[..end]).ok()
}

/// Reads function symbols from both symbol tables plus the load segments.
///
/// Static-table entries win over dynamic ones at the same address.
pub fn read_symbols<R: ReadAt + ?Sized>(r: &R) -> Result<SymbolTable, SymbolizeError> {
    let mut ehdr = [0u8; 64];
    r.read_at(0, &mut ehdr).map_err(|_| SymbolizeError::NotAnElf("file shorter than an ELF header".into()))?;
    if &ehdr[..4] != b"\x7fELF" {
        return Err(SymbolizeError::NotAnElf("bad magic".into()));
    }
    if ehdr[4] != 2 || ehdr[5] != 1 {
        return Err(SymbolizeError::NotAnElf("only 64-bit little-endian images are supported".into()));
    }
    let phoff = u64le(&ehdr, 0x20);
    let shoff = u64le(&ehdr, 0x28);
    let phentsize = u16le(&ehdr, 0x36) as u64;
    let phnum = u16le(&ehdr, 0x38) as u64;
    let shentsize = u16le(&ehdr, 0x3a) as u64;
    let shnum = u16le(&ehdr, 0x3c) as u64;

    let mut segments = Vec::new();
    if phoff != 0 && phentsize >= 56 {
        let ph = read_vec(r, phoff, phentsize * phnum)?;
        for i in 0..phnum as usize {
            let p = &ph[i * phentsize as usize..];
            if u32le(p, 0) == PT_LOAD {
                segments.push(LoadSegment {
                    offset: u64le(p, 8),
                    vaddr: u64le(p, 16),
                    filesz: u64le(p, 32),
                });
            }
        }
    }

    let mut sections = Vec::new();
    if shoff != 0 && shentsize >= 64 {
        let sh = read_vec(r, shoff, shentsize * shnum)?;
        for i in 0..shnum as usize {
            let s = &sh[i * shentsize as usize..];
            sections.push(Section {
                kind: u32le(s, 4),
                offset: u64le(s, 0x18),
                size: u64le(s, 0x20),
                link: u32le(s, 0x28),
                entsize: u64le(s, 0x38),
            });
        }
    }

    let mut statics = Vec::new();
    let mut dynamics = Vec::new();
    for sec in &sections {
        let (dst, source) = match sec.kind {
            SHT_SYMTAB => (&mut statics, SymbolSource::StaticSymtab),
            SHT_DYNSYM => (&mut dynamics, SymbolSource::DynamicSymtab),
            _ => continue,
        };
        let Some(strsec) = sections.get(sec.link as usize) else { continue };
        let entsize = if sec.entsize == 0 { 24 } else { sec.entsize };
        if entsize < 24 {
            continue;
        }
        let data = read_vec(r, sec.offset, sec.size)?;
        let strtab = read_vec(r, strsec.offset, strsec.size)?;
        for ent in data.chunks_exact(entsize as usize) {
            let kind = ent[4] & 0xf;
            let shndx = u16le(ent, 6);
            if !(kind == STT_FUNC || kind == STT_GNU_IFUNC) || shndx == SHN_UNDEF {
                continue;
            }
            let Some(name) = cstr(&strtab, u32le(ent, 0) as usize) else { continue };
            if name.is_empty() {
                continue;
            }
            dst.push(Symbol {
                value: u64le(ent, 8),
                size: u64le(ent, 16),
                demangled: demangle(name),
                mangled: name.to_string(),
                source,
            });
        }
    }

    let static_values: std::collections::HashSet<u64> = statics.iter().map(|s| s.value).collect();
    let mut symbols = statics;
    symbols.extend(dynamics.into_iter().filter(|s| !static_values.contains(&s.value)));
    Ok(SymbolTable::new(symbols, segments))
}

pub fn load_symbols(path: &Path) -> Result<SymbolTable, SymbolizeError> {
    let file = File::open(path).map_err(|e| SymbolizeError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_symbols(&file)
}

impl From<io::Error> for SymbolizeError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SymbolizeError::NotAnElf("truncated image".into())
        } else {
            SymbolizeError::Io {
                path: String::new(),
                source: e,
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod writer {
    //! Builds tiny ELF64 images for tests.

    pub struct FakeSym<'a> {
        pub name: &'a str,
        pub value: u64,
        pub size: u64,
        pub func: bool,
    }

    fn strtab(names: &[&str]) -> (Vec<u8>, Vec<u32>) {
        let mut tab = vec![0u8];
        let mut offs = Vec::new();
        for n in names {
            offs.push(tab.len() as u32);
            tab.extend_from_slice(n.as_bytes());
            tab.push(0);
        }
        (tab, offs)
    }

    fn symtab(syms: &[FakeSym], offs: &[u32]) -> Vec<u8> {
        let mut v = vec![0u8; 24];
        for (s, off) in syms.iter().zip(offs) {
            v.extend_from_slice(&off.to_le_bytes());
            v.push(if s.func { 0x12 } else { 0x11 }); // GLOBAL | FUNC/OBJECT
            v.push(0);
            v.extend_from_slice(&1u16.to_le_bytes());
            v.extend_from_slice(&s.value.to_le_bytes());
            v.extend_from_slice(&s.size.to_le_bytes());
        }
        v
    }

    /// An image with optional static and dynamic tables and one load segment
    /// mapping file offset `seg.0` to virtual address `seg.1`.
    pub fn build(statics: Option<&[FakeSym]>, dynamics: Option<&[FakeSym]>, seg: (u64, u64)) -> Vec<u8> {
        let mut blobs: Vec<(u32, Vec<u8>, u32, u64)> = Vec::new(); // kind, data, link, entsize
        let mut shstr = vec![0u8];
        let mut names = Vec::new();
        let push_name = |n: &str, shstr: &mut Vec<u8>| {
            let o = shstr.len() as u32;
            shstr.extend_from_slice(n.as_bytes());
            shstr.push(0);
            o
        };
        for (table, kind, nm, strnm) in [(statics, 2u32, ".symtab", ".strtab"), (dynamics, 11u32, ".dynsym", ".dynstr")] {
            if let Some(t) = table {
                let (st, offs) = strtab(&t.iter().map(|s| s.name).collect::<Vec<_>>());
                let link = blobs.len() as u32 + 2; // string table follows, +1 for null section
                names.push(push_name(nm, &mut shstr));
                blobs.push((kind, symtab(t, &offs), link, 24));
                names.push(push_name(strnm, &mut shstr));
                blobs.push((3, st, 0, 0));
            }
        }
        names.push(push_name(".shstrtab", &mut shstr));
        blobs.push((3, shstr, 0, 0));

        let mut out = vec![0u8; 64 + 56];
        let mut placed = Vec::new();
        for (_, data, _, _) in &blobs {
            while !out.len().is_multiple_of(8) {
                out.push(0);
            }
            placed.push((out.len() as u64, data.len() as u64));
            out.extend_from_slice(data);
        }
        while !out.len().is_multiple_of(8) {
            out.push(0);
        }
        let shoff = out.len() as u64;
        out.extend_from_slice(&[0u8; 64]);
        for (i, (kind, _, link, entsize)) in blobs.iter().enumerate() {
            let mut sh = [0u8; 64];
            sh[0..4].copy_from_slice(&names[i].to_le_bytes());
            sh[4..8].copy_from_slice(&kind.to_le_bytes());
            sh[0x18..0x20].copy_from_slice(&placed[i].0.to_le_bytes());
            sh[0x20..0x28].copy_from_slice(&placed[i].1.to_le_bytes());
            sh[0x28..0x2c].copy_from_slice(&link.to_le_bytes());
            sh[0x38..0x40].copy_from_slice(&entsize.to_le_bytes());
            out.extend_from_slice(&sh);
        }
        let shnum = blobs.len() as u16 + 1;
        out[0..4].copy_from_slice(b"\x7fELF");
        out[4] = 2;
        out[5] = 1;
        out[6] = 1;
        out[0x10..0x12].copy_from_slice(&3u16.to_le_bytes()); // ET_DYN
        out[0x12..0x14].copy_from_slice(&62u16.to_le_bytes());
        out[0x20..0x28].copy_from_slice(&64u64.to_le_bytes());
        out[0x28..0x30].copy_from_slice(&shoff.to_le_bytes());
        out[0x34..0x36].copy_from_slice(&64u16.to_le_bytes());
        out[0x36..0x38].copy_from_slice(&56u16.to_le_bytes());
        out[0x38..0x3a].copy_from_slice(&1u16.to_le_bytes());
        out[0x3a..0x3c].copy_from_slice(&64u16.to_le_bytes());
        out[0x3c..0x3e].copy_from_slice(&shnum.to_le_bytes());
        out[0x3e..0x40].copy_from_slice(&(shnum - 1).to_le_bytes());
        let ph = &mut out[64..120];
        ph[0..4].copy_from_slice(&1u32.to_le_bytes());
        ph[4..8].copy_from_slice(&5u32.to_le_bytes());
        ph[8..16].copy_from_slice(&seg.0.to_le_bytes());
        ph[16..24].copy_from_slice(&seg.1.to_le_bytes());
        ph[32..40].copy_from_slice(&0x10_0000u64.to_le_bytes());
        ph[40..48].copy_from_slice(&0x10_0000u64.to_le_bytes());
        out
    }
}
