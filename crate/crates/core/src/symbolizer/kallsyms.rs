//! Kernel symbol list (`/proc/kallsyms`).

use std::path::Path;

use super::{Symbol, SymbolSource, SymbolTable, SymbolizeError};

pub const KALLSYMS: &str = "/proc/kallsyms";

/// Result of loading the kernel list; `restricted` is set when the kernel
/// hid addresses (all zero), in which case the table is empty.
#[derive(Debug, Clone)]
pub struct KernelSymbols {
    pub table: SymbolTable,
    pub restricted: bool,
}

pub fn parse_kallsyms(text: &str) -> KernelSymbols {
    let mut symbols = Vec::new();
    let mut any_nonzero = false;
    let mut any_line = false;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let (Some(addr), Some(kind), Some(name)) = (it.next(), it.next(), it.next()) else {
            continue;
        };
        any_line = true;
        let Ok(value) = u64::from_str_radix(addr, 16) else { continue };
        if value != 0 {
            any_nonzero = true;
        }
        if !matches!(kind, "t" | "T") {
            continue;
        }
        symbols.push(Symbol {
            value,
            size: 0,
            mangled: name.to_string(),
            demangled: name.to_string(),
            source: SymbolSource::KernelList,
        });
    }
    if any_line && !any_nonzero {
        return KernelSymbols {
            table: SymbolTable::default(),
            restricted: true,
        };
    }
    KernelSymbols {
        table: SymbolTable::new(symbols, Vec::new()),
        restricted: false,
    }
}

pub fn load_kernel_symbols_from(path: &Path) -> Result<KernelSymbols, SymbolizeError> {
    let text = std::fs::read_to_string(path).map_err(|e| SymbolizeError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let k = parse_kallsyms(&text);
    if k.restricted {
        log::warn!(
            "{} shows zeroed addresses; kernel frames will be unresolved (check kernel.kptr_restrict)",
            path.display()
        );
    }
    Ok(k)
}

pub fn load_kernel_symbols() -> Result<KernelSymbols, SymbolizeError> {
    load_kernel_symbols_from(Path::new(KALLSYMS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_symbols_only() {
        let k = parse_kallsyms(
            "ffffffff81000000 T _stext\nffffffff81000100 t local_fn\nffffffff82000000 D some_data\nffffffffc0000000 t ext4_fn\t[ext4]\n",
        );
        assert!(!k.restricted);
        assert_eq!(k.table.len(), 3);
        assert_eq!(k.table.lookup(0xffffffff81000010).unwrap().0.demangled, "_stext");
        assert_eq!(k.table.lookup(0xffffffff81000180).unwrap().0.demangled, "local_fn");
        assert_eq!(k.table.lookup(0xffffffffc0000004).unwrap().0.demangled, "ext4_fn");
    }

    #[test]
    fn zeroed_addresses_mean_restricted() {
        let k = parse_kallsyms("0000000000000000 T _stext\n0000000000000000 t foo\n");
        assert!(k.restricted);
        assert!(k.table.is_empty());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_kernel_symbols_from(Path::new("/nonexistent/kallsyms")),
            Err(SymbolizeError::Io { .. })
        ));
    }

    #[test]
    fn host_round_trip() {
        let Ok(text) = std::fs::read_to_string(KALLSYMS) else { return };
        let k = parse_kallsyms(&text);
        if k.restricted {
            return;
        }
        // pick a sample of text lines and resolve each exact address
        let picks: Vec<(u64, String)> = text
            .lines()
            .filter_map(|l| {
                let v: Vec<&str> = l.split_whitespace().collect();
                (v.len() >= 3 && (v[1] == "T" || v[1] == "t")).then(|| (u64::from_str_radix(v[0], 16).unwrap(), v[2].to_string()))
            })
            .step_by(997)
            .take(20)
            .collect();
        for (addr, name) in picks {
            let (sym, off) = k.table.lookup(addr).unwrap();
            assert_eq!(off, 0);
            assert_eq!(sym.value, addr);
            // aliases share addresses; the resolved symbol must be one of them
            let aliases: Vec<&str> = text
                .lines()
                .filter(|l| l.starts_with(&format!("{addr:016x} ")))
                .filter_map(|l| l.split_whitespace().nth(2))
                .collect();
            assert!(aliases.contains(&sym.demangled.as_str()), "{name} vs {}", sym.demangled);
        }
    }
}
