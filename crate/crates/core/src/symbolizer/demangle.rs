/// Demangles an Itanium C++ ABI name, or a Rust v0 name, returning the input
/// unchanged when it is not a valid mangled name.
pub fn demangle(mangled: &str) -> String {
    // cpp_demangle spells these "{vtable(X)}"; match the binutils wording
    for (prefix, label) in [("_ZTV", "vtable for "), ("_ZTT", "VTT for ")] {
        if let Some(rest) = mangled.strip_prefix(prefix) {
            let inner = demangle(&format!("_Z{rest}"));
            if !inner.starts_with("_Z") {
                return format!("{label}{inner}");
            }
        }
    }
    if mangled.starts_with("_Z") {
        if let Ok(sym) = cpp_demangle::Symbol::new(mangled) {
            if let Ok(s) = sym.demangle(&cpp_demangle::DemangleOptions::default()) {
                return s;
            }
        }
    } else if mangled.starts_with("_R") {
        if let Ok(d) = rustc_demangle::try_demangle(mangled) {
            return format!("{d:#}");
        }
    }
    mangled.to_string()
}
