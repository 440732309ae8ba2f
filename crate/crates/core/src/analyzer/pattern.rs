//! Function-name patterns.
//!
//! A pattern containing any of `*`, `?` or `[` is a glob anchored at both
//! ends of the demangled name; `\` escapes the next character. Anything else
//! is a plain substring match.

use std::fmt;

use regex::Regex;

use super::AnalyzeError;
use crate::calltree::ROOT_NAME;

#[derive(Clone)]
enum Matcher {
    Substring(String),
    Glob(Regex),
    Root,
}

#[derive(Clone)]
pub struct Pattern {
    source: String,
    matcher: Matcher,
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Pattern").field(&self.source).finish()
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, AnalyzeError> {
        let matcher = if source == ROOT_NAME {
            Matcher::Root
        } else if source.contains(['*', '?', '[']) {
            Matcher::Glob(compile_glob(source)?)
        } else if let Some(pos) = source.find('\\') {
            // escapes only make sense in globs, but a literal with escapes is
            // still a substring once they are removed
            Matcher::Substring(unescape(source).ok_or_else(|| invalid(source, pos, "dangling escape"))?)
        } else {
            Matcher::Substring(source.to_string())
        };
        Ok(Pattern {
            source: source.to_string(),
            matcher,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// True for the pattern naming the synthetic tree root.
    pub fn is_root(&self) -> bool {
        matches!(self.matcher, Matcher::Root)
    }

    pub fn matches(&self, name: &str) -> bool {
        match &self.matcher {
            Matcher::Substring(s) => name.contains(s.as_str()),
            Matcher::Glob(re) => re.is_match(name),
            Matcher::Root => name == ROOT_NAME,
        }
    }
}

/// True if any pattern in the set matches.
pub fn any_match(patterns: &[Pattern], name: &str) -> bool {
    patterns.iter().any(|p| p.matches(name))
}

pub fn compile_all<S: AsRef<str>>(sources: &[S]) -> Result<Vec<Pattern>, AnalyzeError> {
    sources.iter().map(|s| Pattern::new(s.as_ref())).collect()
}

fn invalid(pattern: &str, position: usize, reason: &str) -> AnalyzeError {
    AnalyzeError::PatternInvalid {
        pattern: pattern.to_string(),
        position,
        reason: reason.to_string(),
    }
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            out.push(it.next()?);
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn compile_glob(src: &str) -> Result<Regex, AnalyzeError> {
    let mut re = String::from("^(?s:");
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            '\\' => {
                let &(_, next) = chars.get(i + 1).ok_or_else(|| invalid(src, pos, "dangling escape"))?;
                re.push_str(&regex::escape(&next.to_string()));
                i += 1;
            }
            '[' => {
                let mut j = i + 1;
                let mut class = String::from("[");
                if matches!(chars.get(j), Some((_, '!' | '^'))) {
                    class.push('^');
                    j += 1;
                }
                let first = j;
                loop {
                    let Some(&(_, d)) = chars.get(j) else {
                        return Err(invalid(src, pos, "unclosed character class"));
                    };
                    match d {
                        ']' if j > first => break,
                        '\\' => {
                            let &(_, e) = chars.get(j + 1).ok_or_else(|| invalid(src, chars[j].0, "dangling escape"))?;
                            push_class_char(&mut class, e);
                            j += 1;
                        }
                        '-' if j > first && !matches!(chars.get(j + 1), Some((_, ']'))) => {
                            let lo = chars[j - 1].1;
                            let hi = chars.get(j + 1).map(|&(_, h)| h).unwrap_or(lo);
                            if hi < lo {
                                return Err(invalid(src, chars[j].0, "reversed range in character class"));
                            }
                            class.push('-');
                        }
                        _ => push_class_char(&mut class, d),
                    }
                    j += 1;
                }
                class.push(']');
                re.push_str(&class);
                i = j;
            }
            _ => re.push_str(&regex::escape(&c.to_string())),
        }
        i += 1;
    }
    re.push_str(")$");
    Regex::new(&re).map_err(|e| invalid(src, 0, &e.to_string()))
}

fn push_class_char(class: &mut String, c: char) {
    if matches!(c, '[' | ']' | '\\' | '^' | '-' | '&' | '~') {
        class.push('\\');
    }
    class.push(c);
}
