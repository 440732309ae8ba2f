//! Session configuration file.
//!
//! The file is TOML. Every table rejects unknown keys and errors name the
//! dotted path of the offending key, e.g. `rules[0].treshold`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::ViewSpec;
use crate::detector::DetectorRule;

pub const CONFIG_ENV: &str = "STACKSCOPE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: at `{key}`: {message}")]
    Invalid { file: String, key: String, message: String },
}

/// Parses `500ms`, `0.5s`, `2m`, `1h`, `250us`, `10ns`; a bare number is
/// seconds.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num.parse().map_err(|_| format!("invalid duration {s:?}"))?;
    let scale = match unit.trim() {
        "" | "s" => 1.0,
        "ms" => 1e-3,
        "us" | "µs" => 1e-6,
        "ns" => 1e-9,
        "m" | "min" => 60.0,
        "h" => 3600.0,
        u => return Err(format!("unknown duration unit {u:?} in {s:?}")),
    };
    let secs = value * scale;
    if !secs.is_finite() || secs < 0.0 {
        return Err(format!("invalid duration {s:?}"));
    }
    Ok(Duration::from_secs_f64(secs))
}

/// Shortest exact rendering accepted by [`parse_duration`].
pub fn format_duration(d: Duration) -> String {
    let ns = d.as_nanos();
    if ns == 0 {
        "0s".into()
    } else if ns.is_multiple_of(1_000_000_000) {
        format!("{}s", ns / 1_000_000_000)
    } else if ns.is_multiple_of(1_000_000) {
        format!("{}ms", ns / 1_000_000)
    } else if ns.is_multiple_of(1_000) {
        format!("{}us", ns / 1_000)
    } else {
        format!("{ns}ns")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDuration {
    Int(u64),
    Float(f64),
    Text(String),
}

impl RawDuration {
    fn into_duration(self) -> Result<Duration, String> {
        match self {
            RawDuration::Int(n) => Ok(Duration::from_secs(n)),
            RawDuration::Float(f) if f.is_finite() && f >= 0.0 => Ok(Duration::from_secs_f64(f)),
            RawDuration::Float(f) => Err(format!("invalid duration {f}")),
            RawDuration::Text(s) => parse_duration(&s),
        }
    }
}

/// `#[serde(with)]` helper: durations as strings, numbers meaning seconds.
pub mod serde_duration {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_duration(*d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        RawDuration::deserialize(d)?.into_duration().map_err(serde::de::Error::custom)
    }
}

pub mod serde_opt_duration {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_str(&format_duration(*d)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Option::<RawDuration>::deserialize(d)?
            .map(|r| r.into_duration().map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// A length given either as a sample count (integer) or as a duration
/// (string).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Samples(u64),
    Duration(Duration),
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Span::Samples(n) => s.serialize_u64(*n),
            Span::Duration(d) => s.serialize_str(&format_duration(*d)),
        }
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Span::Samples(n)),
            Raw::S(s) => parse_duration(&s).map(Span::Duration).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default, with = "serde_opt_duration", skip_serializing_if = "Option::is_none")]
    pub period: Option<Duration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_stack_depth: Option<u32>,
    #[serde(default, with = "serde_opt_duration", skip_serializing_if = "Option::is_none")]
    pub poll_interval: Option<Duration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring_pages: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cwd: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cgroup: Option<String>,
    /// Raw attribute writes into the created group, e.g. `"memory.max" = "8G"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cgroup_attributes: BTreeMap<String, String>,
    #[serde(default, with = "serde_opt_duration", skip_serializing_if = "Option::is_none")]
    pub timeout: Option<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_json: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub html: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfigFile {
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    /// View used by `analyze` and for the CSV/SVG written after a run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view: Option<ViewSpec>,
    /// Named views, each exported as its own breakdown.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub views: BTreeMap<String, ViewSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<DetectorRule>,
}

impl SessionConfigFile {
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: SessionConfigFile = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Invalid {
            file: file.to_string(),
            key: e.path().to_string(),
            message: e.inner().message().trim().to_string(),
        })?;
        cfg.validate(file)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self, file: &str) -> Result<(), ConfigError> {
        let bad = |key: String, message: String| ConfigError::Invalid {
            file: file.to_string(),
            key,
            message,
        };
        if let Some(v) = &self.view {
            v.validate().map_err(|e| bad("view".into(), e.to_string()))?;
        }
        for (name, v) in &self.views {
            v.validate().map_err(|e| bad(format!("views.{name}"), e.to_string()))?;
        }
        for (i, r) in self.rules.iter().enumerate() {
            r.validate().map_err(|e| bad(format!("rules[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("0.5s").unwrap(), Duration::from_millis(500));
        assert_eq!(parse_duration("10ms").unwrap(), Duration::from_millis(10));
        assert_eq!(parse_duration("2").unwrap(), Duration::from_secs(2));
        assert_eq!(parse_duration("1m").unwrap(), Duration::from_secs(60));
        assert_eq!(parse_duration("250us").unwrap(), Duration::from_micros(250));
        assert!(parse_duration("fast").is_err());
        assert!(parse_duration("5 parsecs").is_err());
        for d in [Duration::from_millis(500), Duration::from_secs(3), Duration::from_nanos(7)] {
            assert_eq!(parse_duration(&format_duration(d)).unwrap(), d);
        }
    }

    #[test]
    fn full_file() {
        let cfg = SessionConfigFile::parse(
            r#"
[source]
period = "10ms"
max_stack_depth = 64

[run]
command = ["./spinner", "10"]
timeout = 30
env = { OMP_NUM_THREADS = "1" }

[output]
dir = "out"

[view]
root = "tick"
level = 1
blacklist = ["pybind*"]

[views.fetch]
root = "*Fetch*"
flatten = true

[[rules]]
id = "l1"
pattern = "load_hit"
threshold = 0.9
window = 100
action = { command = ["touch", "marker"], timeout = "5s" }
"#,
            "t.toml",
        )
        .unwrap();
        assert_eq!(cfg.source.period, Some(Duration::from_millis(10)));
        assert_eq!(cfg.run.timeout, Some(Duration::from_secs(30)));
        assert_eq!(cfg.view.as_ref().unwrap().level, 1);
        assert!(cfg.views["fetch"].flatten);
        assert_eq!(cfg.rules[0].window, Span::Samples(100));
        assert_eq!(cfg.rules[0].action.timeout, Duration::from_secs(5));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let key = |text: &str| match SessionConfigFile::parse(text, "t.toml") {
            Err(ConfigError::Invalid { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key("[source]\nperiood = \"1s\"\n"), "source.periood");
        assert_eq!(key("[[rules]]\nid = \"x\"\npattern = \"p\"\ntreshold = 0.5\n"), "rules[0].treshold");
        assert_eq!(key("[view]\nlevle = 2\n"), "view.levle");
        assert_eq!(key("bogus = 1\n"), "bogus");
    }

    #[test]
    fn semantic_errors_name_their_section() {
        let err = SessionConfigFile::parse("[view]\nlevel = 0\n", "t.toml").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "view"), "{err}");
        let err = SessionConfigFile::parse("[[rules]]\nid = \"x\"\npattern = \"p\"\nthreshold = 1.5\n", "t.toml")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "rules[0]"), "{err}");
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(SessionConfigFile::parse("", "t.toml").unwrap(), SessionConfigFile::default());
    }
}
