//! Workloads, trace generators and reference oracles for testing stackscope.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackscope_core::CallTreeNode;

pub const SPINNER_SOURCE: &str = include_str!("../assets/spinner.c");

/// Mangled names and the platform demangler's output for them.
pub const DEMANGLE_FIXTURE: &str = include_str!("../assets/demangle_fixture.tsv");

/// Symbol of the spinner's C++-style function.
pub const SPINNER_MANGLED: &str = "_ZN4gem55Fetch9buildInstEv";

pub const SPINNER_FUNCTIONS: [&str; 5] = ["spin_hot", "spin_warm", "spin_deep", "spin_deep_leaf", SPINNER_MANGLED];

pub fn demangle_fixture() -> Vec<(&'static str, &'static str)> {
    DEMANGLE_FIXTURE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .filter_map(|l| l.split_once('\t'))
        .collect()
}

/// Shape of a synthetic gem5-like profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorkloadSpec {
    /// Leaf functions and their target shares; the remainder goes to `idle`.
    pub shares: Vec<(String, f64)>,
    /// Frames above the leaf during deep phases.
    pub deep_depth: usize,
    /// Samples per phase; phases alternate deep and shallow.
    pub phase_len: usize,
    pub duration: Duration,
}

impl Default for SyntheticWorkloadSpec {
    fn default() -> Self {
        SyntheticWorkloadSpec {
            shares: vec![("spin_hot".into(), 0.6), ("spin_warm".into(), 0.3)],
            deep_depth: 40,
            phase_len: 50,
            duration: Duration::from_secs(10),
        }
    }
}

impl SyntheticWorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.shares.iter().map(|(_, s)| s).sum();
        if self.shares.iter().any(|(_, s)| !(0.0..=1.0).contains(s)) || sum > 1.0 + 1e-9 {
            return Err(format!("shares must be in [0, 1] and sum to at most 1 (got {sum})"));
        }
        if self.deep_depth == 0 || self.phase_len == 0 {
            return Err("depth and phase length must be positive".into());
        }
        Ok(())
    }
}

/// Stacks of a synthetic run, root first, one per sample.
pub fn generate_stacks(spec: &SyntheticWorkloadSpec, n: usize, seed: u64) -> Vec<Vec<String>> {
    spec.validate().expect("invalid workload spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let leaf = spec
            .shares
            .iter()
            .find(|(_, s)| {
                acc += s;
                u < acc
            })
            .map(|(name, _)| name.as_str())
            .unwrap_or("idle");
        let deep = (i / spec.phase_len).is_multiple_of(2);
        let mut stack = Vec::new();
        if deep {
            // depth swings near the maximum rather than sitting on it
            let d = spec.deep_depth - rng.random_range(0..=spec.deep_depth.min(5) - 1);
            stack.push("main".to_string());
            for k in 1..d - 1 {
                stack.push(format!("frame_{k}"));
            }
        }
        stack.push(leaf.to_string());
        out.push(stack);
    }
    out
}

/// Folded-stack text for a synthetic run; runs of identical stacks are
/// collapsed into one counted line, so sample order is preserved.
pub fn generate_folded_trace(spec: &SyntheticWorkloadSpec, n: usize, seed: u64) -> String {
    folded(&generate_stacks(spec, n, seed))
}

pub fn write_folded_trace(spec: &SyntheticWorkloadSpec, n: usize, seed: u64, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, generate_folded_trace(spec, n, seed))
}

/// Renders stacks in order as folded text.
pub fn folded<S: AsRef<str>>(stacks: &[Vec<S>]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < stacks.len() {
        let mut j = i + 1;
        while j < stacks.len() && eq(&stacks[j], &stacks[i]) {
            j += 1;
        }
        let line: Vec<&str> = stacks[i].iter().map(|s| s.as_ref()).collect();
        let _ = writeln!(out, "{} {}", line.join(";"), j - i);
        i = j;
    }
    out
}

fn eq<S: AsRef<str>>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref())
}

/// Reference prefix tree built by direct path insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefNode {
    pub inclusive: u64,
    pub self_count: u64,
    pub children: BTreeMap<String, RefNode>,
}

impl RefNode {
    pub fn from_calltree(node: &CallTreeNode) -> RefNode {
        RefNode {
            inclusive: node.inclusive,
            self_count: node.self_count,
            children: node
                .children
                .values()
                .map(|c| (c.name.clone(), RefNode::from_calltree(c)))
                .collect(),
        }
    }
}

/// The oracle: each stack walks down from the root, creating nodes as
/// needed, bumping every node on its path and the self count of its last.
pub fn naive_trie<S: AsRef<str>>(stacks: &[Vec<S>]) -> RefNode {
    let mut root = RefNode::default();
    for stack in stacks {
        if stack.is_empty() {
            continue;
        }
        let mut node = &mut root;
        node.inclusive += 1;
        for name in stack {
            node = node.children.entry(name.as_ref().to_string()).or_default();
            node.inclusive += 1;
        }
        node.self_count += 1;
    }
    root
}

/// Random multiset of stacks over a small alphabet so prefixes collide.
pub fn random_stacks(rng: &mut impl Rng, max_stacks: usize, max_depth: usize) -> Vec<Vec<String>> {
    const NAMES: [&str; 8] = ["main", "sim", "tick", "fetch", "decode", "iew", "commit", "mem"];
    let n = rng.random_range(0..=max_stacks);
    (0..n)
        .map(|_| {
            let d = rng.random_range(1..=max_depth);
            (0..d).map(|_| NAMES[rng.random_range(0..NAMES.len())].to_string()).collect()
        })
        .collect()
}

/// A stream in which every window of 100 consecutive samples contains
/// exactly `percent` samples ending in `hot`, the rest in `cold`.
pub fn dominance_stream(n: usize, percent: usize, hot: &str, cold: &str) -> Vec<Vec<String>> {
    assert!(percent <= 100);
    (0..n)
        .map(|i| {
            let leaf = if i % 100 < percent { hot } else { cold };
            vec!["main".to_string(), "simulate".to_string(), leaf.to_string()]
        })
        .collect()
}

/// Stream with bursts of a hot function over background noise, for
/// threshold sweeps.
pub fn bursty_stream(rng: &mut impl Rng, n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::with_capacity(n);
    let mut p_hot: f64 = rng.random_range(0.0..1.0);
    for i in 0..n {
        if i % 50 == 0 {
            p_hot = rng.random_range(0.0..1.0);
        }
        let leaf = if rng.random_bool(p_hot) { "hot" } else { ["cold", "idle"][rng.random_range(0..2)] };
        out.push(vec!["main".to_string(), leaf.to_string()]);
    }
    out
}

/// Compiles the bundled spinner into `dir`. `strip` drops all symbols.
pub fn build_spinner_in(dir: &Path, strip: bool) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let src = dir.join("spinner.c");
    std::fs::write(&src, SPINNER_SOURCE).map_err(|e| e.to_string())?;
    let name = if strip { "spinner-stripped" } else { "spinner" };
    let out = dir.join(name);
    // build under a private name, then rename: concurrent builders never
    // observe a half-written file
    let tmp = dir.join(format!(".{name}.{}", std::process::id()));
    let mut cmd = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()));
    cmd.args(["-O0", "-g", "-fno-omit-frame-pointer", "-fno-inline"]);
    if strip {
        cmd.arg("-s");
    }
    let status = cmd.arg("-o").arg(&tmp).arg(&src).output().map_err(|e| format!("cc: {e}"))?;
    if !status.status.success() {
        return Err(format!("cc failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    std::fs::rename(&tmp, &out).map_err(|e| e.to_string())?;
    Ok(out)
}

/// Builds the spinner once per source revision into a shared temp dir.
pub fn spinner(strip: bool) -> Result<PathBuf, String> {
    let hash = SPINNER_SOURCE.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    let dir = std::env::temp_dir().join(format!("stackscope-testkit-{hash:016x}"));
    let out = dir.join(if strip { "spinner-stripped" } else { "spinner" });
    if out.exists() {
        return Ok(out);
    }
    build_spinner_in(&dir, strip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_has_enough_names() {
        let f = demangle_fixture();
        assert!(f.len() >= 20);
        assert!(f.iter().any(|(m, d)| *m == SPINNER_MANGLED && d.starts_with("gem5::Fetch::buildInst")));
    }

    #[test]
    fn folded_collapses_runs_only() {
        let s = vec![vec!["a", "b"], vec!["a", "b"], vec!["a"], vec!["a", "b"]];
        assert_eq!(folded(&s), "a;b 2\na 1\na;b 1\n");
        assert_eq!(folded::<&str>(&[]), "");
    }

    #[test]
    fn trace_is_deterministic() {
        let spec = SyntheticWorkloadSpec::default();
        assert_eq!(generate_folded_trace(&spec, 500, 3), generate_folded_trace(&spec, 500, 3));
        assert_ne!(generate_folded_trace(&spec, 500, 3), generate_folded_trace(&spec, 500, 4));
        assert_eq!(generate_folded_trace(&spec, 0, 3), "");
    }

    #[test]
    fn depth_profile_swings() {
        let spec = SyntheticWorkloadSpec::default();
        let stacks = generate_stacks(&spec, 1000, 1);
        let depths: Vec<usize> = stacks.iter().map(|s| s.len()).collect();
        assert!(depths[..50].iter().all(|&d| (36..=40).contains(&d)));
        assert!(depths[50..100].iter().all(|&d| d == 1));
        assert_eq!(depths.iter().max(), Some(&40));
    }

    #[test]
    fn shares_within_binomial_noise() {
        let spec = SyntheticWorkloadSpec {
            shares: vec![("spin_hot".into(), 0.6)],
            ..Default::default()
        };
        let stacks = generate_stacks(&spec, 10_000, 7);
        let hot = stacks.iter().filter(|s| s.last().unwrap() == "spin_hot").count() as f64 / 1e4;
        assert!((0.58..=0.62).contains(&hot), "{hot}");
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticWorkloadSpec::default();
        spec.shares.push(("x".into(), 0.2));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn oracle_on_two_stacks() {
        let t = naive_trie(&[vec!["a", "b", "c", "e"], vec!["a", "b", "d", "f", "e"]]);
        assert_eq!(t.inclusive, 2);
        let b = &t.children["a"].children["b"];
        assert_eq!(b.inclusive, 2);
        assert_eq!(b.children["c"].children["e"].self_count, 1);
        assert_eq!(b.children["d"].children["f"].children["e"].inclusive, 1);
        assert_eq!(naive_trie::<&str>(&[]), RefNode::default());
    }

    #[test]
    fn dominance_windows_are_exact() {
        let s = dominance_stream(1000, 92, "hot", "cold");
        for w in s.windows(100) {
            assert_eq!(w.iter().filter(|x| x[2] == "hot").count(), 92);
        }
    }
}
