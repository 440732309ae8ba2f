//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on
//! any FAIL. Live criteria skip when the host refuses perf sampling.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stackscope_core::analyzer::{compose, flatten, truncate};
use stackscope_core::calltree::CallTreeNode;
use stackscope_core::config::Span;
use stackscope_core::detector::{ActionOutcome, ActionSpec};
use stackscope_core::launcher::{self, RunSpec, RunStatus};
use stackscope_core::pipeline::{replay_file, DetectorSetup, OutputPaths};
use stackscope_core::reporter::{to_canonical_string, tree_from_str, ReportError};
use stackscope_core::source::FrameContext;
use stackscope_core::symbolizer::{self, demangle, load_maps, load_symbols, placeholder, Symbolizer};
use stackscope_core::{CallTree, Detector, DetectorRule, RawSample, ResolvedStack, ViewSpec};
use stackscope_testkit as tk;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::*;

type Check = fn(&Path) -> Verdict;

struct Criterion {
    id: u32,
    name: &'static str,
    /// Runtime bound; `None` when only the check itself bounds the time.
    limit: Option<Duration>,
    check: Check,
}

fn fail_unless(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn tree_of<S: AsRef<str>>(stacks: &[Vec<S>]) -> CallTree {
    let mut t = CallTree::new();
    for s in stacks {
        t.ingest(s).unwrap();
    }
    t
}

fn node_at<'a>(t: &'a CallTree, path: &[&str]) -> Option<&'a CallTreeNode> {
    t.root.descend(path)
}

// 1 -------------------------------------------------------------------------

fn two_stacks(work: &Path) -> Verdict {
    let trace = work.join("two_stacks.folded");
    std::fs::write(&trace, "a;b;c;e\na;b;d;f;e\n").unwrap();
    let out = match replay_file(&trace, Duration::from_millis(10), &DetectorSetup::default()) {
        Ok(o) => o,
        Err(e) => return Fail(format!("replay failed: {e}")),
    };
    let t = &out.tree;
    let want: [(&[&str], u64); 7] = [
        (&["a"], 2),
        (&["a", "b"], 2),
        (&["a", "b", "c"], 1),
        (&["a", "b", "c", "e"], 1),
        (&["a", "b", "d"], 1),
        (&["a", "b", "d", "f"], 1),
        (&["a", "b", "d", "f", "e"], 1),
    ];
    for (path, n) in want {
        let got = node_at(t, path).map(|n| n.inclusive);
        if got != Some(n) {
            return Fail(format!("{} = {got:?}, want {n}", path.join(";")));
        }
    }
    if t.root.node_count() != 8 || t.total_samples != 2 {
        return Fail(format!("{} nodes, {} samples", t.root.node_count(), t.total_samples));
    }

    let spec = ViewSpec {
        level: 3,
        ..Default::default()
    };
    let v = compose(&spec, t).unwrap();
    let shape: Vec<(String, u64, usize)> = {
        let mut rows = Vec::new();
        v.tree.root.walk(&mut |n, d| {
            if d > 0 {
                rows.push((n.name.clone(), n.inclusive, d));
            }
        });
        rows
    };
    let want_shape = vec![
        ("a".to_string(), 2, 1),
        ("b".to_string(), 2, 2),
        ("c".to_string(), 1, 3),
        ("d".to_string(), 1, 3),
    ];
    if shape != want_shape {
        return Fail(format!("level-3 view {shape:?}"));
    }

    let flat = flatten(t);
    let e = flat.iter().find(|r| r.name == "e").map(|r| r.count);
    if e != Some(2) {
        return Fail(format!("flattened e = {e:?}"));
    }

    // the same through the binary
    let csv = Command::new(env!("CARGO_BIN_EXE_stackscope"))
        .args(["-q", "replay", "--level", "3", "--out"])
        .arg(work.join("two_stacks-out"))
        .arg(&trace)
        .status()
        .ok()
        .filter(|s| s.success())
        .and_then(|_| std::fs::read_to_string(work.join("two_stacks-out/breakdown.csv")).ok());
    let expected_csv = "name,count,share,depth\na,2,1.000000,1\nb,2,1.000000,2\nc,1,0.500000,3\nd,1,0.500000,3\n";
    fail_unless(
        csv.as_deref() == Some(expected_csv),
        match csv {
            Some(c) if c == expected_csv => "tree, level-3 view, flatten e=2 and cli csv exact".into(),
            other => format!("cli csv {other:?}"),
        },
    )
}

// 2 -------------------------------------------------------------------------

fn oracle_equivalence(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let mut stacks_total = 0usize;
    for i in 0..1000 {
        let mut stacks = tk::random_stacks(&mut rng, 500, 40);
        stacks_total += stacks.len();
        let reference = tk::naive_trie(&stacks);
        let t = tree_of(&stacks);
        if tk::RefNode::from_calltree(&t.root) != reference {
            return Fail(format!("multiset {i}: calltree differs from the naive trie"));
        }
        let resolved: Vec<ResolvedStack> = stacks.iter().map(|s| ResolvedStack::from_names(s)).collect();
        if tk::RefNode::from_calltree(&stackscope_core::parallel::build_tree(&resolved).root) != reference {
            return Fail(format!("multiset {i}: batch tree builder differs"));
        }
        stacks.shuffle(&mut rng);
        let shuffled = tree_of(&stacks);
        if shuffled.snapshot() != t.snapshot() {
            return Fail(format!("multiset {i}: result depends on ingestion order"));
        }
    }
    Pass(format!("1000 multisets, {stacks_total} stacks, equal to the naive trie in any order"))
}

// 3 -------------------------------------------------------------------------

fn conserved(n: &CallTreeNode, path: &mut Vec<String>) -> Result<(), String> {
    path.push(n.name.clone());
    if n.inclusive != n.self_count + n.children_sum() {
        return Err(format!(
            "{}: inclusive {} != self {} + children {}",
            path.join("/"),
            n.inclusive,
            n.self_count,
            n.children_sum()
        ));
    }
    for c in n.children.values() {
        conserved(c, path)?;
    }
    path.pop();
    Ok(())
}

fn check_tree(t: &CallTree, samples: u64) -> Result<(), String> {
    if t.root.inclusive != samples || t.total_samples != samples {
        return Err(format!("root {} / total {} for {samples} samples", t.root.inclusive, t.total_samples));
    }
    conserved(&t.root, &mut Vec::new())?;
    t.check_invariants()
}

fn conservation(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    let mut trees = 0;
    for i in 0..1000 {
        let stacks = tk::random_stacks(&mut rng, 500, 40);
        let t = tree_of(&stacks);
        let n = stacks.len() as u64;
        let k = rng.random_range(1..=8);
        for (what, tree) in [("tree", t.clone()), ("truncated", truncate(&t, k))] {
            if let Err(e) = check_tree(&tree, n) {
                return Fail(format!("multiset {i} {what}: {e}"));
            }
            trees += 1;
        }
    }
    let spec = tk::SyntheticWorkloadSpec::default();
    for seed in 0..20 {
        let stacks = tk::generate_stacks(&spec, 5000, seed);
        if let Err(e) = check_tree(&tree_of(&stacks), 5000) {
            return Fail(format!("synthetic workload {seed}: {e}"));
        }
        trees += 1;
    }
    Pass(format!("{trees} trees conserve counts at every node"))
}

// 4 -------------------------------------------------------------------------

fn rule(threshold: f64, window: u64, sustain: u32, cooldown: u64) -> DetectorRule {
    let mut r = DetectorRule::new("livelock", "livelock_loop");
    r.threshold = threshold;
    r.window = Span::Samples(window);
    r.sustain = sustain;
    r.cooldown = Some(Span::Samples(cooldown));
    r
}

fn fires(rule: DetectorRule, stacks: &[Vec<String>]) -> Vec<stackscope_core::DetectorEvent> {
    let mut d = Detector::new(vec![rule]).unwrap();
    let mut events = Vec::new();
    for (i, s) in stacks.iter().enumerate() {
        let mut rs = ResolvedStack::from_names(s);
        rs.timestamp = i as u64 + 1;
        events.extend(d.observe(&rs));
    }
    events.extend(d.finish());
    events.retain(|e| e.outcome.is_fire());
    events
}

fn detector_scenario(work: &Path) -> Verdict {
    let marker = work.join("checkpoints");
    let mut r = rule(0.90, 100, 1, 1000);
    r.action = ActionSpec::command(&["sh", "-c", &format!("echo checkpoint >> '{}'", marker.display())]);

    let hot = tk::dominance_stream(1000, 92, "livelock_loop", "tick");
    let events = fires(r.clone(), &hot);
    let runs = std::fs::read_to_string(&marker).map(|s| s.lines().count()).unwrap_or(0);
    if events.len() != 1 || runs != 1 {
        return Fail(format!("92%: {} events, action ran {runs} times", events.len()));
    }
    if !matches!(events[0].outcome, ActionOutcome::Ran { status: Some(0) }) {
        return Fail(format!("92%: outcome {:?}", events[0].outcome));
    }

    let _ = std::fs::remove_file(&marker);
    let calm = tk::dominance_stream(1000, 89, "livelock_loop", "tick");
    let events = fires(r, &calm);
    let runs = std::fs::read_to_string(&marker).map(|s| s.lines().count()).unwrap_or(0);
    fail_unless(
        events.is_empty() && runs == 0,
        format!(
            "92%: 1 event at sample 100 share 0.92, action ran once; 89%: {} events",
            events.len()
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn monotonicity(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let thresholds = [0.30, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 1.0];
    let mut total = 0;
    for i in 0..200 {
        let n = rng.random_range(500..3000);
        let stream: Vec<Vec<String>> = tk::bursty_stream(&mut rng, n)
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|f| if f == "hot" { "livelock_loop".to_string() } else { f })
                    .collect()
            })
            .collect();
        let window = rng.random_range(10..200);
        let sustain = rng.random_range(1..5);
        let cooldown = rng.random_range(1..400);
        let counts: Vec<usize> = thresholds
            .iter()
            .map(|&t| fires(rule(t, window, sustain, cooldown), &stream).len())
            .collect();
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Fail(format!("stream {i}: counts {counts:?} over thresholds {thresholds:?}"));
        }
        total += counts[0];
    }
    Pass(format!("200 streams, {total} events at the lowest threshold, never more at a higher one"))
}

// 6 -------------------------------------------------------------------------

fn nm_value(bin: &Path, name: &str) -> Option<u64> {
    let out = Command::new("nm").arg(bin).output().ok()?;
    String::from_utf8_lossy(&out.stdout).lines().find_map(|l| {
        let mut it = l.split_whitespace();
        let (v, _, n) = (it.next()?, it.next()?, it.next()?);
        (n == name).then(|| u64::from_str_radix(v, 16).ok()).flatten()
    })
}

fn cxxfilt(names: &[&str]) -> Option<Vec<String>> {
    let mut child = Command::new("c++filt")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .ok()?;
    use std::io::Write;
    let mut input = child.stdin.take()?;
    for n in names {
        writeln!(input, "{n}").ok()?;
    }
    drop(input);
    let out = child.wait_with_output().ok()?;
    Some(String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect())
}

fn symbolizer_fixtures(_: &Path) -> Verdict {
    let fixture = tk::demangle_fixture();
    if fixture.len() < 20 {
        return Fail(format!("only {} fixture names", fixture.len()));
    }
    let mismatched: Vec<String> = fixture
        .iter()
        .filter(|(m, want)| demangle(m) != *want)
        .map(|(m, want)| format!("{m}: got {:?}, want {want:?}", demangle(m)))
        .collect();
    if !mismatched.is_empty() {
        return Fail(mismatched.join("; "));
    }
    let mangled: Vec<&str> = fixture.iter().map(|(m, _)| *m).collect();
    let live = match cxxfilt(&mangled) {
        Some(out) => {
            let bad: Vec<&str> = mangled
                .iter()
                .zip(&out)
                .filter(|(m, o)| demangle(m) != **o)
                .map(|(m, _)| *m)
                .collect();
            if !bad.is_empty() || out.len() != mangled.len() {
                return Fail(format!("differs from c++filt on {bad:?}"));
            }
            "and live c++filt"
        }
        None => "(c++filt not installed; frozen outputs only)",
    };

    // stripped image: every address falls back to the canonical placeholder
    let (full, stripped) = match (tk::spinner(false), tk::spinner(true)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Skip(format!("cannot build the spinner: {e}")),
    };
    let child = Command::new(&stripped).arg("5").stdout(Stdio::null()).spawn();
    let Ok(mut child) = child else {
        return Fail("cannot start the stripped spinner".into());
    };
    std::thread::sleep(Duration::from_millis(100));
    let pid = child.id();
    let canon = std::fs::canonicalize(&stripped).unwrap();
    let base = load_maps(pid).ok().and_then(|m| {
        m.entries
            .iter()
            .find(|e| e.executable && Path::new(&e.path) == canon)
            .map(|e| e.start - e.offset)
    });
    let mut result = Ok(0);
    if let Some(base) = base {
        let samples: Vec<RawSample> = tk::SPINNER_FUNCTIONS
            .iter()
            .filter_map(|f| nm_value(&full, f))
            .map(|v| RawSample {
                timestamp: 1,
                pid,
                tid: pid,
                cpu: 0,
                frames: vec![base + v + 1],
                contexts: vec![FrameContext::User],
            })
            .collect();
        let mut sym = Symbolizer::new();
        let snap = sym.prepare(&samples);
        for s in &samples {
            let got = symbolizer::resolve(s, &snap);
            if got.frames[0].name != placeholder(s.frames[0]) {
                result = Err(format!("stripped {:#x} resolved to {}", s.frames[0], got.frames[0].name));
                break;
            }
        }
        if result.is_ok() {
            result = Ok(samples.len());
        }
    } else {
        result = Err("no executable mapping for the stripped spinner".into());
    }
    let _ = child.kill();
    let _ = child.wait();
    let strip_syms = load_symbols(&stripped).map(|t| t.symbols().iter().any(|s| s.mangled.starts_with("spin_")));
    match (result, strip_syms) {
        (Ok(_), Ok(true)) => Fail("stripped binary still has spin_ symbols".into()),
        (Ok(n), _) => Pass(format!(
            "{} names match the frozen c++filt outputs {live}; {n} stripped addresses gave placeholders",
            fixture.len()
        )),
        (Err(e), _) => Fail(e),
    }
}

// 7, 8 ----------------------------------------------------------------------

fn cpu_time_self() -> Duration {
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) };
    let tv = |t: libc::timeval| Duration::from_secs(t.tv_sec as u64) + Duration::from_micros(t.tv_usec as u64);
    tv(ru.ru_utime) + tv(ru.ru_stime)
}

fn profile_spinner(work: &Path, tag: &str, secs: u32, period: Duration) -> Result<launcher::RunResult, Verdict> {
    let bin = tk::spinner(false).map_err(|e| Skip(format!("cannot build the spinner: {e}")))?;
    let mut spec = RunSpec::new(&[bin.to_string_lossy().to_string(), secs.to_string()]);
    spec.session.source.period = period;
    spec.session.quiet = true;
    spec.session.output = Some(OutputPaths::in_dir(&work.join(tag)));
    spec.timeout = Some(Duration::from_secs(secs as u64 + 30));
    match launcher::launch(&spec) {
        Ok(r) => Ok(r),
        Err(e) if e.is_permission_denied() => Err(Skip(format!("perf sampling not permitted: {e}"))),
        Err(e) => Err(Fail(format!("launch failed: {e}"))),
    }
}

struct Sibling(std::process::Child);

impl Drop for Sibling {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn names_in(t: &CallTree) -> Vec<String> {
    let mut out = Vec::new();
    t.root.walk(&mut |n, _| out.push(n.name.clone()));
    out
}

fn live_end_to_end(work: &Path) -> Verdict {
    if !cfg!(target_os = "linux") {
        return Skip("needs Linux".into());
    }
    let bin = match tk::spinner(false) {
        Ok(b) => b,
        Err(e) => return Skip(format!("cannot build the spinner: {e}")),
    };
    let _sibling = match Command::new(&bin).args(["--sibling", "20"]).stdout(Stdio::null()).spawn() {
        Ok(c) => Sibling(c),
        Err(e) => return Fail(format!("cannot start the sibling: {e}")),
    };
    let r = match profile_spinner(work, "live", 10, Duration::from_millis(10)) {
        Ok(r) => r,
        Err(v) => return v,
    };
    if r.status != RunStatus::Exited(0) {
        return Fail(format!("spinner ended with {:?}", r.status));
    }
    let Some(group) = &r.cgroup else {
        return Fail("no control group was created".into());
    };
    let hot = flatten(&r.tree)
        .into_iter()
        .find(|row| row.name == "spin_hot")
        .map_or(0.0, |row| row.share);
    let leaked: Vec<String> = names_in(&r.tree).into_iter().filter(|n| n.contains("sibling")).collect();
    let detail = format!(
        "{} samples, spin_hot {:.3}, records_lost {}, {:?} mode in {}",
        r.stats.samples_delivered,
        hot,
        r.stats.records_lost,
        r.attach_mode,
        group.display()
    );
    if !leaked.is_empty() {
        return Fail(format!("{detail}; sibling frames present: {leaked:?}"));
    }
    fail_unless(hot >= 0.50 && r.stats.records_lost == 0 && r.stats.samples_delivered > 0, detail)
}

fn overhead(work: &Path) -> Verdict {
    if !cfg!(target_os = "linux") {
        return Skip("needs Linux".into());
    }
    let before = cpu_time_self();
    let started = Instant::now();
    let r = match profile_spinner(work, "overhead", 60, Duration::from_millis(500)) {
        Ok(r) => r,
        Err(v) => return v,
    };
    let wall = started.elapsed();
    let used = cpu_time_self() - before;
    let share = used.as_secs_f64() / wall.as_secs_f64();
    fail_unless(
        share < 0.05 && r.status == RunStatus::Exited(0),
        format!(
            "profiler used {:.3}s cpu over {:.1}s ({:.3}% of a core), {} samples, {:?}",
            used.as_secs_f64(),
            wall.as_secs_f64(),
            share * 100.0,
            r.stats.samples_delivered,
            r.status
        ),
    )
}

// 9 -------------------------------------------------------------------------

/// Picks a random non-root node and returns its path of names.
fn random_path(t: &CallTree, rng: &mut ChaCha8Rng) -> Vec<String> {
    fn nth(n: &CallTreeNode, k: &mut usize, cur: &mut Vec<String>) -> bool {
        for c in n.children.values() {
            cur.push(c.name.clone());
            if *k == 0 {
                return true;
            }
            *k -= 1;
            if nth(c, k, cur) {
                return true;
            }
            cur.pop();
        }
        false
    }
    let mut k = rng.random_range(0..t.root.node_count() - 1);
    let mut path = Vec::new();
    nth(&t.root, &mut k, &mut path);
    path
}

fn node_value<'a>(doc: &'a mut serde_json::Value, path: &[String]) -> &'a mut serde_json::Value {
    let mut v = &mut doc["root"];
    for name in path {
        let kids = v["children"].as_array_mut().unwrap();
        v = kids.iter_mut().find(|c| c["name"] == name.as_str()).unwrap();
    }
    v
}

fn serialization(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x15_0a);
    for i in 0..200 {
        let stacks = loop {
            let s = tk::random_stacks(&mut rng, 300, 40);
            if !s.is_empty() {
                break s;
            }
        };
        let mut t = tree_of(&stacks);
        t.metadata.target = format!("workload-{i}");
        t.metadata.source_mode = "replay".into();
        t.metadata.period_ns = rng.random_range(1..1_000_000_000);
        t.metadata.start_ns = rng.random_range(0..1 << 40);
        t.metadata.end_ns = t.metadata.start_ns + rng.random_range(0..1 << 30);
        let first = to_canonical_string(&t);
        let second = match tree_from_str(&first) {
            Ok(back) => to_canonical_string(&back),
            Err(e) => return Fail(format!("tree {i}: import failed: {e}")),
        };
        if first != second {
            return Fail(format!("tree {i}: export differs after a round trip"));
        }

        // break conservation at one node; the error must name it
        let path = random_path(&t, &mut rng);
        let mut doc: serde_json::Value = serde_json::from_str(&first).unwrap();
        let node = node_value(&mut doc, &path);
        let inc = node["inclusive"].as_u64().unwrap();
        node["inclusive"] = (inc + 1).into();
        let named = format!("<root>/{}", path.join("/"));
        match tree_from_str(&doc.to_string()) {
            Err(ReportError::InvariantViolation { path: p, .. }) if p == named => {}
            Err(e) => return Fail(format!("tree {i}: corrupted {named} rejected as: {e}")),
            Ok(_) => return Fail(format!("tree {i}: corrupted {named} was accepted")),
        }
    }

    let fixed = [
        (
            r#"{"schema_version":1,"metadata":{"target":"t","source_mode":"replay","period_ns":1,"start_ns":0,"end_ns":0,"total_samples":2},"root":{"name":"<root>","inclusive":2,"self":0,"children":[{"name":"a","inclusive":1,"self":1,"children":[]},{"name":"a","inclusive":1,"self":1,"children":[]}]}}"#,
            "<root>",
        ),
        (
            r#"{"schema_version":1,"metadata":{"target":"t","source_mode":"replay","period_ns":1,"start_ns":0,"end_ns":0,"total_samples":1},"root":{"name":"<root>","inclusive":1,"self":0,"children":[{"name":"a","inclusive":1,"self":1,"children":[{"name":"z","inclusive":0,"self":0,"children":[]}]}]}}"#,
            "<root>/a/z",
        ),
        (
            r#"{"schema_version":1,"metadata":{"target":"t","source_mode":"replay","period_ns":1,"start_ns":0,"end_ns":0,"total_samples":2},"root":{"name":"<root>","inclusive":1,"self":0,"children":[{"name":"a","inclusive":1,"self":1,"children":[]}]}}"#,
            "<root>",
        ),
    ];
    for (doc, named) in fixed {
        match tree_from_str(doc) {
            Err(ReportError::InvariantViolation { path, .. }) if path == named => {}
            other => return Fail(format!("document for {named}: {other:?}")),
        }
    }
    Pass("200 random trees round-trip byte-identically; 203 invalid documents rejected at the right node".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria = [
        Criterion { id: 1, name: "worked-example", limit: Some(Duration::from_secs(1)), check: two_stacks },
        Criterion { id: 2, name: "tree-oracle", limit: Some(Duration::from_secs(30)), check: oracle_equivalence },
        Criterion { id: 3, name: "conservation", limit: Some(Duration::from_secs(10)), check: conservation },
        Criterion { id: 4, name: "detector-scenario", limit: Some(Duration::from_secs(5)), check: detector_scenario },
        Criterion { id: 5, name: "detector-monotonic", limit: Some(Duration::from_secs(30)), check: monotonicity },
        Criterion { id: 6, name: "symbolizer-fixtures", limit: Some(Duration::from_secs(5)), check: symbolizer_fixtures },
        Criterion { id: 7, name: "live-end-to-end", limit: Some(Duration::from_secs(30)), check: live_end_to_end },
        Criterion { id: 8, name: "overhead", limit: None, check: overhead },
        Criterion { id: 9, name: "serialization", limit: Some(Duration::from_secs(10)), check: serialization },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let work = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for c in &criteria {
        if !only.is_empty() && !only.contains(&c.id) {
            continue;
        }
        let dir: PathBuf = work.path().join(format!("c{}", c.id));
        std::fs::create_dir_all(&dir).unwrap();
        let t0 = Instant::now();
        let mut verdict = (c.check)(&dir);
        let took = t0.elapsed();
        if let (Pass(d), Some(limit)) = (&verdict, c.limit) {
            if took > limit {
                verdict = Fail(format!("{d}; took {:.2}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64()));
            }
        }
        let (tag, detail) = match verdict {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {} {:<20} {:>7.2}s  {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
