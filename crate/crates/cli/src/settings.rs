//! Config file + flags → concrete session settings. Flags win key by key.

use std::path::{Path, PathBuf};

use stackscope_core::config::{parse_duration, SessionConfigFile, Span};
use stackscope_core::detector::{ActionSpec, DetectorRule, SignalSpec};
use stackscope_core::launcher::{RunSpec, SessionSpec};
use stackscope_core::pipeline::{OutputPaths, ViewSet};
use stackscope_core::source::{SourceConfig, Target};
use stackscope_core::ViewSpec;

use crate::args::{OutputArgs, RuleArgs, RunArgs, SamplingArgs, ViewArgs};
use crate::exit::Failure;

pub fn load(path: Option<&Path>) -> Result<SessionConfigFile, Failure> {
    match path {
        Some(p) => Ok(SessionConfigFile::load(p)?),
        None => Ok(SessionConfigFile::default()),
    }
}

pub fn source(cfg: &SessionConfigFile, flags: &SamplingArgs) -> SourceConfig {
    let mut s = SourceConfig::live(Target::Pid(0));
    let f = &cfg.source;
    if let Some(p) = flags.period.or(f.period) {
        s.period = p;
    }
    s.frequency = flags.frequency.or(f.frequency);
    if let Some(d) = flags.max_stack_depth.or(f.max_stack_depth) {
        s.max_stack_depth = d;
    }
    if let Some(p) = flags.poll_interval.or(f.poll_interval) {
        s.poll_interval = p;
    }
    if let Some(r) = flags.ring_pages.or(f.ring_pages) {
        s.ring_pages = r;
    }
    s
}

/// Output paths: explicit per-file keys beat the directory; flags beat the file.
pub fn outputs(cfg: &SessionConfigFile, flags: &OutputArgs, default_dir: &str) -> OutputPaths {
    let f = &cfg.output;
    let dir = flags
        .dir
        .clone()
        .or_else(|| f.dir.clone())
        .unwrap_or_else(|| PathBuf::from(default_dir));
    let mut p = OutputPaths::in_dir(&dir);
    // a directory flag also replaces per-file paths that came from the config
    let from_file = |o: &Option<PathBuf>| if flags.dir.is_none() { o.clone() } else { None };
    let pick = |flag: &Option<PathBuf>, file: Option<PathBuf>, slot: &mut PathBuf| {
        if let Some(v) = flag.clone().or(file) {
            *slot = v;
        }
    };
    pick(&flags.tree_json, from_file(&f.tree_json), &mut p.tree_json);
    pick(&flags.html, from_file(&f.html), &mut p.html);
    pick(&flags.events, from_file(&f.events), &mut p.events);
    pick(&flags.csv, from_file(&f.csv), &mut p.csv);
    pick(&flags.svg, from_file(&f.svg), &mut p.svg);
    p
}

pub fn view(cfg: &SessionConfigFile, flags: &ViewArgs) -> Result<ViewSpec, Failure> {
    let mut v = cfg.view.clone().unwrap_or_default();
    if let Some(r) = &flags.root {
        v.root = Some(r.clone());
    }
    if let Some(l) = flags.level {
        v.level = l;
    }
    if !flags.whitelist.is_empty() {
        v.whitelist = flags.whitelist.clone();
    }
    if !flags.blacklist.is_empty() {
        v.blacklist = flags.blacklist.clone();
    }
    if flags.flatten {
        v.flatten = true;
    }
    if flags.no_flatten {
        v.flatten = false;
    }
    v.validate()?;
    Ok(v)
}

pub fn views(cfg: &SessionConfigFile, flags: &ViewArgs) -> Result<ViewSet, Failure> {
    Ok(ViewSet {
        primary: view(cfg, flags)?,
        named: cfg.views.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
    })
}

fn span(s: &str) -> Result<Span, Failure> {
    match s.parse::<u64>() {
        Ok(n) => Ok(Span::Samples(n)),
        Err(_) => parse_duration(s)
            .map(Span::Duration)
            .map_err(|e| Failure::usage(format!("bad span {s:?}: {e}"))),
    }
}

pub fn rules(cfg: &SessionConfigFile, flags: &RuleArgs) -> Result<Vec<DetectorRule>, Failure> {
    let mut rules = cfg.rules.clone();
    if let Some(pattern) = &flags.pattern {
        let mut r = DetectorRule::new("cli", pattern);
        if let Some(t) = flags.threshold {
            r.threshold = t;
        }
        if let Some(w) = &flags.window {
            r.window = span(w)?;
        }
        if let Some(s) = flags.sustain {
            r.sustain = s;
        }
        if let Some(c) = &flags.cooldown {
            r.cooldown = Some(span(c)?);
        }
        let mut action = ActionSpec::default();
        if let Some(a) = &flags.action {
            action.command = a.split_whitespace().map(str::to_string).collect();
        }
        if let Some(s) = &flags.signal {
            action.signal = Some(match s.parse::<i32>() {
                Ok(n) => SignalSpec::Number(n),
                Err(_) => SignalSpec::Name(s.clone()),
            });
        }
        r.action = action;
        r.validate()?;
        rules.push(r);
    }
    Ok(rules)
}

pub fn run_spec(cfg: &SessionConfigFile, a: &RunArgs, quiet: bool) -> Result<RunSpec, Failure> {
    let command = if a.command.is_empty() { cfg.run.command.clone() } else { a.command.clone() };
    if command.is_empty() {
        return Err(Failure::usage("no command given; use `run [options] -- <command> [args]`"));
    }
    let mut env = cfg.run.env.clone();
    for kv in &a.env {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--env expects KEY=VALUE, got {kv:?}")))?;
        env.insert(k.to_string(), v.to_string());
    }
    Ok(RunSpec {
        command,
        cwd: a.cwd.clone().or_else(|| cfg.run.cwd.clone()),
        env,
        cgroup: a.cgroup.clone().or_else(|| cfg.run.cgroup.clone()),
        cgroup_attributes: cfg.run.cgroup_attributes.clone(),
        timeout: a.timeout.or(cfg.run.timeout),
        session: SessionSpec {
            source: source(cfg, &a.sampling),
            rules: rules(cfg, &a.rule)?,
            views: views(cfg, &a.view)?,
            output: Some(outputs(cfg, &a.output, "stackscope-out")),
            quiet,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn cfg(text: &str) -> SessionConfigFile {
        SessionConfigFile::parse(text, "test.toml").unwrap()
    }

    #[test]
    fn sampling_flags_override_file() {
        let c = cfg("[source]\nperiod = \"2s\"\nmax_stack_depth = 64\npoll_interval = \"50ms\"\nring_pages = 16\nfrequency = 9\n");
        let s = source(&c, &SamplingArgs::default());
        assert_eq!(s.period, Duration::from_secs(2));
        assert_eq!(s.max_stack_depth, 64);
        assert_eq!(s.ring_pages, 16);
        assert_eq!(s.frequency, Some(9));
        let flags = SamplingArgs {
            period: Some(Duration::from_millis(10)),
            frequency: Some(99),
            max_stack_depth: Some(8),
            poll_interval: Some(Duration::from_millis(5)),
            ring_pages: Some(4),
        };
        let s = source(&c, &flags);
        assert_eq!(s.period, Duration::from_millis(10));
        assert_eq!(s.frequency, Some(99));
        assert_eq!(s.max_stack_depth, 8);
        assert_eq!(s.poll_interval, Duration::from_millis(5));
        assert_eq!(s.ring_pages, 4);
    }

    #[test]
    fn view_flags_override_file() {
        let c = cfg("[view]\nroot = \"a\"\nlevel = 2\nwhitelist = [\"x\"]\nblacklist = [\"y\"]\nflatten = true\n");
        let v = view(&c, &ViewArgs::default()).unwrap();
        assert_eq!((v.root.as_deref(), v.level, v.flatten), (Some("a"), 2, true));
        let flags = ViewArgs {
            root: Some("b".into()),
            level: Some(-1),
            whitelist: vec!["p".into()],
            blacklist: vec!["q".into()],
            flatten: false,
            no_flatten: true,
        };
        let v = view(&c, &flags).unwrap();
        assert_eq!(v.root.as_deref(), Some("b"));
        assert_eq!(v.level, -1);
        assert_eq!(v.whitelist, vec!["p"]);
        assert_eq!(v.blacklist, vec!["q"]);
        assert!(!v.flatten);
    }

    #[test]
    fn output_flags_override_file() {
        let c = cfg("[output]\ndir = \"from-file\"\ncsv = \"file.csv\"\n");
        let p = outputs(&c, &OutputArgs::default(), "dflt");
        assert_eq!(p.tree_json, PathBuf::from("from-file/tree.json"));
        assert_eq!(p.csv, PathBuf::from("file.csv"));
        let flags = OutputArgs {
            dir: Some("flag".into()),
            html: Some("x.html".into()),
            ..Default::default()
        };
        let p = outputs(&c, &flags, "dflt");
        assert_eq!(p.tree_json, PathBuf::from("flag/tree.json"));
        assert_eq!(p.csv, PathBuf::from("flag/breakdown.csv"));
        assert_eq!(p.html, PathBuf::from("x.html"));
        let p = outputs(&SessionConfigFile::default(), &OutputArgs::default(), "dflt");
        assert_eq!(p.events, PathBuf::from("dflt/events.jsonl"));
    }

    #[test]
    fn run_keys_override_file() {
        use clap::Parser;
        let c = cfg("[run]\ncommand = [\"true\"]\ncgroup = \"g1\"\ntimeout = \"10s\"\ncwd = \"/\"\nenv = { A = \"1\", B = \"2\" }\n");
        let cli = crate::args::Cli::parse_from(["stackscope", "run"]);
        let crate::args::Cmd::Run(a) = cli.command else { unreachable!() };
        let r = run_spec(&c, &a, false).unwrap();
        assert_eq!(r.command, vec!["true"]);
        assert_eq!(r.cgroup.as_deref(), Some("g1"));
        assert_eq!(r.timeout, Some(Duration::from_secs(10)));
        let cli = crate::args::Cli::parse_from([
            "stackscope", "run", "--cgroup", "g2", "--timeout", "1s", "--cwd", "/tmp", "--env", "B=3", "--", "false",
        ]);
        let crate::args::Cmd::Run(a) = cli.command else { unreachable!() };
        let r = run_spec(&c, &a, false).unwrap();
        assert_eq!(r.command, vec!["false"]);
        assert_eq!(r.cgroup.as_deref(), Some("g2"));
        assert_eq!(r.timeout, Some(Duration::from_secs(1)));
        assert_eq!(r.cwd, Some(PathBuf::from("/tmp")));
        assert_eq!(r.env["A"], "1");
        assert_eq!(r.env["B"], "3");
    }

    #[test]
    fn cli_rule_is_appended() {
        let c = cfg("[[rules]]\nid = \"file\"\npattern = \"x\"\n");
        let flags = RuleArgs {
            pattern: Some("buildInst".into()),
            threshold: Some(0.5),
            window: Some("30s".into()),
            cooldown: Some("100".into()),
            signal: Some("SIGUSR1".into()),
            ..Default::default()
        };
        let r = rules(&c, &flags).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].threshold, 0.5);
        assert_eq!(r[1].window, Span::Duration(Duration::from_secs(30)));
        assert_eq!(r[1].cooldown, Some(Span::Samples(100)));
        let bad = RuleArgs {
            pattern: Some("x".into()),
            threshold: Some(1.5),
            ..Default::default()
        };
        assert!(rules(&c, &bad).is_err());
    }
}
