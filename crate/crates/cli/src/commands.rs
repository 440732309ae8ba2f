use std::io::Write;
use std::path::Path;
use std::time::Duration;

use stackscope_core::analyzer::compose;
use stackscope_core::config::SessionConfigFile;
use stackscope_core::detector::ActionMode;
use stackscope_core::launcher::{self, signals, RunResult, RunSpec, RunStatus, SessionSpec};
use stackscope_core::pipeline::{emit_artifacts, replay_file, Artifacts, DetectorSetup};
use stackscope_core::reporter::{self, ReportError};

use crate::args::{AnalyzeArgs, AttachArgs, BatchArgs, Format, ReplayArgs, ReportArgs, RunArgs};
use crate::exit::{launch_code, read_code, write_code, Failure, Outcome, TIMEOUT};
use crate::settings;

pub struct Context {
    pub config: SessionConfigFile,
    pub quiet: bool,
}

fn note(ctx: &Context, msg: impl std::fmt::Display) {
    if !ctx.quiet {
        eprintln!("stackscope: {msg}");
    }
}

fn artifact_list(a: &Artifacts) -> String {
    [&a.tree_json, &a.html, &a.csv, &a.svg, &a.events]
        .into_iter()
        .flatten()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn summarize(ctx: &Context, r: &RunResult) {
    note(
        ctx,
        format_args!(
            "{} samples ({} lost) in {:.1}s, {:?} mode; {}",
            r.stats.samples_delivered,
            r.stats.records_lost,
            r.wall_time.as_secs_f64(),
            r.attach_mode,
            match artifact_list(&r.artifacts) {
                s if s.is_empty() => "no artifacts".to_string(),
                s => format!("wrote {s}"),
            }
        ),
    );
}

pub fn run(ctx: &Context, args: &RunArgs, require_rules: bool) -> Outcome {
    let spec = settings::run_spec(&ctx.config, args, ctx.quiet)?;
    if require_rules && spec.session.rules.is_empty() {
        return Err(Failure::usage("watch needs at least one rule (--watch PATTERN or [[rules]] in the config)"));
    }
    signals::install();
    let r = launcher::launch(&spec)?;
    summarize(ctx, &r);
    if r.status == RunStatus::TimedOut {
        note(ctx, "workload timed out and was killed");
        return Ok(TIMEOUT);
    }
    Ok(r.status.exit_code())
}

pub fn attach(ctx: &Context, args: &AttachArgs) -> Outcome {
    let session = SessionSpec {
        source: settings::source(&ctx.config, &args.sampling),
        rules: settings::rules(&ctx.config, &args.rule)?,
        views: settings::views(&ctx.config, &args.view)?,
        output: Some(settings::outputs(&ctx.config, &args.output, "stackscope-out")),
        quiet: ctx.quiet,
    };
    signals::install();
    let r = launcher::attach(args.pid, &session, args.duration)?;
    summarize(ctx, &r);
    Ok(0)
}

pub fn replay(ctx: &Context, args: &ReplayArgs) -> Outcome {
    let period = args
        .period
        .or(ctx.config.source.period)
        .unwrap_or(stackscope_core::source::DEFAULT_PERIOD);
    let paths = settings::outputs(&ctx.config, &args.output, "stackscope-out");
    let views = settings::views(&ctx.config, &args.view)?;
    let setup = DetectorSetup {
        rules: settings::rules(&ctx.config, &args.rule)?,
        events_path: Some(paths.events.clone()),
        mode: ActionMode::Inline,
        process_group: None,
        quiet: ctx.quiet,
    };
    let out = replay_file(&args.trace, period, &setup)?;
    let mut artifacts = emit_artifacts(&out.tree, &views, &paths)?;
    if !setup.rules.is_empty() {
        artifacts.events = Some(paths.events.clone());
    }
    note(
        ctx,
        format_args!(
            "{} samples, {} events; wrote {}",
            out.tree.total_samples,
            out.events.iter().filter(|e| e.outcome.is_fire()).count(),
            artifact_list(&artifacts)
        ),
    );
    Ok(0)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            let e = ReportError::Io {
                path: p.display().to_string(),
                source: e,
            };
            Failure::new(write_code(&e), e)
        }),
        None => {
            let mut out = std::io::stdout().lock();
            // a closed pipe is not an error for a filter
            let _ = out.write_all(text.as_bytes());
            let _ = out.flush();
            Ok(())
        }
    }
}

fn import(path: &Path) -> Result<stackscope_core::CallTree, Failure> {
    reporter::import_json(path).map_err(|e| Failure::new(read_code(&e), e))
}

pub fn analyze(ctx: &Context, args: &AnalyzeArgs) -> Outcome {
    let spec = settings::view(&ctx.config, &args.view)?;
    let tree = import(&args.tree)?;
    let view = compose(&spec, &tree)?;
    let text = match args.format {
        Format::Csv => reporter::csv_string(&view.rows),
        Format::Json => reporter::to_canonical_string(&view.tree),
        Format::Svg => reporter::svg_string(&[("view".to_string(), view.rows.clone())]),
    };
    write_out(args.output.as_deref(), &text)?;
    Ok(0)
}

pub fn report(_: &Context, args: &ReportArgs) -> Outcome {
    let tree = import(&args.tree)?;
    reporter::export_html(&tree, &args.html).map_err(|e| Failure::new(write_code(&e), e))?;
    Ok(0)
}

pub fn batch(ctx: &Context, args: &BatchArgs) -> Outcome {
    let mut specs: Vec<RunSpec> = Vec::new();
    for (i, path) in args.specs.iter().enumerate() {
        let cfg = SessionConfigFile::load(path)?;
        if cfg.run.command.is_empty() {
            return Err(Failure::usage(format!("{}: run.command is empty", path.display())));
        }
        let default_dir = args.out.join(format!("{i:03}"));
        let paths = settings::outputs(&cfg, &Default::default(), &default_dir.to_string_lossy());
        specs.push(RunSpec {
            command: cfg.run.command.clone(),
            cwd: cfg.run.cwd.clone(),
            env: cfg.run.env.clone(),
            cgroup: cfg.run.cgroup.clone(),
            cgroup_attributes: cfg.run.cgroup_attributes.clone(),
            timeout: cfg.run.timeout,
            session: SessionSpec {
                source: settings::source(&cfg, &args.sampling),
                rules: cfg.rules.clone(),
                views: settings::views(&cfg, &Default::default())?,
                output: Some(paths),
                quiet: ctx.quiet,
            },
        });
    }
    signals::install();
    let results = launcher::batch(&specs, args.jobs);
    let mut code = 0;
    let mut out = String::from("index\tspec\tstatus\texit\tsamples\twall_s\n");
    for (i, (r, path)) in results.iter().zip(&args.specs).enumerate() {
        let (status, exit, samples, wall) = match r {
            Ok(r) => (
                format!("{:?}", r.status),
                r.status.exit_code(),
                r.stats.samples_delivered,
                r.wall_time,
            ),
            Err(e) => {
                note(ctx, format_args!("{}: {e}", path.display()));
                ("Failed".to_string(), launch_code(e), 0, Duration::ZERO)
            }
        };
        if code == 0 && exit != 0 {
            code = exit;
        }
        out.push_str(&format!(
            "{i}\t{}\t{status}\t{exit}\t{samples}\t{:.3}\n",
            path.display(),
            wall.as_secs_f64()
        ));
    }
    write_out(None, &out)?;
    Ok(code)
}
