use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stackscope_core::config::{parse_duration, CONFIG_ENV};

fn duration(s: &str) -> Result<std::time::Duration, String> {
    parse_duration(s)
}

#[derive(Debug, Parser)]
#[command(name = "stackscope", version, about = "Sampling call-stack profiler for long-running simulators")]
#[command(after_help = "Exit codes: 0 success, 1 usage, 2 permission or unwritable output, 3 missing or invalid target/input, \
4 timeout; `run` passes the workload's exit code through (128+N when killed by signal N).")]
pub struct Cli {
    /// Session config file (TOML); flags override its keys.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Only data on stdout, only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Launch a command in a fresh control group and profile it.
    Run(RunArgs),
    /// Like `run`, with detector rules required.
    Watch(RunArgs),
    /// Profile a running process until it exits or is interrupted.
    Attach(AttachArgs),
    /// Run the pipeline over a folded-stack trace.
    Replay(ReplayArgs),
    /// Re-slice an exported tree.
    Analyze(AnalyzeArgs),
    /// Render an exported tree as a self-contained HTML report.
    Report(ReportArgs),
    /// Run several session configs, each with its own group.
    Batch(BatchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplingArgs {
    /// Sample period, e.g. 0.5s or 10ms.
    #[arg(long, value_parser = duration)]
    pub period: Option<std::time::Duration>,
    /// Sampling frequency in Hz (overrides the period).
    #[arg(long)]
    pub frequency: Option<u64>,
    #[arg(long)]
    pub max_stack_depth: Option<u32>,
    #[arg(long, value_parser = duration)]
    pub poll_interval: Option<std::time::Duration>,
    /// Ring size per cpu in pages (power of two).
    #[arg(long)]
    pub ring_pages: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// Directory for all artifacts.
    #[arg(long = "out", short = 'o')]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub tree_json: Option<PathBuf>,
    #[arg(long)]
    pub html: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ViewArgs {
    /// Subtree root (substring, glob, or `<root>` for the whole tree).
    #[arg(long)]
    pub root: Option<String>,
    /// Levels to keep below the root; -1 keeps all.
    #[arg(long, allow_hyphen_values = true)]
    pub level: Option<i64>,
    #[arg(long)]
    pub whitelist: Vec<String>,
    #[arg(long)]
    pub blacklist: Vec<String>,
    /// Merge counters of identical functions.
    #[arg(long, overrides_with = "no_flatten")]
    pub flatten: bool,
    #[arg(long)]
    pub no_flatten: bool,
}

/// A single detector rule given on the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct RuleArgs {
    /// Function pattern to watch.
    #[arg(long = "watch")]
    pub pattern: Option<String>,
    #[arg(long, requires = "pattern")]
    pub threshold: Option<f64>,
    /// Window in samples, or a duration such as 30s.
    #[arg(long, requires = "pattern")]
    pub window: Option<String>,
    #[arg(long, requires = "pattern")]
    pub sustain: Option<u32>,
    #[arg(long, requires = "pattern")]
    pub cooldown: Option<String>,
    /// Command run when the rule fires (split on whitespace).
    #[arg(long, requires = "pattern")]
    pub action: Option<String>,
    /// Signal sent to the workload when the rule fires.
    #[arg(long, requires = "pattern")]
    pub signal: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Control-group name, or absolute path of a group to reuse.
    #[arg(long)]
    pub cgroup: Option<String>,
    #[arg(long, value_parser = duration)]
    pub timeout: Option<std::time::Duration>,
    #[arg(long)]
    pub cwd: Option<PathBuf>,
    /// Extra environment for the workload, KEY=VALUE.
    #[arg(long = "env")]
    pub env: Vec<String>,
    /// Workload command line.
    #[arg(last = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AttachArgs {
    pub pid: u32,
    /// Stop after this long.
    #[arg(long, value_parser = duration)]
    pub duration: Option<std::time::Duration>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    /// Spacing of the synthetic timestamps.
    #[arg(long, value_parser = duration)]
    pub period: Option<std::time::Duration>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub view: ViewArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub tree: PathBuf,
    #[command(flatten)]
    pub view: ViewArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub tree: PathBuf,
    pub html: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Session configs, each with `run.command` set.
    #[arg(required = true)]
    pub specs: Vec<PathBuf>,
    /// Runs in flight at once.
    #[arg(long, short = 'j', default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Parent directory for runs without an output directory.
    #[arg(long, default_value = "stackscope-batch")]
    pub out: PathBuf,
}
