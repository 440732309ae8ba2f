//! Running and attaching to workloads under a profiling session.
//!
//! `launch` places the command in a fresh control group before it executes
//! its first instruction: the child parks in `pre_exec` after joining the
//! group, and a helper thread opens the sampling session before letting it
//! continue into `exec`.

mod cgroup;
pub mod signals;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Child, Command};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use cgroup::ControlGroup;

use crate::calltree::{CallTree, TreeMetadata};
use crate::detector::{ActionMode, DetectorEvent, DetectorRule};
use crate::pipeline::{self, Artifacts, DetectorSetup, OutputPaths, Pipeline, PipelineError, ViewSet};
use crate::source::cgroup::{parse_cgroup_file, parse_mountinfo, resolve_cgroup_of};
use crate::source::{self, AttachMode, SampleSession, SourceConfig, SourceError, SourceStats, Target};
use crate::symbolizer::Symbolizer;

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("invalid run specification: {0}")]
    InvalidSpec(String),
    #[error("cannot start {command}: {reason}")]
    SpawnFailed { command: String, reason: String },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl LaunchError {
    pub fn is_permission_denied(&self) -> bool {
        match self {
            LaunchError::Source(SourceError::PermissionDenied(_)) => true,
            LaunchError::Pipeline(PipelineError::Source(SourceError::PermissionDenied(_))) => true,
            LaunchError::Pipeline(PipelineError::Report(r)) => r.is_permission_denied(),
            _ => false,
        }
    }
}

/// Everything about a session that does not depend on the target.
#[derive(Debug, Clone)]
pub struct SessionSpec {
    /// Sampling settings; the target field is ignored.
    pub source: SourceConfig,
    pub rules: Vec<DetectorRule>,
    pub views: ViewSet,
    /// `None` keeps results in memory only.
    pub output: Option<OutputPaths>,
    pub quiet: bool,
}

impl Default for SessionSpec {
    fn default() -> Self {
        SessionSpec {
            source: SourceConfig::live(Target::Pid(0)),
            rules: Vec::new(),
            views: ViewSet::default(),
            output: None,
            quiet: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSpec {
    pub command: Vec<String>,
    pub cwd: Option<PathBuf>,
    pub env: BTreeMap<String, String>,
    /// Group name under the unified hierarchy, or an absolute path to adopt.
    pub cgroup: Option<String>,
    pub cgroup_attributes: BTreeMap<String, String>,
    pub timeout: Option<Duration>,
    pub session: SessionSpec,
}

impl RunSpec {
    pub fn new<S: AsRef<str>>(command: &[S]) -> Self {
        RunSpec {
            command: command.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Default::default()
        }
    }
}

/// How a profiled run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Exited(i32),
    Signaled(i32),
    TimedOut,
    /// Attach mode: the target exited; its status belongs to its parent.
    TargetExited,
    /// Attach mode, or an interrupted launch: sampling stopped while the
    /// target kept running.
    Detached,
}

impl RunStatus {
    /// Conventional shell exit code for this status.
    pub fn exit_code(&self) -> i32 {
        match *self {
            RunStatus::Exited(c) => c,
            RunStatus::Signaled(s) => 128 + s,
            RunStatus::TimedOut => 4,
            RunStatus::TargetExited | RunStatus::Detached => 0,
        }
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub status: RunStatus,
    pub wall_time: Duration,
    pub stats: SourceStats,
    pub attach_mode: AttachMode,
    pub cgroup: Option<PathBuf>,
    pub tree: CallTree,
    pub events: Vec<DetectorEvent>,
    pub artifacts: Artifacts,
}

fn pipe() -> std::io::Result<(OwnedFd, OwnedFd)> {
    let mut fds = [0 as RawFd; 2];
    // SAFETY: fds is a valid two-element array
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
        return Err(std::io::Error::last_os_error());
    }
    // SAFETY: pipe2 returned two fresh descriptors we now own
    Ok(unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) })
}

const GO: u8 = 1;
const ABORT: u8 = 0;

fn in_group(pid: u32, group: &ControlGroup) -> bool {
    let Some(rel) = group.relative() else { return false };
    std::fs::read_to_string(format!("/proc/{pid}/cgroup"))
        .ok()
        .and_then(|t| parse_cgroup_file(&t).ok())
        .is_some_and(|lines| lines.iter().any(|l| l.hierarchy == 0 && l.path == rel))
}

fn open_for(pid: u32, group: Option<&ControlGroup>, source: &SourceConfig) -> Result<SampleSession, SourceError> {
    let mut cfg = source.clone();
    cfg.target = match group {
        Some(g) if in_group(pid, g) => Target::Cgroup(g.path().to_path_buf()),
        Some(g) => {
            log::warn!("child {pid} is not in {}; sampling it by pid", g.path().display());
            Target::Pid(pid)
        }
        None => Target::Pid(pid),
    };
    source::open_live(&cfg)
}

/// Spawns `cmd` parked before exec, opens the session for it, then lets it run.
fn spawn_parked(
    mut cmd: Command,
    group: Option<&ControlGroup>,
    source: &SourceConfig,
) -> Result<(Child, SampleSession), LaunchError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    let io = |e: std::io::Error| LaunchError::SpawnFailed {
        command: program.clone(),
        reason: e.to_string(),
    };
    let (ready_r, ready_w) = pipe().map_err(io)?;
    let (go_r, go_w) = pipe().map_err(io)?;
    let procs = group
        .map(|g| std::ffi::CString::new(g.path().join("cgroup.procs").into_os_string().into_encoded_bytes()))
        .transpose()
        .map_err(|_| LaunchError::InvalidSpec("group path contains NUL".into()))?;
    let (ready_wfd, go_rfd, ready_rfd, go_wfd) = (ready_w.as_raw_fd(), go_r.as_raw_fd(), ready_r.as_raw_fd(), go_w.as_raw_fd());

    // SAFETY: the hook only calls async-signal-safe functions.
    unsafe {
        cmd.pre_exec(move || {
            libc::close(ready_rfd);
            libc::close(go_wfd);
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            if let Some(p) = &procs {
                let fd = libc::open(p.as_ptr(), libc::O_WRONLY | libc::O_CLOEXEC);
                if fd < 0 {
                    return Err(std::io::Error::last_os_error());
                }
                let ok = libc::write(fd, b"0".as_ptr().cast(), 1) == 1;
                let err = std::io::Error::last_os_error();
                libc::close(fd);
                if !ok {
                    return Err(err);
                }
            }
            let pid = libc::getpid().to_ne_bytes();
            if libc::write(ready_wfd, pid.as_ptr().cast(), pid.len()) != pid.len() as isize {
                return Err(std::io::Error::last_os_error());
            }
            let mut b = [ABORT];
            loop {
                let n = libc::read(go_rfd, b.as_mut_ptr().cast(), 1);
                if n < 0 && *libc::__errno_location() == libc::EINTR {
                    continue;
                }
                break;
            }
            if b[0] != GO {
                return Err(std::io::Error::other("profiler did not attach"));
            }
            Ok(())
        });
    }

    std::thread::scope(|s| {
        let helper = s.spawn(move || -> Result<SampleSession, SourceError> {
            let mut ready = std::fs::File::from(ready_r);
            let mut go = std::fs::File::from(go_w);
            let mut buf = [0u8; 4];
            if ready.read_exact(&mut buf).is_err() {
                return Err(SourceError::NoSuchTarget("child exited before exec".into()));
            }
            let pid = i32::from_ne_bytes(buf) as u32;
            let opened = open_for(pid, group, source);
            let _ = go.write_all(&[if opened.is_ok() { GO } else { ABORT }]);
            opened
        });
        let spawned = cmd.spawn();
        // The helper sees EOF if the child died before reporting in.
        drop(ready_w);
        drop(go_r);
        let session = helper.join().expect("attach helper panicked");
        match (spawned, session) {
            (Ok(child), Ok(session)) => Ok((child, session)),
            (Ok(mut child), Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e.into())
            }
            (Err(_), Err(e @ (SourceError::PermissionDenied(_) | SourceError::UnsupportedKernel(_)))) => Err(e.into()),
            (Err(e), _) => Err(io(e)),
        }
    })
}

fn metadata_for(target: String, source: &SourceConfig) -> TreeMetadata {
    TreeMetadata {
        target,
        source_mode: "live".into(),
        period_ns: source.period.as_nanos() as u64,
        ..Default::default()
    }
}

fn build_pipeline(
    metadata: TreeMetadata,
    session: &SessionSpec,
    process_group: Option<i32>,
) -> Result<Pipeline, LaunchError> {
    let mut pipeline = Pipeline::new(Symbolizer::for_live(), metadata);
    let setup = DetectorSetup {
        rules: session.rules.clone(),
        events_path: session.output.as_ref().map(|o| o.events.clone()),
        mode: ActionMode::Detached,
        process_group,
        quiet: session.quiet,
    };
    if let Some((det, log)) = setup.build().map_err(LaunchError::Pipeline)? {
        pipeline = pipeline.with_detector(det, log);
    }
    Ok(pipeline)
}

fn finish(
    mut session: SampleSession,
    pipeline: Pipeline,
    spec: &SessionSpec,
) -> Result<(SourceStats, CallTree, Vec<DetectorEvent>, Artifacts), LaunchError> {
    let stats = session.close();
    if stats.records_lost > 0 {
        log::warn!("{} sample records were lost", stats.records_lost);
    }
    let (tree, events) = pipeline.finish();
    let artifacts = match &spec.output {
        Some(paths) => {
            let mut a = pipeline::emit_artifacts(&tree, &spec.views, paths)?;
            if !spec.rules.is_empty() && paths.events.exists() {
                a.events = Some(paths.events.clone());
            }
            a
        }
        None => Artifacts::default(),
    };
    Ok((stats, tree, events, artifacts))
}

fn kill_tree(child: &mut Child, group: Option<&ControlGroup>) {
    if let Some(g) = group {
        g.kill_all();
    }
    // SAFETY: plain syscall; the child leads its own process group
    unsafe { libc::kill(-(child.id() as i32), libc::SIGKILL) };
    let _ = child.kill();
}

/// Runs a command under a profiling session and supervises it to the end.
///
/// A first interrupt (see [`signals`]) stops sampling and leaves the
/// workload running; the call still waits for it. A second one kills it.
pub fn launch(spec: &RunSpec) -> Result<RunResult, LaunchError> {
    let Some((program, args)) = spec.command.split_first() else {
        return Err(LaunchError::InvalidSpec("empty command".into()));
    };
    spec.session.source.validate()?;
    let base = signals::interrupt_count();
    let group = match ControlGroup::create(spec.cgroup.as_deref()) {
        Ok(g) => {
            g.apply_attributes(&spec.cgroup_attributes);
            Some(g)
        }
        Err(reason) => {
            if spec.cgroup.is_some() {
                return Err(LaunchError::InvalidSpec(format!("control group: {reason}")));
            }
            log::warn!("control group unavailable ({reason}); sampling by pid");
            None
        }
    };
    let mut cmd = Command::new(program);
    cmd.args(args).envs(&spec.env);
    if let Some(dir) = &spec.cwd {
        cmd.current_dir(dir);
    }
    let start = Instant::now();
    let (mut child, mut session) = spawn_parked(cmd, group.as_ref(), &spec.session.source)?;
    log::debug!("session open after {:?}", start.elapsed());
    let pgid = child.id() as i32;
    let mut pipeline = build_pipeline(
        metadata_for(spec.command.join(" "), &spec.session.source),
        &spec.session,
        Some(pgid),
    )?;
    let mut detached = false;
    let mut timed_out = false;
    let interval = spec.session.source.poll_interval;
    let exit = loop {
        if !detached {
            let batch = session.poll().map_err(LaunchError::Source)?;
            pipeline.process(batch);
        }
        if let Some(st) = child.try_wait().map_err(|e| LaunchError::SpawnFailed {
            command: program.clone(),
            reason: e.to_string(),
        })? {
            break st;
        }
        let interrupts = signals::interrupt_count() - base;
        if interrupts >= 2 {
            kill_tree(&mut child, group.as_ref());
        } else if interrupts == 1 && !detached {
            log::warn!("interrupted: sampling stopped, waiting for the workload (interrupt again to kill it)");
            detached = true;
        }
        if let Some(t) = spec.timeout {
            if !timed_out && start.elapsed() >= t {
                timed_out = true;
                kill_tree(&mut child, group.as_ref());
            }
        }
        std::thread::sleep(interval);
    };
    let wall_time = start.elapsed();
    if !detached {
        // samples still buffered in the rings
        let batch = session.poll().map_err(LaunchError::Source)?;
        pipeline.process(batch);
    }
    let attach_mode = session.attach_mode();
    let cgroup_path = group.as_ref().map(|g| g.path().to_path_buf());
    let (stats, tree, events, artifacts) = finish(session, pipeline, &spec.session)?;
    drop(group);
    let status = if timed_out {
        RunStatus::TimedOut
    } else if let Some(c) = exit.code() {
        RunStatus::Exited(c)
    } else {
        RunStatus::Signaled(exit.signal().unwrap_or(libc::SIGKILL))
    };
    Ok(RunResult {
        status,
        wall_time,
        stats,
        attach_mode,
        cgroup: cgroup_path,
        tree,
        events,
        artifacts,
    })
}

fn alive(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(s) => s
            .rsplit_once(')')
            .and_then(|(_, rest)| rest.split_whitespace().next())
            .is_some_and(|state| state != "Z" && state != "X"),
        Err(_) => false,
    }
}

fn is_hierarchy_root(path: &std::path::Path) -> bool {
    std::fs::read_to_string("/proc/self/mountinfo")
        .map(|t| parse_mountinfo(&t).iter().any(|m| m.mount_point == path))
        .unwrap_or(false)
}

/// Profiles a running process without owning it. Sampling is scoped to the
/// process's control group unless that is a hierarchy root. Stops when the
/// target exits, on interrupt, or after `limit`. Never signals the target.
pub fn attach(pid: u32, session: &SessionSpec, limit: Option<Duration>) -> Result<RunResult, LaunchError> {
    if !alive(pid) {
        return Err(SourceError::NoSuchTarget(format!("pid {pid}")).into());
    }
    session.source.validate()?;
    let base = signals::interrupt_count();
    let group = resolve_cgroup_of(pid)?;
    let mut cfg = session.source.clone();
    cfg.target = if is_hierarchy_root(&group) {
        Target::Pid(pid)
    } else {
        Target::Cgroup(group.clone())
    };
    let start = Instant::now();
    let mut src = source::open_live(&cfg)?;
    let mut pipeline = build_pipeline(metadata_for(format!("pid {pid}"), &cfg), session, None)?;
    let mut status = RunStatus::Detached;
    pipeline::drive(&mut src, &mut pipeline, || {
        if !alive(pid) {
            status = RunStatus::TargetExited;
            return true;
        }
        signals::interrupt_count() > base || limit.is_some_and(|l| start.elapsed() >= l)
    })?;
    let wall_time = start.elapsed();
    let attach_mode = src.attach_mode();
    let (stats, tree, events, artifacts) = finish(src, pipeline, session)?;
    Ok(RunResult {
        status,
        wall_time,
        stats,
        attach_mode,
        cgroup: matches!(cfg.target, Target::Cgroup(_)).then_some(group),
        tree,
        events,
        artifacts,
    })
}

/// Runs independent specs with at most `parallelism` in flight. Results
/// come back in input order; one failure does not stop the others.
pub fn batch(specs: &[RunSpec], parallelism: usize) -> Vec<Result<RunResult, LaunchError>> {
    let parallelism = parallelism.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunResult, LaunchError>>>> =
        specs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..parallelism.min(specs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let r = launch(spec);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
