//! Raw call-stack sample streams.
//!
//! A [`SampleSession`] hides which backend produced the samples: the live
//! backend reads perf ring buffers, the replay backend expands a folded-stack
//! file. Everything downstream only sees [`RawSample`] batches.

pub mod cgroup;
#[cfg(target_os = "linux")]
mod live;
pub mod replay;
pub mod ring;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cgroup::resolve_cgroup_of;
pub use replay::{parse_folded, samples_from_folded, NameTable, REPLAY_ADDRESS_BASE};
pub use ring::MmapEvent;

/// Which privilege level a frame was captured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameContext {
    User,
    Kernel,
    Unknown,
}

/// One captured call chain.
///
/// `frames` is leaf-first, exactly as the kernel delivers it, with the
/// in-band context sentinels already converted into `contexts`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawSample {
    pub timestamp: u64,
    pub pid: u32,
    pub tid: u32,
    pub cpu: u32,
    pub frames: Vec<u64>,
    pub contexts: Vec<FrameContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Cgroup(PathBuf),
    Pid(u32),
    File(PathBuf),
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Cgroup(p) => write!(f, "cgroup:{}", p.display()),
            Target::Pid(pid) => write!(f, "pid:{pid}"),
            Target::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Sampling clock. Only the software cpu-clock is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleClock {
    #[default]
    SoftwareCpuClock,
}

pub const DEFAULT_PERIOD: Duration = Duration::from_millis(500);
pub const DEFAULT_MAX_STACK_DEPTH: u32 = 127;
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(100);
pub const DEFAULT_RING_PAGES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub mode: SourceMode,
    pub target: Target,
    pub clock: SampleClock,
    /// Time between samples on each monitored cpu.
    pub period: Duration,
    /// Sample at a fixed frequency (Hz) instead of `period`.
    pub frequency: Option<u64>,
    pub max_stack_depth: u32,
    pub poll_interval: Duration,
    /// Data pages per cpu ring buffer; must be a power of two.
    pub ring_pages: usize,
}

impl SourceConfig {
    pub fn live(target: Target) -> Self {
        SourceConfig {
            mode: SourceMode::Live,
            target,
            clock: SampleClock::SoftwareCpuClock,
            period: DEFAULT_PERIOD,
            frequency: None,
            max_stack_depth: DEFAULT_MAX_STACK_DEPTH,
            poll_interval: DEFAULT_POLL_INTERVAL,
            ring_pages: DEFAULT_RING_PAGES,
        }
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        SourceConfig {
            mode: SourceMode::Replay,
            target: Target::File(path.into()),
            ..Self::live(Target::Pid(0))
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if self.period.is_zero() {
            return Err(SourceError::InvalidConfig("period must be > 0".into()));
        }
        if !(1..=512).contains(&self.max_stack_depth) {
            return Err(SourceError::InvalidConfig(format!(
                "max_stack_depth {} outside [1, 512]",
                self.max_stack_depth
            )));
        }
        if self.frequency == Some(0) {
            return Err(SourceError::InvalidConfig("frequency must be > 0".into()));
        }
        if self.ring_pages == 0 || !self.ring_pages.is_power_of_two() {
            return Err(SourceError::InvalidConfig(format!(
                "ring_pages {} is not a power of two",
                self.ring_pages
            )));
        }
        match (self.mode, &self.target) {
            (SourceMode::Replay, Target::File(_)) => Ok(()),
            (SourceMode::Replay, t) => Err(SourceError::InvalidConfig(format!(
                "replay mode needs a trace file, got {t}"
            ))),
            (SourceMode::Live, Target::File(p)) => Err(SourceError::InvalidConfig(format!(
                "live mode cannot sample a file ({})",
                p.display()
            ))),
            (SourceMode::Live, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub samples_delivered: u64,
    pub records_lost: u64,
    pub samples_dropped_empty: u64,
    pub bytes_consumed: u64,
}

/// How a live session is attached to its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttachMode {
    /// One descriptor per cpu, scoped to a control group.
    Cgroup,
    /// One descriptor per cpu per process, following children via inheritance.
    PerPid,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Running,
    Drained,
    Closed,
}

/// One poll's worth of output.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub samples: Vec<RawSample>,
    /// Executable mappings the target created since the last poll.
    pub mmap_events: Vec<MmapEvent>,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("no such target: {0}")]
    NoSuchTarget(String),
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("cannot parse cgroup file {path}: {reason}")]
    UnparsableCgroupFile { path: String, reason: String },
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid source configuration: {0}")]
    InvalidConfig(String),
    #[error("session is closed")]
    SessionClosed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

enum Backend {
    #[cfg(target_os = "linux")]
    Live(live::LiveBackend),
    Replay(replay::ReplayBackend),
}

/// A stream of samples owned by a single polling agent.
pub struct SampleSession {
    backend: Option<Backend>,
    state: SessionState,
    stats: SourceStats,
    attach_mode: AttachMode,
    target: Target,
    config: SourceConfig,
    names: Option<Arc<NameTable>>,
}

impl std::fmt::Debug for SampleSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampleSession")
            .field("state", &self.state)
            .field("attach_mode", &self.attach_mode)
            .field("target", &self.target)
            .field("stats", &self.stats)
            .finish()
    }
}

/// Opens a live kernel sampling session.
pub fn open_live(config: &SourceConfig) -> Result<SampleSession, SourceError> {
    if config.mode != SourceMode::Live {
        return Err(SourceError::InvalidConfig("open_live needs mode=live".into()));
    }
    config.validate()?;
    #[cfg(target_os = "linux")]
    {
        let backend = live::LiveBackend::open(config)?;
        Ok(SampleSession {
            attach_mode: backend.attach_mode(),
            backend: Some(Backend::Live(backend)),
            state: SessionState::Running,
            stats: SourceStats::default(),
            target: config.target.clone(),
            config: config.clone(),
            names: None,
        })
    }
    #[cfg(not(target_os = "linux"))]
    {
        Err(SourceError::UnsupportedKernel(
            "live sampling requires Linux perf events".into(),
        ))
    }
}

/// Opens a folded-stack replay session. The whole file is parsed up front so
/// format errors surface here rather than mid-stream.
pub fn open_replay(config: &SourceConfig) -> Result<SampleSession, SourceError> {
    if config.mode != SourceMode::Replay {
        return Err(SourceError::InvalidConfig("open_replay needs mode=replay".into()));
    }
    config.validate()?;
    let Target::File(path) = &config.target else {
        unreachable!("validated above");
    };
    let backend = replay::ReplayBackend::open(path, config.period)?;
    Ok(SampleSession {
        names: Some(backend.names()),
        backend: Some(Backend::Replay(backend)),
        state: SessionState::Running,
        stats: SourceStats::default(),
        attach_mode: AttachMode::Replay,
        target: config.target.clone(),
        config: config.clone(),
    })
}

/// Dispatches on `config.mode`.
pub fn open(config: &SourceConfig) -> Result<SampleSession, SourceError> {
    match config.mode {
        SourceMode::Live => open_live(config),
        SourceMode::Replay => open_replay(config),
    }
}

impl SampleSession {
    /// Drains everything currently readable.
    pub fn poll(&mut self) -> Result<Batch, SourceError> {
        let backend = match (&mut self.backend, self.state) {
            (Some(b), SessionState::Running | SessionState::Drained) => b,
            _ => return Err(SourceError::SessionClosed),
        };
        let batch = match backend {
            #[cfg(target_os = "linux")]
            Backend::Live(live) => live.poll(&mut self.stats, self.config.max_stack_depth)?,
            Backend::Replay(replay) => {
                let samples = replay.next_batch(replay::REPLAY_BATCH);
                if replay.is_exhausted() {
                    self.state = SessionState::Drained;
                }
                Batch {
                    samples,
                    mmap_events: Vec::new(),
                }
            }
        };
        self.stats.samples_delivered += batch.samples.len() as u64;
        Ok(batch)
    }

    /// Closes all descriptors and returns the final statistics. Idempotent.
    pub fn close(&mut self) -> SourceStats {
        if let Some(backend) = self.backend.take() {
            drop(backend);
        }
        self.state = SessionState::Closed;
        self.stats
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn stats(&self) -> SourceStats {
        self.stats
    }

    pub fn attach_mode(&self) -> AttachMode {
        self.attach_mode
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Interned frame names for replay sessions.
    pub fn replay_names(&self) -> Option<Arc<NameTable>> {
        self.names.clone()
    }

    /// Replay sessions are finite; live sessions never drain on their own.
    pub fn is_drained(&self) -> bool {
        self.state == SessionState::Drained
    }
}

impl Drop for SampleSession {
    fn drop(&mut self) {
        self.close();
    }
}
