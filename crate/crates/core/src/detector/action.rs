//! Checkpoint actions run when a rule fires.

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::DetectorEvent;
use crate::config::serde_duration;

pub const DEFAULT_ACTION_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    /// argv of an external command; event fields arrive as `RULE_ID`,
    /// `SHARE` and `TIMESTAMP` in its environment.
    #[serde(default)]
    pub command: Vec<String>,
    /// Signal sent to the target's process group, by name or number.
    #[serde(default)]
    pub signal: Option<SignalSpec>,
    #[serde(default = "default_timeout", with = "serde_duration")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    DEFAULT_ACTION_TIMEOUT
}

impl Default for ActionSpec {
    fn default() -> Self {
        ActionSpec {
            command: Vec::new(),
            signal: None,
            timeout: DEFAULT_ACTION_TIMEOUT,
        }
    }
}

impl ActionSpec {
    pub fn command(argv: &[&str]) -> Self {
        ActionSpec {
            command: argv.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn is_noop(&self) -> bool {
        self.command.is_empty() && self.signal.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    Number(i32),
    Name(String),
}

impl SignalSpec {
    pub fn number(&self) -> Option<i32> {
        match self {
            SignalSpec::Number(n) => Some(*n),
            SignalSpec::Name(s) => signal_by_name(s),
        }
    }
}

pub fn signal_by_name(name: &str) -> Option<i32> {
    let n = name.trim().to_ascii_uppercase();
    let n = n.strip_prefix("SIG").unwrap_or(&n);
    Some(match n {
        "HUP" => libc::SIGHUP,
        "INT" => libc::SIGINT,
        "QUIT" => libc::SIGQUIT,
        "KILL" => libc::SIGKILL,
        "USR1" => libc::SIGUSR1,
        "USR2" => libc::SIGUSR2,
        "TERM" => libc::SIGTERM,
        "CONT" => libc::SIGCONT,
        "STOP" => libc::SIGSTOP,
        "ALRM" => libc::SIGALRM,
        _ => return n.parse().ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActionOutcome {
    /// The action completed; `status` is the command's exit code, absent
    /// when only a signal was sent or nothing was configured.
    Ran { status: Option<i32> },
    Failed { reason: String },
    TimedOut { after_ms: u64 },
    SuppressedByCooldown,
    /// Detached action that has not finished yet.
    Pending,
}

impl ActionOutcome {
    pub fn is_fire(&self) -> bool {
        !matches!(self, ActionOutcome::SuppressedByCooldown)
    }
}

/// Runs the action for `event`, waiting at most the spec's timeout.
/// Failures are reported in the outcome, never raised.
pub fn trigger_action(spec: &ActionSpec, event: &DetectorEvent, process_group: Option<i32>) -> ActionOutcome {
    if let Some(sig) = &spec.signal {
        let Some(signo) = sig.number() else {
            return ActionOutcome::Failed {
                reason: format!("unknown signal {sig:?}"),
            };
        };
        match process_group {
            Some(pgid) if pgid > 0 => {
                // SAFETY: plain syscall on an integer id
                if unsafe { libc::kill(-pgid, signo) } != 0 {
                    return ActionOutcome::Failed {
                        reason: format!("signal {signo} to group {pgid}: {}", std::io::Error::last_os_error()),
                    };
                }
            }
            _ => {
                return ActionOutcome::Failed {
                    reason: "signal action without a target process group".into(),
                }
            }
        }
    }
    if spec.command.is_empty() {
        return ActionOutcome::Ran { status: None };
    }
    let mut child = match Command::new(&spec.command[0])
        .args(&spec.command[1..])
        .env("RULE_ID", &event.rule_id)
        .env("SHARE", format!("{:.6}", event.share))
        .env("TIMESTAMP", event.timestamp.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => {
            return ActionOutcome::Failed {
                reason: format!("spawn {:?}: {e}", spec.command[0]),
            }
        }
    };
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(st)) => {
                return if st.success() {
                    ActionOutcome::Ran { status: st.code() }
                } else {
                    ActionOutcome::Failed {
                        reason: format!("command exited with {st}"),
                    }
                }
            }
            Ok(None) if start.elapsed() >= spec.timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return ActionOutcome::TimedOut {
                    after_ms: spec.timeout.as_millis() as u64,
                };
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                return ActionOutcome::Failed {
                    reason: format!("wait: {e}"),
                }
            }
        }
    }
}
