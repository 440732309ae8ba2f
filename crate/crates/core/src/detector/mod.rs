//! Windowed runtime-share monitor.
//!
//! Each rule keeps a sliding window of in-scope stacks and measures the
//! share of them that contain the rule's pattern. When the share stays above
//! the threshold for long enough the rule fires: an event is emitted and the
//! checkpoint action runs.

mod action;

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{any_match, compile_all, AnalyzeError, Pattern, ViewSpec};
use crate::config::Span;
use crate::symbolizer::ResolvedStack;

pub use action::{signal_by_name, trigger_action, ActionOutcome, ActionSpec, SignalSpec, DEFAULT_ACTION_TIMEOUT};

pub const DEFAULT_THRESHOLD: f64 = 0.90;
pub const DEFAULT_WINDOW: u64 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("rule {id:?}: {reason}")]
    InvalidRule { id: String, reason: String },
    #[error("rule {id:?}: {source}")]
    Pattern {
        id: String,
        #[source]
        source: AnalyzeError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRule {
    pub id: String,
    /// Only the `root` and `blacklist` of the scope select stacks; a stack is
    /// in scope when it passes through the root and through no blacklisted
    /// frame below it.
    #[serde(default)]
    pub scope: ViewSpec,
    pub pattern: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: Span,
    #[serde(default = "default_sustain")]
    pub sustain: u32,
    /// Minimum distance between two firings; defaults to one window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooldown: Option<Span>,
    #[serde(default)]
    pub action: ActionSpec,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_window() -> Span {
    Span::Samples(DEFAULT_WINDOW)
}
fn default_sustain() -> u32 {
    1
}

impl DetectorRule {
    pub fn new(id: &str, pattern: &str) -> Self {
        DetectorRule {
            id: id.to_string(),
            scope: ViewSpec::default(),
            pattern: pattern.to_string(),
            threshold: DEFAULT_THRESHOLD,
            window: default_window(),
            sustain: 1,
            cooldown: None,
            action: ActionSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |reason: &str| {
            Err(DetectorError::InvalidRule {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must be in (0, 1]");
        }
        match self.window {
            Span::Samples(0) => return bad("window must be at least 1 sample"),
            Span::Duration(d) if d.is_zero() => return bad("window duration must be positive"),
            _ => {}
        }
        if self.sustain == 0 {
            return bad("sustain must be at least 1");
        }
        if self.action.command.first().is_some_and(|c| c.is_empty()) {
            return bad("action command is empty");
        }
        let pat = |e| DetectorError::Pattern {
            id: self.id.clone(),
            source: e,
        };
        Pattern::new(&self.pattern).map_err(pat)?;
        self.scope.validate().map_err(pat)?;
        Ok(())
    }

    pub fn effective_cooldown(&self) -> Span {
        self.cooldown.unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEvent {
    pub rule_id: String,
    pub timestamp: u64,
    pub share: f64,
    /// Indices, among all stacks the detector has observed, of the first and
    /// last stack in the measured window.
    pub window_first: u64,
    pub window_last: u64,
    pub outcome: ActionOutcome,
}

/// Whether actions block `observe` or run on their own thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionMode {
    #[default]
    Inline,
    Detached,
}

struct Slot {
    index: u64,
    timestamp: u64,
    hit: bool,
}

struct RuleState {
    rule: DetectorRule,
    pattern: Pattern,
    scope_root: Option<Pattern>,
    scope_blacklist: Vec<Pattern>,
    window: VecDeque<Slot>,
    hits: usize,
    in_scope_seen: u64,
    first_timestamp: Option<u64>,
    /// Consecutive violating evaluations, and when the run started.
    streak: u64,
    streak_start: u64,
    /// In-scope sample count and timestamp of the last firing.
    last_fire: Option<(u64, u64)>,
    was_eligible: bool,
}

impl RuleState {
    fn new(rule: DetectorRule) -> Result<Self, DetectorError> {
        rule.validate()?;
        let pat = |e| DetectorError::Pattern {
            id: rule.id.clone(),
            source: e,
        };
        let pattern = Pattern::new(&rule.pattern).map_err(pat)?;
        let scope_root = rule
            .scope
            .root
            .as_deref()
            .map(Pattern::new)
            .transpose()
            .map_err(pat)?
            .filter(|p| !p.is_root());
        let scope_blacklist = compile_all(&rule.scope.blacklist).map_err(pat)?;
        Ok(RuleState {
            rule,
            pattern,
            scope_root,
            scope_blacklist,
            window: VecDeque::new(),
            hits: 0,
            in_scope_seen: 0,
            first_timestamp: None,
            streak: 0,
            streak_start: 0,
            last_fire: None,
            was_eligible: false,
        })
    }

    /// `Some(hit)` when the stack is in scope.
    fn classify(&self, stack: &ResolvedStack) -> Option<bool> {
        let names: Vec<&str> = stack.names().collect();
        let start = match &self.scope_root {
            Some(p) => names.iter().position(|n| p.matches(n))?,
            None => 0,
        };
        let scoped = &names[start..];
        if scoped.iter().any(|n| any_match(&self.scope_blacklist, n)) {
            return None;
        }
        Some(scoped.iter().any(|n| self.pattern.matches(n)))
    }

    fn push(&mut self, index: u64, timestamp: u64, hit: bool) -> bool {
        self.in_scope_seen += 1;
        self.first_timestamp.get_or_insert(timestamp);
        self.window.push_back(Slot { index, timestamp, hit });
        self.hits += hit as usize;
        match self.rule.window {
            Span::Samples(n) => {
                while self.window.len() as u64 > n {
                    let old = self.window.pop_front().unwrap();
                    self.hits -= old.hit as usize;
                }
                self.window.len() as u64 == n
            }
            Span::Duration(d) => {
                let span = d.as_nanos() as u64;
                while self
                    .window
                    .front()
                    .is_some_and(|s| timestamp.saturating_sub(s.timestamp) >= span)
                {
                    let old = self.window.pop_front().unwrap();
                    self.hits -= old.hit as usize;
                }
                timestamp.saturating_sub(self.first_timestamp.unwrap()) >= span
            }
        }
    }

    fn share(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.hits as f64 / self.window.len() as f64
        }
    }

    /// True once the violation has persisted across `sustain` windows.
    fn sustained(&self, timestamp: u64) -> bool {
        let extra = (self.rule.sustain - 1) as u64;
        match self.rule.window {
            Span::Samples(n) => self.streak > extra * n,
            Span::Duration(d) => timestamp.saturating_sub(self.streak_start) >= extra * d.as_nanos() as u64,
        }
    }

    fn cooldown_allows(&self, timestamp: u64) -> bool {
        let Some((seen, ts)) = self.last_fire else { return true };
        match self.rule.effective_cooldown() {
            Span::Samples(n) => self.in_scope_seen - seen >= n,
            Span::Duration(d) => timestamp.saturating_sub(ts) >= d.as_nanos() as u64,
        }
    }
}

pub struct Detector {
    rules: Vec<RuleState>,
    observed: u64,
    mode: ActionMode,
    process_group: Option<i32>,
    pending: Vec<(DetectorEvent, JoinHandle<ActionOutcome>)>,
}

impl Detector {
    pub fn new(rules: Vec<DetectorRule>) -> Result<Self, DetectorError> {
        Ok(Detector {
            rules: rules.into_iter().map(RuleState::new).collect::<Result<_, _>>()?,
            observed: 0,
            mode: ActionMode::Inline,
            process_group: None,
            pending: Vec::new(),
        })
    }

    pub fn with_mode(mut self, mode: ActionMode) -> Self {
        self.mode = mode;
        self
    }

    /// Process group that signal actions are delivered to.
    pub fn set_process_group(&mut self, pgid: Option<i32>) {
        self.process_group = pgid;
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    /// Feeds one stack to every rule. Inline actions have finished when this
    /// returns; detached ones come back as `Pending` and are reported again
    /// by [`take_completed`](Self::take_completed).
    pub fn observe(&mut self, stack: &ResolvedStack) -> Vec<DetectorEvent> {
        let index = self.observed;
        self.observed += 1;
        let mut events = Vec::new();
        for i in 0..self.rules.len() {
            let st = &mut self.rules[i];
            let Some(hit) = st.classify(stack) else { continue };
            let full = st.push(index, stack.timestamp, hit);
            let share = st.share();
            let violating = full && share > st.rule.threshold;
            if violating {
                if st.streak == 0 {
                    st.streak_start = stack.timestamp;
                }
                st.streak += 1;
            } else {
                st.streak = 0;
            }
            let eligible = violating && st.sustained(stack.timestamp);
            let new_episode = eligible && !st.was_eligible;
            st.was_eligible = eligible;
            if !eligible {
                continue;
            }
            let mut event = DetectorEvent {
                rule_id: st.rule.id.clone(),
                timestamp: stack.timestamp,
                share,
                window_first: st.window.front().map_or(index, |s| s.index),
                window_last: index,
                outcome: ActionOutcome::Pending,
            };
            if st.cooldown_allows(stack.timestamp) {
                st.last_fire = Some((st.in_scope_seen, stack.timestamp));
                let spec = st.rule.action.clone();
                match self.mode {
                    ActionMode::Inline => event.outcome = trigger_action(&spec, &event, self.process_group),
                    ActionMode::Detached => {
                        let ev = event.clone();
                        let pgid = self.process_group;
                        let handle = std::thread::spawn(move || trigger_action(&spec, &ev, pgid));
                        self.pending.push((event.clone(), handle));
                    }
                }
                events.push(event);
            } else if new_episode {
                event.outcome = ActionOutcome::SuppressedByCooldown;
                events.push(event);
            }
        }
        events
    }

    /// Detached actions that have finished since the last call.
    pub fn take_completed(&mut self) -> Vec<DetectorEvent> {
        let mut done = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].1.is_finished() {
                let (mut ev, h) = self.pending.swap_remove(i);
                ev.outcome = join_outcome(h);
                done.push(ev);
            } else {
                i += 1;
            }
        }
        done.sort_by_key(|e| e.window_last);
        done
    }

    /// Waits for every detached action.
    pub fn finish(&mut self) -> Vec<DetectorEvent> {
        let mut done: Vec<DetectorEvent> = self
            .pending
            .drain(..)
            .map(|(mut ev, h)| {
                ev.outcome = join_outcome(h);
                ev
            })
            .collect();
        done.sort_by_key(|e| e.window_last);
        done
    }

    /// Share currently measured by each rule, as `(id, share, window len)`.
    pub fn current_shares(&self) -> Vec<(&str, f64, usize)> {
        self.rules
            .iter()
            .map(|r| (r.rule.id.as_str(), r.share(), r.window.len()))
            .collect()
    }
}

fn join_outcome(h: JoinHandle<ActionOutcome>) -> ActionOutcome {
    h.join().unwrap_or_else(|_| ActionOutcome::Failed {
        reason: "action thread panicked".into(),
    })
}

impl Drop for Detector {
    fn drop(&mut self) {
        for (_, h) in self.pending.drain(..) {
            let _ = h.join();
        }
    }
}

/// Append-only events log, one JSON object per line, echoed to stderr.
pub struct EventLog {
    out: Option<BufWriter<File>>,
    echo: bool,
    written: u64,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(EventLog {
            out: Some(BufWriter::new(f)),
            echo: true,
            written: 0,
        })
    }

    /// A log that only echoes.
    pub fn stderr_only() -> Self {
        EventLog {
            out: None,
            echo: true,
            written: 0,
        }
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.echo = !quiet;
        self
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Records a final event; pending ones are skipped until they complete.
    pub fn record(&mut self, event: &DetectorEvent) -> std::io::Result<()> {
        if event.outcome == ActionOutcome::Pending {
            return Ok(());
        }
        if self.echo {
            eprintln!(
                "WARN rule {} share {:.4} at t={} (samples {}..{}): {}",
                event.rule_id,
                event.share,
                event.timestamp,
                event.window_first,
                event.window_last,
                describe(&event.outcome)
            );
        }
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, event)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        self.written += 1;
        Ok(())
    }
}

fn describe(o: &ActionOutcome) -> String {
    match o {
        ActionOutcome::Ran { status: Some(c) } => format!("action ran (exit {c})"),
        ActionOutcome::Ran { status: None } => "action ran".into(),
        ActionOutcome::Failed { reason } => format!("action failed: {reason}"),
        ActionOutcome::TimedOut { after_ms } => format!("action timed out after {after_ms} ms"),
        ActionOutcome::SuppressedByCooldown => "suppressed by cooldown".into(),
        ActionOutcome::Pending => "action pending".into(),
    }
}

/// Reads an events log back.
pub fn read_event_log(path: &Path) -> std::io::Result<Vec<DetectorEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}
