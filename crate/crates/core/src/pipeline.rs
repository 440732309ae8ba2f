//! Ingestion: batches of raw samples → resolved stacks → tree + detector.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::analyzer::{compose, AnalyzeError, ViewSpec};
use crate::calltree::{CallTree, TreeMetadata};
use crate::detector::{ActionMode, ActionOutcome, Detector, DetectorError, DetectorEvent, DetectorRule, EventLog};
use crate::parallel::{build_tree, resolve_batch};
use crate::reporter::{self, ReportError};
use crate::source::{self, Batch, SampleSession, SourceConfig, SourceError, SourceStats};
use crate::symbolizer::Symbolizer;

/// Owns everything downstream of the sample source.
pub struct Pipeline {
    symbolizer: Symbolizer,
    tree: CallTree,
    detector: Option<Detector>,
    log: EventLog,
    events: Vec<DetectorEvent>,
    log_error: Option<std::io::Error>,
}

impl Pipeline {
    pub fn new(symbolizer: Symbolizer, metadata: TreeMetadata) -> Self {
        Pipeline {
            symbolizer,
            tree: CallTree::with_metadata(metadata),
            detector: None,
            log: EventLog::stderr_only(),
            events: Vec::new(),
            log_error: None,
        }
    }

    pub fn with_detector(mut self, detector: Detector, log: EventLog) -> Self {
        if !detector.is_empty() {
            self.detector = Some(detector);
        }
        self.log = log;
        self
    }

    pub fn symbolizer(&self) -> &Symbolizer {
        &self.symbolizer
    }

    pub fn tree(&self) -> &CallTree {
        &self.tree
    }

    pub fn process(&mut self, batch: Batch) {
        for ev in &batch.mmap_events {
            self.symbolizer.remap_hint(ev);
        }
        if !batch.samples.is_empty() {
            let mut samples = batch.samples;
            // rings are per cpu; the detector wants time order
            samples.sort_by_key(|s| s.timestamp);
            let snap = self.symbolizer.prepare(&samples);
            let stacks = resolve_batch(&samples, &snap);
            self.tree.merge_from(&build_tree(&stacks));
            if let Some(det) = &mut self.detector {
                let fired: Vec<DetectorEvent> = stacks.iter().flat_map(|s| det.observe(s)).collect();
                for e in fired {
                    self.record(e);
                }
            }
        }
        self.collect_completed();
    }

    fn collect_completed(&mut self) {
        if let Some(det) = &mut self.detector {
            for e in det.take_completed() {
                self.record(e);
            }
        }
    }

    fn record(&mut self, e: DetectorEvent) {
        if e.outcome == ActionOutcome::Pending {
            return;
        }
        if let Err(err) = self.log.record(&e) {
            self.log_error.get_or_insert(err);
        }
        self.events.push(e);
    }

    /// Waits for outstanding actions and returns the normalized tree and all
    /// final events.
    pub fn finish(mut self) -> (CallTree, Vec<DetectorEvent>) {
        self.symbolizer.close();
        if let Some(det) = &mut self.detector {
            for e in det.finish() {
                self.record(e);
            }
        }
        if let Some(e) = &self.log_error {
            log::warn!("events log incomplete: {e}");
        }
        (self.tree.snapshot(), self.events)
    }
}

/// Polls `session` into `pipeline` until it drains or `stop` returns true,
/// then drains once more.
pub fn drive(
    session: &mut SampleSession,
    pipeline: &mut Pipeline,
    mut stop: impl FnMut() -> bool,
) -> Result<(), SourceError> {
    let interval = session.config().poll_interval;
    loop {
        let batch = session.poll()?;
        let empty = batch.samples.is_empty();
        pipeline.process(batch);
        if session.is_drained() {
            return Ok(());
        }
        if stop() {
            let batch = session.poll()?;
            pipeline.process(batch);
            return Ok(());
        }
        if empty {
            std::thread::sleep(interval);
        }
    }
}

/// Where a session's artifacts go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub tree_json: PathBuf,
    pub html: PathBuf,
    pub events: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            tree_json: dir.join("tree.json"),
            html: dir.join("report.html"),
            events: dir.join("events.jsonl"),
            csv: dir.join("breakdown.csv"),
            svg: dir.join("breakdown.svg"),
        }
    }
}

/// Files actually written.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Artifacts {
    pub tree_json: Option<PathBuf>,
    pub html: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Views exported next to the tree; the first one feeds the CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewSet {
    pub primary: ViewSpec,
    pub named: Vec<(String, ViewSpec)>,
}

/// Writes the tree JSON, HTML report, CSV of the primary view and the SVG
/// of all views. Views that match nothing are skipped with a warning so a
/// short run still leaves its tree behind.
pub fn emit_artifacts(tree: &CallTree, views: &ViewSet, paths: &OutputPaths) -> Result<Artifacts, PipelineError> {
    for p in [&paths.tree_json, &paths.html, &paths.csv, &paths.svg] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
        }
    }
    let mut out = Artifacts::default();
    reporter::export_json(tree, &paths.tree_json)?;
    out.tree_json = Some(paths.tree_json.clone());
    reporter::export_html(tree, &paths.html)?;
    out.html = Some(paths.html.clone());
    match compose(&views.primary, tree) {
        Ok(v) => {
            reporter::export_csv(&v.rows, &paths.csv)?;
            out.csv = Some(paths.csv.clone());
        }
        Err(e @ AnalyzeError::NoMatch(_)) => log::warn!("breakdown skipped: {e}"),
        Err(e) => return Err(e.into()),
    }
    let mut groups = Vec::new();
    for (name, spec) in std::iter::once(("view", &views.primary)).chain(views.named.iter().map(|(n, s)| (n.as_str(), s))) {
        match compose(spec, tree) {
            Ok(v) => groups.push((name.to_string(), v.rows)),
            Err(e @ AnalyzeError::NoMatch(_)) => log::warn!("view {name} skipped: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    if !groups.is_empty() {
        reporter::export_svg_breakdown(&groups, &paths.svg)?;
        out.svg = Some(paths.svg.clone());
    }
    Ok(out)
}

/// Options for running a session's detector.
#[derive(Debug, Clone, Default)]
pub struct DetectorSetup {
    pub rules: Vec<DetectorRule>,
    pub events_path: Option<PathBuf>,
    pub mode: ActionMode,
    pub process_group: Option<i32>,
    pub quiet: bool,
}

impl DetectorSetup {
    pub fn build(&self) -> Result<Option<(Detector, EventLog)>, PipelineError> {
        if self.rules.is_empty() {
            return Ok(None);
        }
        let mut det = Detector::new(self.rules.clone())?.with_mode(self.mode);
        det.set_process_group(self.process_group);
        let log = match &self.events_path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    let _ = std::fs::create_dir_all(dir);
                }
                EventLog::open(p).map_err(|e| PipelineError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?
            }
            None => EventLog::stderr_only(),
        };
        Ok(Some((det, log.quiet(self.quiet))))
    }
}

/// Result of replaying a folded trace.
#[derive(Debug)]
pub struct ReplayOutcome {
    pub tree: CallTree,
    pub events: Vec<DetectorEvent>,
    pub stats: SourceStats,
}

/// Runs the whole pipeline over a folded-stack file. Actions run inline so
/// the outcome is deterministic.
pub fn replay_file(path: &Path, period: Duration, detector: &DetectorSetup) -> Result<ReplayOutcome, PipelineError> {
    let mut cfg = SourceConfig::replay(path);
    cfg.period = period;
    let mut session = source::open(&cfg)?;
    let names = session.replay_names().expect("replay sessions carry names");
    let metadata = TreeMetadata {
        target: path.display().to_string(),
        source_mode: "replay".into(),
        period_ns: period.as_nanos() as u64,
        ..Default::default()
    };
    let mut pipeline = Pipeline::new(Symbolizer::for_replay(names), metadata);
    let setup = DetectorSetup {
        mode: ActionMode::Inline,
        ..detector.clone()
    };
    if let Some((det, log)) = setup.build()? {
        pipeline = pipeline.with_detector(det, log);
    }
    drive(&mut session, &mut pipeline, || false)?;
    let stats = session.close();
    let (tree, events) = pipeline.finish();
    Ok(ReplayOutcome { tree, events, stats })
}
