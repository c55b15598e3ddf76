//! Region tracer: scoped timers over named code regions, buffered in memory
//! and written out as CSV after the run.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 1 << 20;

const CSV_HEADER: &str = "region,step,corrector_iter,start_ns,duration_ns";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trace CSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Assembly,
    Solve,
    Predictor,
    Converge,
    StageIn,
    StageOut,
    IO,
    /// Fill-reducing ordering plus symbolic analysis inside the direct solver.
    Ordering,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::Assembly,
        Region::Solve,
        Region::Predictor,
        Region::Converge,
        Region::StageIn,
        Region::StageOut,
        Region::IO,
        Region::Ordering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Assembly => "Assembly",
            Region::Solve => "Solve",
            Region::Predictor => "Predictor",
            Region::Converge => "Converge",
            Region::StageIn => "StageIn",
            Region::StageOut => "StageOut",
            Region::IO => "IO",
            Region::Ordering => "Ordering",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown region '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub region: Region,
    pub step: u64,
    /// -1 outside the corrector loop.
    pub corrector_iter: i64,
    pub start_ns: u64,
    pub duration_ns: u64,
}

impl TraceEvent {
    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.duration_ns
    }
}

struct TracerInner {
    epoch: Instant,
    capacity: usize,
    buf: Mutex<VecDeque<TraceEvent>>,
    dropped: AtomicU64,
}

/// Cheap to clone; clones share one buffer. The default tracer is disabled
/// and records nothing.
#[derive(Clone, Default)]
pub struct Tracer {
    inner: Option<Arc<TracerInner>>,
}

impl fmt::Debug for Tracer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracer").field("enabled", &self.is_enabled()).finish()
    }
}

impl Tracer {
    pub fn disabled() -> Self {
        Self { inner: None }
    }

    /// Enabled tracer; once `capacity` events are buffered the oldest are dropped.
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            inner: Some(Arc::new(TracerInner {
                epoch: Instant::now(),
                capacity: capacity.max(1),
                buf: Mutex::new(VecDeque::new()),
                dropped: AtomicU64::new(0),
            })),
        }
    }

    pub fn enabled() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }

    pub fn is_enabled(&self) -> bool {
        self.inner.is_some()
    }

    /// Times `region` until the returned guard is dropped.
    pub fn scope(&self, region: Region, step: u64, corrector_iter: i64) -> RegionScope<'_> {
        RegionScope {
            inner: self.inner.as_deref(),
            region,
            step,
            corrector_iter,
            start: self.inner.as_ref().map(|_| Instant::now()),
        }
    }

    pub fn record(&self, event: TraceEvent) {
        if let Some(inner) = &self.inner {
            inner.push(event);
        }
    }

    /// Snapshot of the buffered events in insertion order.
    pub fn events(&self) -> Vec<TraceEvent> {
        match &self.inner {
            Some(inner) => inner.buf.lock().unwrap().iter().copied().collect(),
            None => Vec::new(),
        }
    }

    pub fn dropped(&self) -> u64 {
        self.inner
            .as_ref()
            .map_or(0, |i| i.dropped.load(AtomicOrdering::Relaxed))
    }

    pub fn count(&self, region: Region) -> usize {
        match &self.inner {
            Some(inner) => inner.buf.lock().unwrap().iter().filter(|e| e.region == region).count(),
            None => 0,
        }
    }
}

impl TracerInner {
    fn push(&self, event: TraceEvent) {
        let mut buf = self.buf.lock().unwrap();
        if buf.len() == self.capacity {
            buf.pop_front();
            self.dropped.fetch_add(1, AtomicOrdering::Relaxed);
        }
        buf.push_back(event);
    }
}

#[must_use = "the region is timed until this guard is dropped"]
pub struct RegionScope<'a> {
    inner: Option<&'a TracerInner>,
    region: Region,
    step: u64,
    corrector_iter: i64,
    start: Option<Instant>,
}

impl Drop for RegionScope<'_> {
    fn drop(&mut self) {
        if let (Some(inner), Some(start)) = (self.inner, self.start) {
            let end = Instant::now();
            inner.push(TraceEvent {
                region: self.region,
                step: self.step,
                corrector_iter: self.corrector_iter,
                start_ns: start.duration_since(inner.epoch).as_nanos() as u64,
                duration_ns: end.duration_since(start).as_nanos() as u64,
            });
        }
    }
}

/// Writes events sorted by start time.
pub fn write_trace_csv(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<(), TraceError> {
    std::fs::write(path, trace_csv(events))?;
    Ok(())
}

pub fn trace_csv(events: &[TraceEvent]) -> String {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| e.start_ns);
    let mut out = String::with_capacity(48 * (sorted.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.region, e.step, e.corrector_iter, e.start_ns, e.duration_ns
        ));
    }
    out
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace_csv(&std::fs::read_to_string(path)?)
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(TraceError::Parse {
                line: 1,
                msg: format!("expected header '{CSV_HEADER}'"),
            })
        }
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        events.push(TraceEvent {
            region: f[0].parse().map_err(err)?,
            step: f[1].parse().map_err(|e| err(format!("step: {e}")))?,
            corrector_iter: f[2].parse().map_err(|e| err(format!("corrector_iter: {e}")))?,
            start_ns: f[3].parse().map_err(|e| err(format!("start_ns: {e}")))?,
            duration_ns: f[4].parse().map_err(|e| err(format!("duration_ns: {e}")))?,
        });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub region: Region,
    pub count: usize,
    pub total_ns: u64,
    /// total_ns / count
    pub mean_ns: f64,
    /// Distinct steps in which the region occurred.
    pub steps: usize,
    /// total_ns / steps
    pub mean_per_step_ns: f64,
}

/// Per-region totals and means, in [`Region::ALL`] order; absent regions are skipped.
pub fn summarize(events: &[TraceEvent]) -> Vec<RegionSummary> {
    let mut acc: BTreeMap<Region, (usize, u64, std::collections::BTreeSet<u64>)> = BTreeMap::new();
    for e in events {
        let entry = acc.entry(e.region).or_default();
        entry.0 += 1;
        entry.1 += e.duration_ns;
        entry.2.insert(e.step);
    }
    acc.into_iter()
        .map(|(region, (count, total_ns, steps))| RegionSummary {
            region,
            count,
            total_ns,
            mean_ns: total_ns as f64 / count as f64,
            steps: steps.len(),
            mean_per_step_ns: total_ns as f64 / steps.len() as f64,
        })
        .collect()
}
