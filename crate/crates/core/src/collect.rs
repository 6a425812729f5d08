//! Profile producers: raw entry/exit trace import, a whole-process time
//! wrapper, and generators of gradually scaled workloads.
//!
//! Raw trace format (`.trace`): one event per line,
//! `E <uid> <thread_id> <timestamp_us>` for an entry and
//! `X <uid> <thread_id> <timestamp_us>` for an exit. Lines starting with `#`
//! and blank lines are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{merge_repetitions, CollectionHeader, Profile, ProfileError, ResourceKind, ResourceRecord};
use crate::runner::{run_shell, RunOutcome};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: exit of {uid} on thread {thread} does not match the innermost open call{open}")]
    UnmatchedExit {
        line: usize,
        uid: String,
        thread: u64,
        open: String,
    },
    #[error("end of trace with unmatched entries: {}", .dangling.join(", "))]
    DanglingEntries { dangling: Vec<String> },
    #[error("line {line}: timestamp {timestamp} on thread {thread} precedes {previous}")]
    TimestampRegression {
        line: usize,
        thread: u64,
        timestamp: u64,
        previous: u64,
    },
    #[error("command {command:?} failed ({status}): {stderr}")]
    CommandFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("{timed_out} of {runs} runs of {command:?} exceeded the {limit:?} timeout")]
    TooManyTimeouts {
        command: String,
        timed_out: usize,
        runs: usize,
        limit: Duration,
    },
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Entry,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTraceEvent {
    pub kind: EventKind,
    pub uid: String,
    pub thread_id: u64,
    pub timestamp_us: u64,
}

impl RawTraceEvent {
    pub fn entry(uid: &str, thread_id: u64, timestamp_us: u64) -> Self {
        Self {
            kind: EventKind::Entry,
            uid: uid.to_string(),
            thread_id,
            timestamp_us,
        }
    }

    pub fn exit(uid: &str, thread_id: u64, timestamp_us: u64) -> Self {
        Self {
            kind: EventKind::Exit,
            ..Self::entry(uid, thread_id, timestamp_us)
        }
    }

    /// The event's line in the raw trace format, without newline.
    pub fn to_line(&self) -> String {
        let tag = match self.kind {
            EventKind::Entry => 'E',
            EventKind::Exit => 'X',
        };
        format!("{tag} {} {} {}", self.uid, self.thread_id, self.timestamp_us)
    }
}

/// Parses raw trace text into events paired with their 1-based line numbers.
pub fn parse_trace(text: &str) -> Result<Vec<(usize, RawTraceEvent)>, CollectError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split(' ').collect();
        let syntax = |reason: &str| CollectError::Syntax {
            line,
            reason: reason.to_string(),
        };
        let [tag, uid, thread, ts] = fields[..] else {
            return Err(syntax("expected `E|X <uid> <thread_id> <timestamp_us>`"));
        };
        let kind = match tag {
            "E" => EventKind::Entry,
            "X" => EventKind::Exit,
            _ => return Err(syntax("event tag must be E or X")),
        };
        if uid.is_empty() {
            return Err(syntax("empty uid"));
        }
        let thread_id = thread.parse().map_err(|_| syntax("thread_id is not a nonnegative integer"))?;
        let timestamp_us = ts.parse().map_err(|_| syntax("timestamp is not a nonnegative integer"))?;
        events.push((
            line,
            RawTraceEvent {
                kind,
                uid: uid.to_string(),
                thread_id,
                timestamp_us,
            },
        ));
    }
    Ok(events)
}

/// Renders events in the raw trace format.
pub fn render_trace(events: &[RawTraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", e.to_line());
    }
    out
}

struct Frame {
    uid: String,
    start: u64,
    child_inclusive: u64,
}

#[derive(Default)]
struct UidTotals {
    inclusive: u64,
    exclusive: u64,
    calls: u64,
    trace: Option<Vec<String>>,
}

/// Aggregates entry/exit events into inclusive and exclusive times per uid.
///
/// Each frame's exclusive time is its duration minus the durations of the
/// frames directly nested in it, including same-uid recursive frames. Totals
/// are summed over frames and threads. The trace of a uid is the caller stack
/// of its first occurrence.
pub fn import_trace_with_header<I>(events: I, mut header: CollectionHeader) -> Result<Profile, CollectError>
where
    I: IntoIterator<Item = (usize, RawTraceEvent)>,
{
    let mut stacks: HashMap<u64, Vec<Frame>> = HashMap::new();
    let mut last_ts: HashMap<u64, u64> = HashMap::new();
    let mut totals: BTreeMap<String, UidTotals> = BTreeMap::new();

    for (line, ev) in events {
        let prev = last_ts.entry(ev.thread_id).or_insert(ev.timestamp_us);
        if ev.timestamp_us < *prev {
            return Err(CollectError::TimestampRegression {
                line,
                thread: ev.thread_id,
                timestamp: ev.timestamp_us,
                previous: *prev,
            });
        }
        *prev = ev.timestamp_us;
        let stack = stacks.entry(ev.thread_id).or_default();
        match ev.kind {
            EventKind::Entry => {
                let t = totals.entry(ev.uid.clone()).or_default();
                if t.trace.is_none() {
                    t.trace = Some(stack.iter().map(|f| f.uid.clone()).collect());
                }
                stack.push(Frame {
                    uid: ev.uid,
                    start: ev.timestamp_us,
                    child_inclusive: 0,
                });
            }
            EventKind::Exit => {
                if stack.last().map(|f| &f.uid) != Some(&ev.uid) {
                    return Err(CollectError::UnmatchedExit {
                        line,
                        open: stack
                            .last()
                            .map(|f| format!(" ({})", f.uid))
                            .unwrap_or_default(),
                        uid: ev.uid,
                        thread: ev.thread_id,
                    });
                }
                let frame = stack.pop().expect("checked above");
                let inclusive = ev.timestamp_us - frame.start;
                let t = totals.get_mut(&frame.uid).expect("entry recorded the uid");
                t.inclusive += inclusive;
                t.exclusive += inclusive.saturating_sub(frame.child_inclusive);
                t.calls += 1;
                if let Some(parent) = stack.last_mut() {
                    parent.child_inclusive += inclusive;
                }
            }
        }
    }

    let mut dangling: Vec<String> = stacks
        .iter()
        .flat_map(|(tid, s)| s.iter().map(move |f| format!("{}@thread{tid}", f.uid)))
        .collect();
    if !dangling.is_empty() {
        dangling.sort();
        return Err(CollectError::DanglingEntries { dangling });
    }

    header.collector_id = "trace-import".to_string();
    let mut resources = Vec::with_capacity(totals.len() * 2);
    for (uid, t) in totals {
        for (kind, amount) in [
            (ResourceKind::Exclusive, t.exclusive),
            (ResourceKind::Inclusive, t.inclusive),
        ] {
            resources.push(ResourceRecord {
                uid: uid.clone(),
                amount_us: amount as f64,
                kind,
                call_count: t.calls,
                workload_size: None,
                trace: t.trace.clone(),
            });
        }
    }
    let profile = Profile::new(header, resources);
    profile.validate()?;
    Ok(profile)
}

/// Imports a trace under a fresh `trace-import` header.
pub fn import_trace<I>(events: I, command: &str, workload_size: Option<u64>) -> Result<Profile, CollectError>
where
    I: IntoIterator<Item = RawTraceEvent>,
{
    let mut header = CollectionHeader::new("trace-import", command);
    header.workload_size = workload_size;
    import_trace_with_header(
        events.into_iter().enumerate().map(|(i, e)| (i + 1, e)),
        header,
    )
}

/// Parses and imports trace text; errors carry source line numbers.
pub fn import_trace_text(text: &str, command: &str, workload_size: Option<u64>) -> Result<Profile, CollectError> {
    let mut header = CollectionHeader::new("trace-import", command);
    header.workload_size = workload_size;
    import_trace_with_header(parse_trace(text)?, header)
}

/// Combines single-size profiles into one multi-size profile: every record is
/// stamped with its source profile's workload size and the header's size is
/// cleared.
pub fn combine_sized(profiles: Vec<Profile>) -> Result<Profile, CollectError> {
    let mut iter = profiles.into_iter();
    let Some(first) = iter.next() else {
        return Err(CollectError::InvalidSpec("no profiles to combine".into()));
    };
    let mut header = first.header.clone();
    header.workload_size = None;
    let mut resources = Vec::new();
    let mut notes = Vec::new();
    for p in std::iter::once(first).chain(iter) {
        notes.extend(p.notes.iter().cloned());
        for mut r in p.resources {
            r.workload_size = r.workload_size.or(p.header.workload_size);
            resources.push(r);
        }
    }
    let mut out = Profile::new(header, resources);
    out.notes = notes;
    out.validate()?;
    Ok(out)
}

/// Options of the whole-process time wrapper.
#[derive(Debug, Clone)]
pub struct TimeWrapperOptions {
    pub repetitions: u32,
    pub warmups: u32,
    pub timeout: Option<Duration>,
    pub workload_label: String,
    pub workload_size: Option<u64>,
}

impl Default for TimeWrapperOptions {
    fn default() -> Self {
        Self {
            repetitions: 1,
            warmups: 0,
            timeout: None,
            workload_label: "default".into(),
            workload_size: None,
        }
    }
}

/// Runs `command` `warmups + repetitions` times, strictly sequentially, and
/// merges the wall-clock duration of the measured runs.
pub fn time_wrapper_collect(command: &str, opts: &TimeWrapperOptions) -> Result<Profile, CollectError> {
    if opts.repetitions == 0 {
        return Err(CollectError::InvalidSpec("repetitions must be positive".into()));
    }
    let io = |source| CollectError::Io {
        path: PathBuf::from(command),
        source,
    };
    let mut header = CollectionHeader::new("time-wrapper", command);
    header.workload_label = opts.workload_label.clone();
    header.workload_size = opts.workload_size;

    let mut measured = Vec::new();
    let mut timed_out = 0usize;
    for run in 0..(opts.warmups + opts.repetitions) {
        let warmup = run < opts.warmups;
        match run_shell(command, opts.timeout, false).map_err(io)? {
            RunOutcome::TimedOut { .. } => {
                if !warmup {
                    timed_out += 1;
                }
            }
            RunOutcome::Finished {
                elapsed,
                status,
                stderr,
                ..
            } => {
                if !status.success() {
                    return Err(CollectError::CommandFailed {
                        command: command.to_string(),
                        status: status.to_string(),
                        stderr: stderr.trim_end().to_string(),
                    });
                }
                if !warmup {
                    let record = ResourceRecord::new(command, ResourceKind::Inclusive, elapsed.as_micros() as f64);
                    measured.push(Profile::new(header.clone(), vec![record]));
                }
            }
        }
    }
    let runs = opts.repetitions as usize;
    if timed_out * 2 > runs || measured.is_empty() {
        return Err(CollectError::TooManyTimeouts {
            command: command.to_string(),
            timed_out,
            runs,
            limit: opts.timeout.unwrap_or_default(),
        });
    }
    let mut merged = merge_repetitions(&measured)?;
    if timed_out > 0 {
        merged
            .notes
            .push(format!("time-wrapper: {timed_out} of {runs} runs timed out and were discarded"));
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadGenerator {
    RepeatedLine,
    RandomWords,
    IntegerSequence,
}

impl std::str::FromStr for WorkloadGenerator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "repeated_line" => Ok(Self::RepeatedLine),
            "random_words" => Ok(Self::RandomWords),
            "integer_sequence" => Ok(Self::IntegerSequence),
            _ => Err(format!("unknown generator {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledWorkloadSpec {
    pub generator: WorkloadGenerator,
    /// Bytes for the text generators, item count for `integer_sequence`.
    pub sizes: Vec<u64>,
    pub seed: u64,
}

const REPEATED_LINE: &str = "the quick brown fox jumps over the lazy dog\n";
const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

/// Content of one generated workload. Deterministic in (generator, size, seed).
pub fn scaled_workload(generator: WorkloadGenerator, size: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ size.rotate_left(32));
    let size = size as usize;
    match generator {
        WorkloadGenerator::RepeatedLine => REPEATED_LINE.bytes().cycle().take(size).collect(),
        WorkloadGenerator::RandomWords => {
            let mut out = Vec::with_capacity(size + 16);
            let mut on_line = 0;
            while out.len() < size {
                let w = WORDS[(rng.next_u64() % WORDS.len() as u64) as usize];
                out.extend_from_slice(w.as_bytes());
                on_line += 1;
                out.push(if on_line % 12 == 0 { b'\n' } else { b' ' });
            }
            out.truncate(size);
            out
        }
        WorkloadGenerator::IntegerSequence => {
            let mut out = String::new();
            for _ in 0..size {
                let _ = writeln!(out, "{}", rng.next_u64() % 1_000_000);
            }
            out.into_bytes()
        }
    }
}

/// Writes one file per requested size into `out_dir`, returning the paths in
/// size order.
pub fn generate_scaled_workloads(spec: &ScaledWorkloadSpec, out_dir: &Path) -> Result<Vec<PathBuf>, CollectError> {
    if spec.sizes.is_empty() {
        return Err(CollectError::InvalidSpec("sizes must be nonempty".into()));
    }
    if spec.sizes.windows(2).any(|w| w[0] >= w[1]) || spec.sizes[0] == 0 {
        return Err(CollectError::InvalidSpec(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|source| CollectError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let tag = match spec.generator {
        WorkloadGenerator::RepeatedLine => "repeated_line",
        WorkloadGenerator::RandomWords => "random_words",
        WorkloadGenerator::IntegerSequence => "integer_sequence",
    };
    spec.sizes
        .iter()
        .map(|&size| {
            let path = out_dir.join(format!("{tag}-{size:08}.txt"));
            fs::write(&path, scaled_workload(spec.generator, size, spec.seed))
                .map_err(|source| CollectError::Io {
                    path: path.clone(),
                    source,
                })?;
            Ok(path)
        })
        .collect()
}
