//! Bundled programs to profile and fuzz: a naive backtracking regex matcher
//! and a word-frequency counter over an open-addressing hash table.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collect::RawTraceEvent;

/// Java class-name validation pattern whose nested quantifiers backtrack
/// exponentially on near misses.
pub const CLASSNAME_PATTERN: &str = "^(([a-z])+.)+[A-Z]([a-z])+$";

/// A 19-byte input the pattern accepts quickly.
pub const REGEX_SEED: &str = "com.example.Widget\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern ends inside a group or class at byte {0}")]
    Unterminated(usize),
    #[error("unexpected {found:?} at byte {at}")]
    Unexpected { found: char, at: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Literal(char),
    Any,
    Class(Vec<(char, char)>),
    Group(Vec<Node>),
    Repeat { node: Box<Node>, min: usize, max: Option<usize> },
    Start,
    End,
}

/// A compiled pattern supporting literals, `.`, `[a-z]` classes, groups,
/// the quantifiers `* + ?` and the anchors `^ $`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    nodes: Vec<Node>,
}

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        let mut pos = 0;
        let nodes = parse_seq(&chars, &mut pos, false)?;
        Ok(Pattern { nodes })
    }
}

fn parse_seq(chars: &[char], pos: &mut usize, in_group: bool) -> Result<Vec<Node>, PatternError> {
    let mut nodes = Vec::new();
    while *pos < chars.len() {
        let c = chars[*pos];
        *pos += 1;
        let atom = match c {
            ')' if in_group => return Ok(nodes),
            '(' => {
                let inner = parse_seq(chars, pos, true)?;
                if chars.get(*pos - 1) != Some(&')') {
                    return Err(PatternError::Unterminated(*pos));
                }
                Node::Group(inner)
            }
            '[' => {
                let mut ranges = Vec::new();
                loop {
                    let lo = *chars.get(*pos).ok_or(PatternError::Unterminated(*pos))?;
                    *pos += 1;
                    if lo == ']' {
                        break;
                    }
                    if chars.get(*pos) == Some(&'-') && chars.get(*pos + 1).is_some_and(|c| *c != ']') {
                        ranges.push((lo, chars[*pos + 1]));
                        *pos += 2;
                    } else {
                        ranges.push((lo, lo));
                    }
                }
                Node::Class(ranges)
            }
            '.' => Node::Any,
            '^' => Node::Start,
            '$' => Node::End,
            '\\' => {
                let e = *chars.get(*pos).ok_or(PatternError::Unterminated(*pos))?;
                *pos += 1;
                Node::Literal(e)
            }
            '*' | '+' | '?' | ')' => {
                return Err(PatternError::Unexpected {
                    found: c,
                    at: *pos - 1,
                })
            }
            other => Node::Literal(other),
        };
        let atom = match chars.get(*pos) {
            Some(q @ ('*' | '+' | '?')) => {
                *pos += 1;
                let (min, max) = match q {
                    '*' => (0, None),
                    '+' => (1, None),
                    _ => (0, Some(1)),
                };
                Node::Repeat {
                    node: Box::new(atom),
                    min,
                    max,
                }
            }
            _ => atom,
        };
        nodes.push(atom);
    }
    if in_group {
        return Err(PatternError::Unterminated(*pos));
    }
    Ok(nodes)
}

struct Matcher<'a> {
    input: &'a [char],
    steps: Cell<u64>,
}

type Cont<'k> = &'k mut dyn FnMut(usize) -> bool;

impl Matcher<'_> {
    fn seq(&self, nodes: &[Node], pos: usize, k: Cont) -> bool {
        match nodes.split_first() {
            None => k(pos),
            Some((first, rest)) => self.node(first, pos, &mut |p| self.seq(rest, p, k)),
        }
    }

    fn node(&self, node: &Node, pos: usize, k: Cont) -> bool {
        self.steps.set(self.steps.get() + 1);
        let here = self.input.get(pos).copied();
        match node {
            Node::Literal(c) => here == Some(*c) && k(pos + 1),
            Node::Any => here.is_some_and(|c| c != '\n') && k(pos + 1),
            Node::Class(ranges) => here.is_some_and(|c| ranges.iter().any(|(lo, hi)| (*lo..=*hi).contains(&c))) && k(pos + 1),
            Node::Group(inner) => self.seq(inner, pos, k),
            Node::Start => pos == 0 && k(pos),
            Node::End => pos == self.input.len() && k(pos),
            Node::Repeat { node, min, max } => self.repeat(node, *min, *max, 0, pos, k),
        }
    }

    /// Greedy repetition: one more iteration first, then the continuation.
    fn repeat(&self, node: &Node, min: usize, max: Option<usize>, count: usize, pos: usize, k: Cont) -> bool {
        if max.is_none_or(|m| count < m)
            && self.node(node, pos, &mut |p| {
                // An empty iteration past the minimum cannot make progress.
                (p != pos || count < min) && self.repeat(node, min, max, count + 1, p, k)
            })
        {
            return true;
        }
        count >= min && k(pos)
    }
}

impl Pattern {
    /// Whether the pattern matches somewhere in `text`, with the number of
    /// matcher steps taken.
    pub fn find(&self, text: &str) -> (bool, u64) {
        let input: Vec<char> = text.chars().collect();
        let m = Matcher {
            input: &input,
            steps: Cell::new(0),
        };
        let anchored = matches!(self.nodes.first(), Some(Node::Start));
        let last = if anchored { 0 } else { input.len() };
        let found = (0..=last).any(|start| m.seq(&self.nodes, start, &mut |_| true));
        (found, m.steps.get())
    }
}

/// Result of running the regex subject over a workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegexRun {
    pub lines: usize,
    pub matched: usize,
    pub steps: u64,
    /// Steps spent on the most expensive line.
    pub max_line_steps: u64,
}

impl fmt::Display for RegexRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lines: {}\nmatched: {}", self.lines, self.matched)
    }
}

/// Matches every line of `text` against the class-name pattern.
pub fn run_regex_subject(text: &str) -> RegexRun {
    let pattern: Pattern = CLASSNAME_PATTERN.parse().expect("built-in pattern parses");
    let mut run = RegexRun::default();
    for line in text.lines() {
        let (ok, steps) = pattern.find(line);
        run.lines += 1;
        run.matched += ok as usize;
        run.steps += steps;
        run.max_line_steps = run.max_line_steps.max(steps);
    }
    run
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashKind {
    /// At most 8 evenly spaced characters, in the style of early Java
    /// `String.hashCode`.
    Sampled,
    Djb,
}

impl FromStr for HashKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sampled" => Ok(HashKind::Sampled),
            "djb" => Ok(HashKind::Djb),
            other => Err(format!("unknown hash {other:?} (expected sampled or djb)")),
        }
    }
}

impl HashKind {
    pub fn hash(self, word: &[u8]) -> u32 {
        match self {
            HashKind::Djb => word.iter().fold(5381u32, |h, &b| h.wrapping_mul(33).wrapping_add(b as u32)),
            HashKind::Sampled => {
                let step = (word.len() / 8).max(1);
                word.iter()
                    .step_by(step)
                    .take(8)
                    .fold(0u32, |h, &b| h.wrapping_mul(37).wrapping_add(b as u32))
            }
        }
    }
}

pub const DEFAULT_BUCKETS: usize = 4096;

const UID_RUN: &str = "wordfreq::run";
const UID_INSERT: &str = "wordfreq::insert";
const UID_LOOKUP: &str = "wordfreq::lookup";
const UID_RESIZE: &str = "wordfreq::resize";

struct Tracer {
    start: Instant,
    events: Option<Vec<RawTraceEvent>>,
}

impl Tracer {
    fn now(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }

    fn enter(&mut self, uid: &str) {
        let t = self.now();
        if let Some(ev) = &mut self.events {
            ev.push(RawTraceEvent::entry(uid, 0, t));
        }
    }

    fn exit(&mut self, uid: &str) {
        let t = self.now();
        if let Some(ev) = &mut self.events {
            ev.push(RawTraceEvent::exit(uid, 0, t));
        }
    }
}

struct Table {
    slots: Vec<Option<(Vec<u8>, u64)>>,
    len: usize,
    hash: HashKind,
    probes: u64,
    resizes: u64,
}

impl Table {
    fn lookup(&mut self, word: &[u8], tracer: &mut Tracer) -> Option<usize> {
        tracer.enter(UID_LOOKUP);
        let n = self.slots.len();
        let mut i = self.hash.hash(word) as usize % n;
        let mut found = None;
        for _ in 0..n {
            self.probes += 1;
            match &self.slots[i] {
                Some((w, _)) if w.as_slice() != word => i = (i + 1) % n,
                _ => {
                    found = Some(i);
                    break;
                }
            }
        }
        tracer.exit(UID_LOOKUP);
        found
    }

    fn insert(&mut self, word: &[u8], tracer: &mut Tracer) {
        tracer.enter(UID_INSERT);
        let slot = match self.lookup(word, tracer) {
            Some(i) => i,
            None => {
                self.resize(tracer);
                self.lookup(word, tracer).expect("resized table has room")
            }
        };
        match &mut self.slots[slot] {
            Some((_, count)) => *count += 1,
            empty => {
                *empty = Some((word.to_vec(), 1));
                self.len += 1;
            }
        }
        tracer.exit(UID_INSERT);
    }

    fn resize(&mut self, tracer: &mut Tracer) {
        tracer.enter(UID_RESIZE);
        self.resizes += 1;
        let doubled = vec![None; self.slots.len() * 2];
        let old = std::mem::replace(&mut self.slots, doubled);
        let n = self.slots.len();
        for (w, c) in old.into_iter().flatten() {
            let mut i = self.hash.hash(&w) as usize % n;
            while self.slots[i].is_some() {
                self.probes += 1;
                i = (i + 1) % n;
            }
            self.slots[i] = Some((w, c));
        }
        tracer.exit(UID_RESIZE);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordfreqRun {
    pub total_words: u64,
    pub distinct_words: usize,
    pub probes: u64,
    pub resizes: u64,
    /// The most frequent words, ties broken alphabetically.
    pub top: Vec<(String, u64)>,
    pub trace: Vec<RawTraceEvent>,
}

impl fmt::Display for WordfreqRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "words: {}\ndistinct: {}\nprobes: {}\nresizes: {}",
            self.total_words, self.distinct_words, self.probes, self.resizes
        )?;
        for (w, c) in &self.top {
            write!(f, "\n{c} {w}")?;
        }
        Ok(())
    }
}

/// Counts whitespace-separated words of `text`.
pub fn run_wordfreq(text: &str, hash: HashKind, buckets: usize, trace: bool) -> WordfreqRun {
    let mut tracer = Tracer {
        start: Instant::now(),
        events: trace.then(Vec::new),
    };
    tracer.enter(UID_RUN);
    let mut table = Table {
        slots: vec![None; buckets.max(1)],
        len: 0,
        hash,
        probes: 0,
        resizes: 0,
    };
    let mut total = 0;
    for word in text.split_ascii_whitespace() {
        table.insert(word.as_bytes(), &mut tracer);
        total += 1;
    }
    tracer.exit(UID_RUN);

    let mut counts: Vec<(String, u64)> = table
        .slots
        .iter()
        .flatten()
        .map(|(w, c)| (String::from_utf8_lossy(w).into_owned(), *c))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts.truncate(10);
    WordfreqRun {
        total_words: total,
        distinct_words: table.len,
        probes: table.probes,
        resizes: table.resizes,
        top: counts,
        trace: tracer.events.unwrap_or_default(),
    }
}

/// `n` distinct 16-letter words whose even positions are identical, so the
/// sampled hash (which reads every second character of such words) maps
/// them all to one bucket.
pub fn collision_family(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixed: Vec<u8> = (0..8).map(|_| rng.random_range(b'a'..=b'z')).collect();
    let mut out = String::with_capacity(n * 17);
    let mut seen = std::collections::HashSet::new();
    while seen.len() < n {
        let odd: Vec<u8> = (0..8).map(|_| rng.random_range(b'a'..=b'z')).collect();
        if !seen.insert(odd.clone()) {
            continue;
        }
        for i in 0..8 {
            out.push(fixed[i] as char);
            out.push(odd[i] as char);
        }
        out.push('\n');
    }
    out
}
