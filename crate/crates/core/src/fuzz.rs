//! Performance fuzzing of text workloads.
//!
//! Candidates are produced by mutating corpus members with line-oriented
//! rules, screened with one cheap measurement, and admitted to the corpus
//! (with a full runtime measurement) when their fitness beats the parent's
//! by the interest threshold.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::runner::{run_shell, RunOutcome};

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("invalid fuzz configuration: {0}")]
    InvalidConfig(String),
    #[error("no seed workload could be measured:\n{0}")]
    AllSeedsFailed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lineage.log: {0}")]
    Lineage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FuzzError + '_ {
    move |source| FuzzError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutationRule {
    DoubleLine,
    RepeatWord,
    SortLineTokens,
    PrependWhitespace,
    DuplicateLine,
    RemoveLine,
    ChangeRandomChar,
}

impl MutationRule {
    pub const ALL: [MutationRule; 7] = [
        MutationRule::DoubleLine,
        MutationRule::RepeatWord,
        MutationRule::SortLineTokens,
        MutationRule::PrependWhitespace,
        MutationRule::DuplicateLine,
        MutationRule::RemoveLine,
        MutationRule::ChangeRandomChar,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MutationRule::DoubleLine => "double_line",
            MutationRule::RepeatWord => "repeat_word",
            MutationRule::SortLineTokens => "sort_line_tokens",
            MutationRule::PrependWhitespace => "prepend_whitespace",
            MutationRule::DuplicateLine => "duplicate_line",
            MutationRule::RemoveLine => "remove_line",
            MutationRule::ChangeRandomChar => "change_random_char",
        }
    }
}

impl fmt::Display for MutationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for MutationRule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl FromStr for MutationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutationRule::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| format!("unknown mutation rule {s:?}"))
    }
}

/// Lines of `text` with their terminators split off.
fn lines(text: &str) -> Vec<(&str, &str)> {
    text.split_inclusive('\n')
        .map(|l| match l.strip_suffix('\n') {
            Some(body) => (body, "\n"),
            None => (l, ""),
        })
        .collect()
}

fn rebuild(parts: &[(String, &str)]) -> String {
    parts.iter().map(|(body, end)| format!("{body}{end}")).collect()
}

fn with_line(text: &str, index: usize, edit: impl FnOnce(&str) -> String) -> String {
    let mut parts: Vec<(String, &str)> = lines(text).into_iter().map(|(b, e)| (b.to_string(), e)).collect();
    parts[index].0 = edit(&parts[index].0);
    rebuild(&parts)
}

/// Byte ranges of the whitespace-separated tokens of `line`.
fn token_spans(line: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, line.len()));
    }
    spans
}

/// Repeats token `token` of line `line` so it occurs `times` times in a row.
pub fn repeat_word(text: &str, line: usize, token: usize, times: usize) -> String {
    with_line(text, line, |body| {
        let Some(&(s, e)) = token_spans(body).get(token) else {
            return body.to_string();
        };
        let word = &body[s..e];
        let mut out = body[..e].to_string();
        for _ in 1..times {
            out.push(' ');
            out.push_str(word);
        }
        out.push_str(&body[e..]);
        out
    })
}

/// Sorts the tokens of one line, numerically when all are integers.
pub fn sort_line_tokens(text: &str, line: usize) -> String {
    with_line(text, line, |body| {
        let mut tokens: Vec<&str> = body.split_whitespace().collect();
        let numbers: Option<Vec<i128>> = tokens.iter().map(|t| t.parse().ok()).collect();
        match numbers {
            Some(mut n) => {
                n.sort();
                n.iter().map(i128::to_string).collect::<Vec<_>>().join(" ")
            }
            None => {
                tokens.sort();
                tokens.join(" ")
            }
        }
    })
}

/// Applies `rule` at a position drawn from `rng`. Empty input is returned
/// unchanged.
pub fn apply_rule(rule: MutationRule, text: &str, rng: &mut impl Rng) -> String {
    let ls = lines(text);
    if ls.is_empty() {
        return String::new();
    }
    let line = rng.random_range(0..ls.len());
    match rule {
        MutationRule::DoubleLine => with_line(text, line, |b| b.repeat(2)),
        MutationRule::RepeatWord => {
            let n = token_spans(ls[line].0).len();
            if n == 0 {
                return text.to_string();
            }
            let token = rng.random_range(0..n);
            let times = rng.random_range(2..=16);
            repeat_word(text, line, token, times)
        }
        MutationRule::SortLineTokens => sort_line_tokens(text, line),
        MutationRule::PrependWhitespace => {
            let k = rng.random_range(1..=12);
            with_line(text, line, |b| format!("{}{b}", " ".repeat(1 << k)))
        }
        MutationRule::DuplicateLine => {
            let mut parts: Vec<(String, &str)> = ls.iter().map(|(b, e)| (b.to_string(), *e)).collect();
            let copy = (parts[line].0.clone(), "\n");
            if parts[line].1.is_empty() {
                parts[line].1 = "\n";
                parts.insert(line + 1, (copy.0, ""));
            } else {
                parts.insert(line + 1, copy);
            }
            rebuild(&parts)
        }
        MutationRule::RemoveLine => {
            let mut parts: Vec<(String, &str)> = ls.iter().map(|(b, e)| (b.to_string(), *e)).collect();
            parts.remove(line);
            rebuild(&parts)
        }
        MutationRule::ChangeRandomChar => {
            let chars: Vec<(usize, char)> = text.char_indices().filter(|(_, c)| *c != '\n').collect();
            if chars.is_empty() {
                return text.to_string();
            }
            let (at, old) = chars[rng.random_range(0..chars.len())];
            // Replacements come from the input's own alphabet, so mutants stay
            // close to the input language.
            let alphabet: BTreeSet<char> = chars.iter().map(|&(_, c)| c).collect();
            let alphabet: Vec<char> = alphabet.into_iter().collect();
            let new = alphabet[rng.random_range(0..alphabet.len())];
            format!("{}{new}{}", &text[..at], &text[at + old.len_utf8()..])
        }
    }
}

/// Applies one lineage step exactly as the fuzzer did.
pub fn replay_step(rule: MutationRule, step_seed: u64, parent: &str) -> String {
    apply_rule(rule, parent, &mut ChaCha8Rng::seed_from_u64(step_seed))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitnessMode {
    /// One timed run, compared with the seed's runtime.
    RuntimeRatio,
    /// A hook command whose standard output is one integer (a visit count),
    /// compared with the seed's count. Its `{workload}` is substituted.
    CoverageHook(String),
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub seed_workloads: Vec<PathBuf>,
    /// Command with a `{workload}` placeholder for the workload path.
    pub command_template: String,
    pub max_iterations: u64,
    pub wall_clock_limit: Option<Duration>,
    pub fitness_mode: FitnessMode,
    pub interest_threshold: f64,
    pub timeout_per_run: Duration,
    pub rng_seed: u64,
    /// Runs per full runtime measurement (seeds and admitted candidates).
    pub repetitions: u32,
    pub out_dir: PathBuf,
    pub corpus_capacity: usize,
    /// Concurrent screenings; only used with a coverage hook.
    pub workers: usize,
    /// Measure runtimes of seeds and admitted candidates. Without this a
    /// coverage-hook run is fully reproducible.
    pub confirm_runtime: bool,
    /// Stop as soon as a candidate reaches this slowdown or times out.
    pub target_slowdown: Option<f64>,
    /// Mutants larger than this are discarded unscreened.
    pub max_size_bytes: Option<u64>,
}

impl FuzzConfig {
    pub fn new(seed_workloads: Vec<PathBuf>, command_template: &str, out_dir: PathBuf) -> Self {
        Self {
            seed_workloads,
            command_template: command_template.to_string(),
            max_iterations: 100,
            wall_clock_limit: None,
            fitness_mode: FitnessMode::RuntimeRatio,
            interest_threshold: 1.5,
            timeout_per_run: Duration::from_secs(5),
            rng_seed: 0,
            repetitions: 3,
            out_dir,
            corpus_capacity: 64,
            workers: 1,
            confirm_runtime: true,
            target_slowdown: None,
            max_size_bytes: None,
        }
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        let bad = |m: &str| Err(FuzzError::InvalidConfig(m.to_string()));
        if self.seed_workloads.is_empty() {
            return bad("at least one seed workload is required");
        }
        if !self.command_template.contains("{workload}") {
            return bad("command template must contain {workload}");
        }
        if let FitnessMode::CoverageHook(hook) = &self.fitness_mode {
            if !hook.contains("{workload}") {
                return bad("coverage hook must contain {workload}");
            }
        }
        if !(self.interest_threshold > 1.0) {
            return bad("interest threshold must exceed 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.corpus_capacity < self.seed_workloads.len() {
            return bad("corpus capacity is smaller than the number of seeds");
        }
        if self.timeout_per_run.is_zero() {
            return bad("per-run timeout must be positive");
        }
        if self.wall_clock_limit.is_some_and(|d| d.is_zero()) {
            return bad("wall-clock limit must be positive");
        }
        Ok(())
    }
}

fn serialize_fitness<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn serialize_opt_fitness<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => serialize_fitness(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineageStep {
    pub rule: MutationRule,
    pub parent: String,
    pub step_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzCandidate {
    pub id: String,
    /// File name inside the output directory.
    pub content_path: String,
    /// Mutations from the root seed, oldest first.
    pub lineage: Vec<LineageStep>,
    pub size_bytes: u64,
    /// Median runtime over the configured repetitions.
    pub runtime_us: Option<f64>,
    #[serde(serialize_with = "serialize_opt_fitness")]
    pub slowdown: Option<f64>,
    #[serde(serialize_with = "serialize_fitness")]
    pub fitness: f64,
    pub timed_out: bool,
    pub root_seed: String,
}

impl FuzzCandidate {
    fn is_seed(&self) -> bool {
        self.lineage.is_empty()
    }

    fn rank_key(&self) -> f64 {
        if self.timed_out {
            f64::INFINITY
        } else {
            self.slowdown.unwrap_or(self.fitness)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleStats {
    pub rule: MutationRule,
    pub trials: u64,
    pub successes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub command_template: String,
    pub fitness_mode: String,
    pub rng_seed: u64,
    pub iterations: u64,
    pub crashes: u64,
    pub stop_reason: String,
    /// Corpus by slowdown, descending.
    pub candidates: Vec<FuzzCandidate>,
    pub rules: Vec<RuleStats>,
}

impl FuzzReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fuzz report serializes");
        s.push('\n');
        s
    }

    /// Table `input | size [B] | time [s] | slowdown | used rules`, then the
    /// per-rule statistics.
    pub fn render_text(&self) -> String {
        let header = ["input", "size [B]", "time [s]", "slowdown", "used rules"];
        let rows: Vec<[String; 5]> = self
            .candidates
            .iter()
            .map(|c| {
                let time = match (c.timed_out, c.runtime_us) {
                    (true, _) => "timeout".to_string(),
                    (false, Some(us)) => format!("{:.3}", us / 1e6),
                    (false, None) => "-".to_string(),
                };
                let slowdown = match (c.is_seed(), c.timed_out, c.slowdown) {
                    (true, _, _) => "-".to_string(),
                    (false, true, _) => "inf".to_string(),
                    (false, false, Some(s)) => format!("{s:.1}"),
                    (false, false, None) => "-".to_string(),
                };
                let rules = if c.is_seed() { "-".to_string() } else { c.lineage.len().to_string() };
                [c.id.clone(), c.size_bytes.to_string(), time, slowdown, rules]
            })
            .collect();
        let mut out = table(&header, &rows);
        out.push('\n');
        let rule_rows: Vec<[String; 3]> = self
            .rules
            .iter()
            .map(|r| [r.rule.to_string(), r.trials.to_string(), r.successes.to_string()])
            .collect();
        out.push_str(&table(&["rule", "trials", "successes"], &rule_rows));
        out.push_str(&format!(
            "\niterations: {}\ncrashes: {}\nstopped: {}\n",
            self.iterations, self.crashes, self.stop_reason
        ));
        out
    }
}

/// First column left-aligned, the rest right-aligned.
fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N)
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let render = |cells: Vec<&str>| {
        let cols: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = " ".repeat(widths[i] - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        format!("{}\n", cols.join(" | "))
    };
    let mut out = render(header.to_vec());
    out.push_str(&format!(
        "{}\n",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    ));
    for r in rows {
        out.push_str(&render(r.iter().map(String::as_str).collect()));
    }
    out
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn instantiate(template: &str, workload: &Path) -> String {
    template.replace("{workload}", &shell_quote(workload))
}

/// Outcome of one screening or measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Measure {
    Value(f64),
    TimedOut,
    Failed,
}

fn timed_run(command: &str, timeout: Duration) -> (Measure, String) {
    match run_shell(command, Some(timeout), false) {
        Ok(RunOutcome::Finished { elapsed, status, stderr, .. }) => {
            if status.success() {
                (Measure::Value(elapsed.as_secs_f64() * 1e6), String::new())
            } else {
                (Measure::Failed, format!("{command}: {status}: {}", stderr.trim()))
            }
        }
        Ok(RunOutcome::TimedOut { .. }) => (Measure::TimedOut, String::new()),
        Err(e) => (Measure::Failed, format!("{command}: {e}")),
    }
}

fn hook_run(command: &str, timeout: Duration) -> (Measure, String) {
    match run_shell(command, Some(timeout), true) {
        Ok(RunOutcome::Finished { status, stdout, stderr, .. }) => {
            if !status.success() {
                return (Measure::Failed, format!("{command}: {status}: {}", stderr.trim()));
            }
            match stdout.trim().parse::<u64>() {
                Ok(n) => (Measure::Value(n as f64), String::new()),
                Err(_) => (Measure::Failed, format!("{command}: expected one integer, got {:?}", stdout.trim())),
            }
        }
        Ok(RunOutcome::TimedOut { .. }) => (Measure::TimedOut, String::new()),
        Err(e) => (Measure::Failed, format!("{command}: {e}")),
    }
}

/// Median runtime over `reps` runs; any timeout or failure decides the whole
/// measurement.
fn measure_runtime(command: &str, reps: u32, timeout: Duration) -> (Measure, String) {
    let mut times = Vec::new();
    for _ in 0..reps {
        match timed_run(command, timeout) {
            (Measure::Value(t), _) => times.push(t),
            other => return other,
        }
    }
    (Measure::Value(crate::stats::median(&times)), String::new())
}

struct Fuzzer<'a> {
    cfg: &'a FuzzConfig,
    corpus: Vec<FuzzCandidate>,
    contents: BTreeMap<String, String>,
    /// Seed runtime and screening baseline per root seed.
    seed_runtime: BTreeMap<String, f64>,
    seed_screen: BTreeMap<String, f64>,
    seen: HashSet<String>,
    stats: BTreeMap<MutationRule, (u64, u64)>,
    next_id: u64,
    crashes: u64,
    lineage_log: fs::File,
}

struct Proposal {
    parent: usize,
    rule: MutationRule,
    step_seed: u64,
    content: String,
    path: PathBuf,
}

impl Fuzzer<'_> {
    fn pick_parent(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        let weights: Vec<f64> = self
            .corpus
            .iter()
            .map(|c| if c.timed_out || !c.fitness.is_finite() { 0.0 } else { (1.0 + c.fitness).ln() })
            .collect();
        WeightedIndex::new(&weights).ok().map(|w| w.sample(rng))
    }

    fn pick_rule(&self, rng: &mut ChaCha8Rng) -> MutationRule {
        let weights: Vec<f64> = MutationRule::ALL
            .iter()
            .map(|r| {
                let (t, s) = self.stats.get(r).copied().unwrap_or((0, 0));
                (s as f64 + 1.0) / (t as f64 + 2.0)
            })
            .collect();
        MutationRule::ALL[WeightedIndex::new(&weights).expect("positive weights").sample(rng)]
    }

    fn screen(&self, p: &Proposal) -> (Measure, String) {
        let cfg = self.cfg;
        match &cfg.fitness_mode {
            FitnessMode::RuntimeRatio => timed_run(&instantiate(&cfg.command_template, &p.path), cfg.timeout_per_run),
            FitnessMode::CoverageHook(hook) => hook_run(&instantiate(hook, &p.path), cfg.timeout_per_run),
        }
    }

    fn log(&mut self, line: &str) -> Result<(), FuzzError> {
        let path = self.cfg.out_dir.join("lineage.log");
        writeln!(self.lineage_log, "{line}").map_err(io_err(&path))
    }

    /// Handles a screened proposal; returns whether it was admitted.
    fn consider(&mut self, p: Proposal, screened: (Measure, String)) -> Result<bool, FuzzError> {
        let cfg = self.cfg;
        let parent = self.corpus[p.parent].clone();
        let entry = self.stats.entry(p.rule).or_default();
        entry.0 += 1;
        let fitness = match screened {
            (Measure::Value(v), _) => {
                let base = self.seed_screen[&parent.root_seed];
                v / base.max(f64::MIN_POSITIVE)
            }
            (Measure::TimedOut, _) => f64::INFINITY,
            (Measure::Failed, why) => {
                self.crashes += 1;
                eprintln!("fuzz: discarded crashing candidate: {why}");
                let _ = fs::remove_file(&p.path);
                return Ok(false);
            }
        };
        if !(fitness > cfg.interest_threshold * parent.fitness) {
            let _ = fs::remove_file(&p.path);
            return Ok(false);
        }
        self.stats.entry(p.rule).or_default().1 += 1;
        self.next_id += 1;
        let id = format!("w{}", self.next_id);
        let file = format!("{id}.txt");
        let final_path = cfg.out_dir.join(&file);
        fs::rename(&p.path, &final_path).map_err(io_err(&final_path))?;

        let mut timed_out = fitness.is_infinite();
        let mut runtime_us = None;
        if cfg.confirm_runtime {
            let command = instantiate(&cfg.command_template, &final_path);
            match measure_runtime(&command, cfg.repetitions, cfg.timeout_per_run) {
                (Measure::Value(t), _) => {
                    runtime_us = Some(t);
                    timed_out = false;
                }
                (Measure::TimedOut, _) => timed_out = true,
                (Measure::Failed, why) => eprintln!("fuzz: confirmation run of {id} failed: {why}"),
            }
        }
        let slowdown = if timed_out {
            Some(f64::INFINITY)
        } else {
            runtime_us.map(|t| t / self.seed_runtime[&parent.root_seed])
        };
        let mut lineage = parent.lineage.clone();
        lineage.push(LineageStep {
            rule: p.rule,
            parent: parent.id.clone(),
            step_seed: p.step_seed,
        });
        self.log(&format!("{id} {} {} {}", parent.id, p.rule, p.step_seed))?;
        self.contents.insert(id.clone(), p.content.clone());
        self.corpus.push(FuzzCandidate {
            id,
            content_path: file,
            lineage,
            size_bytes: p.content.len() as u64,
            runtime_us,
            slowdown,
            fitness,
            timed_out,
            root_seed: parent.root_seed,
        });
        self.evict()?;
        Ok(true)
    }

    /// Drops the least interesting non-seed members beyond capacity.
    fn evict(&mut self) -> Result<(), FuzzError> {
        while self.corpus.len() > self.cfg.corpus_capacity {
            let Some((i, _)) = self
                .corpus
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_seed())
                .min_by(|a, b| a.1.rank_key().total_cmp(&b.1.rank_key()))
            else {
                break;
            };
            let gone = self.corpus.remove(i);
            let path = self.cfg.out_dir.join(&gone.content_path);
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    fn propose(&mut self, rng: &mut ChaCha8Rng, slot: usize) -> Result<Option<Proposal>, FuzzError> {
        let Some(parent) = self.pick_parent(rng) else {
            return Ok(None);
        };
        let rule = self.pick_rule(rng);
        let step_seed = rng.next_u64();
        let content = replay_step(rule, step_seed, &self.contents[&self.corpus[parent].id]);
        let oversized = self.cfg.max_size_bytes.is_some_and(|m| content.len() as u64 > m);
        if oversized || !self.seen.insert(content.clone()) {
            self.stats.entry(rule).or_default().0 += 1;
            return Ok(None);
        }
        let path = self.cfg.out_dir.join(format!(".candidate-{slot}.txt"));
        fs::write(&path, &content).map_err(io_err(&path))?;
        Ok(Some(Proposal {
            parent,
            rule,
            step_seed,
            content,
            path,
        }))
    }

    fn goal_reached(&self) -> bool {
        self.cfg.target_slowdown.is_some_and(|goal| {
            self.corpus
                .iter()
                .any(|c| !c.is_seed() && (c.timed_out || c.slowdown.is_some_and(|s| s >= goal)))
        })
    }
}

/// Runs the fuzzing loop and writes the corpus, `lineage.log`, `report.json`
/// and `report.txt` into the output directory.
pub fn fuzz_loop(cfg: &FuzzConfig) -> Result<FuzzReport, FuzzError> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let log_path = cfg.out_dir.join("lineage.log");
    let lineage_log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut fz = Fuzzer {
        cfg,
        corpus: Vec::new(),
        contents: BTreeMap::new(),
        seed_runtime: BTreeMap::new(),
        seed_screen: BTreeMap::new(),
        seen: HashSet::new(),
        stats: MutationRule::ALL.iter().map(|r| (*r, (0, 0))).collect(),
        next_id: 0,
        crashes: 0,
        lineage_log,
    };

    let mut failures = Vec::new();
    for (i, seed_path) in cfg.seed_workloads.iter().enumerate() {
        let id = if cfg.seed_workloads.len() == 1 {
            "seed".to_string()
        } else {
            format!("seed{}", i + 1)
        };
        let content = fs::read_to_string(seed_path).map_err(io_err(seed_path))?;
        let file = format!("{id}.txt");
        let path = cfg.out_dir.join(&file);
        fs::write(&path, &content).map_err(io_err(&path))?;
        let command = instantiate(&cfg.command_template, &path);
        let runtime = if cfg.confirm_runtime || cfg.fitness_mode == FitnessMode::RuntimeRatio {
            match measure_runtime(&command, cfg.repetitions, cfg.timeout_per_run) {
                (Measure::Value(t), _) => Some(t),
                (Measure::TimedOut, _) => {
                    failures.push(format!("{}: timed out", seed_path.display()));
                    continue;
                }
                (Measure::Failed, why) => {
                    failures.push(format!("{}: {why}", seed_path.display()));
                    continue;
                }
            }
        } else {
            None
        };
        let screen_base = match &cfg.fitness_mode {
            FitnessMode::RuntimeRatio => runtime.expect("measured above"),
            FitnessMode::CoverageHook(hook) => match hook_run(&instantiate(hook, &path), cfg.timeout_per_run) {
                (Measure::Value(v), _) => v,
                (Measure::TimedOut, _) => {
                    failures.push(format!("{}: coverage hook timed out", seed_path.display()));
                    continue;
                }
                (Measure::Failed, why) => {
                    failures.push(format!("{}: {why}", seed_path.display()));
                    continue;
                }
            },
        };
        fz.seed_runtime.insert(id.clone(), runtime.unwrap_or(0.0));
        fz.seed_screen.insert(id.clone(), screen_base);
        fz.log(&format!("{id} - - -"))?;
        fz.seen.insert(content.clone());
        fz.contents.insert(id.clone(), content.clone());
        fz.corpus.push(FuzzCandidate {
            id: id.clone(),
            content_path: file,
            lineage: Vec::new(),
            size_bytes: content.len() as u64,
            runtime_us: runtime,
            slowdown: runtime.map(|_| 1.0),
            fitness: 1.0,
            timed_out: false,
            root_seed: id,
        });
    }
    if fz.corpus.is_empty() {
        return Err(FuzzError::AllSeedsFailed(failures.join("\n")));
    }
    for f in &failures {
        eprintln!("fuzz: seed skipped: {f}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let parallel = matches!(cfg.fitness_mode, FitnessMode::CoverageHook(_)) && cfg.workers > 1;
    let batch = if parallel { cfg.workers } else { 1 };
    let mut iterations = 0;
    let stop_reason = loop {
        if fz.goal_reached() {
            break "target slowdown reached";
        }
        if iterations >= cfg.max_iterations {
            break "iteration budget exhausted";
        }
        if cfg.wall_clock_limit.is_some_and(|l| started.elapsed() >= l) {
            break "wall-clock limit reached";
        }
        let n = batch.min((cfg.max_iterations - iterations) as usize);
        let mut proposals = Vec::new();
        for slot in 0..n {
            if let Some(p) = fz.propose(&mut rng, slot)? {
                proposals.push(p);
            }
        }
        iterations += n as u64;
        if proposals.is_empty() && fz.pick_parent(&mut rng.clone()).is_none() {
            break "no corpus member can be mutated";
        }
        let screened: Vec<(Measure, String)> = if parallel {
            std::thread::scope(|s| {
                let handles: Vec<_> = proposals.iter().map(|p| s.spawn(|| fz.screen(p))).collect();
                handles.into_iter().map(|h| h.join().expect("screening thread")).collect()
            })
        } else {
            proposals.iter().map(|p| fz.screen(p)).collect()
        };
        for (p, s) in proposals.into_iter().zip(screened) {
            fz.consider(p, s)?;
        }
    };

    let mut candidates = fz.corpus.clone();
    candidates.sort_by(|a, b| b.rank_key().total_cmp(&a.rank_key()).then_with(|| a.id.cmp(&b.id)));
    let report = FuzzReport {
        command_template: cfg.command_template.clone(),
        fitness_mode: match &cfg.fitness_mode {
            FitnessMode::RuntimeRatio => "runtime_ratio".into(),
            FitnessMode::CoverageHook(h) => format!("coverage_hook: {h}"),
        },
        rng_seed: cfg.rng_seed,
        iterations,
        crashes: fz.crashes,
        stop_reason: stop_reason.into(),
        candidates,
        rules: fz
            .stats
            .iter()
            .map(|(rule, (t, s))| RuleStats {
                rule: *rule,
                trials: *t,
                successes: *s,
            })
            .collect(),
    };
    for (name, body) in [("report.json", report.to_json()), ("report.txt", report.render_text())] {
        let path = cfg.out_dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(report)
}

/// Regenerates a candidate's content from `lineage.log` and the seed files
/// in `out_dir`.
pub fn replay_candidate(out_dir: &Path, id: &str) -> Result<String, FuzzError> {
    let log_path = out_dir.join("lineage.log");
    let log = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
    let mut entries: BTreeMap<&str, Option<(&str, MutationRule, u64)>> = BTreeMap::new();
    for (n, line) in log.lines().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        let bad = |why: &str| FuzzError::Lineage(format!("line {}: {why}", n + 1));
        if f.len() != 4 {
            return Err(bad("expected `<id> <parent> <rule> <step_seed>`"));
        }
        let entry = if f[1] == "-" {
            None
        } else {
            let rule = f[2].parse().map_err(|e: String| bad(&e))?;
            let seed = f[3].parse().map_err(|_| bad("step seed is not an integer"))?;
            Some((f[1], rule, seed))
        };
        entries.insert(f[0], entry);
    }
    let mut chain = Vec::new();
    let mut cur = id;
    loop {
        match entries.get(cur) {
            None => return Err(FuzzError::Lineage(format!("unknown candidate {cur}"))),
            Some(None) => break,
            Some(Some((parent, rule, seed))) => {
                chain.push((*rule, *seed));
                cur = parent;
            }
        }
    }
    let seed_path = out_dir.join(format!("{cur}.txt"));
    let mut text = fs::read_to_string(&seed_path).map_err(io_err(&seed_path))?;
    for (rule, seed) in chain.into_iter().rev() {
        text = replay_step(rule, seed, &text);
    }
    Ok(text)
}
