//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use perfvcs::collect::{import_trace, RawTraceEvent};
use perfvcs::profile::{CollectionHeader, Profile, ResourceKind, ResourceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_perfvcs");

fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git").arg("-C").arg(dir).args(args).output().expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

/// A throwaway git repository with one empty commit.
pub struct ScratchRepo {
    pub dir: TempDir,
}

impl ScratchRepo {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        git(dir.path(), &["init", "-q"]);
        git(dir.path(), &["config", "user.email", "dev@example.com"]);
        git(dir.path(), &["config", "user.name", "dev"]);
        git(dir.path(), &["config", "commit.gpgsign", "false"]);
        let repo = Self { dir };
        repo.commit("initial");
        repo
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Adds an empty commit and returns its id.
    pub fn commit(&self, message: &str) -> String {
        git(self.path(), &["commit", "-q", "--allow-empty", "-m", message]);
        self.head()
    }

    pub fn head(&self) -> String {
        git(self.path(), &["rev-parse", "HEAD"])
    }

    pub fn checkout(&self, rev: &str) {
        git(self.path(), &["checkout", "-q", rev]);
    }

    /// Runs the binary inside the repository.
    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.path())
            .env_remove("PERFVCS_DIR")
            .args(args)
            .output()
            .expect("perfvcs runs")
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path().join(name);
        std::fs::write(&p, text).expect("write file");
        p
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

/// Header with a fixed collection time so serialized bytes are stable.
pub fn fixed_header(collector: &str, command: &str) -> CollectionHeader {
    let mut h = CollectionHeader::new(collector, command);
    h.collected_at = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
    h
}

/// Index of the uid whose exclusive time is inflated in [`degradation_pair`].
pub const INFLATED: usize = 7;
pub const FUNCTIONS: usize = 20;

pub fn function_uid(i: usize) -> String {
    format!("f{i:02}")
}

/// Exclusive times of the 20-function fixture: baseline, and a target where
/// one function is 50% slower and the rest move by at most 1%.
pub fn degradation_times(seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<u64> = (0..FUNCTIONS).map(|_| rng.random_range(10_000..20_000)).collect();
    let target = base
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if i == INFLATED {
                b * 3 / 2
            } else {
                let f: f64 = rng.random_range(-0.01..=0.01);
                (b as f64 * (1.0 + f)).round() as u64
            }
        })
        .collect();
    (base, target)
}

/// Trace of `main` calling each function once with the given durations.
pub fn sequential_trace(times: &[u64]) -> String {
    let mut lines = vec!["# main calls every function once".to_string()];
    let mut t = 0;
    lines.push(RawTraceEvent::entry("main", 0, t).to_line());
    for (i, d) in times.iter().enumerate() {
        t += 5;
        lines.push(RawTraceEvent::entry(&function_uid(i), 0, t).to_line());
        t += d;
        lines.push(RawTraceEvent::exit(&function_uid(i), 0, t).to_line());
    }
    t += 5;
    lines.push(RawTraceEvent::exit("main", 0, t).to_line());
    lines.join("\n") + "\n"
}

/// Baseline and target trace texts of the injected-degradation fixture.
pub fn degradation_traces(seed: u64) -> (String, String) {
    let (b, t) = degradation_times(seed);
    (sequential_trace(&b), sequential_trace(&t))
}

/// The fixture as profiles built straight from exclusive records.
pub fn degradation_profiles(seed: u64) -> (Profile, Profile) {
    let (b, t) = degradation_times(seed);
    let build = |times: &[u64]| {
        let resources = times
            .iter()
            .enumerate()
            .map(|(i, &d)| ResourceRecord::new(&function_uid(i), ResourceKind::Exclusive, d as f64))
            .collect();
        Profile::new(fixed_header("trace-import", "fixture"), resources)
    };
    (build(&b), build(&t))
}

/// Imports a trace given as events, panicking on malformed input.
pub fn import(events: Vec<RawTraceEvent>) -> Profile {
    import_trace(events, "fixture", None).expect("fixture trace imports")
}
