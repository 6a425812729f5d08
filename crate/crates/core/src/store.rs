//! Content-addressed profile storage linked to version-control commits.
//!
//! Layout under the storage directory (default `.perfvcs/`):
//!
//! ```text
//! config                   format_version = 1, optional threshold defaults
//! objects/<d[0:2]>/<d[2:]> canonical profile bytes, d = SHA-256 hex digest
//! index/<commit>           one line per registration:
//!                          <digest> <collector_id> <workload_label> <registered_at>
//! ```
//!
//! Index fields are percent-encoded so they never contain whitespace.
//! Mutations of the index are serialized through `index.lock`; object files
//! are written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::profile::{format_timestamp, parse_profile, parse_timestamp, serialize_profile, Profile, ProfileError};

pub const DEFAULT_STORE_DIR: &str = ".perfvcs";
/// Environment variable that overrides the storage directory.
pub const STORE_DIR_ENV: &str = "PERFVCS_DIR";
pub const FORMAT_VERSION: u32 = 1;

const LOCK_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a repository: {0} (run inside a git working tree)")]
    NotARepository(PathBuf),
    #[error("no profile store at {0}; run init first")]
    NotInitialized(PathBuf),
    #[error("unknown commit {0:?}")]
    UnresolvableCommit(String),
    #[error("commit {0} has no parent")]
    NoParent(String),
    #[error("ancestor {k} of {commit} does not exist (history has {depth} first-parent ancestors)")]
    HistoryTooShallow { commit: String, k: usize, depth: usize },
    #[error("no baseline profiles registered at {0}")]
    NoBaselineProfiles(String),
    #[error("unknown profile digest {0:?}")]
    UnknownDigest(String),
    #[error("ambiguous digest prefix {0:?}")]
    AmbiguousDigest(String),
    #[error("corrupt index {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },
    #[error("unsupported store format_version {0}")]
    UnsupportedFormat(String),
    #[error("timed out waiting for {0}")]
    LockTimeout(PathBuf),
    #[error("vcs: {0}")]
    Vcs(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Lowercase hex SHA-256 of canonical profile bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProfileDigest(String);

impl ProfileDigest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
            .then(|| Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..12]
    }
}

impl fmt::Display for ProfileDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Minimal version-control interface the store relies on.
pub trait Vcs {
    /// Resolves any revision expression to a full commit id.
    fn resolve(&self, rev: &str) -> Result<String, StoreError>;
    /// The commit itself followed by its first-parent ancestors, newest first.
    fn first_parent_history(&self, commit: &str) -> Result<Vec<String>, StoreError>;
    fn head(&self) -> Result<String, StoreError>;
    fn root(&self) -> &Path;
}

#[derive(Debug, Clone)]
pub struct GitVcs {
    root: PathBuf,
}

impl GitVcs {
    /// Locates the git working tree containing `dir`.
    pub fn discover(dir: &Path) -> Result<Self, StoreError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(dir)
            .args(["rev-parse", "--show-toplevel"])
            .output()
            .map_err(|e| StoreError::Vcs(format!("cannot run git: {e}")))?;
        if !out.status.success() {
            return Err(StoreError::NotARepository(dir.to_path_buf()));
        }
        let root = String::from_utf8_lossy(&out.stdout).trim().to_string();
        Ok(Self { root: PathBuf::from(root) })
    }

    fn git(&self, args: &[&str]) -> Result<Option<String>, StoreError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(args)
            .output()
            .map_err(|e| StoreError::Vcs(format!("cannot run git: {e}")))?;
        Ok(out
            .status
            .success()
            .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string()))
    }
}

impl Vcs for GitVcs {
    fn resolve(&self, rev: &str) -> Result<String, StoreError> {
        if rev.is_empty() || rev.starts_with('-') {
            return Err(StoreError::UnresolvableCommit(rev.to_string()));
        }
        self.git(&["rev-parse", "--verify", "--quiet", &format!("{rev}^{{commit}}")])?
            .filter(|s| !s.is_empty())
            .ok_or_else(|| StoreError::UnresolvableCommit(rev.to_string()))
    }

    fn first_parent_history(&self, commit: &str) -> Result<Vec<String>, StoreError> {
        let full = self.resolve(commit)?;
        let out = self
            .git(&["rev-list", "--first-parent", &full])?
            .ok_or_else(|| StoreError::Vcs(format!("rev-list failed for {full}")))?;
        Ok(out.lines().map(str::to_string).collect())
    }

    fn head(&self) -> Result<String, StoreError> {
        self.resolve("HEAD")
    }

    fn root(&self) -> &Path {
        &self.root
    }
}

/// One registration line of a commit's index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub digest: ProfileDigest,
    pub collector_id: String,
    pub workload_label: String,
    #[serde(with = "crate::profile::second_timestamp")]
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub commit_id: String,
    pub registrations: Vec<Registration>,
}

impl VersionEntry {
    /// Newest registration matching the collector and label; later index
    /// lines win ties on `registered_at`.
    pub fn newest_matching(&self, collector_id: Option<&str>, workload_label: Option<&str>) -> Option<&Registration> {
        self.registrations
            .iter()
            .enumerate()
            .filter(|(_, r)| collector_id.is_none_or(|c| r.collector_id == c))
            .filter(|(_, r)| workload_label.is_none_or(|w| r.workload_label == w))
            .max_by_key(|(i, r)| (r.registered_at, *i))
            .map(|(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineSpec {
    Parent,
    NthAncestor(usize),
    Explicit(String),
}

impl std::str::FromStr for BaselineSpec {
    type Err = String;
    /// `parent`, `nth_ancestor:<k>` or `commit:<rev>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "parent" {
            return Ok(Self::Parent);
        }
        if let Some(k) = s.strip_prefix("nth_ancestor:") {
            let k: usize = k.parse().map_err(|_| format!("invalid ancestor count in {s:?}"))?;
            if k == 0 {
                return Err("nth_ancestor needs k >= 1".into());
            }
            return Ok(Self::NthAncestor(k));
        }
        if let Some(c) = s.strip_prefix("commit:") {
            return Ok(Self::Explicit(c.to_string()));
        }
        Err(format!("expected parent, nth_ancestor:<k> or commit:<rev>, got {s:?}"))
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FsckReport {
    pub entries_checked: usize,
    pub objects_checked: usize,
    pub problems: Vec<String>,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Handle over an initialized store.
pub struct ProfileStore<V: Vcs = GitVcs> {
    dir: PathBuf,
    vcs: V,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ProfileStore<GitVcs> {
    /// Storage directory for a repository: `$PERFVCS_DIR` when set, else
    /// `<root>/.perfvcs`.
    pub fn default_dir(root: &Path) -> PathBuf {
        match std::env::var_os(STORE_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => root.join(DEFAULT_STORE_DIR),
        }
    }

    /// Creates (or re-opens) the store of the repository containing `dir`.
    pub fn init(dir: &Path) -> Result<Self, StoreError> {
        let vcs = GitVcs::discover(dir)?;
        let store_dir = Self::default_dir(vcs.root());
        Self::init_at(vcs, store_dir)
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let vcs = GitVcs::discover(dir)?;
        let store_dir = Self::default_dir(vcs.root());
        Self::open_at(vcs, store_dir)
    }
}

impl<V: Vcs> ProfileStore<V> {
    pub fn init_at(vcs: V, dir: PathBuf) -> Result<Self, StoreError> {
        for sub in ["objects", "index"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let config = dir.join("config");
        if !config.exists() {
            let text = format!("# perfvcs store configuration\nformat_version = {FORMAT_VERSION}\n");
            write_atomic(&config, text.as_bytes())?;
        }
        Self::open_at(vcs, dir)
    }

    pub fn open_at(vcs: V, dir: PathBuf) -> Result<Self, StoreError> {
        let config = dir.join("config");
        let text = fs::read_to_string(&config).map_err(|_| StoreError::NotInitialized(dir.clone()))?;
        let conf = parse_config(&text);
        match conf.get("format_version").map(String::as_str) {
            Some(v) if v == FORMAT_VERSION.to_string() => {}
            other => return Err(StoreError::UnsupportedFormat(other.unwrap_or("<missing>").to_string())),
        }
        Ok(Self { dir, vcs })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn vcs(&self) -> &V {
        &self.vcs
    }

    /// Key/value pairs of the config file.
    pub fn config(&self) -> Result<BTreeMap<String, String>, StoreError> {
        let path = self.dir.join("config");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(parse_config(&text))
    }

    fn object_path(&self, digest: &ProfileDigest) -> PathBuf {
        let d = digest.as_str();
        self.dir.join("objects").join(&d[..2]).join(&d[2..])
    }

    fn index_path(&self, commit: &str) -> PathBuf {
        self.dir.join("index").join(commit)
    }

    /// Writes the profile object (if new) and links it to `commit_id`.
    /// Re-registering a digest already linked to the commit is a no-op.
    pub fn register_profile(&self, profile: &Profile, commit_id: &str) -> Result<ProfileDigest, StoreError> {
        let commit = self.vcs.resolve(commit_id)?;
        let bytes = serialize_profile(profile)?;
        let digest = ProfileDigest::of_bytes(&bytes);
        let obj = self.object_path(&digest);
        if !obj.exists() {
            let parent = obj.parent().expect("object path has a parent");
            fs::create_dir_all(parent).map_err(io_err(parent))?;
            write_atomic(&obj, &bytes)?;
        }

        let _lock = IndexLock::acquire(&self.dir.join("index.lock"))?;
        let entry = self.read_entry(&commit)?;
        if entry.registrations.iter().any(|r| r.digest == digest) {
            return Ok(digest);
        }
        let line = format!(
            "{} {} {} {}\n",
            digest,
            encode_field(&profile.header.collector_id),
            encode_field(&profile.header.workload_label),
            format_timestamp(&Utc::now().trunc_subsecs(0)),
        );
        let path = self.index_path(&commit);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_all().map_err(io_err(&path))?;
        Ok(digest)
    }

    fn read_entry(&self, commit: &str) -> Result<VersionEntry, StoreError> {
        let path = self.index_path(commit);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut registrations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: &str| StoreError::CorruptIndex {
                path: path.clone(),
                reason: format!("line {}: {reason}", i + 1),
            };
            let fields: Vec<&str> = line.split(' ').collect();
            let [digest, collector, label, at] = fields[..] else {
                return Err(corrupt("expected 4 fields"));
            };
            registrations.push(Registration {
                digest: ProfileDigest::parse(digest).ok_or_else(|| corrupt("bad digest"))?,
                collector_id: decode_field(collector),
                workload_label: decode_field(label),
                registered_at: parse_timestamp(at).ok_or_else(|| corrupt("bad timestamp"))?,
            });
        }
        Ok(VersionEntry {
            commit_id: commit.to_string(),
            registrations,
        })
    }

    /// Registrations at a commit; accepts any resolvable revision.
    pub fn lookup(&self, commit_id: &str) -> Result<VersionEntry, StoreError> {
        let commit = self.vcs.resolve(commit_id)?;
        self.read_entry(&commit)
    }

    pub fn load_object(&self, digest: &ProfileDigest) -> Result<Vec<u8>, StoreError> {
        let path = self.object_path(digest);
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::UnknownDigest(digest.to_string()),
            _ => io_err(&path)(e),
        })
    }

    pub fn fetch(&self, digest: &ProfileDigest) -> Result<Profile, StoreError> {
        Ok(parse_profile(&self.load_object(digest)?)?)
    }

    /// Resolves a full digest or a unique prefix of at least 4 characters.
    pub fn resolve_digest(&self, prefix: &str) -> Result<ProfileDigest, StoreError> {
        if let Some(d) = ProfileDigest::parse(prefix) {
            return if self.object_path(&d).exists() {
                Ok(d)
            } else {
                Err(StoreError::UnknownDigest(prefix.to_string()))
            };
        }
        if prefix.len() < 4 || !prefix.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::UnknownDigest(prefix.to_string()));
        }
        let prefix = prefix.to_ascii_lowercase();
        let bucket = self.dir.join("objects").join(&prefix[..2]);
        let mut found = Vec::new();
        if let Ok(rd) = fs::read_dir(&bucket) {
            for e in rd.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                let full = format!("{}{}", &prefix[..2], name);
                if full.starts_with(&prefix) {
                    if let Some(d) = ProfileDigest::parse(&full) {
                        found.push(d);
                    }
                }
            }
        }
        match found.len() {
            0 => Err(StoreError::UnknownDigest(prefix)),
            1 => Ok(found.remove(0)),
            _ => Err(StoreError::AmbiguousDigest(prefix)),
        }
    }

    /// Picks the baseline commit for `target` and checks it has profiles.
    pub fn find_baseline(&self, target_commit: &str, spec: &BaselineSpec) -> Result<String, StoreError> {
        let target = self.vcs.resolve(target_commit)?;
        let commit = match spec {
            BaselineSpec::Explicit(c) => self.vcs.resolve(c)?,
            BaselineSpec::Parent | BaselineSpec::NthAncestor(_) => {
                let k = match spec {
                    BaselineSpec::NthAncestor(k) => *k,
                    _ => 1,
                };
                let history = self.vcs.first_parent_history(&target)?;
                match history.get(k) {
                    Some(c) => c.clone(),
                    None if k == 1 => return Err(StoreError::NoParent(target)),
                    None => {
                        return Err(StoreError::HistoryTooShallow {
                            commit: target,
                            k,
                            depth: history.len().saturating_sub(1),
                        })
                    }
                }
            }
        };
        if self.read_entry(&commit)?.registrations.is_empty() {
            return Err(StoreError::NoBaselineProfiles(commit));
        }
        Ok(commit)
    }

    /// All commits that have an index file.
    pub fn indexed_commits(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.dir.join("index");
        let mut out: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .flatten()
            .map(|e| e.file_name().to_string_lossy().to_string())
            .collect();
        out.sort();
        Ok(out)
    }

    /// Verifies that every indexed digest has an object whose bytes hash to
    /// it and parse as a valid profile.
    pub fn fsck(&self) -> Result<FsckReport, StoreError> {
        let mut report = FsckReport::default();
        let mut seen = std::collections::BTreeSet::new();
        for commit in self.indexed_commits()? {
            let entry = match self.read_entry(&commit) {
                Ok(e) => e,
                Err(e) => {
                    report.problems.push(e.to_string());
                    continue;
                }
            };
            report.entries_checked += 1;
            for reg in &entry.registrations {
                if !seen.insert(reg.digest.clone()) {
                    continue;
                }
                report.objects_checked += 1;
                match self.load_object(&reg.digest) {
                    Err(_) => report
                        .problems
                        .push(format!("index/{commit}: missing object {}", reg.digest)),
                    Ok(bytes) => {
                        if ProfileDigest::of_bytes(&bytes) != reg.digest {
                            report.problems.push(format!("object {} content does not match its digest", reg.digest));
                        } else if let Err(e) = parse_profile(&bytes) {
                            report.problems.push(format!("object {} is not a valid profile: {e}", reg.digest));
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

fn parse_config(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn encode_field(s: &str) -> String {
    if s.is_empty() {
        return "%".to_string();
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == '%' || c.is_whitespace() {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn decode_field(s: &str) -> String {
    if s == "%" {
        return String::new();
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 3 <= bytes.len() {
            if let Some(Ok(b)) = s.get(i + 1..i + 3).map(|h| u8::from_str_radix(h, 16)) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_file_name(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct IndexLock {
    path: PathBuf,
}

impl IndexLock {
    fn acquire(path: &Path) -> Result<Self, StoreError> {
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self {
                        path: path.to_path_buf(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > LOCK_TIMEOUT {
                        return Err(StoreError::LockTimeout(path.to_path_buf()));
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(io_err(path)(e)),
            }
        }
    }
}

impl Drop for IndexLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
