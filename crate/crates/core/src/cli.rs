//! Command-line interface.
//!
//! Exit codes: 0 success, 1 degradations detected by `check`, 2 usage or
//! data errors. Machine-readable output goes to stdout, diagnostics to
//! stderr.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::collect::{
    combine_sized, generate_scaled_workloads, import_trace_with_header, parse_trace, render_trace,
    time_wrapper_collect, ScaledWorkloadSpec, TimeWrapperOptions, WorkloadGenerator,
};
use crate::detect::{check_profiles, DetectionMethod, DetectionThresholds, ProfileRef};
use crate::fuzz::{fuzz_loop, FitnessMode, FuzzConfig};
use crate::models::{fit_all, fit_kernel, fit_moving_average, fit_regressogram, series_from_profile, PerformanceModel};
use crate::profile::{format_timestamp, CollectionHeader, Profile};
use crate::report::{emit_bars, emit_flamegraph_folded, emit_scatter, BarGrouping};
use crate::store::{BaselineSpec, ProfileStore, Vcs};
use crate::subjects::{run_regex_subject, run_wordfreq, HashKind, DEFAULT_BUCKETS};

#[derive(Debug, Parser)]
#[command(name = "perfvcs", version, about = "Performance profiles linked to git commits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Create the profile store of the current repository.
    Init,
    /// List profiles registered at HEAD.
    Status,
    /// Registration counts along the first-parent history of HEAD.
    Log,
    /// Time a command and register the merged profile at HEAD.
    Collect(CollectArgs),
    /// Import entry/exit traces and register the profile at HEAD.
    Import(ImportArgs),
    /// Compare two profiles; exits 1 when degradations are found.
    Check(CheckArgs),
    /// Fit performance models into a stored profile and register the result.
    Model(ModelArgs),
    /// Search for workloads that slow a program down.
    Fuzz(FuzzArgs),
    /// Write a visualization of a stored profile.
    Show(ShowArgs),
    /// Generate scaled workloads.
    Generate(GenerateArgs),
    /// Run a bundled test subject.
    #[command(subcommand)]
    Subject(SubjectCmd),
    /// Verify stored objects against the index.
    Fsck,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Command to time; `{workload}` is replaced by each --workload path.
    #[arg(long = "cmd")]
    pub cmd: String,
    #[arg(long, default_value_t = 5)]
    pub reps: u32,
    #[arg(long, default_value_t = 1)]
    pub warmups: u32,
    #[arg(long, default_value = "default")]
    pub workload_label: String,
    /// Per-run timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Workload files; each run's size is the file's byte count.
    #[arg(long = "workload")]
    pub workloads: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Trace files; several traces need one --workload-size each.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long = "workload-size")]
    pub workload_sizes: Vec<u64>,
    #[arg(long = "cmd", default_value = "unknown")]
    pub cmd: String,
    #[arg(long, default_value = "default")]
    pub workload_label: String,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(subcommand)]
    pub mode: CheckMode,
    #[arg(long, global = true, default_value = "exclusive_time_outliers")]
    pub method: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, global = true)]
    pub z_limit: Option<f64>,
    #[arg(long, global = true)]
    pub iqr_multiplier: Option<f64>,
    #[arg(long, global = true)]
    pub stddev_limit: Option<f64>,
    #[arg(long, global = true)]
    pub integral_maybe: Option<f64>,
    #[arg(long, global = true)]
    pub integral_degradation: Option<f64>,
    #[arg(long, global = true)]
    pub cutoff_rel: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum CheckMode {
    /// Newest profile at HEAD against the matching profile of a baseline commit.
    Head {
        /// `parent`, `nth_ancestor:<k>` or `commit:<rev>`.
        #[arg(long, default_value = "parent")]
        baseline_selector: String,
        /// Restrict the target to this collector.
        #[arg(long)]
        collector: Option<String>,
        /// Restrict the target to this workload label.
        #[arg(long)]
        workload_label: Option<String>,
    },
    /// Two stored profiles given by digest or unique digest prefix.
    Profiles { baseline: String, target: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelMethod {
    Parametric,
    Regressogram,
    MovingAverage,
    Kernel,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub digest: String,
    #[arg(long, value_enum, default_value_t = ModelMethod::Parametric)]
    pub method: ModelMethod,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    /// Kernel bandwidth; 0 selects Silverman's rule.
    #[arg(long, default_value_t = 0.0)]
    pub bandwidth: f64,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[arg(long = "seed", required = true)]
    pub seeds: Vec<PathBuf>,
    /// Command template containing `{workload}`.
    #[arg(long = "cmd")]
    pub cmd: String,
    #[arg(long, default_value_t = 100)]
    pub iterations: u64,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Coverage hook command printing one integer; enables coverage screening.
    #[arg(long)]
    pub hook: Option<String>,
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    /// Per-run timeout in seconds.
    #[arg(long, default_value_t = 5.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    #[arg(long, default_value_t = 3)]
    pub reps: u32,
    #[arg(long, default_value = "fuzz-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub capacity: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Skip runtime measurement of admitted candidates (coverage hook only).
    #[arg(long)]
    pub no_confirm: bool,
    /// Stop once a candidate reaches this slowdown or times out.
    #[arg(long)]
    pub target_slowdown: Option<f64>,
    /// Discard mutants larger than this many bytes.
    #[arg(long)]
    pub max_size: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShowKind {
    Scatter,
    Flame,
    Bars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Uid,
    WorkloadSize,
}

#[derive(Debug, Args)]
pub struct ShowArgs {
    #[arg(long, value_enum)]
    pub kind: ShowKind,
    #[arg(long)]
    pub digest: String,
    /// Function to plot (scatter only).
    #[arg(long)]
    pub uid: Option<String>,
    #[arg(long, value_enum, default_value_t = GroupBy::Uid)]
    pub group_by: GroupBy,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// repeated_line, random_words or integer_sequence.
    #[arg(long)]
    pub generator: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SubjectCmd {
    /// Match each line against `^(([a-z])+.)+[A-Z]([a-z])+$` by backtracking.
    Regex {
        workload: PathBuf,
        /// Print only the number of matcher steps.
        #[arg(long)]
        steps: bool,
        /// Print only the step count of the most expensive line.
        #[arg(long, conflicts_with = "steps")]
        max_line_steps: bool,
    },
    /// Count word frequencies in an open-addressing hash table.
    Wordfreq {
        workload: PathBuf,
        #[arg(long, default_value = "djb")]
        hash: String,
        #[arg(long, default_value_t = DEFAULT_BUCKETS)]
        buckets: usize,
        /// Write entry/exit events to `<workload>.trace`.
        #[arg(long)]
        trace: bool,
    },
}

/// Parses arguments and runs the command, mapping errors to exit code 2.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let cwd = std::env::current_dir().context("cannot determine the current directory")?;
    match cli.command {
        Cmd::Init => {
            let store = ProfileStore::init(&cwd)?;
            println!("initialized profile store at {}", store.dir().display());
        }
        Cmd::Status => {
            let store = ProfileStore::open(&cwd)?;
            let head = store.vcs().head()?;
            let entry = store.lookup(&head)?;
            let n = entry.registrations.len();
            println!("{n} profile{} registered at {head}", if n == 1 { "" } else { "s" });
            for r in &entry.registrations {
                println!(
                    "{} {} {} {}",
                    r.digest,
                    r.collector_id,
                    r.workload_label,
                    format_timestamp(&r.registered_at)
                );
            }
        }
        Cmd::Log => {
            let store = ProfileStore::open(&cwd)?;
            let head = store.vcs().head()?;
            for commit in store.vcs().first_parent_history(&head)? {
                let n = store.lookup(&commit)?.registrations.len();
                println!("{commit} {n} profile{}", if n == 1 { "" } else { "s" });
            }
        }
        Cmd::Collect(a) => cmd_collect(&cwd, a)?,
        Cmd::Import(a) => cmd_import(&cwd, a)?,
        Cmd::Check(a) => return cmd_check(&cwd, a),
        Cmd::Model(a) => return cmd_model(&cwd, a),
        Cmd::Fuzz(a) => cmd_fuzz(a)?,
        Cmd::Show(a) => cmd_show(&cwd, a)?,
        Cmd::Generate(a) => {
            let generator: WorkloadGenerator = a.generator.parse().map_err(|e: String| anyhow!(e))?;
            let spec = ScaledWorkloadSpec {
                generator,
                sizes: a.sizes,
                seed: a.seed,
            };
            for p in generate_scaled_workloads(&spec, &a.out)? {
                println!("{}", p.display());
            }
        }
        Cmd::Subject(s) => cmd_subject(s)?,
        Cmd::Fsck => {
            let store = ProfileStore::open(&cwd)?;
            let report = store.fsck()?;
            println!(
                "checked {} index entries and {} objects",
                report.entries_checked, report.objects_checked
            );
            for p in &report.problems {
                println!("problem: {p}");
            }
            if !report.is_clean() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn warn_if_dirty(root: &Path) {
    let out = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(["status", "--porcelain", "--untracked-files=no"])
        .output();
    if let Ok(out) = out {
        if out.status.success() && !out.stdout.is_empty() {
            eprintln!("warning: working tree has uncommitted changes; the profile is registered at HEAD");
        }
    }
}

fn register_at_head(cwd: &Path, profile: &Profile) -> Result<()> {
    let store = ProfileStore::open(cwd)?;
    warn_if_dirty(store.vcs().root());
    let head = store.vcs().head()?;
    let digest = store.register_profile(profile, &head)?;
    println!("{digest}");
    Ok(())
}

fn cmd_collect(cwd: &Path, a: CollectArgs) -> Result<()> {
    // Fail before measuring when the store is missing.
    ProfileStore::open(cwd)?;
    let mut opts = TimeWrapperOptions {
        repetitions: a.reps,
        warmups: a.warmups,
        timeout: a.timeout.map(Duration::from_secs_f64),
        workload_label: a.workload_label,
        workload_size: None,
    };
    let profile = if a.workloads.is_empty() {
        time_wrapper_collect(&a.cmd, &opts)?
    } else {
        if !a.cmd.contains("{workload}") {
            bail!("--cmd must contain {{workload}} when --workload is given");
        }
        let mut sized = Vec::new();
        for w in &a.workloads {
            let size = fs::metadata(w).with_context(|| format!("{}", w.display()))?.len();
            opts.workload_size = Some(size);
            let command = a.cmd.replace("{workload}", &shell_quote(w));
            let mut p = time_wrapper_collect(&command, &opts)?;
            // One uid across all workloads so the sizes form a series.
            for r in &mut p.resources {
                r.uid = a.cmd.clone();
            }
            p.header.command = a.cmd.clone();
            sized.push(p);
        }
        if sized.len() == 1 {
            sized.remove(0)
        } else {
            combine_sized(sized)?
        }
    };
    register_at_head(cwd, &profile)
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn cmd_import(cwd: &Path, a: ImportArgs) -> Result<()> {
    ProfileStore::open(cwd)?;
    if a.traces.len() > 1 && a.workload_sizes.len() != a.traces.len() {
        bail!(
            "{} traces need {} --workload-size values, got {}",
            a.traces.len(),
            a.traces.len(),
            a.workload_sizes.len()
        );
    }
    if a.workload_sizes.len() > a.traces.len() {
        bail!("more --workload-size values than traces");
    }
    let mut profiles = Vec::new();
    for (i, path) in a.traces.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let mut header = CollectionHeader::new("trace-import", &a.cmd);
        header.workload_label = a.workload_label.clone();
        header.workload_size = a.workload_sizes.get(i).copied();
        let events = parse_trace(&text).with_context(|| format!("{}", path.display()))?;
        profiles.push(import_trace_with_header(events, header).with_context(|| format!("{}", path.display()))?);
    }
    let profile = if profiles.len() == 1 {
        profiles.remove(0)
    } else {
        combine_sized(profiles)?
    };
    register_at_head(cwd, &profile)
}

fn thresholds(store_config: &std::collections::BTreeMap<String, String>, a: &CheckArgs) -> Result<DetectionThresholds> {
    let mut t = DetectionThresholds::default();
    let fields: [(&str, &mut f64, Option<f64>); 6] = [
        ("z_limit", &mut t.z_limit, a.z_limit),
        ("iqr_multiplier", &mut t.iqr_multiplier, a.iqr_multiplier),
        ("stddev_limit", &mut t.stddev_limit, a.stddev_limit),
        ("integral_maybe", &mut t.integral_maybe, a.integral_maybe),
        ("integral_degradation", &mut t.integral_degradation, a.integral_degradation),
        ("cutoff_rel", &mut t.cutoff_rel, a.cutoff_rel),
    ];
    for (name, slot, flag) in fields {
        if let Some(v) = store_config.get(name) {
            *slot = v
                .parse()
                .map_err(|_| anyhow!("config: {name} = {v:?} is not a number"))?;
        }
        if let Some(v) = flag {
            *slot = v;
        }
    }
    t.validate()?;
    Ok(t)
}

fn cmd_check(cwd: &Path, a: CheckArgs) -> Result<ExitCode> {
    let store = ProfileStore::open(cwd)?;
    let method: DetectionMethod = a.method.parse()?;
    let t = thresholds(&store.config()?, &a)?;
    let (baseline, target, labels) = match &a.mode {
        CheckMode::Profiles { baseline, target } => {
            let bd = store.resolve_digest(baseline)?;
            let td = store.resolve_digest(target)?;
            let (b, t) = (store.fetch(&bd)?, store.fetch(&td)?);
            let labels = (ProfileRef::of(bd.to_string(), &b), ProfileRef::of(td.to_string(), &t));
            (b, t, labels)
        }
        CheckMode::Head {
            baseline_selector,
            collector,
            workload_label,
        } => {
            let spec: BaselineSpec = baseline_selector.parse().map_err(|e: String| anyhow!(e))?;
            let head = store.vcs().head()?;
            let entry = store.lookup(&head)?;
            let target_reg = entry
                .newest_matching(collector.as_deref(), workload_label.as_deref())
                .ok_or_else(|| anyhow!("no matching profile registered at HEAD ({head}); run collect or import first"))?
                .clone();
            let base_commit = store
                .find_baseline(&head, &spec)
                .context("cannot select a baseline; register profiles at the baseline commit or pick another --baseline-selector")?;
            let base_entry = store.lookup(&base_commit)?;
            let base_reg = base_entry
                .newest_matching(Some(&target_reg.collector_id), Some(&target_reg.workload_label))
                .ok_or_else(|| {
                    anyhow!(
                        "no baseline profile at {base_commit} matches collector {:?} and workload label {:?}",
                        target_reg.collector_id,
                        target_reg.workload_label
                    )
                })?
                .clone();
            let b = store.fetch(&base_reg.digest)?;
            let t = store.fetch(&target_reg.digest)?;
            let labels = (
                ProfileRef::of(format!("{} at {base_commit}", base_reg.digest), &b),
                ProfileRef::of(format!("{} at {head}", target_reg.digest), &t),
            );
            (b, t, labels)
        }
    };
    let report = check_profiles(&baseline, &target, method, &t, labels);
    let mut out = std::io::stdout().lock();
    match a.format {
        Format::Text => out.write_all(report.render_text().as_bytes())?,
        Format::Json => out.write_all(report.to_json().as_bytes())?,
    }
    Ok(if report.has_degradation() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_model(cwd: &Path, a: ModelArgs) -> Result<ExitCode> {
    let store = ProfileStore::open(cwd)?;
    let digest = store.resolve_digest(&a.digest)?;
    let mut profile = store.fetch(&digest)?;
    let series = series_from_profile(&profile);
    if series.is_empty() {
        eprintln!("error: no independent variable: profile {digest} has no workload sizes");
        return Ok(ExitCode::from(2));
    }
    let mut fitted: Vec<PerformanceModel> = Vec::new();
    for s in &series {
        let result = match a.method {
            ModelMethod::Parametric => {
                let all = fit_all(s);
                if all.is_empty() {
                    eprintln!("warning: {}: too few points for any parametric family", s.uid);
                }
                Ok(all)
            }
            ModelMethod::Regressogram => fit_regressogram(s, a.bins).map(|m| vec![m]),
            ModelMethod::MovingAverage => fit_moving_average(s, a.window).map(|m| vec![m]),
            ModelMethod::Kernel => fit_kernel(s, a.bandwidth).map(|m| vec![m]),
        };
        match result {
            Ok(ms) => {
                if let Some(best) = ms.first() {
                    eprintln!("{}: {}", s.uid, best.describe());
                }
                fitted.extend(ms);
            }
            Err(e) => eprintln!("warning: {}: {e}", s.uid),
        }
    }
    if fitted.is_empty() {
        bail!("no model could be fitted");
    }
    profile
        .models
        .retain(|m| !fitted.iter().any(|f| f.uid == m.uid && f.family == m.family));
    profile.models.extend(fitted);
    profile.models.sort_by(|x, y| x.uid.cmp(&y.uid).then(x.family.cmp(&y.family)));
    let head = store.vcs().head()?;
    let new_digest = store.register_profile(&profile, &head)?;
    println!("{new_digest}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_fuzz(a: FuzzArgs) -> Result<()> {
    let mut cfg = FuzzConfig::new(a.seeds, &a.cmd, a.out.clone());
    cfg.max_iterations = a.iterations;
    cfg.wall_clock_limit = a.time_limit.map(Duration::from_secs_f64);
    cfg.fitness_mode = match a.hook {
        Some(h) => FitnessMode::CoverageHook(h),
        None => FitnessMode::RuntimeRatio,
    };
    if a.no_confirm && cfg.fitness_mode == FitnessMode::RuntimeRatio {
        bail!("--no-confirm requires --hook");
    }
    cfg.interest_threshold = a.threshold;
    cfg.timeout_per_run = Duration::from_secs_f64(a.timeout);
    cfg.rng_seed = a.rng_seed;
    cfg.repetitions = a.reps;
    cfg.corpus_capacity = a.capacity;
    cfg.workers = a.workers;
    cfg.confirm_runtime = !a.no_confirm;
    cfg.target_slowdown = a.target_slowdown;
    cfg.max_size_bytes = a.max_size;
    let report = fuzz_loop(&cfg)?;
    print!("{}", report.render_text());
    eprintln!("report written to {}", a.out.join("report.json").display());
    Ok(())
}

fn cmd_show(cwd: &Path, a: ShowArgs) -> Result<()> {
    let store = ProfileStore::open(cwd)?;
    let profile = store.fetch(&store.resolve_digest(&a.digest)?)?;
    let body = match a.kind {
        ShowKind::Scatter => {
            let uid = match a.uid {
                Some(u) => u,
                None => series_from_profile(&profile)
                    .first()
                    .map(|s| s.uid.clone())
                    .ok_or_else(|| anyhow!("no independent variable: profile has no workload sizes"))?,
            };
            emit_scatter(&profile, &uid)?.svg
        }
        ShowKind::Flame => emit_flamegraph_folded(&profile),
        ShowKind::Bars => emit_bars(
            &profile,
            match a.group_by {
                GroupBy::Uid => BarGrouping::Uid,
                GroupBy::WorkloadSize => BarGrouping::WorkloadSize,
            },
        )?,
    };
    match a.out {
        Some(p) => fs::write(&p, body).with_context(|| format!("{}", p.display()))?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_subject(s: SubjectCmd) -> Result<()> {
    match s {
        SubjectCmd::Regex {
            workload,
            steps,
            max_line_steps,
        } => {
            let text = fs::read_to_string(&workload).with_context(|| format!("{}", workload.display()))?;
            let run = run_regex_subject(&text);
            if steps {
                println!("{}", run.steps);
            } else if max_line_steps {
                println!("{}", run.max_line_steps);
            } else {
                println!("{run}");
            }
        }
        SubjectCmd::Wordfreq {
            workload,
            hash,
            buckets,
            trace,
        } => {
            let hash: HashKind = hash.parse().map_err(|e: String| anyhow!(e))?;
            let bytes = fs::read(&workload).with_context(|| format!("{}", workload.display()))?;
            let text = String::from_utf8_lossy(&bytes);
            let run = run_wordfreq(&text, hash, buckets, trace);
            if trace {
                let mut path = workload.clone().into_os_string();
                path.push(".trace");
                let path = PathBuf::from(path);
                fs::write(&path, render_trace(&run.trace)).with_context(|| format!("{}", path.display()))?;
            }
            println!("{run}");
        }
    }
    Ok(())
}
