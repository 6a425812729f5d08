//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in
//! order and the summary stays readable. Exits nonzero when any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use perfvcs::collect::{combine_sized, import_trace, import_trace_text, RawTraceEvent};
use perfvcs::detect::{
    best_model_order, check_profiles, exclusive_time_outliers, integral_comparison, models_for_profile,
    render_table, DegradationRecord, DetectionMethod, DetectionThresholds, ProfileRef, ResultClass,
};
use perfvcs::fuzz::{fuzz_loop, FitnessMode, FuzzConfig};
use perfvcs::models::{fit_all, fit_parametric, model_integral, DataSeries, ModelFamily, PerformanceModel};
use perfvcs::profile::{parse_profile, serialize_profile, Profile, ResourceKind};
use perfvcs::report::{emit_bars, emit_flamegraph_folded, emit_scatter, BarGrouping};
use perfvcs::store::ProfileStore;
use perfvcs::subjects::{collision_family, run_wordfreq, HashKind, DEFAULT_BUCKETS, REGEX_SEED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. trace aggregation

#[derive(Default, Debug, PartialEq)]
struct Oracle {
    inclusive: BTreeMap<String, u64>,
    exclusive: BTreeMap<String, u64>,
    calls: BTreeMap<String, u64>,
    top_level: BTreeMap<u64, u64>,
}

/// Straightforward per-thread stack simulation.
fn oracle(events: &[RawTraceEvent]) -> Oracle {
    let mut o = Oracle::default();
    let mut stacks: BTreeMap<u64, Vec<(String, u64, u64)>> = BTreeMap::new();
    for e in events {
        let stack = stacks.entry(e.thread_id).or_default();
        match e.kind {
            perfvcs::collect::EventKind::Entry => stack.push((e.uid.clone(), e.timestamp_us, 0)),
            perfvcs::collect::EventKind::Exit => {
                let (uid, start, children) = stack.pop().expect("balanced");
                assert_eq!(uid, e.uid);
                let dur = e.timestamp_us - start;
                *o.inclusive.entry(uid.clone()).or_default() += dur;
                *o.exclusive.entry(uid.clone()).or_default() += dur - children;
                *o.calls.entry(uid).or_default() += 1;
                match stack.last_mut() {
                    Some(parent) => parent.2 += dur,
                    None => *o.top_level.entry(e.thread_id).or_default() += dur,
                }
            }
        }
    }
    o
}

fn random_trace(rng: &mut ChaCha8Rng) -> Vec<RawTraceEvent> {
    let uids = ["main", "parse", "eval", "emit", "alloc"];
    let threads = rng.random_range(1..=3u64);
    let budget = rng.random_range(2..=200usize);
    let mut per_thread: Vec<Vec<RawTraceEvent>> = Vec::new();
    let share = budget / threads as usize;
    for tid in 0..threads {
        let mut out = Vec::new();
        let mut stack: Vec<&str> = Vec::new();
        let mut t = rng.random_range(0..50u64);
        let cap = share.max(2) & !1;
        while out.len() + stack.len() < cap {
            let room = cap - out.len() - stack.len();
            let push = stack.is_empty() || (room >= 2 && rng.random_bool(0.55));
            t += rng.random_range(0..20u64);
            if push {
                let uid = uids[rng.random_range(0..uids.len())];
                stack.push(uid);
                out.push(RawTraceEvent::entry(uid, tid, t));
            } else {
                let uid = stack.pop().unwrap();
                out.push(RawTraceEvent::exit(uid, tid, t));
            }
        }
        while let Some(uid) = stack.pop() {
            t += rng.random_range(0..20u64);
            out.push(RawTraceEvent::exit(uid, tid, t));
        }
        per_thread.push(out);
    }
    // Interleave threads while keeping each thread's order.
    let mut cursors = vec![0usize; per_thread.len()];
    let mut merged = Vec::new();
    loop {
        let live: Vec<usize> = (0..per_thread.len()).filter(|&i| cursors[i] < per_thread[i].len()).collect();
        if live.is_empty() {
            break merged;
        }
        let i = live[rng.random_range(0..live.len())];
        merged.push(per_thread[i][cursors[i]].clone());
        cursors[i] += 1;
    }
}

fn totals(p: &Profile, kind: ResourceKind) -> BTreeMap<String, u64> {
    p.totals_of(kind).into_iter().map(|(k, v)| (k, v as u64)).collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_events = 0;
    for n in 0..100 {
        let events = random_trace(&mut rng);
        ensure!(events.len() <= 200, "trace {n} has {} events", events.len());
        max_events = max_events.max(events.len());
        let expected = oracle(&events);
        let profile = import(events.clone());
        ensure!(totals(&profile, ResourceKind::Inclusive) == expected.inclusive, "trace {n}: inclusive times differ");
        ensure!(totals(&profile, ResourceKind::Exclusive) == expected.exclusive, "trace {n}: exclusive times differ");
        let mut calls: BTreeMap<String, u64> = BTreeMap::new();
        for r in profile.resources.iter().filter(|r| r.kind == ResourceKind::Inclusive) {
            *calls.entry(r.uid.clone()).or_default() += r.call_count;
        }
        ensure!(calls == expected.calls, "trace {n}: call counts differ");
        for (tid, top) in &expected.top_level {
            let thread: Vec<RawTraceEvent> = events.iter().filter(|e| e.thread_id == *tid).cloned().collect();
            let excl: u64 = totals(&import(thread), ResourceKind::Exclusive).values().sum();
            ensure!(excl == *top, "trace {n} thread {tid}: exclusive sum {excl} != top-level {top}");
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("100 traces up to {max_events} events agree with the oracle in {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. model-family recovery

fn generator(family: ModelFamily) -> fn(f64) -> f64 {
    match family {
        ModelFamily::Constant => |_| 40.0,
        ModelFamily::Logarithmic => |x| 10.0 + 30.0 * x.ln(),
        ModelFamily::Linear => |x| 5.0 + 2.0 * x,
        ModelFamily::Linearithmic => |x| 5.0 + 2.0 * x * x.ln(),
        ModelFamily::Quadratic => |x| 5.0 + 0.5 * x * x,
        ModelFamily::Power => |x| 2.0 * x.powf(2.5),
        ModelFamily::Exponential => |x| 3.0 * 1.15f64.powf(x),
        _ => unreachable!("parametric families only"),
    }
}

fn sample(family: ModelFamily, noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>) -> DataSeries {
    let f = generator(family);
    let mut noise = noise;
    let points = (1..=50)
        .map(|x| {
            let x = f64::from(x);
            let e = noise.as_mut().map_or(0.0, |(n, rng)| n.sample(*rng));
            (x, f(x) * (1.0 + e))
        })
        .collect();
    DataSeries::new("f", points)
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    for family in ModelFamily::PARAMETRIC {
        let fits = fit_all(&sample(family, None));
        let head = fits.first().ok_or(format!("{family:?}: nothing fitted"))?;
        ensure!(head.family == family, "noiseless {family:?}: head is {:?}", head.family);
        ensure!(head.r_squared >= 0.999, "noiseless {family:?}: r² {}", head.r_squared);
    }
    let normal = Normal::new(0.0, 0.05).unwrap();
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for family in ModelFamily::PARAMETRIC {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + family as u64);
        let correct = (0..100)
            .filter(|_| fit_all(&sample(family, Some((&normal, &mut rng))))[0].family == family)
            .count();
        summary.push(format!("{}={correct}", family.as_str()));
        if correct < 90 {
            failed.push(family.as_str());
        }
    }
    let elapsed = started.elapsed();
    ensure!(failed.is_empty(), "noisy recovery below 90/100 for {failed:?} ({})", summary.join(" "));
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("noisy recovery {} in {elapsed:.2?}", summary.join(" ")))
}

// ---------------------------------------------------------------------------
// 3. least squares against the normal equations

/// Solves the 2×2 normal equations by Cramer's rule on raw sums.
fn normal_equations(us: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = us.len() as f64;
    let su: f64 = us.iter().sum();
    let suu: f64 = us.iter().map(|u| u * u).sum();
    let sy: f64 = ys.iter().sum();
    let suy: f64 = us.iter().zip(ys).map(|(u, y)| u * y).sum();
    let det = n * suu - su * su;
    ((sy * suu - su * suy) / det, (n * suy - su * sy) / det)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..20 {
        let len = rng.random_range(5..40);
        let b0: f64 = rng.random_range(-100.0..100.0);
        let b1: f64 = rng.random_range(0.5..20.0);
        let points: Vec<(f64, f64)> = (0..len)
            .map(|_| {
                let x: f64 = rng.random_range(1.0..1000.0);
                (x, b0 + b1 * x + rng.random_range(-50.0..50.0))
            })
            .collect();
        let series = DataSeries::new("f", points.clone());
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        for (family, us) in [
            (ModelFamily::Linear, xs.clone()),
            (ModelFamily::Quadratic, xs.iter().map(|x| x * x).collect::<Vec<_>>()),
        ] {
            let m = fit_parametric(&series, family).map_err(|e| e.to_string())?;
            let (e0, e1) = normal_equations(&us, &ys);
            ensure!(
                close(m.b0, e0) && close(m.b1, e1),
                "dataset {n} {family:?}: fitted ({}, {}) vs closed form ({e0}, {e1})",
                m.b0,
                m.b1
            );
        }
    }
    Ok("20 datasets match the normal equations within 1e-9".into())
}

// ---------------------------------------------------------------------------
// 4. injected degradation, checked against brute-force statistics

/// Quantile by linear interpolation between closest ranks, written out
/// independently of the library.
fn brute_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let below = h.floor();
    let w = h - below;
    let i = below as usize;
    if w == 0.0 {
        v[i]
    } else {
        v[i] * (1.0 - w) + v[i + 1] * w
    }
}

/// Number of statistics flagging each value as a high outlier, and as a
/// low outlier.
fn brute_flags(pop: &[f64]) -> Vec<(usize, usize)> {
    let med = brute_quantile(pop, 0.5);
    let abs_dev: Vec<f64> = pop.iter().map(|v| (v - med).abs()).collect();
    let mad = brute_quantile(&abs_dev, 0.5);
    let q1 = brute_quantile(pop, 0.25);
    let q3 = brute_quantile(pop, 0.75);
    let mean = pop.iter().sum::<f64>() / pop.len() as f64;
    let var = pop.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / pop.len() as f64;
    let sd = var.sqrt();
    pop.iter()
        .map(|&v| {
            let z = if mad > 0.0 { 0.6745 * (v - med) / mad } else { 0.0 };
            let high = [z > 3.0, v > q3 + 1.5 * (q3 - q1), v > mean + 2.0 * sd];
            let low = [z < -3.0, v < q1 - 1.5 * (q3 - q1), v < mean - 2.0 * sd];
            (high.iter().filter(|b| **b).count(), low.iter().filter(|b| **b).count())
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let (base_text, target_text) = degradation_traces(4);
    let base = import_trace_text(&base_text, "fixture", None).map_err(|e| e.to_string())?;
    let target = import_trace_text(&target_text, "fixture", None).map_err(|e| e.to_string())?;
    let findings = exclusive_time_outliers(&base, &target, &DetectionThresholds::default());
    let per_uid: Vec<&DegradationRecord> = findings.records.iter().filter(|r| !r.is_total_row()).collect();
    ensure!(per_uid.len() == FUNCTIONS + 1, "expected 21 per-uid rows, got {}", per_uid.len());

    let inflated = function_uid(INFLATED);
    let flagged: Vec<&str> = per_uid
        .iter()
        .filter(|r| r.result != ResultClass::NoChange)
        .map(|r| r.location.as_str())
        .collect();
    ensure!(flagged == [inflated.as_str()], "flagged uids {flagged:?}");
    let hit = per_uid.iter().find(|r| r.location == inflated).unwrap();
    ensure!(hit.result == ResultClass::SevereDegradation, "{inflated} is {}", hit.result);

    let pop: Vec<f64> = per_uid.iter().map(|r| r.delta_us).collect();
    for (r, (high, low)) in per_uid.iter().zip(brute_flags(&pop)) {
        let expected = if high >= low {
            [ResultClass::NoChange, ResultClass::MaybeDegradation, ResultClass::Degradation, ResultClass::SevereDegradation][high]
        } else {
            [ResultClass::NoChange, ResultClass::MaybeOptimization, ResultClass::Optimization, ResultClass::SevereOptimization][low]
        };
        ensure!(r.result == expected, "{}: {} but the oracle says {expected}", r.location, r.result);
    }

    let total: Vec<&DegradationRecord> = findings.records.iter().filter(|r| r.is_total_row()).collect();
    ensure!(total.len() == 1, "expected one total row");
    let sum: f64 = findings.records.iter().filter(|r| !r.is_total_row()).map(|r| r.delta_us).sum();
    ensure!((total[0].delta_us - sum).abs() <= 1.0, "total {} vs sum {sum}", total[0].delta_us);
    Ok(format!(
        "{inflated} SevereDegradation (+{} µs), 20 others unflagged, total Δ {} µs",
        hit.delta_us, total[0].delta_us
    ))
}

// ---------------------------------------------------------------------------
// 5. linear to quadratic cost

/// A small program on a virtual clock: one tick per basic operation.
/// `process` scans its input once (baseline) or compares all pairs
/// (target); `setup` does a fixed amount of work.
fn synthetic_run(n: u64, quadratic: bool) -> Vec<RawTraceEvent> {
    let data: Vec<u64> = (0..n).map(|i| (i * 7919) % 1009).collect();
    let mut clock = 0u64;
    let mut events = vec![RawTraceEvent::entry("main", 0, clock)];
    events.push(RawTraceEvent::entry("setup", 0, clock));
    clock += 250;
    events.push(RawTraceEvent::exit("setup", 0, clock));
    events.push(RawTraceEvent::entry("process", 0, clock));
    let mut dupes = 0u64;
    if quadratic {
        for i in 0..data.len() {
            for j in i + 1..data.len() {
                dupes += u64::from(data[i] == data[j]);
                clock += 1;
            }
        }
    } else {
        let mut seen = vec![false; 1009];
        for &d in &data {
            dupes += u64::from(std::mem::replace(&mut seen[d as usize], true));
            clock += 20;
        }
    }
    std::hint::black_box(dupes);
    events.push(RawTraceEvent::exit("process", 0, clock));
    clock += 10;
    events.push(RawTraceEvent::exit("main", 0, clock));
    events
}

fn sized_profile(quadratic: bool) -> Result<Profile, String> {
    let runs = (1..=10u64)
        .map(|k| import_trace(synthetic_run(100 * k, quadratic), "synthetic", Some(100 * k)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    combine_sized(runs).map_err(|e| e.to_string())
}

fn criterion_5() -> Outcome {
    let base = models_for_profile(&sized_profile(false)?);
    let target = models_for_profile(&sized_profile(true)?);
    let findings = best_model_order(&base, &target);
    let rec = findings
        .records
        .iter()
        .find(|r| r.location == "process")
        .ok_or("no record for process")?;
    ensure!(rec.result == ResultClass::Degradation, "process: {} ({} -> {})", rec.result, rec.from_desc, rec.to_desc);
    // setup does constant work; main encloses process and degrades with it
    let setup = findings.records.iter().find(|r| r.location == "setup").ok_or("no record for setup")?;
    ensure!(setup.result == ResultClass::NoChange, "setup: {}", setup.result);
    Ok(format!("process {} -> {}: Degradation; setup NoChange", rec.from_desc, rec.to_desc))
}

// ---------------------------------------------------------------------------
// 6. integral comparison

fn models(uid: &str, family: ModelFamily, b1: f64) -> BTreeMap<String, Vec<PerformanceModel>> {
    let mut m = PerformanceModel::parametric(uid, family, 0.0, b1, (0.0, 100.0));
    m.r_squared = 1.0;
    BTreeMap::from([(uid.to_string(), vec![m])])
}

fn criterion_6() -> Outcome {
    let t = DetectionThresholds::default();
    let lin2 = models("f", ModelFamily::Linear, 2.0);
    let lin205 = models("f", ModelFamily::Linear, 2.05);
    let quad = models("f", ModelFamily::Quadratic, 1.0);
    for (m, exact) in [(&lin2, 10_000.0), (&lin205, 10_250.0), (&quad, 1e6 / 3.0)] {
        let v = model_integral(&m["f"][0], 0.0, 100.0).map_err(|e| e.to_string())?;
        ensure!((v - exact).abs() <= 1e-6, "integral {v} != {exact}");
    }
    let small = integral_comparison(&lin2, &lin205, &t);
    ensure!(small.records[0].result == ResultClass::NoChange, "2 vs 2.05: {}", small.records[0].result);
    let big = integral_comparison(&lin2, &quad, &t);
    ensure!(big.records[0].result == ResultClass::Degradation, "linear vs quadratic: {}", big.records[0].result);
    let rel = (1e6 / 3.0 - 1e4) / 1e4;
    Ok(format!("+2.5% NoChange, +{rel:.1}x Degradation"))
}

// ---------------------------------------------------------------------------
// 7. regex fuzzing

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seed = dir.path().join("classname.txt");
    std::fs::write(&seed, REGEX_SEED).map_err(|e| e.to_string())?;
    let mut cfg = FuzzConfig::new(vec![seed], &format!("{BIN} subject regex {{workload}}"), dir.path().join("out"));
    cfg.fitness_mode = FitnessMode::CoverageHook(format!("{BIN} subject regex --max-line-steps {{workload}}"));
    cfg.max_iterations = 500;
    cfg.timeout_per_run = Duration::from_secs(5);
    cfg.rng_seed = 2;
    cfg.target_slowdown = Some(100.0);
    let size_cap = 10 * REGEX_SEED.len() as u64;
    cfg.max_size_bytes = Some(size_cap);
    let report = fuzz_loop(&cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let best = report
        .candidates
        .iter()
        .filter(|c| !c.lineage.is_empty() && c.size_bytes <= size_cap)
        .find(|c| c.timed_out || c.slowdown.is_some_and(|s| s >= 100.0))
        .ok_or_else(|| format!("no candidate reached 100x within {} iterations", report.iterations))?;
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    let how = if best.timed_out { "timed out".to_string() } else { format!("{:.1}x", best.slowdown.unwrap()) };
    Ok(format!(
        "{} ({} B, {} steps) {how} after {} iterations",
        best.id,
        best.size_bytes,
        best.lineage.len(),
        report.iterations
    ))
}

// ---------------------------------------------------------------------------
// 8. hash functions

fn median_time(text: &str, hash: HashKind) -> f64 {
    let mut times: Vec<f64> = (0..3)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(run_wordfreq(text, hash, DEFAULT_BUCKETS, false));
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[1]
}

fn criterion_8() -> Outcome {
    let n0 = 500;
    let workloads: Vec<String> = [n0, 2 * n0, 4 * n0].iter().map(|&n| collision_family(n, 8)).collect();
    let slowdown = |hash| median_time(&workloads[2], hash) / median_time(&workloads[0], hash);
    let sampled = slowdown(HashKind::Sampled);
    let djb = slowdown(HashKind::Djb);
    let ratio = sampled / djb;
    ensure!(ratio >= 1.5, "sampled {sampled:.2}x vs djb {djb:.2}x (ratio {ratio:.2})");
    Ok(format!("4x workload: sampled {sampled:.2}x, djb {djb:.2}x, ratio {ratio:.2}"))
}

// ---------------------------------------------------------------------------
// 9. store round trip

/// Digest of `degradation_profiles(9).0` in canonical form.
const FIXTURE_DIGEST: &str = "277e334067bb08e87675b7aed5dfd2c56d1e7ce7a3fad25139e51772dece50b5";

fn criterion_9() -> Outcome {
    let repo = ScratchRepo::new();
    let store = ProfileStore::init(repo.path()).map_err(|e| e.to_string())?;
    let (profile, other) = degradation_profiles(9);
    let head = repo.head();
    let digest = store.register_profile(&profile, &head).map_err(|e| e.to_string())?;
    let entry = store.lookup(&head).map_err(|e| e.to_string())?;
    ensure!(entry.registrations.iter().any(|r| r.digest == digest), "digest missing from the index");
    let bytes = store.load_object(&digest).map_err(|e| e.to_string())?;
    ensure!(parse_profile(&bytes).map_err(|e| e.to_string())? == profile, "fetched profile differs");
    ensure!(bytes == serialize_profile(&profile).unwrap(), "object bytes are not canonical");

    let second = ScratchRepo::new();
    let store2 = ProfileStore::init(second.path()).map_err(|e| e.to_string())?;
    let digest2 = store2.register_profile(&profile, &second.head()).map_err(|e| e.to_string())?;
    ensure!(digest == digest2, "digests differ across stores");
    ensure!(digest.as_str() == FIXTURE_DIGEST, "digest {digest} differs from the recorded {FIXTURE_DIGEST}");

    // Concurrent registrations of one profile and of distinct profiles.
    let commit = repo.commit("next");
    let profiles: Vec<Profile> = (0..8)
        .map(|i| {
            let mut p = if i % 2 == 0 { profile.clone() } else { other.clone() };
            if i >= 4 {
                p.header.workload_label = format!("run{i}");
            }
            p
        })
        .collect();
    let digests: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = profiles
            .iter()
            .map(|p| {
                let (dir, commit) = (repo.path(), commit.as_str());
                s.spawn(move || {
                    let store = ProfileStore::open(dir).expect("store opens");
                    store.register_profile(p, commit).expect("registration").to_string()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("thread")).collect()
    });
    let unique: std::collections::BTreeSet<&String> = digests.iter().collect();
    let indexed: Vec<String> = store
        .lookup(&commit)
        .map_err(|e| e.to_string())?
        .registrations
        .iter()
        .map(|r| r.digest.to_string())
        .collect();
    let indexed_set: std::collections::BTreeSet<&String> = indexed.iter().collect();
    ensure!(indexed.len() == unique.len() && indexed_set == unique, "index {indexed:?} vs registered {unique:?}");
    let fsck = store.fsck().map_err(|e| e.to_string())?;
    ensure!(fsck.is_clean(), "fsck: {:?}", fsck.problems);
    Ok(format!("digest {} stable; {} concurrent registrations, fsck clean", digest.short(), digests.len()))
}

// ---------------------------------------------------------------------------
// 10. CI gate

fn criterion_10() -> Outcome {
    let repo = ScratchRepo::new();
    let (base, target) = degradation_traces(10);
    repo.write("base.trace", &base);
    repo.write("target.trace", &target);
    let code = |o: &std::process::Output| o.status.code().unwrap_or(-1);
    let run = |args: &[&str], want: i32| -> Result<std::process::Output, String> {
        let o = repo.run(args);
        if code(&o) != want {
            return Err(format!("{args:?}: exit {} (want {want})\n{}{}", code(&o), stdout(&o), stderr(&o)));
        }
        Ok(o)
    };
    run(&["init"], 0)?;
    let c1 = repo.commit("c1");
    let a1 = stdout(&run(&["import", "--trace", "base.trace", "--cmd", "prog"], 0)?).trim().to_string();
    let c2 = repo.commit("c2");
    run(&["import", "--trace", "base.trace", "--cmd", "prog"], 0)?;

    // At c2: identical profiles pass, a baseline without profiles is an error.
    let same = run(&["check", "head"], 0)?;
    ensure!(
        stdout(&same).lines().filter(|l| l.contains(" | ")).skip(1).all(|l| l.contains("NoChange")),
        "identical profiles reported changes:\n{}",
        stdout(&same)
    );
    let missing = run(&["check", "head", "--baseline-selector", "nth_ancestor:2"], 2)?;
    ensure!(stderr(&missing).contains("baseline"), "no guidance: {}", stderr(&missing));

    repo.commit("c3");
    let b = stdout(&run(&["import", "--trace", "target.trace", "--cmd", "prog"], 0)?).trim().to_string();
    let degraded = run(&["check", "head", "--baseline-selector", "nth_ancestor:2"], 1)?;
    let first_row = stdout(&degraded)
        .lines()
        .skip_while(|l| !l.starts_with("---"))
        .nth(1)
        .unwrap_or_default()
        .to_string();
    ensure!(first_row.starts_with(&function_uid(INFLATED)), "first row: {first_row}");
    ensure!(stdout(&degraded).contains(&c1), "baseline is not the second ancestor");
    run(&["check", "head"], 1)?;
    run(&["check", "profiles", &a1, &a1], 0)?;
    run(&["check", "profiles", &a1, &b, "--format", "json"], 1)?;
    run(&["check", "profiles", &a1, "ffffffff"], 2)?;
    let _ = c2;
    Ok("exit 0 identical, 1 injected degradation, 2 missing baseline".into())
}

// ---------------------------------------------------------------------------
// 11. report fixtures

fn render_fixture(name: &str) -> Result<(String, String), String> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let json = std::fs::read_to_string(dir.join(format!("{name}.records.json"))).map_err(|e| e.to_string())?;
    let records: Vec<DegradationRecord> = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let rendered = render_table(&records);
    let golden_path = dir.join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &rendered).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    Ok((rendered, golden))
}

fn cells(table: &str) -> Vec<String> {
    table
        .lines()
        .map(|l| l.split('|').map(str::trim).collect::<Vec<_>>().join(" | "))
        .collect()
}

fn criterion_11() -> Outcome {
    let (degraded, golden) = render_fixture("ctypes_degradation")?;
    ensure!(degraded == golden, "rendering differs from the golden table:\n{degraded}");
    let rows = cells(&degraded);
    for want in [
        "_ctypes_init_fielddesc | NotInBaseline | 77.95 | 5.23",
        "_ctypes.cpython-311 | TotalDegradation | 136.92 | 9.19",
    ] {
        ensure!(rows.iter().any(|r| r == want), "missing row {want:?}");
    }
    let (fixed, golden) = render_fixture("ctypes_hotfix")?;
    ensure!(fixed == golden, "rendering differs from the golden table:\n{fixed}");
    ensure!(
        cells(&fixed).iter().any(|r| r == "_ctypes_get_fielddesc | MaybeDegradation | 0.89 | 0.06"),
        "missing hotfix row"
    );
    Ok("both tables match their golden files byte for byte".into())
}

// ---------------------------------------------------------------------------
// 12. determinism

fn dir_contents(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        out.insert(e.file_name().to_string_lossy().to_string(), std::fs::read(e.path()).unwrap());
    }
    out
}

fn emitter_outputs() -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut profile = sized_profile(true)?;
    profile.header.collected_at = fixed_header("x", "y").collected_at;
    profile.models = perfvcs::models::series_from_profile(&profile).iter().flat_map(fit_all).collect();
    let (base, target) = degradation_profiles(12);
    let t = DetectionThresholds::default();
    let report = check_profiles(
        &base,
        &target,
        DetectionMethod::ExclusiveTimeOutliers,
        &t,
        (ProfileRef::of("base", &base), ProfileRef::of("target", &target)),
    );
    let scatter = emit_scatter(&profile, "process").map_err(|e| e.to_string())?;
    let gen_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = perfvcs::collect::ScaledWorkloadSpec {
        generator: "random_words".parse().map_err(|e: String| e)?,
        sizes: vec![64, 128, 256],
        seed: 12,
    };
    let mut out = vec![
        ("profile".to_string(), serialize_profile(&profile).map_err(|e| e.to_string())?),
        ("scatter".into(), scatter.svg.into_bytes()),
        ("folded".into(), emit_flamegraph_folded(&profile).into_bytes()),
        ("bars_uid".into(), emit_bars(&profile, BarGrouping::Uid).map_err(|e| e.to_string())?.into_bytes()),
        (
            "bars_size".into(),
            emit_bars(&profile, BarGrouping::WorkloadSize).map_err(|e| e.to_string())?.into_bytes(),
        ),
        ("report_text".into(), report.render_text().into_bytes()),
        ("report_json".into(), report.to_json().into_bytes()),
    ];
    for path in perfvcs::collect::generate_scaled_workloads(&spec, gen_dir.path()).map_err(|e| e.to_string())? {
        out.push((path.file_name().unwrap().to_string_lossy().to_string(), std::fs::read(&path).unwrap()));
    }
    Ok(out)
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seed = dir.path().join("seed.txt");
    std::fs::write(&seed, REGEX_SEED).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let mut cfg = FuzzConfig::new(vec![seed.clone()], &format!("{BIN} subject regex {{workload}}"), out.clone());
        cfg.fitness_mode = FitnessMode::CoverageHook(format!("{BIN} subject regex --steps {{workload}}"));
        cfg.confirm_runtime = false;
        cfg.max_iterations = 150;
        cfg.rng_seed = 12;
        cfg.max_size_bytes = Some(400);
        fuzz_loop(&cfg).map_err(|e| e.to_string())?;
        outputs.push(dir_contents(&out));
    }
    ensure!(outputs[0] == outputs[1], "fuzz outputs differ between runs");
    let files = outputs[0].len();
    let first = emitter_outputs()?;
    let second = emitter_outputs()?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure!(a == b, "{name} differs between runs");
    }
    Ok(format!("{files} fuzz files and {} emitter outputs identical across runs", first.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("trace aggregation oracle", criterion_1),
        ("model family recovery", criterion_2),
        ("least-squares oracle", criterion_3),
        ("injected degradation", criterion_4),
        ("model-order detection", criterion_5),
        ("integral false-alarm suppression", criterion_6),
        ("regex fuzzing", criterion_7),
        ("hash-function slowdown", criterion_8),
        ("store round trip", criterion_9),
        ("CI gate", criterion_10),
        ("report fixtures", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
