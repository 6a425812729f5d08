//! Degradation detection between a baseline and a target profile.
//!
//! Three methods are available: comparing the complexity order of the best
//! fitting models, comparing integrals of the best models, and flagging
//! outliers among per-function changes of exclusive time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{fit_all, model_integral, rank_models, series_from_profile, PerformanceModel};
use crate::profile::Profile;
use crate::stats;

/// Absolute difference (µs) below which a change against a zero baseline
/// integral is not reported.
const ZERO_BASELINE_EPSILON_US: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid threshold {name} = {value}: {reason}")]
    InvalidThreshold {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("unknown detection method {0:?} (expected best_model_order, integral_comparison or exclusive_time_outliers)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResultClass {
    NoChange,
    MaybeOptimization,
    Optimization,
    SevereOptimization,
    MaybeDegradation,
    Degradation,
    SevereDegradation,
    NotInBaseline,
    NotInTarget,
    TotalDegradation,
    TotalOptimization,
}

impl ResultClass {
    /// The class the same change gets when baseline and target swap roles.
    pub fn mirrored(self) -> Self {
        use ResultClass::*;
        match self {
            NoChange => NoChange,
            MaybeOptimization => MaybeDegradation,
            Optimization => Degradation,
            SevereOptimization => SevereDegradation,
            MaybeDegradation => MaybeOptimization,
            Degradation => Optimization,
            SevereDegradation => SevereOptimization,
            NotInBaseline => NotInTarget,
            NotInTarget => NotInBaseline,
            TotalDegradation => TotalOptimization,
            TotalOptimization => TotalDegradation,
        }
    }

    /// Degradation or worse; these make `check` fail.
    pub fn is_degradation_grade(self) -> bool {
        matches!(self, ResultClass::Degradation | ResultClass::SevereDegradation)
    }

    pub fn is_total(self) -> bool {
        matches!(self, ResultClass::TotalDegradation | ResultClass::TotalOptimization)
    }

    fn graded(severity: usize, increase: bool) -> Self {
        use ResultClass::*;
        match (severity, increase) {
            (0, _) => NoChange,
            (1, true) => MaybeDegradation,
            (2, true) => Degradation,
            (_, true) => SevereDegradation,
            (1, false) => MaybeOptimization,
            (2, false) => Optimization,
            (_, false) => SevereOptimization,
        }
    }
}

impl fmt::Display for ResultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    BestModelOrder,
    IntegralComparison,
    ExclusiveTimeOutliers,
}

impl DetectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionMethod::BestModelOrder => "best_model_order",
            DetectionMethod::IntegralComparison => "integral_comparison",
            DetectionMethod::ExclusiveTimeOutliers => "exclusive_time_outliers",
        }
    }
}

impl fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectionMethod {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best_model_order" => Ok(DetectionMethod::BestModelOrder),
            "integral_comparison" => Ok(DetectionMethod::IntegralComparison),
            "exclusive_time_outliers" => Ok(DetectionMethod::ExclusiveTimeOutliers),
            other => Err(DetectError::UnknownMethod(other.to_string())),
        }
    }
}

/// One detected change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub location: String,
    pub result: ResultClass,
    pub delta_us: f64,
    /// Percent of the total baseline duration.
    pub delta_rel: f64,
    pub confidence_kind: String,
    pub confidence_value: f64,
    pub method: DetectionMethod,
    pub from_desc: String,
    pub to_desc: String,
}

impl DegradationRecord {
    /// Per-group total rows, including those whose total is zero.
    pub fn is_total_row(&self) -> bool {
        self.result.is_total() || self.confidence_kind == TOTAL_CONFIDENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionThresholds {
    pub z_limit: f64,
    pub iqr_multiplier: f64,
    pub stddev_limit: f64,
    pub integral_maybe: f64,
    pub integral_degradation: f64,
    pub cutoff_rel: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            z_limit: 3.0,
            iqr_multiplier: 1.5,
            stddev_limit: 2.0,
            integral_maybe: 0.10,
            integral_degradation: 0.25,
            cutoff_rel: 0.0,
        }
    }
}

impl DetectionThresholds {
    pub fn validate(&self) -> Result<(), DetectError> {
        let positive = [
            ("z_limit", self.z_limit),
            ("iqr_multiplier", self.iqr_multiplier),
            ("stddev_limit", self.stddev_limit),
            ("integral_maybe", self.integral_maybe),
            ("integral_degradation", self.integral_degradation),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DetectError::InvalidThreshold {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        if self.integral_degradation < self.integral_maybe {
            return Err(DetectError::InvalidThreshold {
                name: "integral_degradation",
                value: self.integral_degradation,
                reason: "must not be below integral_maybe",
            });
        }
        if !(self.cutoff_rel >= 0.0 && self.cutoff_rel.is_finite()) {
            return Err(DetectError::InvalidThreshold {
                name: "cutoff_rel",
                value: self.cutoff_rel,
                reason: "must be nonnegative",
            });
        }
        Ok(())
    }
}

/// Records of one method plus the problems it skipped over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Findings {
    pub records: Vec<DegradationRecord>,
    pub warnings: Vec<String>,
}

/// Models per uid, best first. Parametric models embedded in the profile are
/// used when present; otherwise every parametric family is fitted to the
/// profile's data series.
pub fn models_for_profile(profile: &Profile) -> BTreeMap<String, Vec<PerformanceModel>> {
    let mut out: BTreeMap<String, Vec<PerformanceModel>> = BTreeMap::new();
    let embedded: Vec<&PerformanceModel> = profile.models.iter().filter(|m| m.family.is_parametric()).collect();
    if !embedded.is_empty() {
        for m in embedded {
            out.entry(m.uid.clone()).or_default().push(m.clone());
        }
        for models in out.values_mut() {
            rank_models(models);
        }
        return out;
    }
    for series in series_from_profile(profile) {
        out.insert(series.uid.clone(), fit_all(&series));
    }
    out
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi).then_some((lo, hi))
}

/// Cost of a model over an interval: its integral, or its value when the
/// interval is a single point.
fn model_cost(m: &PerformanceModel, (a, b): (f64, f64)) -> Result<f64, String> {
    let v = if a < b { model_integral(m, a, b) } else { m.predict(a) };
    match v {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{} model of {} evaluates to {v} on [{a}, {b}]", m.family, m.uid)),
        Err(e) => Err(format!("{}: {e}", m.uid)),
    }
}

fn heads<'a>(
    map: &'a BTreeMap<String, Vec<PerformanceModel>>,
    side: &str,
    warnings: &mut Vec<String>,
) -> BTreeMap<&'a str, &'a PerformanceModel> {
    let mut out = BTreeMap::new();
    for (uid, models) in map {
        match models.first() {
            Some(m) => {
                out.insert(uid.as_str(), m);
            }
            None => warnings.push(format!("{uid}: no models in {side}, skipped")),
        }
    }
    out
}

struct ModelPair<'a> {
    base: &'a PerformanceModel,
    target: &'a PerformanceModel,
    base_cost: f64,
    target_cost: f64,
}

/// Walks the uids of two model maps, producing NotInBaseline/NotInTarget
/// records for one-sided uids and handing comparable pairs to `classify`.
fn compare_models(
    baseline: &BTreeMap<String, Vec<PerformanceModel>>,
    target: &BTreeMap<String, Vec<PerformanceModel>>,
    method: DetectionMethod,
    mut classify: impl FnMut(&ModelPair) -> (ResultClass, String),
) -> Findings {
    let mut findings = Findings::default();
    let base_heads = heads(baseline, "baseline", &mut findings.warnings);
    let target_heads = heads(target, "target", &mut findings.warnings);
    let own_cost = |m: &PerformanceModel| model_cost(m, m.x_interval).ok();

    let denominator: f64 = base_heads.values().filter_map(|m| own_cost(m)).sum();
    let rel = |delta: f64| if denominator != 0.0 { delta / denominator.abs() * 100.0 } else { 0.0 };

    let uids: BTreeSet<&str> = base_heads
        .keys()
        .chain(target_heads.keys())
        .copied()
        .filter(|u| baseline.get(*u).is_some_and(|v| !v.is_empty()) || target.get(*u).is_some_and(|v| !v.is_empty()))
        .collect();
    for uid in uids {
        let record = |result, delta: f64, conf: f64, from: String, to: String| DegradationRecord {
            location: uid.to_string(),
            result,
            delta_us: delta,
            delta_rel: rel(delta),
            confidence_kind: "r_squared_min".into(),
            confidence_value: conf,
            method,
            from_desc: from,
            to_desc: to,
        };
        match (base_heads.get(uid), target_heads.get(uid)) {
            (Some(b), Some(t)) => {
                let Some(shared) = intersect(b.x_interval, t.x_interval) else {
                    findings.warnings.push(format!(
                        "{uid}: baseline interval {:?} and target interval {:?} do not overlap, skipped",
                        b.x_interval, t.x_interval
                    ));
                    continue;
                };
                let (base_cost, target_cost) = match (model_cost(b, shared), model_cost(t, shared)) {
                    (Ok(x), Ok(y)) => (x, y),
                    (Err(e), _) | (_, Err(e)) => {
                        findings.warnings.push(format!("{e}, skipped"));
                        continue;
                    }
                };
                let pair = ModelPair {
                    base: b,
                    target: t,
                    base_cost,
                    target_cost,
                };
                let (result, from) = classify(&pair);
                findings.records.push(record(
                    result,
                    target_cost - base_cost,
                    b.r_squared.min(t.r_squared),
                    from,
                    t.family.to_string(),
                ));
            }
            (None, Some(t)) => {
                let delta = own_cost(t).unwrap_or(0.0);
                findings.records.push(record(
                    ResultClass::NotInBaseline,
                    delta,
                    t.r_squared,
                    "absent".into(),
                    t.family.to_string(),
                ));
            }
            (Some(b), None) => {
                let delta = -own_cost(b).unwrap_or(0.0);
                findings.records.push(record(
                    ResultClass::NotInTarget,
                    delta,
                    b.r_squared,
                    b.family.to_string(),
                    "absent".into(),
                ));
            }
            (None, None) => {}
        }
    }
    findings
}

/// Compares the complexity order of the best model of each uid.
pub fn best_model_order(
    baseline: &BTreeMap<String, Vec<PerformanceModel>>,
    target: &BTreeMap<String, Vec<PerformanceModel>>,
) -> Findings {
    compare_models(baseline, target, DetectionMethod::BestModelOrder, |p| {
        let result = match (p.base.family.complexity_order(), p.target.family.complexity_order()) {
            (Some(b), Some(t)) if t > b => ResultClass::Degradation,
            (Some(b), Some(t)) if t < b => ResultClass::Optimization,
            _ => ResultClass::NoChange,
        };
        (result, p.base.family.to_string())
    })
}

/// Classifies the relative change between the integrals of the best models.
///
/// For positive integrals the change is measured against the smaller of the
/// two, so swapping baseline and target mirrors the classification.
pub fn integral_comparison(
    baseline: &BTreeMap<String, Vec<PerformanceModel>>,
    target: &BTreeMap<String, Vec<PerformanceModel>>,
    t: &DetectionThresholds,
) -> Findings {
    compare_models(baseline, target, DetectionMethod::IntegralComparison, |p| {
        let (b, v) = (p.base_cost, p.target_cost);
        let delta = v - b;
        let increase = delta > 0.0;
        let from = p.base.family.to_string();
        if b == 0.0 || v == 0.0 || (b < 0.0) != (v < 0.0) {
            let result = if delta.abs() < ZERO_BASELINE_EPSILON_US {
                ResultClass::NoChange
            } else {
                ResultClass::graded(2, increase)
            };
            return (
                result,
                format!("{from} (zero or sign-changing integral; absolute change vs {ZERO_BASELINE_EPSILON_US} µs)"),
            );
        }
        let magnitude = (b.abs().max(v.abs()) / b.abs().min(v.abs())) - 1.0;
        let severity = if magnitude < t.integral_maybe {
            0
        } else if magnitude < t.integral_degradation {
            1
        } else {
            2
        };
        (ResultClass::graded(severity, increase), from)
    })
}

/// The group a uid's total row belongs to: the part before the last `::`,
/// or `program` for uids without a library prefix.
pub fn group_of(uid: &str) -> &str {
    match uid.rfind("::") {
        Some(i) if i > 0 => &uid[..i],
        _ => PROGRAM_GROUP,
    }
}

pub const PROGRAM_GROUP: &str = "program";

/// Confidence kind of the per-group total rows.
pub const TOTAL_CONFIDENCE: &str = "sum_of_changes";

/// Which statistics flag a value as a high or low outlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutlierFlags {
    pub z_high: bool,
    pub z_low: bool,
    pub iqr_high: bool,
    pub iqr_low: bool,
    pub sd_high: bool,
    pub sd_low: bool,
    /// False when MAD is zero and the modified z-score is undefined.
    pub z_active: bool,
}

impl OutlierFlags {
    pub fn high(&self) -> usize {
        [self.z_high, self.iqr_high, self.sd_high].iter().filter(|b| **b).count()
    }

    pub fn low(&self) -> usize {
        [self.z_low, self.iqr_low, self.sd_low].iter().filter(|b| **b).count()
    }

    pub fn active(&self) -> usize {
        if self.z_active {
            3
        } else {
            2
        }
    }
}

/// Flags every member of `population` with the three outlier statistics.
pub fn outlier_flags(population: &[f64], t: &DetectionThresholds) -> Vec<OutlierFlags> {
    if population.is_empty() {
        return Vec::new();
    }
    let med = stats::median(population);
    let mad = stats::mad(population);
    let (q1, q3) = stats::quartiles(population);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - t.iqr_multiplier * iqr, q3 + t.iqr_multiplier * iqr);
    let mean = stats::mean(population);
    let sd = stats::std_dev(population);
    population
        .iter()
        .map(|&d| {
            let z = if mad > 0.0 { Some(0.6745 * (d - med) / mad) } else { None };
            OutlierFlags {
                z_high: z.is_some_and(|z| z > t.z_limit),
                z_low: z.is_some_and(|z| z < -t.z_limit),
                iqr_high: d > hi_fence,
                iqr_low: d < lo_fence,
                sd_high: d > mean + t.stddev_limit * sd,
                sd_low: d < mean - t.stddev_limit * sd,
                z_active: z.is_some(),
            }
        })
        .collect()
}

/// Flags functions whose change in exclusive time is an outlier among the
/// changes of all functions present in both profiles.
pub fn exclusive_time_outliers(baseline: &Profile, target: &Profile, t: &DetectionThresholds) -> Findings {
    let method = DetectionMethod::ExclusiveTimeOutliers;
    let base = baseline.exclusive_totals();
    let tgt = target.exclusive_totals();
    let total_base = baseline.total_duration_us();
    let rel = |delta: f64| if total_base > 0.0 { delta / total_base * 100.0 } else { 0.0 };
    let fmt_us = |v: f64| format!("{} µs", crate::profile::format_float(v));

    let mut findings = Findings::default();
    let common: Vec<&str> = base.keys().filter(|u| tgt.contains_key(*u)).map(String::as_str).collect();
    let deltas: Vec<f64> = common.iter().map(|u| tgt[*u] - base[*u]).collect();
    let flags = outlier_flags(&deltas, t);
    if flags.first().is_some_and(|f| !f.z_active) {
        findings
            .warnings
            .push("MAD of exclusive-time changes is 0; modified z-score skipped".into());
    }

    let mut records = Vec::new();
    for ((uid, &delta), f) in common.iter().zip(&deltas).zip(&flags) {
        let (high, low) = (f.high(), f.low());
        let (severity, increase) = if high >= low { (high, true) } else { (low, false) };
        let confidence_kind = if f.z_active {
            "outlier_statistics".to_string()
        } else {
            "outlier_statistics (modified z-score skipped: MAD = 0)".to_string()
        };
        records.push(DegradationRecord {
            location: uid.to_string(),
            result: ResultClass::graded(severity, increase),
            delta_us: delta,
            delta_rel: rel(delta),
            confidence_kind,
            confidence_value: severity as f64 / f.active() as f64,
            method,
            from_desc: fmt_us(base[*uid]),
            to_desc: fmt_us(tgt[*uid]),
        });
    }
    let one_sided = |result, delta: f64, from: String, to: String| DegradationRecord {
        location: String::new(),
        result,
        delta_us: delta,
        delta_rel: rel(delta),
        confidence_kind: "outlier_statistics".into(),
        confidence_value: 1.0,
        method,
        from_desc: from,
        to_desc: to,
    };
    for (uid, &amount) in &tgt {
        if amount > 0.0 && !base.contains_key(uid) {
            let mut r = one_sided(ResultClass::NotInBaseline, amount, "absent".into(), fmt_us(amount));
            r.location = uid.clone();
            records.push(r);
        }
    }
    for (uid, &amount) in &base {
        if amount > 0.0 && !tgt.contains_key(uid) {
            let mut r = one_sided(ResultClass::NotInTarget, -amount, fmt_us(amount), "absent".into());
            r.location = uid.clone();
            records.push(r);
        }
    }

    let mut totals: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for r in &records {
        let entry = totals.entry(group_of(&r.location)).or_default();
        entry.0 += r.delta_us;
    }
    for (uid, v) in &base {
        if let Some(e) = totals.get_mut(group_of(uid)) {
            e.1 += v;
        }
    }
    for (uid, v) in &tgt {
        if let Some(e) = totals.get_mut(group_of(uid)) {
            e.2 += v;
        }
    }
    let total_rows: Vec<DegradationRecord> = totals
        .into_iter()
        .map(|(group, (delta, from, to))| DegradationRecord {
            location: group.to_string(),
            result: if delta > 0.0 {
                ResultClass::TotalDegradation
            } else if delta < 0.0 {
                ResultClass::TotalOptimization
            } else {
                ResultClass::NoChange
            },
            delta_us: delta,
            delta_rel: rel(delta),
            confidence_kind: TOTAL_CONFIDENCE.into(),
            confidence_value: 1.0,
            method,
            from_desc: fmt_us(from),
            to_desc: fmt_us(to),
        })
        .collect();

    records.retain(|r| r.delta_rel.abs() >= t.cutoff_rel);
    records.extend(total_rows);
    findings.records = records;
    findings
}

/// Identity of a compared profile as shown in report headers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileRef {
    pub label: String,
    pub collector_id: String,
    pub workload_label: String,
}

impl ProfileRef {
    pub fn of(label: impl Into<String>, p: &Profile) -> Self {
        Self {
            label: label.into(),
            collector_id: p.header.collector_id.clone(),
            workload_label: p.header.workload_label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: DetectionMethod,
    pub baseline: ProfileRef,
    pub target: ProfileRef,
    pub thresholds: DetectionThresholds,
    pub records: Vec<DegradationRecord>,
    pub warnings: Vec<String>,
}

impl Report {
    /// True when some non-total record is Degradation or worse.
    pub fn has_degradation(&self) -> bool {
        self.records.iter().any(|r| r.result.is_degradation_grade())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "method: {}\nbaseline: {}\ntarget: {}\n\n",
            self.method, self.baseline.label, self.target.label
        );
        out.push_str(&render_table(&self.records));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Sorts by |Δ| descending with ties broken by location; total rows go last.
pub fn sort_records(records: &mut [DegradationRecord]) {
    records.sort_by(|a, b| {
        a.is_total_row()
            .cmp(&b.is_total_row())
            .then(b.delta_us.abs().total_cmp(&a.delta_us.abs()))
            .then_with(|| a.location.cmp(&b.location))
    });
}

/// Runs one detection method on two profiles.
pub fn check_profiles(
    baseline: &Profile,
    target: &Profile,
    method: DetectionMethod,
    t: &DetectionThresholds,
    labels: (ProfileRef, ProfileRef),
) -> Report {
    let findings = match method {
        DetectionMethod::ExclusiveTimeOutliers => exclusive_time_outliers(baseline, target, t),
        DetectionMethod::BestModelOrder => {
            best_model_order(&models_for_profile(baseline), &models_for_profile(target))
        }
        DetectionMethod::IntegralComparison => {
            integral_comparison(&models_for_profile(baseline), &models_for_profile(target), t)
        }
    };
    let mut records = findings.records;
    let mut warnings = findings.warnings;
    let common = records
        .iter()
        .any(|r| !r.is_total_row() && !matches!(r.result, ResultClass::NotInBaseline | ResultClass::NotInTarget));
    if !common {
        records.clear();
        warnings.push("baseline and target have no locations in common".into());
    }
    sort_records(&mut records);
    Report {
        method,
        baseline: labels.0,
        target: labels.1,
        thresholds: *t,
        records,
        warnings,
    }
}

fn fixed2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Plain-text table `Location | Result | Δ [ms] | Δ [%]`.
pub fn render_table(records: &[DegradationRecord]) -> String {
    let header = ["Location", "Result", "Δ [ms]", "Δ [%]"];
    let rows: Vec<[String; 4]> = records
        .iter()
        .map(|r| {
            [
                r.location.clone(),
                r.result.to_string(),
                fixed2(r.delta_us / 1000.0),
                fixed2(r.delta_rel),
            ]
        })
        .collect();
    let width = |i: usize| {
        rows.iter()
            .map(|r| r[i].chars().count())
            .chain([header[i].chars().count()])
            .max()
            .unwrap_or(0)
    };
    let widths = [width(0), width(1), width(2), width(3)];
    let line = |cells: [&str; 4]| {
        let pad = |s: &str, w: usize| " ".repeat(w - s.chars().count());
        format!(
            "{}{} | {}{} | {}{} | {}{}\n",
            cells[0],
            pad(cells[0], widths[0]),
            cells[1],
            pad(cells[1], widths[1]),
            pad(cells[2], widths[2]),
            cells[2],
            pad(cells[3], widths[3]),
            cells[3],
        )
    };
    let mut out = line(header);
    out.push_str(&format!(
        "{}-+-{}-+-{}-+-{}\n",
        "-".repeat(widths[0]),
        "-".repeat(widths[1]),
        "-".repeat(widths[2]),
        "-".repeat(widths[3])
    ));
    for r in &rows {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;
    use crate::profile::{CollectionHeader, ResourceKind, ResourceRecord};
    use proptest::prelude::*;

    fn excl_profile(amounts: &[(&str, f64)]) -> Profile {
        let h = CollectionHeader::new("trace-import", "./prog");
        Profile::new(
            h,
            amounts
                .iter()
                .map(|(u, a)| ResourceRecord::new(u, ResourceKind::Exclusive, *a))
                .collect(),
        )
    }

    fn models(uid: &str, family: ModelFamily, b0: f64, b1: f64) -> BTreeMap<String, Vec<PerformanceModel>> {
        let mut m = PerformanceModel::parametric(uid, family, b0, b1, (0.0, 100.0));
        m.r_squared = 1.0;
        BTreeMap::from([(uid.to_string(), vec![m])])
    }

    /// Textbook statistics written independently of `stats`.
    fn brute_force_flags(pop: &[f64], t: &DetectionThresholds) -> Vec<(usize, usize)> {
        fn med(v: &[f64]) -> f64 {
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            }
        }
        fn q(v: &[f64], p: f64) -> f64 {
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = (s.len() - 1) as f64 * p;
            let i = h as usize;
            if i + 1 < s.len() {
                s[i] + (h - i as f64) * (s[i + 1] - s[i])
            } else {
                s[i]
            }
        }
        let m = med(pop);
        let devs: Vec<f64> = pop.iter().map(|x| (x - m).abs()).collect();
        let mad = med(&devs);
        let (q1, q3) = (q(pop, 0.25), q(pop, 0.75));
        let n = pop.len() as f64;
        let mean = pop.iter().sum::<f64>() / n;
        let var = pop.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        pop.iter()
            .map(|&x| {
                let mut hi = 0;
                let mut lo = 0;
                if mad != 0.0 {
                    let z = 0.6745 * (x - m) / mad;
                    hi += (z > t.z_limit) as usize;
                    lo += (z < -t.z_limit) as usize;
                }
                hi += (x > q3 + t.iqr_multiplier * (q3 - q1)) as usize;
                lo += (x < q1 - t.iqr_multiplier * (q3 - q1)) as usize;
                hi += (x > mean + t.stddev_limit * sd) as usize;
                lo += (x < mean - t.stddev_limit * sd) as usize;
                (hi, lo)
            })
            .collect()
    }

    #[test]
    fn single_large_change_is_severe() {
        let mut base = Vec::new();
        let mut target = Vec::new();
        let names: Vec<String> = (0..21).map(|i| format!("f{i:02}")).collect();
        for (i, name) in names.iter().enumerate() {
            base.push((name.as_str(), 100_000.0));
            let d = if i == 7 { 50_000.0 } else { (i as f64 * 7.0) % 21.0 - 10.0 };
            target.push((name.as_str(), 100_000.0 + d));
        }
        let f = exclusive_time_outliers(&excl_profile(&base), &excl_profile(&target), &Default::default());
        let flagged: Vec<_> = f.records.iter().filter(|r| r.result != ResultClass::NoChange && !r.result.is_total()).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].location, "f07");
        assert_eq!(flagged[0].result, ResultClass::SevereDegradation);
        let total = f.records.last().unwrap();
        assert_eq!(total.result, ResultClass::TotalDegradation);
        let sum: f64 = f.records.iter().filter(|r| !r.result.is_total()).map(|r| r.delta_us).sum();
        assert!((total.delta_us - sum).abs() < 1.0);
    }

    #[test]
    fn identical_profiles_are_unchanged() {
        let p = excl_profile(&[("a", 10.0), ("b", 20.0), ("c", 30.0)]);
        let r = check_profiles(&p, &p, DetectionMethod::ExclusiveTimeOutliers, &Default::default(), Default::default());
        assert!(r.records.iter().all(|r| r.result == ResultClass::NoChange));
        assert_eq!(r.records.last().unwrap().delta_us, 0.0);
        assert!(!r.has_degradation());
    }

    #[test]
    fn one_sided_uids_and_groups() {
        let b = excl_profile(&[("lib::a", 10.0), ("lib::gone", 5.0), ("main", 20.0)]);
        let t = excl_profile(&[("lib::a", 10.0), ("lib::new", 7.0), ("main", 20.0)]);
        let f = exclusive_time_outliers(&b, &t, &Default::default());
        let find = |loc: &str| f.records.iter().find(|r| r.location == loc).unwrap();
        assert_eq!(find("lib::new").result, ResultClass::NotInBaseline);
        assert_eq!(find("lib::new").from_desc, "absent");
        assert_eq!(find("lib::gone").result, ResultClass::NotInTarget);
        assert_eq!(find("lib::gone").to_desc, "absent");
        assert_eq!(find("lib").delta_us, 2.0);
        assert_eq!(find("lib").result, ResultClass::TotalDegradation);
        assert_eq!(find("program").result, ResultClass::NoChange);
    }

    #[test]
    fn no_common_uids_yields_warning() {
        let r = check_profiles(
            &excl_profile(&[("a", 1.0)]),
            &excl_profile(&[("b", 1.0)]),
            DetectionMethod::ExclusiveTimeOutliers,
            &Default::default(),
            Default::default(),
        );
        assert!(r.records.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn integral_thresholds() {
        let t = DetectionThresholds::default();
        let base = models("f", ModelFamily::Linear, 0.0, 2.0);
        let close = models("f", ModelFamily::Linear, 0.0, 2.05);
        let r = integral_comparison(&base, &close, &t).records;
        assert_eq!(r[0].result, ResultClass::NoChange);
        assert!((r[0].delta_us - 250.0).abs() < 1e-6);

        let quad = models("f", ModelFamily::Quadratic, 0.0, 1.0);
        let r = integral_comparison(&base, &quad, &t).records;
        assert_eq!(r[0].result, ResultClass::Degradation);
        let rel = r[0].delta_us / 10_000.0;
        assert!((rel - (1e6 / 3.0 - 1e4) / 1e4).abs() < 1e-6);

        let r = integral_comparison(&base, &base, &t).records;
        assert_eq!((r[0].result, r[0].delta_us), (ResultClass::NoChange, 0.0));

        let maybe = models("f", ModelFamily::Linear, 0.0, 2.3);
        assert_eq!(integral_comparison(&base, &maybe, &t).records[0].result, ResultClass::MaybeDegradation);
        assert_eq!(integral_comparison(&maybe, &base, &t).records[0].result, ResultClass::MaybeOptimization);
    }

    #[test]
    fn zero_baseline_integral_uses_epsilon() {
        let t = DetectionThresholds::default();
        let zero = models("f", ModelFamily::Constant, 0.0, 0.0);
        let tiny = models("f", ModelFamily::Constant, 0.005, 0.0);
        let big = models("f", ModelFamily::Constant, 1.0, 0.0);
        let r = integral_comparison(&zero, &tiny, &t).records;
        assert_eq!(r[0].result, ResultClass::NoChange);
        assert!(r[0].from_desc.contains("zero"));
        assert_eq!(integral_comparison(&zero, &big, &t).records[0].result, ResultClass::Degradation);
    }

    #[test]
    fn model_order_changes() {
        let lin = models("f", ModelFamily::Linear, 0.0, 2.0);
        let quad = models("f", ModelFamily::Quadratic, 0.0, 1.0);
        assert_eq!(best_model_order(&lin, &quad).records[0].result, ResultClass::Degradation);
        assert_eq!(best_model_order(&quad, &lin).records[0].result, ResultClass::Optimization);
        let same = best_model_order(&lin, &lin).records;
        assert_eq!((same[0].result, same[0].delta_us), (ResultClass::NoChange, 0.0));
        assert_eq!(same[0].confidence_kind, "r_squared_min");

        let other = models("g", ModelFamily::Linear, 0.0, 1.0);
        let r = best_model_order(&lin, &other).records;
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].result, ResultClass::NotInTarget);
        assert_eq!(r[0].to_desc, "absent");
        assert_eq!(r[1].result, ResultClass::NotInBaseline);
        assert_eq!(r[1].from_desc, "absent");

        let mut empty = lin.clone();
        empty.get_mut("f").unwrap().clear();
        let f = best_model_order(&empty, &lin);
        assert!(f.warnings.iter().any(|w| w.contains("no models in baseline")));
    }

    #[test]
    fn models_fitted_from_profile_series() {
        let h = CollectionHeader::new("time-wrapper", "./prog");
        let mut recs = Vec::new();
        for x in (100..=1000).step_by(100) {
            let mut r = ResourceRecord::new("f", ResourceKind::Inclusive, 3.0 * x as f64 + 10.0);
            r.workload_size = Some(x);
            recs.push(r);
        }
        let m = models_for_profile(&Profile::new(h, recs));
        assert_eq!(m["f"][0].family, ModelFamily::Linear);
    }

    fn record(location: &str, result: ResultClass, delta_us: f64, delta_rel: f64) -> DegradationRecord {
        DegradationRecord {
            location: location.into(),
            result,
            delta_us,
            delta_rel,
            confidence_kind: "outlier_statistics".into(),
            confidence_value: 1.0,
            method: DetectionMethod::ExclusiveTimeOutliers,
            from_desc: String::new(),
            to_desc: String::new(),
        }
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            record("a_long_location", ResultClass::NotInBaseline, 77950.0, 5.23),
            record("b", ResultClass::MaybeOptimization, -890.0, -0.001),
        ];
        let expected = "\
Location        | Result            | Δ [ms] | Δ [%]
----------------+-------------------+--------+------
a_long_location | NotInBaseline     |  77.95 |  5.23
b               | MaybeOptimization |  -0.89 |  0.00
";
        assert_eq!(render_table(&rows), expected);
    }

    #[test]
    fn sorting_puts_totals_last() {
        let mut rows = vec![
            record("t", ResultClass::TotalDegradation, 1e9, 1.0),
            record("small", ResultClass::NoChange, -1.0, 0.0),
            record("big", ResultClass::Degradation, -50.0, 0.0),
        ];
        sort_records(&mut rows);
        let locs: Vec<_> = rows.iter().map(|r| r.location.as_str()).collect();
        assert_eq!(locs, ["big", "small", "t"]);
    }

    #[test]
    fn thresholds_validation() {
        assert!(DetectionThresholds::default().validate().is_ok());
        let bad = DetectionThresholds {
            z_limit: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectionThresholds {
            cutoff_rel: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cutoff_suppresses_small_rows_but_keeps_totals() {
        let b = excl_profile(&[("a", 1000.0), ("b", 1000.0)]);
        let t = excl_profile(&[("a", 1001.0), ("b", 1500.0)]);
        let th = DetectionThresholds {
            cutoff_rel: 1.0,
            ..Default::default()
        };
        let f = exclusive_time_outliers(&b, &t, &th);
        let locs: Vec<_> = f.records.iter().map(|r| r.location.as_str()).collect();
        assert_eq!(locs, ["b", "program"]);
        assert_eq!(f.records[1].delta_us, 501.0);
    }

    proptest! {
        #[test]
        fn flags_match_brute_force(pop in prop::collection::vec(-1e4f64..1e4, 1..30)) {
            let t = DetectionThresholds::default();
            let ours: Vec<(usize, usize)> = outlier_flags(&pop, &t).iter().map(|f| (f.high(), f.low())).collect();
            prop_assert_eq!(ours, brute_force_flags(&pop, &t));
        }

        #[test]
        fn swapping_mirrors_outlier_results(amounts in prop::collection::vec((0.0f64..1e5, 0.0f64..1e5), 1..25)) {
            let names: Vec<String> = (0..amounts.len()).map(|i| format!("u{i}")).collect();
            let b: Vec<(&str, f64)> = names.iter().zip(&amounts).map(|(n, a)| (n.as_str(), a.0)).collect();
            let t: Vec<(&str, f64)> = names.iter().zip(&amounts).map(|(n, a)| (n.as_str(), a.1)).collect();
            let (pb, pt) = (excl_profile(&b), excl_profile(&t));
            let th = DetectionThresholds::default();
            let fwd = exclusive_time_outliers(&pb, &pt, &th).records;
            let back = exclusive_time_outliers(&pt, &pb, &th).records;
            prop_assert_eq!(fwd.len(), back.len());
            for (x, y) in fwd.iter().zip(&back) {
                prop_assert_eq!(&x.location, &y.location);
                if x.result == ResultClass::NoChange {
                    prop_assert_eq!(y.result, ResultClass::NoChange);
                } else {
                    prop_assert_eq!(x.result.mirrored(), y.result);
                }
                prop_assert_eq!(x.delta_us, -y.delta_us);
                prop_assert!(x.delta_rel * y.delta_rel <= 0.0);
            }
        }

        #[test]
        fn swapping_mirrors_integral_results(b1 in 0.1f64..10.0, c1 in 0.1f64..10.0, quad in any::<bool>()) {
            let th = DetectionThresholds::default();
            let base = models("f", ModelFamily::Linear, 1.0, b1);
            let target = models("f", if quad { ModelFamily::Quadratic } else { ModelFamily::Linear }, 1.0, c1);
            let fwd = &integral_comparison(&base, &target, &th).records[0];
            let back = &integral_comparison(&target, &base, &th).records[0];
            prop_assert_eq!(fwd.result.mirrored(), back.result);
            prop_assert!((fwd.delta_us + back.delta_us).abs() <= 1e-9 * fwd.delta_us.abs().max(1.0));
            let fwd = &best_model_order(&base, &target).records[0];
            let back = &best_model_order(&target, &base).records[0];
            prop_assert_eq!(fwd.result.mirrored(), back.result);
        }

        #[test]
        fn model_order_is_scale_invariant(c in 0.01f64..100.0) {
            let h = CollectionHeader::new("time-wrapper", "./prog");
            let make = |f: &dyn Fn(f64) -> f64, scale: f64| {
                let recs = (1..=10u64)
                    .map(|i| {
                        let x = i * 100;
                        let mut r = ResourceRecord::new("f", ResourceKind::Inclusive, scale * f(x as f64));
                        r.workload_size = Some(x);
                        r
                    })
                    .collect();
                models_for_profile(&Profile::new(h.clone(), recs))
            };
            let lin = |x: f64| 5.0 * x + 100.0;
            let quad = |x: f64| 0.01 * x * x + 100.0;
            let a = best_model_order(&make(&lin, 1.0), &make(&quad, 1.0)).records;
            let b = best_model_order(&make(&lin, c), &make(&quad, c)).records;
            prop_assert_eq!(a[0].result, b[0].result);
            prop_assert_eq!(a[0].result, ResultClass::Degradation);
        }
    }
}
