//! Profile data model and its canonical `.perf.json` form.
//!
//! A [`Profile`] is a header describing how the data was collected plus an
//! ordered list of [`ResourceRecord`]s. Profiles are the unit of storage and
//! comparison, so their serialized form is canonical: object keys are emitted
//! in lexicographic order at every level, there is no whitespace between
//! tokens, the document ends with a single `\n`, and numbers never use
//! exponent notation. Equal profiles therefore always produce equal bytes and
//! equal store digests.

use std::collections::BTreeMap;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::models::PerformanceModel;

/// The only time unit understood by this version of the format.
pub const TIME_UNITS: &str = "us";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("malformed profile document: {0}")]
    Malformed(String),
    #[error("{path}: unsupported units {found:?} (expected \"us\")")]
    UnsupportedUnits { path: String, found: String },
    #[error("resources[{index}].amount_us: negative amount {amount}")]
    NegativeAmount { index: usize, amount: f64 },
    #[error("resources[{index}].uid: missing or empty uid")]
    MissingUid { index: usize },
    #[error("invariant violated at {path}: {reason}")]
    Invariant { path: String, reason: String },
    #[error("cannot merge profiles: {0}")]
    MergeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Exclusive,
    Inclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionHeader {
    pub collector_id: String,
    pub command: String,
    pub workload_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_size: Option<u64>,
    pub units: String,
    #[serde(with = "second_timestamp")]
    pub collected_at: DateTime<Utc>,
    pub repetitions: u32,
}

impl CollectionHeader {
    /// A header stamped with the current time, one repetition and `us` units.
    pub fn new(collector_id: &str, command: &str) -> Self {
        Self {
            collector_id: collector_id.to_string(),
            command: command.to_string(),
            workload_label: "default".to_string(),
            workload_size: None,
            units: TIME_UNITS.to_string(),
            collected_at: Utc::now().trunc_subsecs(0),
            repetitions: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceRecord {
    #[serde(default)]
    pub uid: String,
    pub amount_us: f64,
    pub kind: ResourceKind,
    pub call_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<String>>,
}

impl ResourceRecord {
    pub fn new(uid: &str, kind: ResourceKind, amount_us: f64) -> Self {
        Self {
            uid: uid.to_string(),
            amount_us,
            kind,
            call_count: 1,
            workload_size: None,
            trace: None,
        }
    }

    /// Workload size of this record, falling back to the header's value.
    pub fn effective_size(&self, header: &CollectionHeader) -> Option<u64> {
        self.workload_size.or(header.workload_size)
    }

    /// True when the record describes an outermost (depth-0) frame.
    pub fn is_top_level(&self) -> bool {
        self.trace.as_ref().is_none_or(|t| t.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub header: CollectionHeader,
    pub resources: Vec<ResourceRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<PerformanceModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Profile {
    pub fn new(header: CollectionHeader, resources: Vec<ResourceRecord>) -> Self {
        Self {
            header,
            resources,
            models: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Checks every profile invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.header.units != TIME_UNITS {
            return Err(ProfileError::UnsupportedUnits {
                path: "header.units".into(),
                found: self.header.units.clone(),
            });
        }
        if self.header.repetitions == 0 {
            return Err(ProfileError::Invariant {
                path: "header.repetitions".into(),
                reason: "repetitions must be positive".into(),
            });
        }
        let mut totals: BTreeMap<(&str, ResourceKind), f64> = BTreeMap::new();
        for (index, r) in self.resources.iter().enumerate() {
            if r.uid.is_empty() {
                return Err(ProfileError::MissingUid { index });
            }
            if !r.amount_us.is_finite() {
                return Err(ProfileError::Invariant {
                    path: format!("resources[{index}].amount_us"),
                    reason: "amount is not a finite number".into(),
                });
            }
            if r.amount_us < 0.0 {
                return Err(ProfileError::NegativeAmount {
                    index,
                    amount: r.amount_us,
                });
            }
            if r.call_count == 0 {
                return Err(ProfileError::Invariant {
                    path: format!("resources[{index}].call_count"),
                    reason: "call_count must be positive".into(),
                });
            }
            if let Some(trace) = &r.trace {
                if trace.last().is_some_and(|last| last == &r.uid) {
                    return Err(ProfileError::Invariant {
                        path: format!("resources[{index}].trace"),
                        reason: "trace must not end with the record's own uid".into(),
                    });
                }
            }
            *totals.entry((r.uid.as_str(), r.kind)).or_default() += r.amount_us;
        }
        for ((uid, kind), excl) in &totals {
            if *kind != ResourceKind::Exclusive {
                continue;
            }
            if let Some(incl) = totals.get(&(uid, ResourceKind::Inclusive)) {
                if *excl > *incl + 1e-9 * incl.abs().max(1.0) {
                    return Err(ProfileError::Invariant {
                        path: format!("resources[uid={uid}]"),
                        reason: format!(
                            "exclusive time {excl} exceeds inclusive time {incl}"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sum of exclusive amounts per uid.
    pub fn exclusive_totals(&self) -> BTreeMap<String, f64> {
        self.totals_of(ResourceKind::Exclusive)
    }

    pub fn totals_of(&self, kind: ResourceKind) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for r in self.resources.iter().filter(|r| r.kind == kind) {
            *out.entry(r.uid.clone()).or_insert(0.0) += r.amount_us;
        }
        out
    }

    /// Total program duration. Exclusive times partition the run, so their
    /// sum equals the summed duration of depth-0 frames; profiles without
    /// exclusive records fall back to top-level inclusive time.
    pub fn total_duration_us(&self) -> f64 {
        let exclusive: Vec<f64> = self
            .resources
            .iter()
            .filter(|r| r.kind == ResourceKind::Exclusive)
            .map(|r| r.amount_us)
            .collect();
        if exclusive.is_empty() {
            self.resources
                .iter()
                .filter(|r| r.kind == ResourceKind::Inclusive && r.is_top_level())
                .map(|r| r.amount_us)
                .sum()
        } else {
            exclusive.iter().sum()
        }
    }
}

/// Serializes a profile into its canonical byte form.
pub fn serialize_profile(p: &Profile) -> Result<Vec<u8>, ProfileError> {
    p.validate()?;
    let value = serde_json::to_value(p).map_err(|e| ProfileError::Malformed(e.to_string()))?;
    let mut out = String::with_capacity(256 + 96 * p.resources.len());
    write_canonical(&value, &mut out);
    out.push('\n');
    Ok(out.into_bytes())
}

/// Parses and validates a profile document.
pub fn parse_profile(bytes: &[u8]) -> Result<Profile, ProfileError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ProfileError::Malformed(e.to_string()))?;
    // Check the invariants that have dedicated diagnostics before the typed
    // decode, so that e.g. a missing uid is reported with its record index.
    if let Some(units) = value.pointer("/header/units").and_then(Value::as_str) {
        if units != TIME_UNITS {
            return Err(ProfileError::UnsupportedUnits {
                path: "header.units".into(),
                found: units.to_string(),
            });
        }
    }
    if let Some(resources) = value.get("resources").and_then(Value::as_array) {
        for (index, r) in resources.iter().enumerate() {
            match r.get("uid") {
                Some(Value::String(s)) if !s.is_empty() => {}
                _ => return Err(ProfileError::MissingUid { index }),
            }
            if let Some(amount) = r.get("amount_us").and_then(Value::as_f64) {
                if amount < 0.0 {
                    return Err(ProfileError::NegativeAmount { index, amount });
                }
            }
        }
    }
    let profile: Profile =
        serde_json::from_value(value).map_err(|e| ProfileError::Malformed(e.to_string()))?;
    profile.validate()?;
    Ok(profile)
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serialization is infallible"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// Shortest round-tripping decimal without exponent; integral values drop
/// the fractional part. `-0` is normalized to `0`.
pub(crate) fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x}")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Merges repeated measurements of the same collection into one profile.
///
/// Records are keyed by `(uid, kind, workload_size)`. Each merged record takes
/// the median amount and the median call count (rounded half-up) over the
/// inputs in which the key appears; keys missing from some inputs are noted.
pub fn merge_repetitions(profiles: &[Profile]) -> Result<Profile, ProfileError> {
    let first = profiles
        .first()
        .ok_or_else(|| ProfileError::MergeMismatch("no profiles given".into()))?;
    for (i, p) in profiles.iter().enumerate() {
        let h = &p.header;
        let f = &first.header;
        if h.collector_id != f.collector_id
            || h.command != f.command
            || h.workload_label != f.workload_label
            || h.workload_size != f.workload_size
        {
            return Err(ProfileError::MergeMismatch(format!(
                "profile {i} header ({}, {:?}, {}) differs from profile 0 ({}, {:?}, {})",
                h.collector_id, h.command, h.workload_label, f.collector_id, f.command, f.workload_label
            )));
        }
        if h.units != TIME_UNITS {
            return Err(ProfileError::UnsupportedUnits {
                path: format!("profiles[{i}].header.units"),
                found: h.units.clone(),
            });
        }
    }

    type Key = (String, ResourceKind, Option<u64>);
    struct Acc {
        amounts: Vec<f64>,
        counts: Vec<f64>,
        trace: Option<Vec<String>>,
    }
    let mut groups: BTreeMap<Key, Acc> = BTreeMap::new();
    for p in profiles {
        // Records repeated within one input are summed before merging.
        let mut local: BTreeMap<Key, (f64, u64, Option<Vec<String>>)> = BTreeMap::new();
        for r in &p.resources {
            let e = local
                .entry((r.uid.clone(), r.kind, r.workload_size))
                .or_insert((0.0, 0, r.trace.clone()));
            e.0 += r.amount_us;
            e.1 += r.call_count;
            if r.trace < e.2 {
                e.2 = r.trace.clone();
            }
        }
        for (key, (amount, count, trace)) in local {
            let acc = groups.entry(key).or_insert_with(|| Acc {
                amounts: Vec::new(),
                counts: Vec::new(),
                trace: trace.clone(),
            });
            acc.amounts.push(amount);
            acc.counts.push(count as f64);
            if trace < acc.trace {
                acc.trace = trace;
            }
        }
    }

    let n = profiles.len();
    let mut notes = Vec::new();
    let mut resources = Vec::with_capacity(groups.len());
    for ((uid, kind, workload_size), mut acc) in groups {
        if acc.amounts.len() < n {
            notes.push(format!(
                "merge: {uid} ({}) present in {} of {n} repetitions",
                match kind {
                    ResourceKind::Exclusive => "exclusive",
                    ResourceKind::Inclusive => "inclusive",
                },
                acc.amounts.len()
            ));
        }
        let amount_us = median(&mut acc.amounts);
        let call_count = (median(&mut acc.counts) + 0.5).floor().max(1.0) as u64;
        resources.push(ResourceRecord {
            uid,
            amount_us,
            kind,
            call_count,
            workload_size,
            trace: acc.trace,
        });
    }

    let mut header = first.header.clone();
    header.repetitions = n as u32;
    header.collected_at = profiles
        .iter()
        .map(|p| p.header.collected_at)
        .max()
        .unwrap_or(header.collected_at);
    let mut merged = Profile::new(header, resources);
    merged.notes = notes;
    merged.validate()?;
    Ok(merged)
}

pub(crate) mod second_timestamp {
    use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.trunc_subsecs(0).format(FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&s, FORMAT)
            .map(|n| n.and_utc())
            .map_err(serde::de::Error::custom)
    }
}

/// Formats a timestamp the way headers and the store index do.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
        .ok()
        .map(|n| n.and_utc())
}
