//! File emitters for visualizing a profile: an SVG scatter plot with the best
//! model, folded stacks for flame-graph tools, and CSV bar data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::models::{rank_models, series_from_profile, PerformanceModel};
use crate::profile::{format_float, Profile, ResourceKind};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const CURVE_SAMPLES: usize = 200;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no data points for {0:?} (records need a workload size)")]
    EmptySeries(String),
    #[error("profile has no resources")]
    EmptyProfile,
}

/// A rendered scatter plot with the pixel coordinates it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub svg: String,
    pub points_px: Vec<(f64, f64)>,
    pub curve_px: Vec<(f64, f64)>,
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        (
            MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * w,
            HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * h,
        )
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot of `uid`'s data series with its best stored model overlaid.
pub fn emit_scatter(profile: &Profile, uid: &str) -> Result<Scatter, ReportError> {
    let series = series_from_profile(profile)
        .into_iter()
        .find(|s| s.uid == uid && !s.points.is_empty())
        .ok_or_else(|| ReportError::EmptySeries(uid.to_string()))?;
    let mut models: Vec<PerformanceModel> = profile.models.iter().filter(|m| m.uid == uid).cloned().collect();
    rank_models(&mut models);
    let best = models.first();

    let xs = series.points.iter().map(|p| p.0);
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let x_range = padded(x_lo, x_hi);
    let samples: Vec<(f64, f64)> = match best {
        Some(m) => (0..CURVE_SAMPLES)
            .map(|i| x_range.0 + (x_range.1 - x_range.0) * i as f64 / (CURVE_SAMPLES - 1) as f64)
            .filter_map(|x| m.predict(x).ok().filter(|y| y.is_finite()).map(|y| (x, y)))
            .collect(),
        None => Vec::new(),
    };
    let ys = series.points.iter().chain(&samples).map(|p| p.1);
    let (y_lo, y_hi) = ys.fold((0.0f64, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let axes = Axes {
        x: x_range,
        y: padded(y_lo, y_hi),
    };

    let points_px: Vec<(f64, f64)> = series.points.iter().map(|&(x, y)| axes.px(x, y)).collect();
    let curve_px: Vec<(f64, f64)> = samples.iter().map(|&(x, y)| axes.px(x, y)).collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(uid));
    let (x0, y0) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {MARGIN_TOP} L{x0} {y0} L{} {y0}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    for (v, anchor, x, y) in [
        (axes.x.0, "start", x0, y0 + 18.0),
        (axes.x.1, "end", WIDTH - MARGIN_RIGHT, y0 + 18.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" font-size="11" text-anchor="{anchor}">{}</text>"#, format_float(v));
    }
    for (v, y) in [(axes.y.0, y0), (axes.y.1, MARGIN_TOP)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            format_float(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">workload size</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 20 {})">time [µs]</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (x, y) in &points_px {
        let _ = writeln!(svg, r##"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="#1f77b4"/>"##);
    }
    match best {
        Some(m) => {
            let path: Vec<String> = curve_px.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
            let _ = writeln!(svg, r##"<polyline points="{}" stroke="#d62728" fill="none"/>"##, path.join(" "));
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
                WIDTH - MARGIN_RIGHT - 4.0,
                MARGIN_TOP + 14.0,
                escape(&m.describe())
            );
        }
        None => {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="12" text-anchor="end">no model stored for this uid</text>"#,
                WIDTH - MARGIN_RIGHT - 4.0,
                MARGIN_TOP + 14.0
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(Scatter {
        svg,
        points_px,
        curve_px,
    })
}

/// Folded stacks `caller;...;uid amount`, one line per distinct stack,
/// sorted. Exclusive records are used; a profile without any falls back to
/// inclusive ones.
pub fn emit_flamegraph_folded(profile: &Profile) -> String {
    let kind = if profile.resources.iter().any(|r| r.kind == ResourceKind::Exclusive) {
        ResourceKind::Exclusive
    } else {
        ResourceKind::Inclusive
    };
    let mut stacks: BTreeMap<String, f64> = BTreeMap::new();
    for r in profile.resources.iter().filter(|r| r.kind == kind) {
        let mut frames: Vec<&str> = r.trace.iter().flatten().map(String::as_str).collect();
        frames.push(&r.uid);
        *stacks.entry(frames.join(";")).or_default() += r.amount_us;
    }
    stacks
        .into_iter()
        .map(|(stack, amount)| format!("{stack} {}\n", format_float(amount)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarGrouping {
    Uid,
    WorkloadSize,
}

impl std::str::FromStr for BarGrouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uid" => Ok(BarGrouping::Uid),
            "workload_size" => Ok(BarGrouping::WorkloadSize),
            other => Err(format!("unknown grouping {other:?} (expected uid or workload_size)")),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV `group,uid,amount_us`. Each uid contributes its inclusive records when
/// it has any, else its exclusive ones; amounts are summed per row.
pub fn emit_bars(profile: &Profile, grouping: BarGrouping) -> Result<String, ReportError> {
    if profile.resources.is_empty() {
        return Err(ReportError::EmptyProfile);
    }
    let has_inclusive: std::collections::BTreeSet<&str> = profile
        .resources
        .iter()
        .filter(|r| r.kind == ResourceKind::Inclusive)
        .map(|r| r.uid.as_str())
        .collect();
    // Sizes sort numerically, with unsized records last.
    let mut rows: BTreeMap<(Option<u64>, String, String), f64> = BTreeMap::new();
    for r in &profile.resources {
        let wanted = if has_inclusive.contains(r.uid.as_str()) {
            ResourceKind::Inclusive
        } else {
            ResourceKind::Exclusive
        };
        if r.kind != wanted {
            continue;
        }
        let key = match grouping {
            BarGrouping::Uid => (None, r.uid.clone(), r.uid.clone()),
            BarGrouping::WorkloadSize => match r.effective_size(&profile.header) {
                Some(n) => (Some(n), n.to_string(), r.uid.clone()),
                None => (None, "none".to_string(), r.uid.clone()),
            },
        };
        *rows.entry(key).or_default() += r.amount_us;
    }
    let mut entries: Vec<_> = rows.into_iter().collect();
    entries.sort_by(|a, b| {
        let rank = |k: &(Option<u64>, String, String)| (k.0.is_none(), k.0, k.1.clone(), k.2.clone());
        rank(&a.0).cmp(&rank(&b.0))
    });
    let mut out = String::from("group,uid,amount_us\n");
    for ((_, group, uid), amount) in entries {
        let _ = writeln!(out, "{},{},{}", csv_field(&group), csv_field(&uid), format_float(amount));
    }
    Ok(out)
}
