//! Performance models: functions from workload size to expected cost.
//!
//! Parametric families are fitted by ordinary least squares in a linearized
//! space (power and exponential through `ln y`, logarithmic and linearithmic
//! through a transform of `x`) and always scored by R² in the original space.
//! Nonparametric models (regressogram, moving average, Nadaraya-Watson kernel
//! regression) keep the data they need to be evaluated anywhere in range.
//!
//! Complexity ladder used for tie-breaks and for order comparison:
//! constant < logarithmic < linear < linearithmic < quadratic < power <
//! exponential. The position of `power` is a convention: its exponent is not
//! inspected.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{Profile, ResourceKind};

/// Default sample count for trapezoid integration of smooth estimators.
pub const DEFAULT_QUADRATURE_SAMPLES: usize = 1000;

/// R² values closer than this are treated as tied when ranking fits.
const R2_TIE: f64 = 1e-9;

/// Significance level of the trend test in [`fit_all`].
pub const TREND_ALPHA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{uid}: too few points ({points} points, {distinct} distinct x values)")]
    TooFewPoints {
        uid: String,
        points: usize,
        distinct: usize,
    },
    #[error("{family} not applicable: {reason}")]
    Domain { family: ModelFamily, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel weights vanish at x = {x} (bandwidth {bandwidth} too small)")]
    ZeroWeights { x: f64, bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Constant,
    Logarithmic,
    Linear,
    Linearithmic,
    Quadratic,
    Power,
    Exponential,
    Regressogram,
    MovingAverage,
    Kernel,
}

impl ModelFamily {
    pub const PARAMETRIC: [ModelFamily; 7] = [
        ModelFamily::Constant,
        ModelFamily::Logarithmic,
        ModelFamily::Linear,
        ModelFamily::Linearithmic,
        ModelFamily::Quadratic,
        ModelFamily::Power,
        ModelFamily::Exponential,
    ];

    pub fn is_parametric(self) -> bool {
        self.complexity_order().is_some()
    }

    /// Rank on the complexity ladder; `None` for nonparametric families.
    pub fn complexity_order(self) -> Option<u8> {
        Some(match self {
            ModelFamily::Constant => 0,
            ModelFamily::Logarithmic => 1,
            ModelFamily::Linear => 2,
            ModelFamily::Linearithmic => 3,
            ModelFamily::Quadratic => 4,
            ModelFamily::Power => 5,
            ModelFamily::Exponential => 6,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Constant => "constant",
            ModelFamily::Logarithmic => "logarithmic",
            ModelFamily::Linear => "linear",
            ModelFamily::Linearithmic => "linearithmic",
            ModelFamily::Quadratic => "quadratic",
            ModelFamily::Power => "power",
            ModelFamily::Exponential => "exponential",
            ModelFamily::Regressogram => "regressogram",
            ModelFamily::MovingAverage => "moving_average",
            ModelFamily::Kernel => "kernel",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::PARAMETRIC
            .iter()
            .chain(&[
                ModelFamily::Regressogram,
                ModelFamily::MovingAverage,
                ModelFamily::Kernel,
            ])
            .find(|f| f.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown model family {s:?}"))
    }
}

/// Observations of one uid: x = workload size, y = cost in µs.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSeries {
    pub uid: String,
    pub points: Vec<(f64, f64)>,
}

impl DataSeries {
    pub fn new(uid: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            uid: uid.into(),
            points,
        }
    }

    fn distinct_x(&self) -> usize {
        let mut xs: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    }

    fn require(&self, min_points: usize) -> Result<(), ModelError> {
        let distinct = self.distinct_x();
        if self.points.len() < min_points || distinct < 2 {
            return Err(ModelError::TooFewPoints {
                uid: self.uid.clone(),
                points: self.points.len(),
                distinct,
            });
        }
        Ok(())
    }

    fn x_interval(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = self
            .points
            .iter()
            .map(|p| p.0)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn sorted(&self) -> Vec<(f64, f64)> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub x_start: f64,
    pub x_end: f64,
    pub mean_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceModel {
    pub uid: String,
    pub family: ModelFamily,
    #[serde(default)]
    pub b0: f64,
    #[serde(default)]
    pub b1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bins: Vec<Bin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Knots of nonparametric curves: smoothed values for moving averages,
    /// the observations themselves for kernel regression.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<(f64, f64)>,
    pub r_squared: f64,
    pub x_interval: (f64, f64),
}

impl PerformanceModel {
    /// A parametric model with R² not yet computed.
    pub fn parametric(uid: &str, family: ModelFamily, b0: f64, b1: f64, x_interval: (f64, f64)) -> Self {
        Self {
            uid: uid.to_string(),
            family,
            b0,
            b1,
            bins: Vec::new(),
            window: None,
            bandwidth: None,
            points: Vec::new(),
            r_squared: 0.0,
            x_interval,
        }
    }

    /// Evaluates the model at `x`.
    pub fn predict(&self, x: f64) -> Result<f64, ModelError> {
        let (b0, b1) = (self.b0, self.b1);
        Ok(match self.family {
            ModelFamily::Constant => b0,
            ModelFamily::Logarithmic => b0 + b1 * x.ln(),
            ModelFamily::Linear => b0 + b1 * x,
            ModelFamily::Linearithmic => b0 + b1 * xlnx(x),
            ModelFamily::Quadratic => b0 + b1 * x * x,
            ModelFamily::Power => b0 * x.powf(b1),
            ModelFamily::Exponential => b0 * b1.powf(x),
            ModelFamily::Regressogram => step_value(&self.bins, x),
            ModelFamily::MovingAverage => interpolate(&self.points, x),
            ModelFamily::Kernel => {
                nadaraya_watson(&self.points, self.bandwidth.unwrap_or(0.0), x)?
            }
        })
    }

    /// Short human description, e.g. `quadratic (r²=0.9993)`.
    pub fn describe(&self) -> String {
        format!("{} (r²={:.4})", self.family, self.r_squared)
    }
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn step_value(bins: &[Bin], x: f64) -> f64 {
    bins.iter()
        .find(|b| x < b.x_end)
        .or(bins.last())
        .map_or(0.0, |b| b.mean_y)
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    match points {
        [] => 0.0,
        [only] => only.1,
        _ => {
            if x <= points[0].0 {
                return points[0].1;
            }
            let last = points[points.len() - 1];
            if x >= last.0 {
                return last.1;
            }
            let i = points.partition_point(|p| p.0 <= x);
            let (x0, y0) = points[i - 1];
            let (x1, y1) = points[i];
            if x1 == x0 {
                y1
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }
}

fn nadaraya_watson(points: &[(f64, f64)], bandwidth: f64, x: f64) -> Result<f64, ModelError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(xi, yi) in points {
        let u = (x - xi) / bandwidth;
        let w = (-0.5 * u * u).exp();
        num += w * yi;
        den += w;
    }
    if den == 0.0 || !den.is_finite() {
        return Err(ModelError::ZeroWeights { x, bandwidth });
    }
    Ok(num / den)
}

/// R² of `predicted` against `ys` in the original space.
///
/// When all observations are equal (SST = 0) R² is 1 for a perfect fit and 0
/// otherwise.
pub fn r_squared(ys: &[f64], predicted: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = ys
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    if !sse.is_finite() {
        return 0.0;
    }
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(f64::MIN_POSITIVE);
    if sst <= (1e-12 * scale).powi(2) * n {
        // Degenerate spread: perfect only if residuals are at rounding level.
        return if sse <= (1e-9 * scale).powi(2) * n { 1.0 } else { 0.0 };
    }
    (1.0 - sse / sst).clamp(0.0, 1.0)
}

/// Simple linear regression of `ys` on `xs`; returns (intercept, slope).
fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Fits one parametric family by least squares.
pub fn fit_parametric(series: &DataSeries, family: ModelFamily) -> Result<PerformanceModel, ModelError> {
    series.require(3)?;
    let domain = |reason: &str| ModelError::Domain {
        family,
        reason: reason.to_string(),
    };
    let xs: Vec<f64> = series.points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let needs_positive_x = matches!(
        family,
        ModelFamily::Logarithmic | ModelFamily::Linearithmic | ModelFamily::Power
    );
    if needs_positive_x && xs.iter().any(|&x| x <= 0.0) {
        return Err(domain("requires all x > 0"));
    }
    let needs_positive_y = matches!(family, ModelFamily::Power | ModelFamily::Exponential);
    if needs_positive_y && ys.iter().any(|&y| y <= 0.0) {
        return Err(domain("requires all y > 0"));
    }
    let transform = |f: fn(f64) -> f64, v: &[f64]| v.iter().map(|&x| f(x)).collect::<Vec<f64>>();
    let degenerate = || domain("transformed design has no spread");

    let (b0, b1) = match family {
        ModelFamily::Constant => (ys.iter().sum::<f64>() / ys.len() as f64, 0.0),
        ModelFamily::Logarithmic => least_squares(&transform(f64::ln, &xs), &ys).ok_or_else(degenerate)?,
        ModelFamily::Linear => least_squares(&xs, &ys).ok_or_else(degenerate)?,
        ModelFamily::Linearithmic => least_squares(&transform(xlnx, &xs), &ys).ok_or_else(degenerate)?,
        ModelFamily::Quadratic => least_squares(&transform(|x| x * x, &xs), &ys).ok_or_else(degenerate)?,
        ModelFamily::Power => {
            let (a, b) = least_squares(&transform(f64::ln, &xs), &transform(f64::ln, &ys))
                .ok_or_else(degenerate)?;
            (a.exp(), b)
        }
        ModelFamily::Exponential => {
            let (a, b) = least_squares(&xs, &transform(f64::ln, &ys)).ok_or_else(degenerate)?;
            (a.exp(), b.exp())
        }
        other => {
            return Err(ModelError::InvalidParameter(format!(
                "{other} is not a parametric family"
            )))
        }
    };
    let mut model = PerformanceModel::parametric(&series.uid, family, b0, b1, series.x_interval());
    let predicted = xs
        .iter()
        .map(|&x| model.predict(x))
        .collect::<Result<Vec<_>, _>>()?;
    if predicted.iter().any(|p| !p.is_finite()) {
        return Err(domain("prediction overflows"));
    }
    model.r_squared = r_squared(&ys, &predicted);
    Ok(model)
}

/// Smallest R² at which a one-parameter trend over `n` points beats the
/// constant model: the F-test with 1 and n − 2 degrees of freedom at
/// significance [`TREND_ALPHA`].
pub fn significant_r2(n: usize) -> f64 {
    if n < 3 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - TREND_ALPHA / 2.0);
    let f = t * t;
    f / (f + df)
}

/// Fits every applicable parametric family, best first.
///
/// Ordering is by R² descending; fits within `1e-9` of each other count as
/// tied and the lower complexity order wins. A trend whose R² is below
/// [`significant_r2`] is indistinguishable from flat data, so it ties with
/// the constant fit and the constant fit comes first.
pub fn fit_all(series: &DataSeries) -> Vec<PerformanceModel> {
    let mut fits: Vec<PerformanceModel> = ModelFamily::PARAMETRIC
        .iter()
        .filter_map(|&f| fit_parametric(series, f).ok())
        .collect();
    rank_models(&mut fits);
    let flat = fits
        .first()
        .is_some_and(|head| head.family != ModelFamily::Constant && head.r_squared < significant_r2(series.points.len()));
    if flat {
        if let Some(i) = fits.iter().position(|m| m.family == ModelFamily::Constant) {
            fits[..=i].rotate_right(1);
        }
    }
    fits
}

/// Sorts models best first: R² descending (quantized to `1e-9`), then lower
/// complexity order.
pub fn rank_models(models: &mut [PerformanceModel]) {
    models.sort_by_key(|m| {
        let bucket = (m.r_squared / R2_TIE).round() as i64;
        (std::cmp::Reverse(bucket), m.family.complexity_order().unwrap_or(u8::MAX))
    });
}

/// Equal-width bin means over the observed x range.
///
/// Empty bins repeat the mean of the nearest nonempty bin to their left; a
/// leading run of empty bins takes the first nonempty mean instead.
pub fn fit_regressogram(series: &DataSeries, bin_count: usize) -> Result<PerformanceModel, ModelError> {
    if bin_count < 1 {
        return Err(ModelError::InvalidParameter("bin_count must be at least 1".into()));
    }
    series.require(2)?;
    let (lo, hi) = series.x_interval();
    let width = (hi - lo) / bin_count as f64;
    let mut sums = vec![(0.0f64, 0usize); bin_count];
    let index_of = |x: f64| (((x - lo) / width).floor() as usize).min(bin_count - 1);
    for &(x, y) in &series.points {
        let s = &mut sums[index_of(x)];
        s.0 += y;
        s.1 += 1;
    }
    let first_mean = sums
        .iter()
        .find(|s| s.1 > 0)
        .map(|s| s.0 / s.1 as f64)
        .unwrap_or(0.0);
    let mut bins = Vec::with_capacity(bin_count);
    let mut carry = first_mean;
    for (i, (sum, count)) in sums.iter().enumerate() {
        if *count > 0 {
            carry = sum / *count as f64;
        }
        let x_start = lo + width * i as f64;
        let x_end = if i + 1 == bin_count { hi } else { lo + width * (i + 1) as f64 };
        bins.push(Bin {
            x_start,
            x_end,
            mean_y: carry,
        });
    }
    let ys: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let predicted: Vec<f64> = series
        .points
        .iter()
        .map(|&(x, _)| bins[index_of(x)].mean_y)
        .collect();
    Ok(PerformanceModel {
        uid: series.uid.clone(),
        family: ModelFamily::Regressogram,
        b0: 0.0,
        b1: 0.0,
        bins,
        window: None,
        bandwidth: None,
        points: Vec::new(),
        r_squared: r_squared(&ys, &predicted),
        x_interval: (lo, hi),
    })
}

/// Centered simple moving average; windows shrink at both edges.
pub fn fit_moving_average(series: &DataSeries, window: usize) -> Result<PerformanceModel, ModelError> {
    if window < 1 {
        return Err(ModelError::InvalidParameter("window must be at least 1".into()));
    }
    if window > series.points.len() {
        return Err(ModelError::InvalidParameter(format!(
            "window {window} exceeds point count {}",
            series.points.len()
        )));
    }
    series.require(2)?;
    let pts = series.sorted();
    let n = pts.len();
    let back = (window - 1) / 2;
    let ahead = window / 2;
    let smoothed: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(n - 1);
            let slice = &pts[lo..=hi];
            (pts[i].0, slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64)
        })
        .collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let predicted: Vec<f64> = smoothed.iter().map(|p| p.1).collect();
    Ok(PerformanceModel {
        uid: series.uid.clone(),
        family: ModelFamily::MovingAverage,
        b0: 0.0,
        b1: 0.0,
        bins: Vec::new(),
        window: Some(window),
        bandwidth: None,
        r_squared: r_squared(&ys, &predicted),
        x_interval: series.x_interval(),
        points: smoothed,
    })
}

/// Silverman's rule of thumb: 0.9·min(σ, IQR/1.34)·n^(−1/5).
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = crate::stats::quantile_sorted(&sorted, 0.75) - crate::stats::quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Nadaraya-Watson regression with a Gaussian kernel. A bandwidth of 0
/// selects Silverman's rule.
pub fn fit_kernel(series: &DataSeries, bandwidth: f64) -> Result<PerformanceModel, ModelError> {
    if !(bandwidth >= 0.0) || !bandwidth.is_finite() {
        return Err(ModelError::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    series.require(2)?;
    let pts = series.sorted();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let h = if bandwidth == 0.0 {
        silverman_bandwidth(&xs)
    } else {
        bandwidth
    };
    if !(h > 0.0) {
        return Err(ModelError::InvalidParameter(format!("derived bandwidth {h} is not positive")));
    }
    let predicted = xs
        .iter()
        .map(|&x| nadaraya_watson(&pts, h, x))
        .collect::<Result<Vec<_>, _>>()?;
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Ok(PerformanceModel {
        uid: series.uid.clone(),
        family: ModelFamily::Kernel,
        b0: 0.0,
        b1: 0.0,
        bins: Vec::new(),
        window: None,
        bandwidth: Some(h),
        r_squared: r_squared(&ys, &predicted),
        x_interval: series.x_interval(),
        points: pts,
    })
}

/// ∫ₐᵇ m(x) dx with the default quadrature sample count.
pub fn model_integral(m: &PerformanceModel, a: f64, b: f64) -> Result<f64, ModelError> {
    model_integral_with_samples(m, a, b, DEFAULT_QUADRATURE_SAMPLES)
}

pub fn model_integral_with_samples(
    m: &PerformanceModel,
    a: f64,
    b: f64,
    samples: usize,
) -> Result<f64, ModelError> {
    if !(a < b) {
        return Err(ModelError::InvalidParameter(format!(
            "integration bounds must satisfy a < b, got [{a}, {b}]"
        )));
    }
    let domain = |reason: String| ModelError::Domain {
        family: m.family,
        reason,
    };
    let (b0, b1) = (m.b0, m.b1);
    Ok(match m.family {
        ModelFamily::Constant => b0 * (b - a),
        ModelFamily::Logarithmic => {
            if a <= 0.0 {
                return Err(domain(format!("logarithm undefined on [{a}, {b}]")));
            }
            let anti = |x: f64| x * x.ln() - x;
            b0 * (b - a) + b1 * (anti(b) - anti(a))
        }
        ModelFamily::Linear => b0 * (b - a) + b1 * (b * b - a * a) / 2.0,
        ModelFamily::Linearithmic => {
            if a < 0.0 {
                return Err(domain(format!("x·ln x undefined on [{a}, {b}]")));
            }
            let anti = |x: f64| if x == 0.0 { 0.0 } else { x * x / 2.0 * x.ln() - x * x / 4.0 };
            b0 * (b - a) + b1 * (anti(b) - anti(a))
        }
        ModelFamily::Quadratic => b0 * (b - a) + b1 * (b.powi(3) - a.powi(3)) / 3.0,
        ModelFamily::Power => {
            if a < 0.0 || (a == 0.0 && b1 <= -1.0) {
                return Err(domain(format!("x^{b1} not integrable on [{a}, {b}]")));
            }
            if (b1 + 1.0).abs() < 1e-12 {
                b0 * (b / a).ln()
            } else {
                b0 * (b.powf(b1 + 1.0) - a.powf(b1 + 1.0)) / (b1 + 1.0)
            }
        }
        ModelFamily::Exponential => {
            if b1 <= 0.0 {
                return Err(domain(format!("base {b1} must be positive")));
            }
            let ln_base = b1.ln();
            if ln_base.abs() < 1e-15 {
                b0 * (b - a)
            } else {
                b0 * (b1.powf(b) - b1.powf(a)) / ln_base
            }
        }
        ModelFamily::Regressogram => step_integral(&m.bins, a, b),
        ModelFamily::MovingAverage | ModelFamily::Kernel => {
            let n = samples.max(1);
            let h = (b - a) / n as f64;
            let mut sum = 0.5 * (m.predict(a)? + m.predict(b)?);
            for i in 1..n {
                sum += m.predict(a + h * i as f64)?;
            }
            sum * h
        }
    })
}

/// Exact integral of the step function; the first and last bins extend to
/// −∞ and +∞ respectively.
fn step_integral(bins: &[Bin], a: f64, b: f64) -> f64 {
    let n = bins.len();
    bins.iter()
        .enumerate()
        .map(|(i, bin)| {
            let lo = if i == 0 { f64::NEG_INFINITY } else { bin.x_start };
            let hi = if i + 1 == n { f64::INFINITY } else { bin.x_end };
            let overlap = b.min(hi) - a.max(lo);
            if overlap > 0.0 {
                overlap * bin.mean_y
            } else {
                0.0
            }
        })
        .sum()
}

/// Which record kind feeds model fitting: inclusive time when the profile
/// has it for a uid, exclusive otherwise.
pub fn series_from_profile(profile: &Profile) -> Vec<DataSeries> {
    use std::collections::BTreeMap;
    let mut by_uid: BTreeMap<&str, (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in &profile.resources {
        let Some(x) = r.effective_size(&profile.header) else {
            continue;
        };
        let entry = by_uid.entry(&r.uid).or_default();
        match r.kind {
            ResourceKind::Inclusive => entry.0.push((x as f64, r.amount_us)),
            ResourceKind::Exclusive => entry.1.push((x as f64, r.amount_us)),
        }
    }
    by_uid
        .into_iter()
        .map(|(uid, (incl, excl))| {
            let mut pts = if incl.is_empty() { excl } else { incl };
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            DataSeries::new(uid, pts)
        })
        .collect()
}
