//! Standard monocular depth evaluation measures.
//!
//! All sums use compensated (Neumaier) accumulation in pixel order so pooled
//! results over many images do not depend on how pixels are grouped.

use std::fmt;

use crate::depth::DepthMap;
use crate::error::{Error, Result};

/// δ-accuracy thresholds `1.25`, `1.25²`, `1.25³`. Counting uses strict `<`.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rms: f64,
    pub rel: f64,
    pub log10: f64,
    pub rmslog: f64,
    /// Percentages in `[0, 100]`.
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

impl MetricsReport {
    /// `key=value` lines, six significant digits.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rms={}", sig6(self.rms))?;
        writeln!(f, "rel={}", sig6(self.rel))?;
        writeln!(f, "log10={}", sig6(self.log10))?;
        writeln!(f, "rmslog={}", sig6(self.rmslog))?;
        writeln!(f, "delta1={}", sig6(self.delta1))?;
        writeln!(f, "delta2={}", sig6(self.delta2))?;
        writeln!(f, "delta3={}", sig6(self.delta3))?;
        writeln!(f, "pixels={}", self.pixel_count)
    }
}

/// Formats like C's `%.6g`.
pub fn sig6(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    let sci = format!("{value:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{value:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Pools pixels from any number of image pairs into a single report.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    sq: Neumaier,
    rel: Neumaier,
    log10: Neumaier,
    sq_log: Neumaier,
    hits: [usize; 3],
    count: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, gt: f64, pred: f64) {
        let diff = gt - pred;
        self.sq.add(diff * diff);
        self.rel.add(diff.abs() / gt);
        self.log10.add((gt.log10() - pred.log10()).abs());
        let dl = gt.ln() - pred.ln();
        self.sq_log.add(dl * dl);
        let ratio = (gt / pred).max(pred / gt);
        for (hit, thr) in self.hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < thr {
                *hit += 1;
            }
        }
        self.count += 1;
    }

    /// Adds every pixel valid in both maps, optionally restricted to
    /// `lo <= gt < hi`.
    pub fn push_maps(
        &mut self,
        gt: &DepthMap,
        pred: &DepthMap,
        range: Option<(f64, f64)>,
    ) -> Result<()> {
        self.push_maps_where(gt, pred, |g| range.is_none_or(|(lo, hi)| lo <= g && g < hi))
    }

    /// Adds every pixel valid in both maps whose ground truth passes `keep`.
    pub fn push_maps_where(
        &mut self,
        gt: &DepthMap,
        pred: &DepthMap,
        keep: impl Fn(f64) -> bool,
    ) -> Result<()> {
        check_dims(gt, pred)?;
        for i in 0..gt.len() {
            if let (Some(g), Some(p)) = (gt.get(i), pred.get(i)) {
                if keep(g) {
                    self.push(g, p);
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `None` when no pixel was pushed.
    pub fn report(&self) -> Option<MetricsReport> {
        if self.count == 0 {
            return None;
        }
        let t = self.count as f64;
        let pct = |h: usize| 100.0 * h as f64 / t;
        Some(MetricsReport {
            rms: (self.sq.value() / t).sqrt(),
            rel: self.rel.value() / t,
            log10: self.log10.value() / t,
            rmslog: (self.sq_log.value() / t).sqrt(),
            delta1: pct(self.hits[0]),
            delta2: pct(self.hits[1]),
            delta3: pct(self.hits[2]),
            pixel_count: self.count,
        })
    }
}

fn check_dims(gt: &DepthMap, pred: &DepthMap) -> Result<()> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::shape(format!(
            "ground truth is {}x{}, prediction is {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    Ok(())
}

/// Evaluates over pixels valid in both maps.
pub fn evaluate(gt: &DepthMap, pred: &DepthMap) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    acc.push_maps(gt, pred, None)?;
    acc.report()
        .ok_or_else(|| Error::Empty("no pixel is valid in both maps".into()))
}

pub fn validate_ranges(ranges: &[(f64, f64)]) -> Result<()> {
    for &(lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "malformed depth range ({lo}, {hi})"
            )));
        }
    }
    let mut sorted = ranges.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::InvalidArgument("depth ranges overlap".into()));
    }
    Ok(())
}

/// Whether `g` falls in `range`. Ranges are half-open `[lo, hi)` except the
/// highest range of a set, which also takes `hi` so that contiguous ranges
/// ending at `d_max` cover every pixel.
pub fn range_filter(ranges: &[(f64, f64)], range: (f64, f64)) -> impl Fn(f64) -> bool {
    let top = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = range;
    move |g| lo <= g && (g < hi || (hi == top && g == hi))
}

/// One entry per range; `None` marks a range that holds no ground-truth pixel.
pub fn evaluate_by_range(
    gt: &DepthMap,
    pred: &DepthMap,
    ranges: &[(f64, f64)],
) -> Result<Vec<Option<MetricsReport>>> {
    validate_ranges(ranges)?;
    ranges
        .iter()
        .map(|&r| {
            let mut acc = MetricsAccumulator::new();
            acc.push_maps_where(gt, pred, range_filter(ranges, r))?;
            Ok(acc.report())
        })
        .collect()
}
