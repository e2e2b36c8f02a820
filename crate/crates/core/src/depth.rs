//! Depth maps, discretization schemes and score volumes.
//!
//! A [`DepthBinning`] splits `[d_min, d_max]` into `B` bins, either uniform in
//! depth or uniform in `ln d`. Continuous depths map to 0-based bin labels and
//! labels decode back to the bin center (arithmetic mean of the edges for
//! linear bins, geometric mean for log bins).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Per-pixel metric depth with a validity mask. Invalid pixels hold `NaN`.
#[derive(Debug, Clone)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from explicit values and mask. Every valid depth must be
    /// finite and strictly positive.
    pub fn new(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::shape(format!(
                "depth map {width}x{height} needs {n} values and mask entries, got {} and {}",
                values.len(),
                valid.len()
            )));
        }
        for (v, &ok) in values.iter_mut().zip(&valid) {
            if ok {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::InvalidDepth(*v));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map where any non-finite or non-positive value is invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_values(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.valid[index].then(|| self.values[index])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

impl PartialEq for DepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.valid == other.valid
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.valid)
                .all(|((a, b), &ok)| !ok || a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinSpace {
    Linear,
    Log,
}

impl fmt::Display for BinSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinSpace::Linear => "linear",
            BinSpace::Log => "log",
        })
    }
}

impl FromStr for BinSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(BinSpace::Linear),
            "log" => Ok(BinSpace::Log),
            other => Err(Error::Config(format!("unknown bin space '{other}'"))),
        }
    }
}

/// Discretization of `[d_min, d_max]` into `B` contiguous bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBinning {
    space: BinSpace,
    d_min: f64,
    d_max: f64,
    edges: Vec<f64>,
    centers: Vec<f64>,
}

impl DepthBinning {
    pub fn new(bins: usize, d_min: f64, d_max: f64, space: BinSpace) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidBinning("bin count must be positive".into()));
        }
        if !(d_min.is_finite() && d_min > 0.0) {
            return Err(Error::InvalidBinning(format!(
                "d_min must be positive, got {d_min}"
            )));
        }
        if !(d_max.is_finite() && d_max > d_min) {
            return Err(Error::InvalidBinning(format!(
                "d_max must exceed d_min ({d_min}), got {d_max}"
            )));
        }

        let mut edges: Vec<f64> = match space {
            BinSpace::Linear => {
                let step = (d_max - d_min) / bins as f64;
                (0..=bins).map(|k| d_min + step * k as f64).collect()
            }
            BinSpace::Log => {
                let (lo, hi) = (d_min.ln(), d_max.ln());
                let step = (hi - lo) / bins as f64;
                (0..=bins).map(|k| (lo + step * k as f64).exp()).collect()
            }
        };
        edges[0] = d_min;
        edges[bins] = d_max;
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBinning(format!(
                "{bins} bins over [{d_min}, {d_max}] do not give strictly increasing edges"
            )));
        }

        let centers = edges
            .windows(2)
            .map(|w| match space {
                BinSpace::Linear => 0.5 * (w[0] + w[1]),
                BinSpace::Log => (w[0] * w[1]).sqrt(),
            })
            .collect();

        Ok(Self {
            space,
            d_min,
            d_max,
            edges,
            centers,
        })
    }

    pub fn bins(&self) -> usize {
        self.centers.len()
    }

    pub fn space(&self) -> BinSpace {
        self.space
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Bin index `k` with `edges[k] <= d < edges[k+1]`; depths outside the
    /// range clamp to the first or last bin.
    pub fn label_of(&self, depth: f64) -> Result<usize> {
        if !depth.is_finite() || depth <= 0.0 {
            return Err(Error::InvalidDepth(depth));
        }
        let above = self.edges.partition_point(|&e| e <= depth);
        Ok(above.saturating_sub(1).min(self.bins() - 1))
    }

    pub fn depth_of(&self, label: usize) -> Result<f64> {
        self.centers.get(label).copied().ok_or(Error::OutOfRange {
            index: label,
            limit: self.bins(),
        })
    }

    /// Largest distance between a depth in range and its decoded center,
    /// measured in the binning's own space (meters or `ln` meters).
    pub fn half_bin_bound(&self) -> f64 {
        let b = self.bins() as f64;
        match self.space {
            BinSpace::Linear => (self.d_max - self.d_min) / (2.0 * b),
            BinSpace::Log => (self.d_max / self.d_min).ln() / (2.0 * b),
        }
    }
}

pub fn make_binning(bins: usize, d_min: f64, d_max: f64, space: BinSpace) -> Result<DepthBinning> {
    DepthBinning::new(bins, d_min, d_max, space)
}

pub fn depth_to_label(depth: f64, binning: &DepthBinning) -> Result<usize> {
    binning.label_of(depth)
}

pub fn label_to_depth(label: usize, binning: &DepthBinning) -> Result<f64> {
    binning.depth_of(label)
}

/// Per-pixel bin labels with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    valid: Vec<bool>,
}

impl LabelMap {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<usize>,
        valid: Vec<bool>,
        bins: usize,
    ) -> Result<Self> {
        let n = width * height;
        if labels.len() != n || valid.len() != n {
            return Err(Error::shape(format!(
                "label map {width}x{height} needs {n} labels and mask entries"
            )));
        }
        if let Some(&bad) = labels
            .iter()
            .zip(&valid)
            .filter(|(_, &ok)| ok)
            .map(|(l, _)| l)
            .find(|&&l| l >= bins)
        {
            return Err(Error::OutOfRange {
                index: bad,
                limit: bins,
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            valid,
        })
    }

    /// A fully valid label map.
    pub fn dense(width: usize, height: usize, labels: Vec<usize>, bins: usize) -> Result<Self> {
        let n = labels.len();
        Self::new(width, height, labels, vec![true; n], bins)
    }

    /// Labels the valid pixels of a depth map.
    pub fn from_depth(depth: &DepthMap, binning: &DepthBinning) -> Result<Self> {
        let labels = depth
            .values()
            .iter()
            .zip(depth.valid())
            .map(|(&d, &ok)| if ok { binning.label_of(d) } else { Ok(0) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: depth.width(),
            height: depth.height(),
            labels,
            valid: depth.valid().to_vec(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn to_depth(&self, binning: &DepthBinning) -> Result<DepthMap> {
        let values = self
            .labels
            .iter()
            .zip(&self.valid)
            .map(|(&l, &ok)| {
                if ok {
                    binning.depth_of(l)
                } else {
                    Ok(f64::NAN)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        DepthMap::new(self.width, self.height, values, self.valid.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Logits,
    Probabilities,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Logits => "logits",
            ScoreKind::Probabilities => "probabilities",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(ScoreKind::Logits),
            "probabilities" => Ok(ScoreKind::Probabilities),
            other => Err(Error::Config(format!("unknown score kind '{other}'"))),
        }
    }
}

/// Sum-to-one tolerance for in-memory probability volumes.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Per-pixel score vectors over `B` bins, stored pixel-major then bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVolume {
    width: usize,
    height: usize,
    bins: usize,
    kind: ScoreKind,
    data: Vec<f64>,
}

impl ScoreVolume {
    pub fn new(
        width: usize,
        height: usize,
        bins: usize,
        kind: ScoreKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::with_tolerance(width, height, bins, kind, data, PROB_SUM_TOL)
    }

    pub(crate) fn with_tolerance(
        width: usize,
        height: usize,
        bins: usize,
        kind: ScoreKind,
        data: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::shape("score volume needs at least one bin"));
        }
        if data.len() != width * height * bins {
            return Err(Error::shape(format!(
                "score volume {width}x{height}x{bins} needs {} values, got {}",
                width * height * bins,
                data.len()
            )));
        }
        if kind == ScoreKind::Probabilities {
            for (i, row) in data.chunks_exact(bins).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "pixel {i} is not a probability vector (sum {sum})"
                    )));
                }
            }
        }
        Ok(Self {
            width,
            height,
            bins,
            kind,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.bins..(index + 1) * self.bins]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.bins)
    }
}

/// Replaces every valid depth by the center of its bin.
pub fn quantize_depthmap(gt: &DepthMap, binning: &DepthBinning) -> Result<DepthMap> {
    let values = gt
        .values()
        .iter()
        .zip(gt.valid())
        .map(|(&d, &ok)| {
            if ok {
                binning.label_of(d).and_then(|k| binning.depth_of(k))
            } else {
                Ok(d)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DepthMap::new(gt.width(), gt.height(), values, gt.valid().to_vec())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn argmax_decode(scores: &ScoreVolume, binning: &DepthBinning) -> Result<(LabelMap, DepthMap)> {
    if scores.bins() != binning.bins() {
        return Err(Error::shape(format!(
            "score volume has {} bins, binning has {}",
            scores.bins(),
            binning.bins()
        )));
    }
    let labels: Vec<usize> = scores.rows().map(argmax).collect();
    let labels = LabelMap::dense(scores.width(), scores.height(), labels, binning.bins())?;
    let depth = labels.to_depth(binning)?;
    Ok((labels, depth))
}

/// Per-pixel maximum probability.
pub fn confidence_map(scores: &ScoreVolume) -> Result<Vec<f64>> {
    if scores.kind() != ScoreKind::Probabilities {
        return Err(Error::WrongKind {
            expected: ScoreKind::Probabilities.name(),
            found: scores.kind().name(),
        });
    }
    Ok(scores
        .rows()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}
