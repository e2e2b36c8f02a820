//! Fully connected CRF over depth labels.
//!
//! Energy: `E(D) = Σ_i U_i(D_i) + Σ_{i<j} |D_i - D_j| k(i, j)` with
//!
//! ```text
//! k(i, j) = w1 exp(-|p_i - p_j|² / 2σα² - |I_i - I_j|² / 2σβ²) + w2 exp(-|p_i - p_j|² / 2σγ²)
//! ```
//!
//! Inference is parallel mean field. Each update computes, for every pixel
//! `i` and label `l`,
//!
//! ```text
//! Q'_i(l) ∝ exp(-U_i(l) - Σ_l' |l - l'| Σ_{j≠i} k(i, j) Q_j(l'))
//! ```
//!
//! The inner message `Σ_{j≠i} k(i, j) Q_j` is computed either exactly in
//! `O(N²)` or by Gaussian filtering: the smoothness kernel separates over the
//! pixel grid and is evaluated with two 1-D passes truncated at 6σγ. For the
//! appearance kernel, pixels are hashed into a grid over the normalized
//! features `(x/σα, y/σα, I/σβ)`. A pixel with few grid neighbours gets its
//! sum exactly over those neighbours (pairs left out are more than 4
//! bandwidths apart). All other pixels go through permutohedral lattices:
//! the responses of 8 lattices at different offsets are averaged, each
//! pixel's response to itself is removed exactly, and a global scale is
//! calibrated against exact kernel sums at a sample of pixels.
//!
//! A single lattice's kernel between two individual points deviates from
//! the Gaussian by up to ±40% depending on where they fall relative to the
//! lattice. Averaging offsets and summing over many contributors brings
//! lattice rows to a few percent of the exact message, which is why sparse
//! rows are not left to the lattice.
//!
//! The label distance `|l - l'|` is not normalized by the label count, so the
//! pairwise strength grows with `B`.

mod lattice;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::depth::{argmax, LabelMap, ScoreKind, ScoreVolume};
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub use lattice::Lattice;

/// Probabilities are floored here before taking `-ln` for the unary.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest image the exact `O(N²)` path accepts by default.
pub const DEFAULT_EXACT_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub w1: f64,
    pub w2: f64,
    /// Appearance kernel spatial bandwidth, pixels.
    pub sigma_alpha: f64,
    /// Appearance kernel color bandwidth, 0-255 intensity units.
    pub sigma_beta: f64,
    /// Smoothness kernel bandwidth, pixels.
    pub sigma_gamma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            w1: 3.0,
            w2: 1.0,
            sigma_alpha: 60.0,
            sigma_beta: 10.0,
            sigma_gamma: 3.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_alpha, self.sigma_beta, self.sigma_gamma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidths must be positive: {sigmas:?}"
            )));
        }
        if !(self.w1.is_finite() && self.w1 >= 0.0 && self.w2.is_finite() && self.w2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel weights must be nonnegative: w1={}, w2={}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Exact,
    Filtered,
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    width: usize,
    height: usize,
    bins: usize,
    unary: Vec<f64>,
    colors: Vec<[f64; 3]>,
    params: KernelParams,
    exact_budget: usize,
    appearance: OnceLock<Arc<AppearanceFilter>>,
}

/// Appearance messages: rows with few neighbours in feature space are
/// summed exactly over a hash grid, the rest go through the lattice.
#[derive(Debug)]
struct AppearanceFilter {
    rows: Vec<Row>,
    lattice: Option<LatticePart>,
}

impl CrfModel {
    /// `unary` is pixel-major `width * height * bins`; positions are the
    /// integer pixel coordinates `(x, y)`.
    pub fn new(
        width: usize,
        height: usize,
        bins: usize,
        unary: Vec<f64>,
        colors: Vec<[f64; 3]>,
        params: KernelParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = width * height;
        if bins == 0 || unary.len() != n * bins || colors.len() != n {
            return Err(Error::shape(format!(
                "crf model {width}x{height}x{bins}: got {} unary values and {} colors",
                unary.len(),
                colors.len()
            )));
        }
        if let Some(i) = unary.iter().position(|u| !u.is_finite()) {
            return Err(Error::NonFinite(format!("unary at flat index {i}")));
        }
        Ok(Self {
            width,
            height,
            bins,
            unary,
            colors,
            params,
            exact_budget: DEFAULT_EXACT_BUDGET,
            appearance: OnceLock::new(),
        })
    }

    /// Unary `-ln P` from a probability volume, colors from an RGB image.
    pub fn from_probabilities(
        probs: &ScoreVolume,
        rgb: &RgbImage,
        params: KernelParams,
    ) -> Result<Self> {
        if probs.kind() != ScoreKind::Probabilities {
            return Err(Error::WrongKind {
                expected: ScoreKind::Probabilities.name(),
                found: probs.kind().name(),
            });
        }
        if probs.width() != rgb.width() || probs.height() != rgb.height() {
            return Err(Error::shape(format!(
                "scores are {}x{}, image is {}x{}",
                probs.width(),
                probs.height(),
                rgb.width(),
                rgb.height()
            )));
        }
        let unary = probs
            .data()
            .iter()
            .map(|p| -p.max(PROB_FLOOR).ln())
            .collect();
        Self::new(
            probs.width(),
            probs.height(),
            probs.bins(),
            unary,
            rgb.colors(),
            params,
        )
    }

    pub fn with_exact_budget(mut self, pixels: usize) -> Self {
        self.exact_budget = pixels;
        self
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

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn unary(&self, pixel: usize) -> &[f64] {
        &self.unary[pixel * self.bins..(pixel + 1) * self.bins]
    }

    pub fn position(&self, pixel: usize) -> [f64; 2] {
        [(pixel % self.width) as f64, (pixel / self.width) as f64]
    }

    pub fn color(&self, pixel: usize) -> [f64; 3] {
        self.colors[pixel]
    }

    fn kernel_parts(&self, i: usize, j: usize) -> (f64, f64) {
        let (pi, pj) = (self.position(i), self.position(j));
        let dp = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2);
        let (ci, cj) = (self.colors[i], self.colors[j]);
        let dc = (0..3).map(|c| (ci[c] - cj[c]).powi(2)).sum::<f64>();
        let p = &self.params;
        let appearance = (-dp / (2.0 * p.sigma_alpha * p.sigma_alpha)
            - dc / (2.0 * p.sigma_beta * p.sigma_beta))
            .exp();
        let smooth = (-dp / (2.0 * p.sigma_gamma * p.sigma_gamma)).exp();
        (appearance, smooth)
    }

    /// Two-kernel pairwise weight `k(i, j)`.
    pub fn kernel_value(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.pixels();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::OutOfRange {
                    index: idx,
                    limit: n,
                });
            }
        }
        let (a, s) = self.kernel_parts(i, j);
        Ok(self.params.w1 * a + self.params.w2 * s)
    }

    /// `Σ_i U_i(D_i) + Σ_{i<j} |D_i - D_j| k(i, j)`.
    pub fn energy(&self, labels: &LabelMap) -> Result<f64> {
        if labels.width() != self.width || labels.height() != self.height {
            return Err(Error::shape("label map does not match the crf model"));
        }
        let l = labels.labels();
        if let Some(&bad) = l.iter().find(|&&x| x >= self.bins) {
            return Err(Error::OutOfRange {
                index: bad,
                limit: self.bins,
            });
        }
        let n = self.pixels();
        let mut unary = 0.0;
        let mut pairwise = 0.0;
        for i in 0..n {
            unary += self.unary(i)[l[i]];
            for j in i + 1..n {
                let delta = l[i].abs_diff(l[j]);
                if delta != 0 {
                    let (a, s) = self.kernel_parts(i, j);
                    pairwise += delta as f64 * (self.params.w1 * a + self.params.w2 * s);
                }
            }
        }
        Ok(unary + pairwise)
    }
}

pub fn kernel_value(i: usize, j: usize, model: &CrfModel) -> Result<f64> {
    model.kernel_value(i, j)
}

pub fn energy(labels: &LabelMap, model: &CrfModel) -> Result<f64> {
    model.energy(labels)
}

/// Factorized marginals `Q`, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    q: Vec<f64>,
    bins: usize,
    iteration: usize,
}

impl MeanFieldState {
    pub fn new(q: Vec<f64>, bins: usize) -> Result<Self> {
        let state = Self {
            q,
            bins,
            iteration: 0,
        };
        state.check_normalized()?;
        Ok(state)
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.q[pixel * self.bins..(pixel + 1) * self.bins]
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Largest deviation of any row sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.q
            .chunks_exact(self.bins)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_normalized(&self) -> Result<()> {
        if self.bins == 0 || !self.q.len().is_multiple_of(self.bins) {
            return Err(Error::shape(
                "mean-field state length is not a multiple of the label count",
            ));
        }
        if self.q.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || self.max_normalization_error() > 1e-9
        {
            return Err(Error::InvalidArgument(
                "mean-field state is not normalized".into(),
            ));
        }
        Ok(())
    }

    pub fn labels(&self, width: usize, height: usize) -> Result<LabelMap> {
        let labels = self.q.chunks_exact(self.bins).map(argmax).collect();
        LabelMap::dense(width, height, labels, self.bins)
    }

    pub fn to_volume(&self, width: usize, height: usize) -> Result<ScoreVolume> {
        ScoreVolume::new(
            width,
            height,
            self.bins,
            ScoreKind::Probabilities,
            self.q.clone(),
        )
    }

    pub fn max_abs_change(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn normalized_exp(neg_energy: &mut [f64]) {
    let max = neg_energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in neg_energy.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    neg_energy.iter_mut().for_each(|v| *v /= sum);
}

/// `Q_i(l) ∝ exp(-U_i(l))`.
pub fn meanfield_init(model: &CrfModel) -> MeanFieldState {
    let mut q: Vec<f64> = model.unary.iter().map(|u| -u).collect();
    q.chunks_exact_mut(model.bins).for_each(normalized_exp);
    MeanFieldState {
        q,
        bins: model.bins,
        iteration: 0,
    }
}

/// `Σ_{j≠i} k(i, j) Q_j` for every pixel, pixel-major.
fn messages_exact(state: &MeanFieldState, model: &CrfModel) -> Result<Vec<f64>> {
    let n = model.pixels();
    if n > model.exact_budget {
        return Err(Error::InvalidArgument(format!(
            "exact mean field refused: {n} pixels exceeds the budget of {}",
            model.exact_budget
        )));
    }
    let b = model.bins;
    let (w1, w2) = (model.params.w1, model.params.w2);
    let mut out = vec![0.0; n * b];
    out.par_chunks_mut(b).enumerate().for_each(|(i, msg)| {
        for j in 0..n {
            if j == i {
                continue;
            }
            let (a, s) = model.kernel_parts(i, j);
            let k = w1 * a + w2 * s;
            for (m, q) in msg.iter_mut().zip(state.row(j)) {
                *m += k * q;
            }
        }
    });
    Ok(out)
}

/// Separable spatial Gaussian over the pixel grid, self term excluded.
fn smoothness_filtered(
    q: &[f64],
    width: usize,
    height: usize,
    bins: usize,
    sigma: f64,
) -> Vec<f64> {
    let radius = (6.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    let mut horiz = vec![0.0; q.len()];
    horiz
        .par_chunks_mut(width * bins)
        .enumerate()
        .for_each(|(y, row_out)| {
            for x in 0..width {
                let out = &mut row_out[x * bins..(x + 1) * bins];
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(width - 1);
                for xx in lo..=hi {
                    let w = taps[x.abs_diff(xx)];
                    let src = &q[(y * width + xx) * bins..(y * width + xx + 1) * bins];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            }
        });

    let mut out = vec![0.0; q.len()];
    out.par_chunks_mut(width * bins)
        .enumerate()
        .for_each(|(y, row_out)| {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(height - 1);
            for yy in lo..=hi {
                let w = taps[y.abs_diff(yy)];
                let src = &horiz[yy * width * bins..(yy + 1) * width * bins];
                for (o, s) in row_out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        });
    for (o, s) in out.iter_mut().zip(q) {
        *o -= s;
    }
    out
}

/// Number of pixels at which the lattice scale is calibrated.
const CALIBRATION_SAMPLES: usize = 64;

/// Grid cell edge in bandwidth units. Pairs further apart than this in the
/// normalized feature space are never both missed by a cell's neighbourhood.
const CELL: f64 = 4.0;

/// Rows with at most this many candidate neighbours are summed exactly.
const SPARSE_ROW_LIMIT: usize = 64;

/// Lattices, each offset in feature space, whose responses are averaged.
const LATTICE_SHIFTS: usize = 8;

/// Low-discrepancy offset in `[0, 2)` bandwidths.
fn shift(k: usize) -> f64 {
    (k as f64 * 0.618_033_988_749_895).fract() * 2.0
}

#[derive(Debug)]
enum Row {
    /// `(j, k_app(i, j))` for every candidate `j ≠ i`.
    Exact(Vec<(usize, f64)>),
    Lattice,
}

#[derive(Debug)]
struct LatticePart {
    lattices: Vec<Lattice>,
    self_weight: Vec<f64>,
    scale: f64,
}

impl LatticePart {
    /// Average response over the shifted lattices.
    fn filter(&self, q: &[f64], channels: usize) -> Vec<f64> {
        let mut out = vec![0.0; q.len()];
        for lattice in &self.lattices {
            for (o, v) in out.iter_mut().zip(lattice.filter(q, channels)) {
                *o += v;
            }
        }
        let k = self.lattices.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

impl AppearanceFilter {
    fn build(model: &CrfModel) -> Self {
        let n = model.pixels();
        let p = &model.params;
        let features: Vec<[f64; 5]> = (0..n)
            .map(|i| {
                let pos = model.position(i);
                let col = model.colors[i];
                [
                    pos[0] / p.sigma_alpha,
                    pos[1] / p.sigma_alpha,
                    col[0] / p.sigma_beta,
                    col[1] / p.sigma_beta,
                    col[2] / p.sigma_beta,
                ]
            })
            .collect();

        let cell_of = |f: &[f64; 5]| f.map(|v| (v / CELL).floor() as i64);
        let mut cells: HashMap<[i64; 5], Vec<usize>> = HashMap::new();
        for (i, f) in features.iter().enumerate() {
            cells.entry(cell_of(f)).or_default().push(i);
        }
        let mut candidates: HashMap<[i64; 5], Vec<usize>> = HashMap::new();
        let rows: Vec<Row> = (0..n)
            .map(|i| {
                let key = cell_of(&features[i]);
                let near = candidates
                    .entry(key)
                    .or_insert_with(|| neighbourhood(&cells, key));
                if near.len() > SPARSE_ROW_LIMIT + 1 {
                    return Row::Lattice;
                }
                Row::Exact(
                    near.iter()
                        .filter(|&&j| j != i)
                        .map(|&j| (j, model.kernel_parts(i, j).0))
                        .collect(),
                )
            })
            .collect();

        let dense: Vec<usize> = (0..n)
            .filter(|&i| matches!(rows[i], Row::Lattice))
            .collect();
        let lattice = (!dense.is_empty()).then(|| {
            let lattices: Vec<Lattice> = (0..LATTICE_SHIFTS)
                .map(|s| {
                    let flat: Vec<f64> = features
                        .iter()
                        .flat_map(|f| {
                            let mut g = *f;
                            for (d, v) in g.iter_mut().enumerate() {
                                *v += shift(s * 5 + d);
                            }
                            g
                        })
                        .collect();
                    Lattice::new(&flat, 5)
                })
                .collect();
            let mut self_weight = vec![0.0; n];
            for l in &lattices {
                for (a, b) in self_weight.iter_mut().zip(l.self_response()) {
                    *a += b / LATTICE_SHIFTS as f64;
                }
            }
            let part = LatticePart {
                lattices,
                self_weight,
                scale: 1.0,
            };
            // The lattice reproduces the kernel only up to a global factor.
            // Match the kernel mass between distinct pixels at evenly spaced
            // dense rows; when that mass is negligible fall back to
            // normalizing the lattice's self response to one.
            let ones = part.filter(&vec![1.0; n], 1);
            let samples = CALIBRATION_SAMPLES.min(dense.len());
            let (mut exact, mut approx, mut own) = (0.0, 0.0, 0.0);
            for s in 0..samples {
                let i = dense[s * dense.len() / samples];
                exact += (0..n)
                    .filter(|&j| j != i)
                    .map(|j| model.kernel_parts(i, j).0)
                    .sum::<f64>();
                approx += ones[i] - part.self_weight[i];
                own += part.self_weight[i];
            }
            let scale = if approx > 1e-3 * samples as f64 {
                exact / approx
            } else {
                samples as f64 / own
            };
            LatticePart { scale, ..part }
        });
        Self { rows, lattice }
    }

    /// `Σ_{j≠i} k_app(i, j) q_j` for `bins` channels.
    fn apply(&self, q: &[f64], bins: usize) -> Vec<f64> {
        let filtered = self.lattice.as_ref().map(|l| (l, l.filter(q, bins)));
        let mut out = vec![0.0; q.len()];
        out.par_chunks_mut(bins)
            .enumerate()
            .for_each(|(i, row)| match &self.rows[i] {
                Row::Exact(pairs) => {
                    for &(j, k) in pairs {
                        for (o, s) in row.iter_mut().zip(&q[j * bins..(j + 1) * bins]) {
                            *o += k * s;
                        }
                    }
                }
                Row::Lattice => {
                    let (part, f) = filtered
                        .as_ref()
                        .expect("lattice exists when a row needs it");
                    let w = part.self_weight[i];
                    let src = &q[i * bins..(i + 1) * bins];
                    for ((o, v), s) in row.iter_mut().zip(&f[i * bins..(i + 1) * bins]).zip(src) {
                        *o = part.scale * (v - w * s);
                    }
                }
            });
        out
    }

    #[cfg(test)]
    fn exact_rows(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r, Row::Exact(_)))
            .count()
    }
}

/// Members of the `3^5` cells around `key`, in a fixed order.
fn neighbourhood(cells: &HashMap<[i64; 5], Vec<usize>>, key: [i64; 5]) -> Vec<usize> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(5) {
        let mut k = key;
        let mut c = code;
        for v in k.iter_mut() {
            *v += (c % 3) as i64 - 1;
            c /= 3;
        }
        if let Some(members) = cells.get(&k) {
            out.extend_from_slice(members);
        }
    }
    out
}

impl CrfModel {
    fn appearance_filter(&self) -> &AppearanceFilter {
        self.appearance
            .get_or_init(|| Arc::new(AppearanceFilter::build(self)))
    }
}

fn messages_filtered(state: &MeanFieldState, model: &CrfModel) -> Vec<f64> {
    let (w1, w2) = (model.params.w1, model.params.w2);
    let mut out = vec![0.0; state.q.len()];
    if w2 > 0.0 {
        let smooth = smoothness_filtered(
            &state.q,
            model.width,
            model.height,
            model.bins,
            model.params.sigma_gamma,
        );
        out.iter_mut().zip(&smooth).for_each(|(o, s)| *o += w2 * s);
    }
    if w1 > 0.0 {
        let app = model.appearance_filter().apply(&state.q, model.bins);
        out.iter_mut().zip(&app).for_each(|(o, s)| *o += w1 * s);
    }
    out
}

/// `out[l] = Σ_l' |l - l'| m[l']` in `O(B)` via prefix sums.
fn label_distance_transform(m: &[f64], out: &mut [f64]) {
    let b = m.len();
    let total: f64 = m.iter().sum();
    let total_weighted: f64 = m.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let (mut below, mut below_weighted) = (0.0, 0.0);
    for l in 0..b {
        let lf = l as f64;
        let above = total - below - m[l];
        let above_weighted = total_weighted - below_weighted - lf * m[l];
        out[l] = lf * below - below_weighted + above_weighted - lf * above;
        below += m[l];
        below_weighted += lf * m[l];
    }
}

/// One parallel mean-field update.
pub fn meanfield_step(
    state: &MeanFieldState,
    model: &CrfModel,
    mode: InferenceMode,
) -> Result<MeanFieldState> {
    if state.bins != model.bins || state.q.len() != model.unary.len() {
        return Err(Error::shape(
            "mean-field state does not match the crf model",
        ));
    }
    state.check_normalized()?;
    let messages = match mode {
        InferenceMode::Exact => messages_exact(state, model)?,
        InferenceMode::Filtered => messages_filtered(state, model),
    };
    let b = model.bins;
    let mut q = vec![0.0; state.q.len()];
    q.par_chunks_mut(b)
        .zip(messages.par_chunks(b))
        .zip(model.unary.par_chunks(b))
        .for_each(|((row, msg), unary)| {
            label_distance_transform(msg, row);
            for (r, u) in row.iter_mut().zip(unary) {
                *r = -u - *r;
            }
            normalized_exp(row);
        });
    Ok(MeanFieldState {
        q,
        bins: b,
        iteration: state.iteration + 1,
    })
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub labels: LabelMap,
    pub state: MeanFieldState,
    pub converged: bool,
    /// L∞ change in `Q` after each iteration.
    pub changes: Vec<f64>,
}

/// Runs mean field from the unary initialization until the L∞ change in `Q`
/// drops below `tol` or `iters` updates have run.
pub fn infer(
    model: &CrfModel,
    iters: usize,
    tol: f64,
    mode: InferenceMode,
) -> Result<InferenceResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument(
            "mean field needs at least one iteration".into(),
        ));
    }
    let mut state = meanfield_init(model);
    let mut changes = Vec::with_capacity(iters);
    let mut converged = false;
    for _ in 0..iters {
        let next = meanfield_step(&state, model, mode)?;
        let change = next.max_abs_change(&state);
        changes.push(change);
        state = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    let labels = state.labels(model.width, model.height)?;
    Ok(InferenceResult {
        labels,
        state,
        converged,
        changes,
    })
}
