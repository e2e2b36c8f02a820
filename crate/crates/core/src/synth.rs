//! Deterministic synthetic RGB-D scenes.
//!
//! Every scene is a pure function of its [`SceneSpec`]; randomness comes from
//! a ChaCha8 stream seeded with `spec.seed`, so output is identical across
//! platforms. The mean of the three color channels falls linearly with
//! log-depth (near is bright), which makes depth learnable from color.
//! Regions also get a zero-mean color tint scaled by `contrast`, so region
//! boundaries are visible without disturbing that cue.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::depth::{argmax, DepthBinning, DepthMap, ScoreKind, ScoreVolume};
use crate::error::{Error, Result};
use crate::format::{read_dmap, read_ppm, write_dmap, write_ppm, ManifestEntry};
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Depth falls linearly from `d_max` on the top row to `d_min` on the
    /// bottom row.
    GradientPlane,
    /// A near and a far region split at a random column.
    TwoRegions,
    /// Rectangles at random constant depths over a gradient floor.
    Blocks,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::GradientPlane, Layout::TwoRegions, Layout::Blocks];

    pub fn name(self) -> &'static str {
        match self {
            Layout::GradientPlane => "gradient",
            Layout::TwoRegions => "two-regions",
            Layout::Blocks => "blocks",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown layout '{s}' (gradient, two-regions, blocks)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub layout: Layout,
    /// Standard deviation of additive Gaussian depth noise, meters.
    pub noise_sigma: f64,
    /// Fraction of pixels marked invalid, in `[0, 1)`.
    pub missing_fraction: f64,
    /// Scale of the per-region color tint, `0` for none.
    pub contrast: f64,
}

impl SceneSpec {
    pub fn new(seed: u64, width: usize, height: usize, layout: Layout) -> Self {
        Self {
            seed,
            width,
            height,
            d_min: 0.7,
            d_max: 10.0,
            layout,
            noise_sigma: 0.0,
            missing_fraction: 0.0,
            contrast: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty scene {}x{}",
                self.width, self.height
            )));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "depth range must satisfy 0 < d_min < d_max, got ({}, {})",
                self.d_min, self.d_max
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::InvalidArgument(format!(
                "missing_fraction must lie in [0, 1), got {}",
                self.missing_fraction
            )));
        }
        if !(self.contrast >= 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contrast must lie in [0, 1], got {}",
                self.contrast
            )));
        }
        Ok(())
    }

    /// Position of `depth` in the log range, `0` at `d_min`, `1` at `d_max`.
    fn log_position(&self, depth: f64) -> f64 {
        (depth / self.d_min).ln() / (self.d_max / self.d_min).ln()
    }

    /// Depth at log position `t`.
    fn depth_at(&self, t: f64) -> f64 {
        self.d_min * (self.d_max / self.d_min).powf(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

/// Gray level of a pixel at log-depth position `t`.
pub fn intensity(t: f64) -> f64 {
    205.0 - 155.0 * t.clamp(0.0, 1.0)
}

/// Largest per-channel tint magnitude at `contrast = 1`.
const TINT: f64 = 45.0;

/// Uniform per-channel texture noise amplitude, gray levels.
const TEXTURE: f64 = 3.0;

pub fn generate(spec: &SceneSpec) -> Result<Sample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Clean depth plus a region index per pixel; region 0 is untinted.
    let row_t = |y: usize| {
        if h > 1 {
            1.0 - y as f64 / (h - 1) as f64
        } else {
            0.5
        }
    };
    let mut clean = vec![0.0; w * h];
    let mut region = vec![0usize; w * h];
    let plane = |y: usize| spec.d_max + (spec.d_min - spec.d_max) * (1.0 - row_t(y));
    match spec.layout {
        Layout::GradientPlane => {
            for (i, d) in clean.iter_mut().enumerate() {
                *d = plane(i / w);
            }
        }
        Layout::TwoRegions => {
            let cut = if w >= 4 {
                rng.gen_range(w / 4..=3 * w / 4)
            } else {
                w / 2
            };
            let near = spec.depth_at(rng.gen_range(0.05..0.35));
            let far = spec.depth_at(rng.gen_range(0.65..0.95));
            let near_left = rng.gen_bool(0.5);
            for (i, d) in clean.iter_mut().enumerate() {
                let left = i % w < cut;
                let is_near = left == near_left;
                *d = if is_near { near } else { far };
                region[i] = if is_near { 1 } else { 2 };
            }
        }
        Layout::Blocks => {
            for (i, d) in clean.iter_mut().enumerate() {
                *d = plane(i / w);
            }
            let blocks = rng.gen_range(2..=4);
            for b in 0..blocks {
                let bw = rng.gen_range(w.div_ceil(5)..=w.div_ceil(2));
                let bh = rng.gen_range(h.div_ceil(5)..=h.div_ceil(2));
                let x0 = rng.gen_range(0..=w - bw);
                let y0 = rng.gen_range(0..=h - bh);
                let depth = spec.depth_at(rng.gen_range(0.0..1.0));
                for y in y0..y0 + bh {
                    for x in x0..x0 + bw {
                        clean[y * w + x] = depth;
                        region[y * w + x] = b + 1;
                    }
                }
            }
        }
    }

    let regions = region.iter().max().copied().unwrap_or(0) + 1;
    let tints: Vec<[f64; 3]> = (0..regions)
        .map(|r| {
            if r == 0 {
                return [0.0; 3];
            }
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let t = [a, b, -a - b];
            let peak = t.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            t.map(|v| spec.contrast * TINT * v / peak)
        })
        .collect();

    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let gray = intensity(spec.log_position(clean[i]));
        for tint in tints[region[i]] {
            let noise = rng.gen_range(-TEXTURE..=TEXTURE);
            data.push((gray + tint + noise).round().clamp(0.0, 255.0) as u8);
        }
    }
    let rgb = RgbImage::new(w, h, data)?;

    let mut values = clean;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in values.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(spec.d_min, spec.d_max);
        }
    }
    // Stored depths are f32; rounding here keeps files lossless.
    for v in values.iter_mut() {
        *v = (*v as f32) as f64;
    }
    let mut valid = vec![true; w * h];
    for i in index::sample(&mut rng, w * h, missing_count(w * h, spec.missing_fraction)) {
        valid[i] = false;
    }
    Ok(Sample {
        rgb,
        depth: DepthMap::new(w, h, values, valid)?,
    })
}

/// Exact number of invalid pixels for a scene of `pixels` pixels.
pub fn missing_count(pixels: usize, fraction: f64) -> usize {
    ((pixels as f64 * fraction).round() as usize).min(pixels.saturating_sub(1))
}

/// `count` scenes with seeds `seed, seed + 1, ...`, cycling through
/// `layouts`.
pub fn generate_set(template: &SceneSpec, count: usize, layouts: &[Layout]) -> Result<Vec<Sample>> {
    if layouts.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one layout is required".into(),
        ));
    }
    (0..count)
        .map(|k| {
            let spec = SceneSpec {
                seed: template.seed.wrapping_add(k as u64),
                layout: layouts[k % layouts.len()],
                ..template.clone()
            };
            generate(&spec)
        })
        .collect()
}

pub fn write_sample(entry: &ManifestEntry, sample: &Sample) -> Result<()> {
    write_ppm(&entry.rgb, &sample.rgb)?;
    write_dmap(&entry.depth, &sample.depth)
}

pub fn read_sample(entry: &ManifestEntry) -> Result<Sample> {
    let rgb = read_ppm(&entry.rgb)?;
    let depth = read_dmap(&entry.depth)?;
    if rgb.width() != depth.width() || rgb.height() != depth.height() {
        return Err(Error::shape(format!(
            "{} is {}x{} but {} is {}x{}",
            entry.rgb.display(),
            rgb.width(),
            rgb.height(),
            entry.depth.display(),
            depth.width(),
            depth.height()
        )));
    }
    Ok(Sample { rgb, depth })
}

/// Manifest entry for `<dir>/<stem>.ppm` and `<dir>/<stem>.dmap`.
pub fn sample_paths(dir: &Path, stem: &str) -> ManifestEntry {
    ManifestEntry {
        rgb: dir.join(format!("{stem}.ppm")),
        depth: dir.join(format!("{stem}.dmap")),
    }
}

/// Classifier-like probabilities peaked at each pixel's true bin, with a
/// `corrupt_fraction` of pixels peaked at an extreme bin instead (bin 0 or
/// `B - 1`, whichever is further from the truth). Probabilities fall off as
/// `exp(-sharpness |k - c|)` around the peak `c`; invalid pixels are
/// uniform. Returns the volume and the indices of the corrupted pixels.
pub fn label_scores(
    depth: &DepthMap,
    binning: &DepthBinning,
    sharpness: f64,
    corrupt_fraction: f64,
    seed: u64,
) -> Result<(ScoreVolume, Vec<usize>)> {
    if !(0.0..1.0).contains(&corrupt_fraction) || !(sharpness >= 0.0 && sharpness.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= corrupt_fraction < 1 and finite sharpness >= 0, got {corrupt_fraction}, {sharpness}"
        )));
    }
    let b = binning.bins();
    let n = depth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupted: Vec<usize> = index::sample(&mut rng, n, missing_count(n, corrupt_fraction))
        .into_iter()
        .filter(|&i| depth.get(i).is_some())
        .collect();
    corrupted.sort_unstable();

    let mut data = Vec::with_capacity(n * b);
    let mut corrupt_iter = corrupted.iter().peekable();
    for i in 0..n {
        let Some(d) = depth.get(i) else {
            data.extend(std::iter::repeat_n(1.0 / b as f64, b));
            continue;
        };
        let truth = binning.label_of(d)?;
        let peak = if corrupt_iter.next_if(|&&c| c == i).is_some() {
            if truth >= b / 2 {
                0
            } else {
                b - 1
            }
        } else {
            truth
        };
        let row: Vec<f64> = (0..b)
            .map(|k| (-sharpness * k.abs_diff(peak) as f64).exp())
            .collect();
        let total: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / total));
    }
    let volume = ScoreVolume::new(
        depth.width(),
        depth.height(),
        b,
        ScoreKind::Probabilities,
        data,
    )?;
    debug_assert!(volume
        .rows()
        .enumerate()
        .all(|(i, r)| depth.get(i).is_none() || argmax(r) < b));
    Ok((volume, corrupted))
}
