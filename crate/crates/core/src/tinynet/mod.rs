//! A small fully convolutional residual network for per-pixel depth.
//!
//! Topology: 7×7 stride-2 stem, 3×3 stride-2 max pool, four stages of
//! pre-activation residual blocks (the first block of stage 2 has stride 2),
//! a three-convolution head, and corner-aligned bilinear upsampling by 8 back
//! to the input resolution. Inputs whose sides are not multiples of 8 are
//! edge-padded and the output is cropped.
//!
//! The classification head emits one logit per depth bin and trains with the
//! information-gain loss. The regression head emits log-depth and trains with
//! the mean squared error of `exp(output)` against metric depth. Both share
//! the trunk layout, so they differ only in the head's last layer.
//!
//! Everything is `f64` and single-threaded, so a seed fixes every bit of the
//! result.

mod io;
mod layers;
mod tensor;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use io::{decode_tnet, encode_tnet, read_tnet, write_tnet};
pub use layers::{
    bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward, max_pool,
    max_pool_backward, relu, relu_backward, Affine, BlockCache, Cache, Conv2d, Layer, Param,
    ResidualBlock, ShortcutKind,
};
pub use tensor::Tensor4;

use crate::depth::{DepthBinning, DepthMap, LabelMap, ScoreKind, ScoreVolume};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::infogain::{loss_raw, InfoGainMatrix};
use crate::synth::Sample;

/// Total stride of the trunk.
pub const DOWNSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub stem_channels: usize,
    /// Residual blocks per stage.
    pub blocks: [usize; 4],
    /// Output channels per stage.
    pub channels: [usize; 4],
    /// Widths of the first two head convolutions.
    pub head_channels: [usize; 2],
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            blocks: [1, 1, 1, 1],
            channels: [16, 32, 48, 64],
            head_channels: [64, 32],
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0
            || self.channels.contains(&0)
            || self.head_channels.contains(&0)
            || self.blocks.contains(&0)
        {
            return Err(Error::InvalidArgument(format!(
                "network needs at least one block and one channel per stage: {self:?}"
            )));
        }
        Ok(())
    }
}

/// What the last head layer predicts.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Classification(DepthBinning),
    /// Log-depth; decoded depths are clamped to `[d_min, d_max]`.
    Regression {
        d_min: f64,
        d_max: f64,
    },
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Classification(b) => b.bins(),
            Head::Regression { .. } => 1,
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Classification(_) => HeadKind::Classification,
            Head::Regression { .. } => HeadKind::Regression,
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            Head::Classification(b) => (b.d_min(), b.d_max()),
            Head::Regression { d_min, d_max } => (*d_min, *d_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classification,
    Regression,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Classification => "classification",
            HeadKind::Regression => "regression",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(HeadKind::Classification),
            "regression" => Ok(HeadKind::Regression),
            _ => Err(Error::InvalidArgument(format!(
                "unknown head '{s}' (classification, regression)"
            ))),
        }
    }
}

/// Network output for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Scores(ScoreVolume),
    Depth(DepthMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    head: Head,
    layers: Vec<Layer>,
}

/// Maps 8-bit color to roughly `[-0.5, 0.5]`.
fn normalize(v: u8) -> f64 {
    v as f64 / 255.0 - 0.5
}

/// Normalized `1 × 3 × H' × W'` tensor with sides rounded up to multiples of
/// [`DOWNSAMPLE`] by repeating the last row and column.
pub fn image_tensor(img: &RgbImage) -> Tensor4 {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (
        w.div_ceil(DOWNSAMPLE) * DOWNSAMPLE,
        h.div_ceil(DOWNSAMPLE) * DOWNSAMPLE,
    );
    let mut t = Tensor4::zeros([1, 3, ph, pw]);
    for y in 0..ph {
        for x in 0..pw {
            let rgb = img.pixel(y.min(h - 1) * w + x.min(w - 1));
            for (c, v) in rgb.into_iter().enumerate() {
                let idx = t.index(0, c, y, x);
                t.data_mut()[idx] = normalize(v);
            }
        }
    }
    t
}

/// Channel-major padded output to pixel-major `(h·w) × C` over the
/// top-left `w × h` crop.
fn crop_pixel_major(out: &Tensor4, w: usize, h: usize) -> Vec<f64> {
    let c = out.channels();
    let mut v = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                v.push(out.at(0, ch, y, x));
            }
        }
    }
    v
}

/// Inverse layout of [`crop_pixel_major`], zero outside the crop.
fn uncrop(grad: &[f64], shape: [usize; 4], w: usize, h: usize) -> Tensor4 {
    let c = shape[1];
    let mut t = Tensor4::zeros(shape);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let idx = t.index(0, ch, y, x);
                t.data_mut()[idx] = grad[(y * w + x) * c + ch];
            }
        }
    }
    t
}

impl Network {
    pub fn new(spec: NetworkSpec, head: Head, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            Layer::Conv(Conv2d::new(
                "stem.conv",
                3,
                spec.stem_channels,
                7,
                2,
                true,
                &mut rng,
            )),
            Layer::Affine(Affine::new("stem.affine", spec.stem_channels)),
            Layer::Relu,
            Layer::MaxPool,
        ];
        let mut cin = spec.stem_channels;
        for (s, (&count, &cout)) in spec.blocks.iter().zip(&spec.channels).enumerate() {
            for b in 0..count {
                let stride = if s == 1 && b == 0 { 2 } else { 1 };
                let kind = if cin == cout && stride == 1 {
                    ShortcutKind::Identity
                } else {
                    ShortcutKind::Projection
                };
                let name = format!("stage{}.block{}", s + 1, b + 1);
                layers.push(Layer::Block(ResidualBlock::new(
                    &name, kind, cin, cout, stride, &mut rng,
                )?));
                cin = cout;
            }
        }
        let [h1, h2] = spec.head_channels;
        layers.extend([
            Layer::Affine(Affine::new("trunk.affine", cin)),
            Layer::Relu,
            Layer::Conv(Conv2d::new("head.conv1", cin, h1, 3, 1, true, &mut rng)),
            Layer::Affine(Affine::new("head.affine", h1)),
            Layer::Relu,
            Layer::Conv(Conv2d::new("head.conv2", h1, h2, 3, 1, true, &mut rng)),
            Layer::Relu,
        ]);
        let mut out = Conv2d::new("head.out", h2, head.outputs(), 1, 1, true, &mut rng);
        if let Head::Regression { d_min, d_max } = head {
            // Start as the constant geometric middle of the depth range.
            out.weight.value.iter_mut().for_each(|w| *w = 0.0);
            out.bias.as_mut().expect("head output has a bias").value[0] =
                0.5 * (d_min * d_max).ln();
        }
        layers.push(Layer::Conv(out));
        Ok(Self { spec, head, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Full-resolution output for an input whose sides are multiples of 8.
    pub fn forward_tensor(&self, input: &Tensor4) -> Result<Tensor4> {
        check_input(input)?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward_only(&x)?;
            check_finite(&x, i, layer)?;
        }
        bilinear_upsample(&x, DOWNSAMPLE)
    }

    /// Like [`Network::forward_tensor`], keeping what backpropagation needs.
    fn forward_train(&self, input: &Tensor4) -> Result<(Tensor4, Vec<Cache>, [usize; 4])> {
        check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x)?;
            check_finite(&y, i, layer)?;
            caches.push(cache);
            x = y;
        }
        let coarse = x.shape();
        Ok((bilinear_upsample(&x, DOWNSAMPLE)?, caches, coarse))
    }

    /// Accumulates parameter gradients given `∂L/∂output` at full
    /// resolution, returning `∂L/∂input`.
    fn backward(
        &mut self,
        caches: &[Cache],
        coarse: [usize; 4],
        grad_out: &Tensor4,
    ) -> Result<Tensor4> {
        let mut g = bilinear_upsample_backward(coarse, DOWNSAMPLE, grad_out);
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    /// Logits (classification) or depth (regression) at the image's size.
    pub fn predict(&self, img: &RgbImage) -> Result<Prediction> {
        let out = self.forward_tensor(&image_tensor(img))?;
        let (w, h) = (img.width(), img.height());
        let values = crop_pixel_major(&out, w, h);
        match &self.head {
            Head::Classification(b) => Ok(Prediction::Scores(ScoreVolume::new(
                w,
                h,
                b.bins(),
                ScoreKind::Logits,
                values,
            )?)),
            Head::Regression { d_min, d_max } => {
                let depth = values
                    .iter()
                    .map(|r| r.exp().clamp(*d_min, *d_max))
                    .collect();
                Ok(Prediction::Depth(DepthMap::from_values(w, h, depth)?))
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

fn check_input(input: &Tensor4) -> Result<()> {
    if input.channels() != 3
        || !input.height().is_multiple_of(DOWNSAMPLE)
        || !input.width().is_multiple_of(DOWNSAMPLE)
    {
        return Err(Error::shape(format!(
            "network input must be N×3×H×W with H and W multiples of {DOWNSAMPLE}, got {:?}",
            input.shape()
        )));
    }
    Ok(())
}

fn check_finite(x: &Tensor4, index: usize, layer: &Layer) -> Result<()> {
    match x.first_non_finite() {
        Some(at) => Err(Error::Numerical(format!(
            "non-finite activation at element {at} after layer {index} ({})",
            layer.name()
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Seeds the order in which samples are visited.
    pub seed: u64,
    /// Information-gain `α`; ignored by the regression head.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            iterations: 200,
            batch_size: 4,
            seed: 0,
            alpha: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss before the update at each iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:.17e}\n"));
        }
        s
    }
}

/// A sample prepared for training: padded input and per-pixel targets.
struct Prepared {
    input: Tensor4,
    width: usize,
    height: usize,
    labels: Vec<usize>,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

fn prepare(sample: &Sample, head: &Head) -> Result<Prepared> {
    let (w, h) = (sample.rgb.width(), sample.rgb.height());
    if sample.depth.width() != w || sample.depth.height() != h {
        return Err(Error::shape("sample rgb and depth sizes differ"));
    }
    let labels = match head {
        Head::Classification(b) => LabelMap::from_depth(&sample.depth, b)?.labels().to_vec(),
        Head::Regression { .. } => Vec::new(),
    };
    Ok(Prepared {
        input: image_tensor(&sample.rgb),
        width: w,
        height: h,
        labels,
        depth: sample.depth.values().to_vec(),
        valid: sample.depth.valid().to_vec(),
    })
}

/// Loss and pixel-major output gradient over a batch of cropped outputs.
fn batch_loss(
    outputs: &[Vec<f64>],
    batch: &[&Prepared],
    head: &Head,
    h: Option<&InfoGainMatrix>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let sizes: Vec<usize> = outputs.iter().map(Vec::len).collect();
    let split = |flat: Vec<f64>| {
        let mut parts = Vec::with_capacity(sizes.len());
        let mut rest = flat.as_slice();
        for &s in &sizes {
            parts.push(rest[..s].to_vec());
            rest = &rest[s..];
        }
        parts
    };
    match head {
        Head::Classification(b) => {
            let logits: Vec<f64> = outputs.concat();
            let labels: Vec<usize> = batch
                .iter()
                .flat_map(|p| p.labels.iter().copied())
                .collect();
            let valid: Vec<bool> = batch.iter().flat_map(|p| p.valid.iter().copied()).collect();
            let (value, grad) = loss_raw(
                &logits,
                b.bins(),
                &labels,
                &valid,
                h.expect("classification loss matrix"),
            )?;
            Ok((value, split(grad)))
        }
        Head::Regression { .. } => {
            let n = batch
                .iter()
                .map(|p| p.valid.iter().filter(|&&v| v).count())
                .sum::<usize>();
            if n == 0 {
                return Err(Error::Empty("no valid target pixels in the batch".into()));
            }
            let inv_n = 1.0 / n as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(outputs.len());
            for (out, p) in outputs.iter().zip(batch) {
                let mut g = vec![0.0; out.len()];
                for i in 0..out.len() {
                    if p.valid[i] {
                        let pred = out[i].exp();
                        let diff = pred - p.depth[i];
                        total += diff * diff;
                        g[i] = 2.0 * diff * pred * inv_n;
                    }
                }
                grads.push(g);
            }
            Ok((total * inv_n, grads))
        }
    }
}

/// Mini-batch SGD with momentum: `v ← μv − η∇L`, `w ← w + v`. Samples are
/// visited in a seeded shuffled order, reshuffled after each pass.
pub fn train(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(net, data, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(iteration, loss)`.
pub fn train_with(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let head = net.head.clone();
    let h = match &head {
        Head::Classification(b) => Some(InfoGainMatrix::new(b.bins(), cfg.alpha)?),
        Head::Regression { .. } => None,
    };
    let prepared: Vec<Prepared> = data
        .iter()
        .map(|s| prepare(s, &head))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut log = TrainLog::default();
    for it in 0..cfg.iterations {
        let mut picks = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(prepared.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        // Index order keeps the loss a function of the batch contents alone.
        picks.sort_unstable();
        let batch: Vec<&Prepared> = picks.iter().map(|&i| &prepared[i]).collect();

        let mut passes = Vec::with_capacity(batch.len());
        let mut outputs = Vec::with_capacity(batch.len());
        for p in &batch {
            let (out, caches, coarse) = net.forward_train(&p.input)?;
            outputs.push(crop_pixel_major(&out, p.width, p.height));
            passes.push((out.shape(), caches, coarse));
        }
        let (loss, grads) = batch_loss(&outputs, &batch, &head, h.as_ref())?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged: loss is {loss} at iteration {it}"
            )));
        }
        log.losses.push(loss);
        progress(it, loss);

        net.zero_grad();
        for ((shape, caches, coarse), (g, p)) in passes.iter().zip(grads.iter().zip(&batch)) {
            let g = uncrop(g, *shape, p.width, p.height);
            net.backward(caches, *coarse, &g)?;
        }
        for param in net.params_mut() {
            for ((w, v), g) in param
                .value
                .iter_mut()
                .zip(param.velocity.iter_mut())
                .zip(&param.grad)
            {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
        }
    }
    Ok(log)
}
