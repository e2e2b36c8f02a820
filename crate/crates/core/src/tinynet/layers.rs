use rand::Rng;

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// A learnable array with its gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = value.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; len],
            velocity: vec![0.0; len],
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![0.0; len])
    }

    /// Uniform in `±bound`.
    pub fn uniform(
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let len: usize = shape.iter().product();
        let value = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn out_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    (size + 2 * pad)
        .checked_sub(k)
        .map(|s| s / stride + 1)
        .ok_or_else(|| {
            Error::shape(format!(
                "kernel {k} does not fit input {size} with padding {pad}"
            ))
        })
}

/// Unrolls one `c × h × w` image into a `(c·k·k) × (oh·ow)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let p = oh * ow;
    let mut cols = vec![0.0; c * k * k * p];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + y as usize) * w..][..w];
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            row[oy * ow + ox] = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    dx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * h + y as usize) * w..][..w];
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation. `weight` is `out × in × k × k`.
pub fn conv2d(
    input: &Tensor4,
    weight: &Tensor4,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let [n, c, h, w] = input.shape();
    let [co, ci, k, k2] = weight.shape();
    if ci != c || k != k2 || stride == 0 {
        return Err(Error::shape(format!(
            "conv weight {:?} (stride {stride}) does not apply to input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if bias.is_some_and(|b| b.len() != co) {
        return Err(Error::shape(format!("conv bias needs {co} entries")));
    }
    let oh = out_size(h, k, stride, padding)?;
    let ow = out_size(w, k, stride, padding)?;
    let p = oh * ow;
    let r = c * k * k;
    let mut out = Tensor4::zeros([n, co, oh, ow]);
    for b in 0..n {
        let cols = im2col(input.image(b), c, h, w, k, stride, padding, oh, ow);
        let y = out.image_mut(b);
        if let Some(bias) = bias {
            for (dst, &bv) in y.chunks_exact_mut(p).zip(bias) {
                dst.iter_mut().for_each(|v| *v = bv);
            }
        }
        // y[co×p] += W[co×r] · cols[r×p]
        gemm([co, r, p], (weight.data(), [r, 1]), (&cols, [p, 1]), 1.0, y);
    }
    Ok(out)
}

/// `c ← a·b + beta·c` for an `m×k` by `k×n` product with row-major `c`.
/// Operands are `(data, [row stride, column stride])`.
fn gemm(
    dims: [usize; 3],
    a: (&[f64], [usize; 2]),
    b: (&[f64], [usize; 2]),
    beta: f64,
    c: &mut [f64],
) {
    let [m, k, n] = dims;
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, s: [usize; 2]| {
        (rows.max(1) - 1) * s[0] + (cols.max(1) - 1) * s[1] + 1
    };
    assert!(
        k == 0 || a.0.len() >= span(m, k, a.1),
        "gemm: lhs too short"
    );
    assert!(
        k == 0 || b.0.len() >= span(k, n, b.1),
        "gemm: rhs too short"
    );
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1[0] as isize,
            a.1[1] as isize,
            b.0.as_ptr(),
            b.1[0] as isize,
            b.1[1] as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Gradients of [`conv2d`]: `(d input, d weight, d bias)`.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    stride: usize,
    padding: usize,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let [n, c, h, w] = input.shape();
    let [co, _, k, _] = weight.shape();
    let oh = out_size(h, k, stride, padding)?;
    let ow = out_size(w, k, stride, padding)?;
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(Error::shape(format!(
            "conv output gradient {:?} does not match output {:?}",
            grad_out.shape(),
            [n, co, oh, ow]
        )));
    }
    let p = oh * ow;
    let r = c * k * k;
    let mut dx = Tensor4::zeros(input.shape());
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = vec![0.0; co];
    let mut dcols = vec![0.0; r * p];
    for b in 0..n {
        let cols = im2col(input.image(b), c, h, w, k, stride, padding, oh, ow);
        let dy = grad_out.image(b);
        for (d, g) in db.iter_mut().zip(dy.chunks_exact(p)) {
            *d += g.iter().sum::<f64>();
        }
        // dW[co×r] += dy[co×p] · colsᵀ[p×r]
        gemm(
            [co, p, r],
            (dy, [p, 1]),
            (&cols, [1, p]),
            1.0,
            dw.data_mut(),
        );
        // dcols[r×p] = Wᵀ[r×co] · dy[co×p]
        gemm(
            [r, co, p],
            (weight.data(), [1, r]),
            (dy, [p, 1]),
            0.0,
            &mut dcols,
        );
        col2im(&dcols, dx.image_mut(b), c, h, w, k, stride, padding, oh, ow);
    }
    Ok((dx, dw, db))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![cout, cin, k, k], bound, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), vec![cout])),
            stride,
            padding: k / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    fn weight_tensor(&self) -> Tensor4 {
        let s = &self.weight.shape;
        Tensor4::from_vec([s[0], s[1], s[2], s[3]], self.weight.value.clone())
            .expect("weight shape is consistent")
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d(
            x,
            &self.weight_tensor(),
            self.bias.as_ref().map(|b| b.value.as_slice()),
            self.stride,
            self.padding,
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
        let (dx, dw, db) =
            conv2d_backward(x, &self.weight_tensor(), self.stride, self.padding, dy)?;
        for (g, d) in self.weight.grad.iter_mut().zip(dw.data()) {
            *g += d;
        }
        if let Some(bias) = &mut self.bias {
            for (g, d) in bias.grad.iter_mut().zip(&db) {
                *g += d;
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.weight];
        out.extend(&self.bias);
        out
    }
}

/// Per-channel `scale · x + shift`; stands in for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub scale: Param,
    pub shift: Param,
}

impl Affine {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            scale: Param::new(format!("{name}.scale"), vec![channels], vec![1.0; channels]),
            shift: Param::zeros(format!("{name}.shift"), vec![channels]),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.channels() != self.scale.len() {
            return Err(Error::shape(format!(
                "affine has {} channels, input has {}",
                self.scale.len(),
                x.channels()
            )));
        }
        let plane = x.plane();
        let c = x.channels();
        let mut out = x.clone();
        for (idx, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            let ch = idx % c;
            let (s, t) = (self.scale.value[ch], self.shift.value[ch]);
            chunk.iter_mut().for_each(|v| *v = s * *v + t);
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let plane = x.plane();
        let c = x.channels();
        let mut dx = dy.clone();
        for (idx, (g, xs)) in dx
            .data_mut()
            .chunks_exact_mut(plane)
            .zip(x.data().chunks_exact(plane))
            .enumerate()
        {
            let ch = idx % c;
            self.scale.grad[ch] += g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            self.shift.grad[ch] += g.iter().sum::<f64>();
            let s = self.scale.value[ch];
            g.iter_mut().for_each(|v| *v *= s);
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scale, &mut self.shift]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.scale, &self.shift]
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (g, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// 3×3 max pooling, stride 2, padding 1. Returns the output and, for every
/// output element, the flat input index it came from (first maximum in
/// scan order).
pub fn max_pool(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    let oh = out_size(h, 3, 2, 1)?;
    let ow = out_size(w, 3, 2, 1)?;
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let mut o = 0;
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..3 {
                        let y = (oy * 2 + ky) as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = (ox * 2 + kx) as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let idx = x.index(b, ch, y as usize, xx as usize);
                            if best_idx == usize::MAX || x.data()[idx] > best {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    arg.push(best_idx);
                    o += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_backward(input_shape: [usize; 4], arg: &[usize], dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(input_shape);
    for (g, &idx) in dy.data().iter().zip(arg) {
        dx.data_mut()[idx] += g;
    }
    dx
}

/// Source coordinate and interpolation weights for corner-aligned sampling
/// of `size` inputs onto `size * factor` outputs.
fn taps(size: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let out = size * factor;
    (0..out)
        .map(|o| {
            if size == 1 || out == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (size - 1) as f64 / (out - 1) as f64;
            let lo = (src.floor() as usize).min(size - 1);
            let hi = (lo + 1).min(size - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor with corner alignment: output
/// pixel `o` samples input coordinate `o · (n - 1) / (n·factor - 1)`, so the
/// first and last pixels of each row and column coincide with the input's.
pub fn bilinear_upsample(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsampling factor must be at least 1".into(),
        ));
    }
    let [n, c, h, w] = x.shape();
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward(input_shape: [usize; 4], factor: usize, dy: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input_shape;
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = Tensor4::zeros(input_shape);
    for plane in 0..n * c {
        let g = &dy.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortcutKind {
    /// `y = F(x) + x`.
    Identity,
    /// `y = F(x) + W_s x` with a bias-free 1×1 convolution `W_s`.
    Projection,
}

/// Pre-activation residual block:
/// `F(x) = conv2(relu(affine2(conv1(relu(affine1(x))))))`, both convolutions
/// 3×3, the first carrying the stride. Nothing follows the addition, so a
/// block whose `conv2` is zero is exactly its shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub kind: ShortcutKind,
    pub affine1: Affine,
    pub conv1: Conv2d,
    pub affine2: Affine,
    pub conv2: Conv2d,
    pub projection: Option<Conv2d>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Tensor4,
    a1: Tensor4,
    r1: Tensor4,
    c1: Tensor4,
    a2: Tensor4,
    r2: Tensor4,
}

impl ResidualBlock {
    pub fn new(
        name: &str,
        kind: ShortcutKind,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kind == ShortcutKind::Identity && (cin != cout || stride != 1) {
            return Err(Error::shape(format!(
                "identity shortcut needs equal channels and stride 1, got {cin}->{cout} stride {stride}"
            )));
        }
        Ok(Self {
            kind,
            affine1: Affine::new(&format!("{name}.affine1"), cin),
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, false, rng),
            affine2: Affine::new(&format!("{name}.affine2"), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, false, rng),
            projection: (kind == ShortcutKind::Projection).then(|| {
                Conv2d::new(
                    &format!("{name}.projection"),
                    cin,
                    cout,
                    1,
                    stride,
                    false,
                    rng,
                )
            }),
        })
    }

    fn shortcut(&self, x: &Tensor4) -> Result<Tensor4> {
        match &self.projection {
            Some(p) => p.forward(x),
            None => {
                if x.channels() != self.conv2.out_channels() {
                    return Err(Error::shape(format!(
                        "identity shortcut: input has {} channels, residual has {}",
                        x.channels(),
                        self.conv2.out_channels()
                    )));
                }
                Ok(x.clone())
            }
        }
    }

    pub fn forward_cached(&self, x: &Tensor4) -> Result<(Tensor4, BlockCache)> {
        let a1 = self.affine1.forward(x)?;
        let r1 = relu(&a1);
        let c1 = self.conv1.forward(&r1)?;
        let a2 = self.affine2.forward(&c1)?;
        let r2 = relu(&a2);
        let mut y = self.conv2.forward(&r2)?;
        let s = self.shortcut(x)?;
        if s.shape() != y.shape() {
            return Err(Error::shape(format!(
                "shortcut {:?} vs residual {:?}",
                s.shape(),
                y.shape()
            )));
        }
        y.add_assign(&s);
        Ok((
            y,
            BlockCache {
                x: x.clone(),
                a1,
                r1,
                c1,
                a2,
                r2,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor4) -> Result<Tensor4> {
        let dr2 = self.conv2.backward(&cache.r2, dy)?;
        let da2 = relu_backward(&cache.a2, &dr2);
        let dc1 = self.affine2.backward(&cache.c1, &da2);
        let dr1 = self.conv1.backward(&cache.r1, &dc1)?;
        let da1 = relu_backward(&cache.a1, &dr1);
        let mut dx = self.affine1.backward(&cache.x, &da1);
        match &mut self.projection {
            Some(p) => dx.add_assign(&p.backward(&cache.x, dy)?),
            None => dx.add_assign(dy),
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.affine1.params_mut();
        out.extend(self.conv1.params_mut());
        out.extend(self.affine2.params_mut());
        out.extend(self.conv2.params_mut());
        if let Some(p) = &mut self.projection {
            out.extend(p.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.affine1.params();
        out.extend(self.conv1.params());
        out.extend(self.affine2.params());
        out.extend(self.conv2.params());
        if let Some(p) = &self.projection {
            out.extend(p.params());
        }
        out
    }
}

/// A step in the network's sequential layer list.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Conv(Conv2d),
    Affine(Affine),
    Relu,
    MaxPool,
    Block(ResidualBlock),
}

#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor4),
    Pool { shape: [usize; 4], arg: Vec<usize> },
    Block(Box<BlockCache>),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Affine(_) => "affine",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Block(_) => "residual block",
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, Cache)> {
        Ok(match self {
            Layer::Conv(c) => (c.forward(x)?, Cache::Input(x.clone())),
            Layer::Affine(a) => (a.forward(x)?, Cache::Input(x.clone())),
            Layer::Relu => (relu(x), Cache::Input(x.clone())),
            Layer::MaxPool => {
                let (y, arg) = max_pool(x)?;
                (
                    y,
                    Cache::Pool {
                        shape: x.shape(),
                        arg,
                    },
                )
            }
            Layer::Block(b) => {
                let (y, cache) = b.forward_cached(x)?;
                (y, Cache::Block(Box::new(cache)))
            }
        })
    }

    pub fn forward_only(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Affine(a) => a.forward(x),
            Layer::Relu => Ok(relu(x)),
            Layer::MaxPool => max_pool(x).map(|(y, _)| y),
            Layer::Block(b) => b.forward(x),
        }
    }

    pub fn backward(&mut self, cache: &Cache, dy: &Tensor4) -> Result<Tensor4> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => c.backward(x, dy),
            (Layer::Affine(a), Cache::Input(x)) => Ok(a.backward(x, dy)),
            (Layer::Relu, Cache::Input(x)) => Ok(relu_backward(x, dy)),
            (Layer::MaxPool, Cache::Pool { shape, arg }) => Ok(max_pool_backward(*shape, arg, dy)),
            (Layer::Block(b), Cache::Block(cache)) => b.backward(cache, dy),
            (layer, _) => Err(Error::shape(format!(
                "cache does not belong to a {} layer",
                layer.name()
            ))),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(c) => c.params_mut(),
            Layer::Affine(a) => a.params_mut(),
            Layer::Block(b) => b.params_mut(),
            Layer::Relu | Layer::MaxPool => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(c) => c.params(),
            Layer::Affine(a) => a.params(),
            Layer::Block(b) => b.params(),
            Layer::Relu | Layer::MaxPool => Vec::new(),
        }
    }
}
