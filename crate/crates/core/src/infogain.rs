//! Information-gain weighted multinomial logistic loss.
//!
//! For a pixel with target label `t` and logits `z`, the loss is
//! `-Σ_d H(t, d) ln softmax(z)_d` with `H(p, q) = exp(-α (p - q)²)`, averaged
//! over valid pixels. `H` is used unnormalized, so the loss never reaches zero:
//! its floor is the entropy-like term `-Σ_d H(t, d) ln(H(t, d) / S_t)`.

use crate::depth::{LabelMap, ScoreKind, ScoreVolume};
use crate::error::{Error, Result};

/// Symmetric `B x B` label-similarity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoGainMatrix {
    bins: usize,
    alpha: f64,
    entries: Vec<f64>,
}

impl InfoGainMatrix {
    pub fn new(bins: usize, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be nonnegative, got {alpha}"
            )));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument(
                "information gain matrix needs at least one bin".into(),
            ));
        }
        let mut entries = Vec::with_capacity(bins * bins);
        for p in 0..bins {
            for q in 0..bins {
                let d = p as f64 - q as f64;
                entries.push((-alpha * d * d).exp());
            }
        }
        Ok(Self {
            bins,
            alpha,
            entries,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.entries[p * self.bins + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.entries[p * self.bins..(p + 1) * self.bins]
    }
}

pub fn build_infogain(bins: usize, alpha: f64) -> Result<InfoGainMatrix> {
    InfoGainMatrix::new(bins, alpha)
}

fn log_softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

fn check_logits(logits: &ScoreVolume) -> Result<()> {
    if logits.kind() != ScoreKind::Logits {
        return Err(Error::WrongKind {
            expected: ScoreKind::Logits.name(),
            found: logits.kind().name(),
        });
    }
    if let Some(i) = logits.data().iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logit at flat index {i}")));
    }
    Ok(())
}

/// Max-subtracted softmax applied to each pixel.
pub fn softmax_pixelwise(logits: &ScoreVolume) -> Result<ScoreVolume> {
    check_logits(logits)?;
    let bins = logits.bins();
    let mut data = vec![0.0; logits.data().len()];
    for (row, out) in logits.rows().zip(data.chunks_exact_mut(bins)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, z) in out.iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }
    ScoreVolume::new(
        logits.width(),
        logits.height(),
        bins,
        ScoreKind::Probabilities,
        data,
    )
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    /// `∂L/∂z`, same layout as the logits.
    pub grad: ScoreVolume,
}

/// Loss and gradient over a flat pixel-major logit buffer. Returns
/// `(value, grad)`; pixels with `valid[i] == false` get zero gradient.
pub(crate) fn loss_raw(
    logits: &[f64],
    bins: usize,
    targets: &[usize],
    valid: &[bool],
    h: &InfoGainMatrix,
) -> Result<(f64, Vec<f64>)> {
    if h.bins() != bins {
        return Err(Error::shape(format!(
            "information gain matrix is {0}x{0}, scores have {bins} bins",
            h.bins()
        )));
    }
    let pixels = targets.len();
    if logits.len() != pixels * bins || valid.len() != pixels {
        return Err(Error::shape(
            "logits, targets and mask disagree in pixel count",
        ));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::Empty("no valid target pixels for the loss".into()));
    }
    let inv_n = 1.0 / n as f64;

    let mut grad = vec![0.0; logits.len()];
    let mut log_p = vec![0.0; bins];
    let mut total = 0.0;
    for i in 0..pixels {
        if !valid[i] {
            continue;
        }
        let t = targets[i];
        if t >= bins {
            return Err(Error::OutOfRange {
                index: t,
                limit: bins,
            });
        }
        let z = &logits[i * bins..(i + 1) * bins];
        log_softmax_into(z, &mut log_p);
        let weights = h.row(t);
        let mut s = 0.0;
        let mut pixel_loss = 0.0;
        for (w, lp) in weights.iter().zip(&log_p) {
            s += w;
            pixel_loss -= w * lp;
        }
        total += pixel_loss;
        let g = &mut grad[i * bins..(i + 1) * bins];
        for ((g, lp), w) in g.iter_mut().zip(&log_p).zip(weights) {
            *g = inv_n * (lp.exp() * s - w);
        }
    }
    Ok((total * inv_n, grad))
}

pub fn loss_forward_backward(
    logits: &ScoreVolume,
    target: &LabelMap,
    h: &InfoGainMatrix,
) -> Result<LossResult> {
    check_logits(logits)?;
    if target.width() != logits.width() || target.height() != logits.height() {
        return Err(Error::shape(format!(
            "logits are {}x{}, targets are {}x{}",
            logits.width(),
            logits.height(),
            target.width(),
            target.height()
        )));
    }
    let (value, grad) = loss_raw(
        logits.data(),
        logits.bins(),
        target.labels(),
        target.valid(),
        h,
    )?;
    Ok(LossResult {
        value,
        grad: ScoreVolume::new(
            logits.width(),
            logits.height(),
            logits.bins(),
            ScoreKind::Logits,
            grad,
        )?,
    })
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences with step `step`.
///
/// Each pixel's loss term is differentiated on its own, so the comparison is
/// made at per-pixel scale (the analytic gradient times the valid-pixel count).
/// Relative error per component is `|a - f| / max(|a|, |f|, 1e-3)`; the floor
/// keeps components that are zero up to rounding from dominating.
pub fn check_gradient(
    logits: &ScoreVolume,
    target: &LabelMap,
    h: &InfoGainMatrix,
    step: f64,
) -> Result<f64> {
    let analytic = loss_forward_backward(logits, target, h)?;
    let bins = logits.bins();
    let n = target.valid().iter().filter(|&&v| v).count() as f64;
    let mut worst: f64 = 0.0;
    for (i, row) in logits.rows().enumerate() {
        let grad = analytic.grad.pixel(i);
        if !target.valid()[i] {
            worst = worst.max(grad.iter().fold(0.0, |m: f64, g| m.max(g.abs())));
            continue;
        }
        let label = [target.labels()[i]];
        let mut z = row.to_vec();
        for k in 0..bins {
            let orig = z[k];
            z[k] = orig + step;
            let (plus, _) = loss_raw(&z, bins, &label, &[true], h)?;
            z[k] = orig - step;
            let (minus, _) = loss_raw(&z, bins, &label, &[true], h)?;
            z[k] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let a = grad[k] * n;
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(z: Vec<f64>) -> ScoreVolume {
        let b = z.len();
        ScoreVolume::new(1, 1, b, ScoreKind::Logits, z).unwrap()
    }

    #[test]
    fn matrix_values() {
        let h = build_infogain(3, 0.2).unwrap();
        assert_relative_eq!(h.get(1, 0), 0.818_730_753_077_981_9, max_relative = 1e-15);
        assert_eq!(h.get(1, 1), 1.0);
        assert_eq!(h.get(1, 2), h.get(1, 0));
        assert_relative_eq!(h.get(0, 2), (-0.8f64).exp(), max_relative = 1e-15);

        let ones = build_infogain(5, 0.0).unwrap();
        assert!((0..5).all(|p| ones.row(p).iter().all(|&v| v == 1.0)));

        let sharp = build_infogain(2, 1000.0).unwrap();
        assert!(sharp.get(0, 1) < 1e-300);
        assert!(build_infogain(3, -0.1).is_err());
    }

    #[test]
    fn matrix_is_symmetric_with_diagonal_maxima() {
        let h = build_infogain(17, 0.37).unwrap();
        for p in 0..17 {
            assert_eq!(h.get(p, p), 1.0);
            for q in 0..17 {
                assert_eq!(h.get(p, q), h.get(q, p));
                assert!(h.get(p, q) > 0.0 && h.get(p, q) <= 1.0);
            }
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_pixelwise(&single(vec![0.0, 0.0, 0.0])).unwrap();
        p.data()
            .iter()
            .for_each(|&v| assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-15));
        let p = softmax_pixelwise(&single(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        for (v, e) in p.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_relative_eq!(*v, e, max_relative = 1e-14);
        }
        let a = softmax_pixelwise(&single(vec![0.3, -1.0, 2.0])).unwrap();
        let b = softmax_pixelwise(&single(vec![700.3, 699.0, 702.0])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
        assert!(softmax_pixelwise(&single(vec![0.0, f64::NAN])).is_err());
    }

    #[test]
    fn three_bin_example() {
        // Closed form: S = 1 + 2e^-0.2, L = S ln 3, grad = P S - H(1, .).
        let h = build_infogain(3, 0.2).unwrap();
        let target = LabelMap::dense(1, 1, vec![1], 3).unwrap();
        let r = loss_forward_backward(&single(vec![0.0; 3]), &target, &h).unwrap();
        let s = 1.0 + 2.0 * (-0.2f64).exp();
        assert_relative_eq!(s, 2.637_461_506_155_964, max_relative = 1e-15);
        assert_relative_eq!(r.value, 2.897_547_621_552_043, max_relative = 1e-12);
        let g = r.grad.data();
        assert_relative_eq!(g[0], 0.060_423_082_307_339_5, max_relative = 1e-10);
        assert_relative_eq!(g[1], -0.120_846_164_614_679, max_relative = 1e-10);
        assert_relative_eq!(g[2], g[0], max_relative = 1e-15);
        assert!(check_gradient(&single(vec![0.0; 3]), &target, &h, 1e-5).unwrap() < 1e-7);
    }

    #[test]
    fn identity_matrix_is_cross_entropy() {
        let h = build_infogain(4, 1e4).unwrap();
        let z = vec![0.5, -0.2, 1.1, 0.0];
        let target = LabelMap::dense(1, 1, vec![2], 4).unwrap();
        let r = loss_forward_backward(&single(z.clone()), &target, &h).unwrap();
        let p = softmax_pixelwise(&single(z)).unwrap();
        assert_relative_eq!(r.value, -p.data()[2].ln(), max_relative = 1e-12);
        for (k, (g, pk)) in r.grad.data().iter().zip(p.data()).enumerate() {
            let onehot = if k == 2 { 1.0 } else { 0.0 };
            assert_relative_eq!(*g, pk - onehot, epsilon = 1e-12);
        }
    }

    #[test]
    fn alpha_zero_gradient() {
        let h = build_infogain(5, 0.0).unwrap();
        let z = single(vec![0.1, 0.4, -0.3, 0.9, 0.0]);
        let target = LabelMap::dense(1, 1, vec![3], 5).unwrap();
        let r = loss_forward_backward(&z, &target, &h).unwrap();
        let p = softmax_pixelwise(&z).unwrap();
        for (g, pk) in r.grad.data().iter().zip(p.data()) {
            assert_relative_eq!(*g, 5.0 * pk - 1.0, epsilon = 1e-13);
        }
        let direct: f64 = -p.data().iter().map(|v| v.ln()).sum::<f64>();
        assert_relative_eq!(r.value, direct, max_relative = 1e-13);
    }

    #[test]
    fn invalid_pixels_are_excluded() {
        let h = build_infogain(3, 0.2).unwrap();
        let z = ScoreVolume::new(
            2,
            1,
            3,
            ScoreKind::Logits,
            vec![0.0, 1.0, 2.0, 5.0, 5.0, -5.0],
        )
        .unwrap();
        let t = LabelMap::new(2, 1, vec![0, 0], vec![true, false], 3).unwrap();
        let r = loss_forward_backward(&z, &t, &h).unwrap();
        assert!(r.grad.data()[3..].iter().all(|&g| g == 0.0));
        let one = loss_forward_backward(
            &single(vec![0.0, 1.0, 2.0]),
            &LabelMap::dense(1, 1, vec![0], 3).unwrap(),
            &h,
        )
        .unwrap();
        assert_relative_eq!(r.value, one.value, max_relative = 1e-15);

        let none = LabelMap::new(2, 1, vec![0, 0], vec![false, false], 3).unwrap();
        assert!(matches!(
            loss_forward_backward(&z, &none, &h),
            Err(Error::Empty(_))
        ));
        let wrong = LabelMap::dense(1, 1, vec![0], 3).unwrap();
        assert!(matches!(
            loss_forward_backward(&z, &wrong, &h),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn random_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let bins = rng.gen_range(2..30);
            let (w, hgt) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let z: Vec<f64> = (0..w * hgt * bins)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect();
            let labels: Vec<usize> = (0..w * hgt).map(|_| rng.gen_range(0..bins)).collect();
            let logits = ScoreVolume::new(w, hgt, bins, ScoreKind::Logits, z).unwrap();
            let target = LabelMap::dense(w, hgt, labels, bins).unwrap();
            let h = build_infogain(bins, rng.gen_range(0.0..1.0)).unwrap();
            assert!(check_gradient(&logits, &target, &h, 1e-5).unwrap() < 1e-5);
            let r = loss_forward_backward(&logits, &target, &h).unwrap();
            for row in r.grad.rows() {
                assert!(row.iter().sum::<f64>().abs() < 1e-10);
            }
        }
    }
}
