//! End-to-end acceptance suite. Runs every criterion, prints one line per
//! criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use depthcls::commands::{bins_analyze, compare, compare_csv, METRIC_COLUMNS};
use depthcls::config::RunConfig;
use depthcls::densecrf::{
    infer, meanfield_init, meanfield_step, CrfModel, InferenceMode, KernelParams,
};
use depthcls::depth::{
    argmax_decode, make_binning, BinSpace, DepthMap, LabelMap, ScoreKind, ScoreVolume,
};
use depthcls::format::{
    decode_dmap, decode_ppm, decode_svol, encode_dmap, encode_ppm, encode_svol,
};
use depthcls::image::RgbImage;
use depthcls::infogain::{build_infogain, check_gradient, loss_forward_backward};
use depthcls::metrics::{evaluate, MetricsReport};
use depthcls::synth::{generate, label_scores, Layout, SceneSpec};
use depthcls::tinynet::{
    decode_tnet, encode_tnet, Affine, Conv2d, Head, Layer, Network, NetworkSpec, Prediction,
    ResidualBlock, ShortcutKind, Tensor4,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1. Discretization sweep.
fn discretization_sweep() -> Outcome {
    let start = Instant::now();
    let n = 100_000;
    let (lo, hi) = (0.7f64, 10.0f64);
    let values: Vec<f64> = (0..n)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).clamp(lo, hi))
        .collect();
    let gt = DepthMap::from_values(400, 250, values).map_err(|e| e.to_string())?;
    let bins = [10, 30, 50, 80, 100];
    let log = bins_analyze(std::slice::from_ref(&gt), &bins, &[BinSpace::Log], lo, hi)
        .map_err(|e| e.to_string())?;
    let linear = bins_analyze(
        std::slice::from_ref(&gt),
        &[10],
        &[BinSpace::Linear],
        lo,
        hi,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut problems = Vec::new();
    for row in &log {
        let bound = (hi / lo).log10() / (2.0 * row.bins as f64);
        if row.report.log10 > bound {
            problems.push(format!(
                "B={} log10 {} > {bound}",
                row.bins, row.report.log10
            ));
        }
        if row.report.delta1 != 100.0 {
            problems.push(format!("B={} delta1 {}", row.bins, row.report.delta1));
        }
    }
    for w in log.windows(2) {
        let (a, b) = (&w[0].report, &w[1].report);
        if b.rel > a.rel || b.log10 > a.log10 || b.rms > a.rms {
            problems.push(format!(
                "errors increase from B={} to B={}",
                w[0].bins, w[1].bins
            ));
        }
    }
    let lin_delta = linear[0].report.delta1;
    if lin_delta >= 100.0 {
        problems.push(format!("linear B=10 delta1 {lin_delta}"));
    }
    check(
        problems.is_empty() && within(elapsed, 5.0),
        format!(
            "log10 B=10 {:.6} (bound {:.6}), B=100 {:.6} (bound {:.6}); linear B=10 delta1 {lin_delta:.3}%; {:.2}s {}",
            log[0].report.log10,
            (hi / lo).log10() / 20.0,
            log[4].report.log10,
            (hi / lo).log10() / 200.0,
            elapsed.as_secs_f64(),
            problems.join("; ")
        ),
    )
}

// 2. Information-gain gradient.
fn infogain_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for case in 0..100 {
        let bins = if case == 0 {
            100
        } else {
            rng.gen_range(2..=100)
        };
        let (w, h) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let alpha = rng.gen_range(0.05..2.0);
        let z = (0..w * h * bins)
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect();
        let logits =
            ScoreVolume::new(w, h, bins, ScoreKind::Logits, z).map_err(|e| e.to_string())?;
        let labels = (0..w * h).map(|_| rng.gen_range(0..bins)).collect();
        let target = LabelMap::dense(w, h, labels, bins).map_err(|e| e.to_string())?;
        let hm = build_infogain(bins, alpha).map_err(|e| e.to_string())?;
        worst_rel =
            worst_rel.max(check_gradient(&logits, &target, &hm, 1e-5).map_err(|e| e.to_string())?);
        let grad = loss_forward_backward(&logits, &target, &hm)
            .map_err(|e| e.to_string())?
            .grad;
        for row in grad.rows() {
            worst_sum = worst_sum.max(row.iter().sum::<f64>().abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_rel < 1e-5 && worst_sum < 1e-10 && within(elapsed, 10.0),
        format!(
            "max rel err {worst_rel:.2e}, max |row sum| {worst_sum:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// 3. Cross-entropy limit.
fn cross_entropy_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let bins = rng.gen_range(2..=50);
        let (w, h) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let z: Vec<f64> = (0..w * h * bins)
            .map(|_| rng.gen_range(-4.0..4.0))
            .collect();
        let labels: Vec<usize> = (0..w * h).map(|_| rng.gen_range(0..bins)).collect();
        let logits = ScoreVolume::new(w, h, bins, ScoreKind::Logits, z.clone())
            .map_err(|e| e.to_string())?;
        let target = LabelMap::dense(w, h, labels.clone(), bins).map_err(|e| e.to_string())?;
        let hm = build_infogain(bins, 1e3).map_err(|e| e.to_string())?;
        let got = loss_forward_backward(&logits, &target, &hm).map_err(|e| e.to_string())?;

        // Plain multinomial logistic loss, averaged over pixels.
        let n = (w * h) as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(z.len());
        for (row, &t) in z.chunks(bins).zip(&labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss -= row[t] - m - denom.ln();
            for (k, v) in row.iter().enumerate() {
                let p = (v - m).exp() / denom;
                grad.push((p - if k == t { 1.0 } else { 0.0 }) / n);
            }
        }
        worst = worst.max((got.value - loss / n).abs());
        for (a, b) in got.grad.data().iter().zip(&grad) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < 1e-9, format!("max abs deviation {worst:.2e}"))
}

fn random_model(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    b: usize,
    params: KernelParams,
    unary_max: f64,
) -> CrfModel {
    let unary = (0..w * h * b)
        .map(|_| rng.gen_range(0.0..unary_max))
        .collect();
    let colors = (0..w * h)
        .map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..255.0)))
        .collect();
    CrfModel::new(w, h, b, unary, colors, params).unwrap()
}

// 4. CRF energy oracle.
fn crf_energy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let b = rng.gen_range(1..=5);
        let params = KernelParams {
            w1: rng.gen_range(0.0..5.0),
            w2: rng.gen_range(0.0..5.0),
            sigma_alpha: rng.gen_range(0.5..10.0),
            sigma_beta: rng.gen_range(5.0..100.0),
            sigma_gamma: rng.gen_range(0.5..5.0),
        };
        let m = random_model(&mut rng, w, h, b, params, 3.0);
        let labels: Vec<usize> = (0..w * h).map(|_| rng.gen_range(0..b)).collect();
        let got = m
            .energy(&LabelMap::dense(w, h, labels.clone(), b).unwrap())
            .map_err(|e| e.to_string())?;

        // Every ordered pair, halved.
        let n = w * h;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (xi, yi, xj, yj) = (
                    (i % w) as f64,
                    (i / w) as f64,
                    (j % w) as f64,
                    (j / w) as f64,
                );
                let d2 = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
                let (ci, cj) = (m.color(i), m.color(j));
                let c2: f64 = ci.iter().zip(&cj).map(|(a, b)| (a - b) * (a - b)).sum();
                let k = params.w1
                    * (-d2 / (2.0 * params.sigma_alpha.powi(2))
                        - c2 / (2.0 * params.sigma_beta.powi(2)))
                    .exp()
                    + params.w2 * (-d2 / (2.0 * params.sigma_gamma.powi(2))).exp();
                pairs += 0.5 * labels[i].abs_diff(labels[j]) as f64 * k;
            }
        }
        let unary: f64 = (0..n).map(|i| m.unary(i)[labels[i]]).sum();
        let want = unary + pairs;
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    check(
        worst < 1e-12,
        format!("max rel err {worst:.2e} over 100 instances"),
    )
}

// 5. CRF inference oracle.
fn crf_inference() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = KernelParams {
        w1: 0.1,
        w2: 0.1,
        sigma_alpha: 2.0,
        sigma_beta: 40.0,
        sigma_gamma: 1.0,
    };
    // Unary-dominant: each pixel's two best unaries are further apart than
    // twice the pixel's total pairwise kernel mass, the most any relabeling
    // of its neighbours can shift the comparison.
    let dominant = |m: &CrfModel| {
        (0..m.pixels()).all(|i| {
            let mut u = m.unary(i).to_vec();
            u.sort_by(f64::total_cmp);
            let mass: f64 = (0..m.pixels())
                .filter(|&j| j != i)
                .map(|j| m.kernel_value(i, j).unwrap())
                .sum();
            u[1] - u[0] >= 2.0 * mass
        })
    };
    let mut matches = 0;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..100 {
        let m = loop {
            let m = random_model(&mut rng, 3, 2, 3, params, 4.0);
            if dominant(&m) {
                break m;
            }
        };
        let mut state = meanfield_init(&m);
        worst_norm = worst_norm.max(state.max_normalization_error());
        for _ in 0..10 {
            state = meanfield_step(&state, &m, InferenceMode::Exact).map_err(|e| e.to_string())?;
            worst_norm = worst_norm.max(state.max_normalization_error());
        }
        let mf = infer(&m, 50, 1e-12, InferenceMode::Exact).map_err(|e| e.to_string())?;

        let mut best = (f64::INFINITY, Vec::new());
        for code in 0..3usize.pow(6) {
            let labels: Vec<usize> = (0..6).map(|i| code / 3usize.pow(i) % 3).collect();
            let e = m
                .energy(&LabelMap::dense(3, 2, labels.clone(), 3).unwrap())
                .unwrap();
            if e < best.0 {
                best = (e, labels);
            }
        }
        if mf.labels.labels() == best.1.as_slice() {
            matches += 1;
        }
    }

    let mut gap: f64 = 0.0;
    for colors in ["scattered", "two-region"] {
        for _ in 0..3 {
            let m = if colors == "scattered" {
                random_model(&mut rng, 16, 16, 5, KernelParams::default(), 3.0)
            } else {
                two_region_model(&mut rng)
            };
            let mut state = meanfield_init(&m);
            for _ in 0..3 {
                let e =
                    meanfield_step(&state, &m, InferenceMode::Exact).map_err(|e| e.to_string())?;
                let f = meanfield_step(&state, &m, InferenceMode::Filtered)
                    .map_err(|e| e.to_string())?;
                worst_norm = worst_norm.max(f.max_normalization_error());
                gap = gap.max(e.max_abs_change(&f));
                state = e;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        matches >= 95 && worst_norm < 1e-9 && gap < 0.02 && within(elapsed, 60.0),
        format!(
            "MAP matches {matches}/100, max |ΣQ-1| {worst_norm:.1e}, filtered vs exact max |ΔQ| {gap:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// 16×16 model with two noisy color regions split at a random column.
fn two_region_model(rng: &mut ChaCha8Rng) -> CrfModel {
    let (w, h, b) = (16, 16, 5);
    let unary = (0..w * h * b).map(|_| rng.gen_range(0.0..3.0)).collect();
    let base: [[f64; 3]; 2] = [0, 1].map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..255.0)));
    let cut = rng.gen_range(w / 4..3 * w / 4);
    let colors = (0..w * h)
        .map(|i| base[usize::from(i % w >= cut)].map(|c| c + rng.gen_range(-8.0..8.0)))
        .collect();
    CrfModel::new(w, h, b, unary, colors, KernelParams::default()).unwrap()
}

// 6. CRF refinement benefit.
fn crf_refinement() -> Outcome {
    let spec = SceneSpec::new(6, 32, 32, Layout::TwoRegions);
    let sample = generate(&spec).map_err(|e| e.to_string())?;
    let binning =
        make_binning(50, spec.d_min, spec.d_max, BinSpace::Log).map_err(|e| e.to_string())?;
    let (probs, corrupted) =
        label_scores(&sample.depth, &binning, 1.0, 0.05, 6).map_err(|e| e.to_string())?;
    let (_, before) = argmax_decode(&probs, &binning).map_err(|e| e.to_string())?;
    let model = CrfModel::from_probabilities(&probs, &sample.rgb, KernelParams::default())
        .map_err(|e| e.to_string())?;
    let refined = infer(&model, 10, 1e-3, InferenceMode::Filtered).map_err(|e| e.to_string())?;
    let after = refined
        .labels
        .to_depth(&binning)
        .map_err(|e| e.to_string())?;
    let pre = evaluate(&sample.depth, &before)
        .map_err(|e| e.to_string())?
        .delta1;
    let post = evaluate(&sample.depth, &after)
        .map_err(|e| e.to_string())?
        .delta1;
    check(
        post > pre,
        format!(
            "delta1 {pre:.3}% -> {post:.3}% ({} corrupted pixels, {} iterations)",
            corrupted.len(),
            refined.changes.len()
        ),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error of input and parameter gradients of `r · layer(x)`.
#[allow(clippy::needless_range_loop)]
fn layer_fd_error(layer: &Layer, x: &Tensor4, rng: &mut ChaCha8Rng) -> f64 {
    const STEP: f64 = 1e-5;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
    let (y, cache) = layer.forward(x).unwrap();
    let r = random_tensor(rng, y.shape());
    let mut l = layer.clone();
    l.params_mut().into_iter().for_each(|p| p.zero_grad());
    let dx = l.backward(&cache, &r).unwrap();

    let mut worst: f64 = 0.0;
    let mut xs = x.data().to_vec();
    for i in 0..xs.len() {
        let orig = xs[i];
        let eval = |v: f64, xs: &mut Vec<f64>| {
            xs[i] = v;
            dot(
                &layer
                    .forward_only(&Tensor4::from_vec(x.shape(), xs.clone()).unwrap())
                    .unwrap(),
                &r,
            )
        };
        let fd = (eval(orig + STEP, &mut xs) - eval(orig - STEP, &mut xs)) / (2.0 * STEP);
        xs[i] = orig;
        worst = worst.max(rel(dx.data()[i], fd));
    }
    let grads: Vec<Vec<f64>> = l.params().iter().map(|p| p.grad.clone()).collect();
    let mut probe = layer.clone();
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.params()[k].value[i];
            probe.params_mut()[k].value[i] = orig + STEP;
            let plus = dot(&probe.forward_only(x).unwrap(), &r);
            probe.params_mut()[k].value[i] = orig - STEP;
            let minus = dot(&probe.forward_only(x).unwrap(), &r);
            probe.params_mut()[k].value[i] = orig;
            worst = worst.max(rel(g[i], (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

// 7. Network correctness.
fn network_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, [2, 4, 6, 6]);
    let mut affine = Affine::new("affine", 4);
    affine.scale.value = vec![0.5, -1.5, 2.0, 1.0];
    affine.shift.value = vec![0.1, 0.0, -0.3, 0.2];
    let layers = vec![
        Layer::Conv(Conv2d::new("conv3", 4, 3, 3, 1, true, &mut rng)),
        Layer::Conv(Conv2d::new("conv7s2", 4, 2, 7, 2, true, &mut rng)),
        Layer::Affine(affine),
        Layer::Relu,
        Layer::MaxPool,
        Layer::Block(
            ResidualBlock::new("identity", ShortcutKind::Identity, 4, 4, 1, &mut rng).unwrap(),
        ),
        Layer::Block(
            ResidualBlock::new("projection", ShortcutKind::Projection, 4, 5, 2, &mut rng).unwrap(),
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut per_layer = Vec::new();
    for layer in &layers {
        let e = layer_fd_error(layer, &x, &mut rng);
        per_layer.push(format!("{} {e:.1e}", layer.name()));
        worst = worst.max(e);
    }
    // Upsampling has no parameters; check it through a standalone closure.
    let up_err = {
        let small = random_tensor(&mut rng, [1, 2, 3, 3]);
        let y = depthcls::tinynet::bilinear_upsample(&small, 8).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let dx = depthcls::tinynet::bilinear_upsample_backward(small.shape(), 8, &r);
        let mut worst: f64 = 0.0;
        for i in 0..small.data().len() {
            let mut v = small.data().to_vec();
            v[i] += 1e-5;
            let plus = dot(
                &depthcls::tinynet::bilinear_upsample(
                    &Tensor4::from_vec(small.shape(), v.clone()).unwrap(),
                    8,
                )
                .unwrap(),
                &r,
            );
            v[i] -= 2e-5;
            let minus = dot(
                &depthcls::tinynet::bilinear_upsample(
                    &Tensor4::from_vec(small.shape(), v).unwrap(),
                    8,
                )
                .unwrap(),
                &r,
            );
            let fd = (plus - minus) / 2e-5;
            worst =
                worst.max((dx.data()[i] - fd).abs() / dx.data()[i].abs().max(fd.abs()).max(1e-6));
        }
        worst
    };
    worst = worst.max(up_err);

    let mut block = ResidualBlock::new("zero", ShortcutKind::Identity, 4, 4, 1, &mut rng).unwrap();
    block.conv2.weight.value.iter_mut().for_each(|w| *w = 0.0);
    let identity = block.forward(&x).unwrap() == x;

    let img = generate(&SceneSpec::new(7, 24, 24, Layout::Blocks))
        .unwrap()
        .rgb;
    let binning = make_binning(10, 0.7, 10.0, BinSpace::Log).unwrap();
    let outputs: Vec<Vec<u64>> = (0..2)
        .map(|_| {
            let net = Network::new(
                NetworkSpec::default(),
                Head::Classification(binning.clone()),
                11,
            )
            .unwrap();
            match net.predict(&img).unwrap() {
                Prediction::Scores(s) => s.data().iter().map(|v| v.to_bits()).collect(),
                Prediction::Depth(d) => d.values().iter().map(|v| v.to_bits()).collect(),
            }
        })
        .collect();
    let deterministic = outputs[0] == outputs[1];

    check(
        worst < 1e-4 && identity && deterministic,
        format!(
            "max FD rel err {worst:.1e} ({}, upsample {up_err:.1e}); zero-residual identity exact: {identity}; bitwise deterministic: {deterministic}",
            per_layer.join(", ")
        ),
    )
}

// 8. End-to-end toy pipeline.
fn toy_pipeline() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let rows = compare(&cfg, |_, _, _, _| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let csv = compare_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    let header_ok = lines[0] == format!("model,bins,{METRIC_COLUMNS}");
    let shape_ok = lines.len() == cfg.compare_bins.len() + 2
        && lines[1].starts_with("regression,")
        && lines.iter().all(|l| l.split(',').count() == 8);
    let b50 = rows.iter().find(|r| r.bins == Some(50)).map(|r| r.report);
    let reg = rows[0].report;
    let Some(b50) = b50 else {
        return Err("no B=50 row".into());
    };
    check(
        header_ok && shape_ok && b50.rel <= 0.15 && b50.delta1 >= 90.0 && within(elapsed, 300.0),
        format!(
            "B=50 rel {:.4} delta1 {:.2}%; regression rel {:.4} delta1 {:.2}%; {} rows; {:.1}s",
            b50.rel,
            b50.delta1,
            reg.rel,
            reg.delta1,
            lines.len() - 1,
            elapsed.as_secs_f64()
        ),
    )
}

fn naive_metrics(gt: &[f64], pred: &[f64]) -> [f64; 7] {
    let pairs: Vec<(f64, f64)> = gt
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.is_finite() && p.is_finite())
        .map(|(&g, &p)| (g, p))
        .collect();
    let t = pairs.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(g, p)| f(g, p)).sum::<f64>() / t;
    let delta = |thr: f64| {
        100.0
            * pairs
                .iter()
                .filter(|&&(g, p)| (g / p).max(p / g) < thr)
                .count() as f64
            / t
    };
    [
        mean(&|g, p| (g - p).abs() / g),
        mean(&|g, p| (g.log10() - p.log10()).abs()),
        mean(&|g, p| (g - p).powi(2)).sqrt(),
        mean(&|g, p| (g.ln() - p.ln()).powi(2)).sqrt(),
        delta(1.25),
        delta(1.25f64.powi(2)),
        delta(1.25f64.powi(3)),
    ]
}

fn report_array(r: &MetricsReport) -> [f64; 7] {
    [
        r.rel, r.log10, r.rms, r.rmslog, r.delta1, r.delta2, r.delta3,
    ]
}

// 9. Metrics oracle.
fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let n = w * h;
        let gt: Vec<f64> = (0..n)
            .map(|i| {
                if i > 0 && rng.gen_bool(0.1) {
                    f64::NAN
                } else {
                    rng.gen_range(0.5..12.0)
                }
            })
            .collect();
        let pred: Vec<f64> = gt
            .iter()
            .map(|g| {
                if g.is_nan() {
                    1.0
                } else {
                    g * rng.gen_range(0.5..2.0)
                }
            })
            .collect();
        let got = evaluate(
            &DepthMap::from_values(w, h, gt.clone()).unwrap(),
            &DepthMap::from_values(w, h, pred.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        for (a, b) in report_array(&got).iter().zip(naive_metrics(&gt, &pred)) {
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    let hand = evaluate(
        &DepthMap::from_values(2, 1, vec![2.0, 4.0]).unwrap(),
        &DepthMap::from_values(2, 1, vec![1.0, 8.0]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let hand_ok = (hand.rel - 0.75).abs() < 1e-12
        && (hand.rms - 8.5f64.sqrt()).abs() < 1e-12
        && (hand.log10 - 2f64.log10()).abs() < 1e-12
        && (format!("{:.5}", hand.log10) == "0.30103")
        && (hand.rmslog - 2f64.ln()).abs() < 1e-12;
    check(
        worst < 1e-12 && hand_ok,
        format!(
            "max rel err {worst:.1e} over 1000 pairs; hand case rel {} rms {} log10 {} rmslog {}",
            hand.rel, hand.rms, hand.log10, hand.rmslog
        ),
    )
}

// 10. Format round-trips.
fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();

    let depth: Vec<f64> = (0..35)
        .map(|i| {
            if i % 6 == 0 {
                f64::NAN
            } else {
                rng.gen_range(0.5..80.0) as f32 as f64
            }
        })
        .collect();
    let dmap = DepthMap::from_values(7, 5, depth).unwrap();
    let bytes = encode_dmap(&dmap);
    match decode_dmap(&bytes) {
        Ok(back) if encode_dmap(&back) == bytes && back == dmap => {}
        _ => failures.push("DMAP"),
    }

    let dyadic = [
        [0.25, 0.25, 0.5, 0.0],
        [0.125, 0.375, 0.25, 0.25],
        [1.0, 0.0, 0.0, 0.0],
    ];
    let probs: Vec<f64> = (0..12).flat_map(|i| dyadic[i % 3]).collect();
    let svols = [
        ScoreVolume::new(
            4,
            3,
            4,
            ScoreKind::Logits,
            (0..48)
                .map(|_| rng.gen_range(-5.0..5.0f32) as f64)
                .collect(),
        )
        .unwrap(),
        ScoreVolume::new(4, 3, 4, ScoreKind::Probabilities, probs).unwrap(),
    ];
    for s in &svols {
        let bytes = encode_svol(s);
        match decode_svol(&bytes) {
            Ok(back) if encode_svol(&back) == bytes && back.data() == s.data() => {}
            _ => failures.push("SVOL"),
        }
    }

    let img = RgbImage::new(5, 3, (0..45).map(|_| rng.gen::<u8>()).collect()).unwrap();
    let bytes = encode_ppm(&img);
    match decode_ppm(&bytes) {
        Ok(back) if back == img && encode_ppm(&back) == bytes => {}
        _ => failures.push("PPM"),
    }

    for head in [
        Head::Classification(make_binning(7, 0.7, 10.0, BinSpace::Log).unwrap()),
        Head::Regression {
            d_min: 1.0,
            d_max: 80.0,
        },
    ] {
        let net = Network::new(NetworkSpec::default(), head, 3).unwrap();
        let bytes = encode_tnet(&net);
        match decode_tnet(&bytes) {
            Ok(back) if back == net && encode_tnet(&back) == bytes => {}
            _ => failures.push("TNET"),
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "DMAP (with NaN), SVOL, PPM, TNET bitwise lossless".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("discretization sweep", discretization_sweep),
        ("information-gain gradient", infogain_gradient),
        ("cross-entropy limit", cross_entropy_limit),
        ("crf energy oracle", crf_energy),
        ("crf inference oracle", crf_inference),
        ("crf refinement benefit", crf_refinement),
        ("network correctness", network_correctness),
        ("end-to-end toy pipeline", toy_pipeline),
        ("metrics oracle", metrics_oracle),
        ("format round-trips", format_round_trips),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
