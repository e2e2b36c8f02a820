//! The command-line operations as library calls.
//!
//! Each command reads its inputs, writes its outputs under the given
//! directory and returns what it computed, so the binary only parses
//! arguments and prints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::densecrf::{infer, CrfModel, InferenceResult};
use crate::depth::{
    argmax_decode, confidence_map, quantize_depthmap, BinSpace, DepthMap, ScoreKind,
};
use crate::error::{Error, Result};
use crate::format::{
    read_dmap, read_manifest, read_ppm, read_svol, write_dmap, write_manifest, write_svol,
    ManifestEntry,
};
use crate::infogain::softmax_pixelwise;
use crate::metrics::{range_filter, validate_ranges, MetricsAccumulator, MetricsReport};
use crate::synth::{generate_set, read_sample, sample_paths, write_sample, Sample};
use crate::tinynet::{read_tnet, train_with, write_tnet, Head, Network, Prediction, TrainLog};

/// Bin counts swept by `bins-analyze` when none are given.
pub const DEFAULT_ANALYZE_BINS: [usize; 5] = [10, 30, 50, 80, 100];

/// Header of every metrics table.
pub const METRIC_COLUMNS: &str = "delta1,delta2,delta3,rel,log10,rms";

fn metric_cells(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.delta1, r.delta2, r.delta3, r.rel, r.log10, r.rms
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        ))
    })
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("cannot derive a file name from {}", path.display()))
        })
}

fn load_samples(manifest: &Path) -> Result<Vec<Sample>> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Empty(format!(
            "manifest {} lists no samples",
            manifest.display()
        )));
    }
    entries.iter().map(read_sample).collect()
}

/// Training and held-out samples: from the manifests when configured,
/// otherwise generated from the `data.*` settings.
pub fn datasets(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let d = &cfg.data;
    let train = match &d.manifest {
        Some(m) => load_samples(m)?,
        None => generate_set(&d.scene(false, cfg.d_min, cfg.d_max), d.count, &d.layouts)?,
    };
    let test = match &d.test_manifest {
        Some(m) => load_samples(m)?,
        None => generate_set(
            &d.scene(true, cfg.d_min, cfg.d_max),
            d.test_count,
            &d.layouts,
        )?,
    };
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Writes the synthetic training and held-out splits under `cfg.output`.
pub fn gen_data(cfg: &RunConfig) -> Result<GeneratedData> {
    let d = &cfg.data;
    let mut manifests = Vec::new();
    for (split, test, count) in [("train", false, d.count), ("test", true, d.test_count)] {
        let dir = cfg.output.join(split);
        create_dir(&dir)?;
        let samples = generate_set(&d.scene(test, cfg.d_min, cfg.d_max), count, &d.layouts)?;
        let mut entries = Vec::with_capacity(count);
        for (k, s) in samples.iter().enumerate() {
            let abs = sample_paths(&dir, &format!("{k:05}"));
            write_sample(&abs, s)?;
            entries.push(ManifestEntry {
                rgb: Path::new(split).join(abs.rgb.file_name().expect("file name")),
                depth: Path::new(split).join(abs.depth.file_name().expect("file name")),
            });
        }
        let manifest = cfg.output.join(format!("{split}.txt"));
        write_manifest(&manifest, &entries)?;
        manifests.push(manifest);
    }
    let test_manifest = manifests.pop().expect("two splits");
    let train_manifest = manifests.pop().expect("two splits");
    Ok(GeneratedData {
        train_manifest,
        test_manifest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinsRow {
    pub space: BinSpace,
    pub bins: usize,
    pub report: MetricsReport,
}

/// Quantizes every ground-truth map for each `(space, B)` and scores the
/// result against the original, pooled over all maps.
pub fn bins_analyze(
    depths: &[DepthMap],
    bins: &[usize],
    spaces: &[BinSpace],
    d_min: f64,
    d_max: f64,
) -> Result<Vec<BinsRow>> {
    if depths.is_empty() {
        return Err(Error::Empty(
            "bins-analyze needs at least one depth map".into(),
        ));
    }
    let mut rows = Vec::new();
    for &space in spaces {
        for &b in bins {
            let binning = crate::depth::DepthBinning::new(b, d_min, d_max, space)?;
            let mut acc = MetricsAccumulator::new();
            for gt in depths {
                acc.push_maps(gt, &quantize_depthmap(gt, &binning)?, None)?;
            }
            let report = acc
                .report()
                .ok_or_else(|| Error::Empty("no valid ground-truth pixel".into()))?;
            rows.push(BinsRow {
                space,
                bins: b,
                report,
            });
        }
    }
    Ok(rows)
}

pub fn bins_csv(rows: &[BinsRow]) -> String {
    let mut out = format!("space,bins,{METRIC_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.space, r.bins, metric_cells(&r.report));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
}

/// Trains the configured head on `data.manifest` and writes `model.tnet`,
/// `train_log.csv` and the effective `run.cfg` under `cfg.output`.
pub fn train(cfg: &RunConfig, progress: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("train needs data.manifest".into()))?;
    let data = load_samples(manifest)?;
    let mut net = Network::new(cfg.net.clone(), cfg.head()?, cfg.train.seed)?;
    let log = train_with(&mut net, &data, &cfg.train_config(cfg.head), progress)?;
    create_dir(&cfg.output)?;
    let model = cfg.output.join("model.tnet");
    let log_path = cfg.output.join("train_log.csv");
    write_tnet(&model, &net)?;
    fs::write(&log_path, log.to_csv())?;
    fs::write(cfg.output.join("run.cfg"), cfg.to_text())?;
    Ok(TrainOutcome {
        model,
        log_path,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutputs {
    /// Probability volume, classification only.
    pub svol: Option<PathBuf>,
    pub depth: PathBuf,
    /// Per-pixel maximum probability, classification only.
    pub confidence: Option<PathBuf>,
}

/// Runs the model on each PPM image. Writes `<stem>.dmap` and, for a
/// classification model, `<stem>.svol` and `<stem>.conf.dmap`.
/// `expect_bins` rejects a model whose head does not have that many bins.
pub fn predict(
    model: &Path,
    images: &[PathBuf],
    out_dir: &Path,
    expect_bins: Option<usize>,
) -> Result<Vec<PredictOutputs>> {
    let net = read_tnet(model)?;
    if let Some(b) = expect_bins {
        match net.head() {
            Head::Classification(binning) if binning.bins() == b => {}
            Head::Classification(binning) => {
                return Err(Error::Config(format!(
                    "model has {} bins, expected {b}",
                    binning.bins()
                )))
            }
            Head::Regression { .. } => {
                return Err(Error::Config(format!(
                    "model has a regression head, expected {b} bins"
                )))
            }
        }
    }
    create_dir(out_dir)?;
    images
        .iter()
        .map(|path| {
            let name = stem(path)?;
            let img = read_ppm(path)?;
            let depth = out_dir.join(format!("{name}.dmap"));
            match (net.predict(&img)?, net.head()) {
                (Prediction::Scores(logits), Head::Classification(binning)) => {
                    let probs = softmax_pixelwise(&logits)?;
                    let (_, d) = argmax_decode(&probs, binning)?;
                    let conf =
                        DepthMap::from_values(img.width(), img.height(), confidence_map(&probs)?)?;
                    let svol = out_dir.join(format!("{name}.svol"));
                    let confidence = out_dir.join(format!("{name}.conf.dmap"));
                    write_svol(&svol, &probs)?;
                    write_dmap(&depth, &d)?;
                    write_dmap(&confidence, &conf)?;
                    Ok(PredictOutputs {
                        svol: Some(svol),
                        depth,
                        confidence: Some(confidence),
                    })
                }
                (Prediction::Depth(d), _) => {
                    write_dmap(&depth, &d)?;
                    Ok(PredictOutputs {
                        svol: None,
                        depth,
                        confidence: None,
                    })
                }
                (Prediction::Scores(_), Head::Regression { .. }) => {
                    unreachable!("regression heads predict depth")
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CrfOutcome {
    pub depth: PathBuf,
    pub svol: PathBuf,
    pub report: PathBuf,
    pub result: InferenceResult,
}

/// Refines a score volume with the CRF. Writes `<stem>.crf.dmap`,
/// `<stem>.crf.svol` and the per-iteration change log `<stem>.crf.csv`.
pub fn crf(svol: &Path, rgb: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<CrfOutcome> {
    let scores = read_svol(svol)?;
    let img = read_ppm(rgb)?;
    let binning = cfg.binning()?;
    if scores.bins() != binning.bins() {
        return Err(Error::shape(format!(
            "{} has {} bins, the configured binning has {}",
            svol.display(),
            scores.bins(),
            binning.bins()
        )));
    }
    let probs = match scores.kind() {
        ScoreKind::Logits => softmax_pixelwise(&scores)?,
        ScoreKind::Probabilities => scores,
    };
    let model = CrfModel::from_probabilities(&probs, &img, cfg.crf.params)?;
    let result = infer(&model, cfg.crf.iterations, cfg.crf.tol, cfg.crf.mode)?;

    create_dir(out_dir)?;
    let name = stem(svol)?;
    let depth = out_dir.join(format!("{name}.crf.dmap"));
    let out_svol = out_dir.join(format!("{name}.crf.svol"));
    let report = out_dir.join(format!("{name}.crf.csv"));
    write_dmap(&depth, &result.labels.to_depth(&binning)?)?;
    write_svol(
        &out_svol,
        &result.state.to_volume(model.width(), model.height())?,
    )?;
    fs::write(&report, crf_report(&result))?;
    Ok(CrfOutcome {
        depth,
        svol: out_svol,
        report,
        result,
    })
}

/// `iteration,linf_change` rows followed by a `converged` line.
pub fn crf_report(result: &InferenceResult) -> String {
    let mut out = String::from("iteration,linf_change\n");
    for (k, c) in result.changes.iter().enumerate() {
        let _ = writeln!(out, "{},{c}", k + 1);
    }
    let _ = writeln!(out, "# converged={}", result.converged);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// `all` or `lo-hi`.
    pub range: String,
    pub pixels: usize,
    pub report: Option<MetricsReport>,
}

/// Pools every pixel of every pair into one report, plus one report per
/// range when `ranges` is nonempty.
pub fn eval(gt: &[PathBuf], pred: &[PathBuf], ranges: &[(f64, f64)]) -> Result<Vec<EvalRow>> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ground-truth files but {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Empty("no files to evaluate".into()));
    }
    validate_ranges(ranges)?;
    let pairs = gt
        .iter()
        .zip(pred)
        .map(|(g, p)| Ok((read_dmap(g)?, read_dmap(p)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut all = MetricsAccumulator::new();
    let mut per: Vec<MetricsAccumulator> = vec![MetricsAccumulator::new(); ranges.len()];
    for (g, p) in &pairs {
        all.push_maps(g, p, None)?;
        for (acc, &r) in per.iter_mut().zip(ranges) {
            acc.push_maps_where(g, p, range_filter(ranges, r))?;
        }
    }
    let row = |range: String, acc: &MetricsAccumulator| EvalRow {
        range,
        pixels: acc.count(),
        report: acc.report(),
    };
    let mut rows = vec![row("all".into(), &all)];
    rows.extend(
        ranges
            .iter()
            .zip(&per)
            .map(|(r, acc)| row(format!("{}-{}", r.0, r.1), acc)),
    );
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = format!("range,pixels,{METRIC_COLUMNS}\n");
    for r in rows {
        let cells = r
            .report
            .as_ref()
            .map(metric_cells)
            .unwrap_or_else(|| ",,,,,".into());
        let _ = writeln!(out, "{},{},{cells}", r.range, r.pixels);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    /// `regression` or `classification`.
    pub model: &'static str,
    pub bins: Option<usize>,
    pub report: MetricsReport,
    pub final_loss: f64,
}

/// Evaluates `net` over `samples`, pooled.
pub fn evaluate_network(net: &Network, samples: &[Sample]) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    for s in samples {
        let depth = match (net.predict(&s.rgb)?, net.head()) {
            (Prediction::Scores(logits), Head::Classification(b)) => argmax_decode(&logits, b)?.1,
            (Prediction::Depth(d), _) => d,
            (Prediction::Scores(_), Head::Regression { .. }) => {
                unreachable!("regression heads predict depth")
            }
        };
        acc.push_maps(&s.depth, &depth, None)?;
    }
    acc.report()
        .ok_or_else(|| Error::Empty("held-out set has no valid pixel".into()))
}

/// Trains a regression head and one classification head per entry of
/// `compare.bins` on the same data with the same seed, then scores each on
/// the held-out split. `progress` receives `(model, bins, iteration, loss)`.
pub fn compare(
    cfg: &RunConfig,
    mut progress: impl FnMut(&str, Option<usize>, usize, f64),
) -> Result<Vec<CompareRow>> {
    let (train, test) = datasets(cfg)?;
    let mut heads = vec![(
        "regression",
        None,
        Head::Regression {
            d_min: cfg.d_min,
            d_max: cfg.d_max,
        },
    )];
    for &b in &cfg.compare_bins {
        heads.push((
            "classification",
            Some(b),
            Head::Classification(cfg.binning_with(b)?),
        ));
    }
    heads
        .into_iter()
        .map(|(model, bins, head)| {
            let train_cfg = cfg.train_config(head.kind());
            let mut net = Network::new(cfg.net.clone(), head, cfg.train.seed)?;
            let log = train_with(&mut net, &train, &train_cfg, |it, loss| {
                progress(model, bins, it, loss)
            })?;
            Ok(CompareRow {
                model,
                bins,
                report: evaluate_network(&net, &test)?,
                final_loss: log.losses.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("model,bins,{METRIC_COLUMNS}\n");
    for r in rows {
        let bins = r.bins.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{bins},{}", r.model, metric_cells(&r.report));
    }
    out
}
