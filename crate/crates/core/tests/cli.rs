use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthcls::depth::{argmax_decode, make_binning, BinSpace, DepthMap, ScoreKind};
use depthcls::format::{read_dmap, read_svol, write_dmap, write_ppm, write_svol};
use depthcls::metrics::evaluate;
use depthcls::synth::{generate, label_scores, Layout, SceneSpec};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthcls"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset written through `gen-data`.
fn small_data(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("data");
    ok(&[
        "gen-data",
        "--out",
        s(&out),
        "--set",
        "data.count=8",
        "--set",
        "data.test_count=2",
        "--set",
        "data.width=24",
        "--set",
        "data.height=24",
    ]);
    (out.join("train.txt"), out.join("test.txt"))
}

fn lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

#[test]
fn train_predict_crf_eval_compose() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let manifest = format!("data.manifest={}", s(&train));
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    for out in [&run_a, &run_b] {
        ok(&[
            "train",
            "--out",
            s(out),
            "--set",
            &manifest,
            "--set",
            "train.iterations=300",
        ]);
    }

    let log = std::fs::read_to_string(run_a.join("train_log.csv")).unwrap();
    let losses: Vec<f64> = lines(&log)[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lines(&log)[0], "iteration,loss");
    assert_eq!(losses.len(), 300);
    let tail = losses[280..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.5 * losses[0], "initial {} final {tail}", losses[0]);
    assert_eq!(
        std::fs::read(run_a.join("model.tnet")).unwrap(),
        std::fs::read(run_b.join("model.tnet")).unwrap()
    );
    assert_eq!(
        log,
        std::fs::read_to_string(run_b.join("train_log.csv")).unwrap()
    );

    let test_dir = test.parent().unwrap();
    let rgb = test_dir.join("test/00000.ppm");
    let gt = test_dir.join("test/00000.dmap");
    let pred_dir = dir.path().join("pred");
    ok(&[
        "predict",
        "--model",
        s(&run_a.join("model.tnet")),
        "--out",
        s(&pred_dir),
        "--bins",
        "100",
        s(&rgb),
    ]);
    let svol = read_svol(pred_dir.join("00000.svol")).unwrap();
    assert_eq!(svol.kind(), ScoreKind::Probabilities);
    for row in svol.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
    let conf = read_dmap(pred_dir.join("00000.conf.dmap")).unwrap();
    assert!(conf
        .values()
        .iter()
        .all(|&c| (0.01 - 1e-7..=1.0 + 1e-7).contains(&c)));

    let crf_dir = dir.path().join("crf");
    ok(&[
        "crf",
        "--svol",
        s(&pred_dir.join("00000.svol")),
        "--rgb",
        s(&rgb),
        "--out",
        s(&crf_dir),
    ]);
    let refined = crf_dir.join("00000.crf.dmap");
    assert!(read_dmap(&refined).is_ok());

    let table = ok(&[
        "eval",
        "--gt",
        s(&gt),
        s(&gt),
        "--pred",
        s(&pred_dir.join("00000.dmap")),
        s(&refined),
    ]);
    assert_eq!(
        lines(&table)[0],
        "range,pixels,delta1,delta2,delta3,rel,log10,rms"
    );
    assert!(lines(&table)[1].starts_with("all,"));

    assert_eq!(
        run(&[
            "predict",
            "--model",
            s(&run_a.join("model.tnet")),
            "--out",
            s(&pred_dir),
            "--bins",
            "50",
            s(&rgb)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn regression_head_trains_and_predicts_depth_only() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let out = dir.path().join("reg");
    ok(&[
        "train",
        "--out",
        s(&out),
        "--set",
        &format!("data.manifest={}", s(&train)),
        "--set",
        "head=regression",
        "--set",
        "train.iterations=20",
    ]);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(lines(&log).len(), 21);

    let pred = dir.path().join("pred");
    let rgb = test.parent().unwrap().join("test/00001.ppm");
    let printed = ok(&[
        "predict",
        "--model",
        s(&out.join("model.tnet")),
        "--out",
        s(&pred),
        s(&rgb),
    ]);
    assert_eq!(lines(&printed).len(), 1);
    assert!(pred.join("00001.dmap").exists());
    assert!(!pred.join("00001.svol").exists());
    assert!(!pred.join("00001.conf.dmap").exists());
}

#[test]
fn crf_command_contract() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::new(21, 32, 32, Layout::TwoRegions);
    let sample = generate(&spec).unwrap();
    let binning = make_binning(50, spec.d_min, spec.d_max, BinSpace::Log).unwrap();
    let (probs, _) = label_scores(&sample.depth, &binning, 1.0, 0.05, 3).unwrap();
    let (svol, rgb, gt) = (
        dir.path().join("in.svol"),
        dir.path().join("in.ppm"),
        dir.path().join("gt.dmap"),
    );
    write_svol(&svol, &probs).unwrap();
    write_ppm(&rgb, &sample.rgb).unwrap();
    write_dmap(&gt, &sample.depth).unwrap();
    let stored = read_svol(&svol).unwrap();
    let (_, before) = argmax_decode(&stored, &binning).unwrap();

    let off = dir.path().join("off");
    ok(&[
        "crf",
        "--svol",
        s(&svol),
        "--rgb",
        s(&rgb),
        "--out",
        s(&off),
        "--set",
        "bins=50",
        "--set",
        "crf.w1=0",
        "--set",
        "crf.w2=0",
    ]);
    let expected = dir.path().join("before.dmap");
    write_dmap(&expected, &before).unwrap();
    assert_eq!(
        read_dmap(off.join("in.crf.dmap")).unwrap(),
        read_dmap(&expected).unwrap()
    );

    let on = dir.path().join("on");
    ok(&[
        "crf",
        "--svol",
        s(&svol),
        "--rgb",
        s(&rgb),
        "--out",
        s(&on),
        "--set",
        "bins=50",
    ]);
    let after = read_dmap(on.join("in.crf.dmap")).unwrap();
    let pre = evaluate(&sample.depth, &before).unwrap().delta1;
    let post = evaluate(&sample.depth, &after).unwrap().delta1;
    assert!(post > pre, "{pre} -> {post}");

    let report = std::fs::read_to_string(on.join("in.crf.csv")).unwrap();
    let changes: Vec<f64> = lines(&report)[1..]
        .iter()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(
        changes.len() <= 10 && *changes.last().unwrap() < 1e-3,
        "{report}"
    );
    assert!(report.contains("# converged=true"));

    let code = run(&["crf", "--svol", s(&svol), "--rgb", s(&rgb), "--out", s(&on)])
        .status
        .code();
    assert_eq!(code, Some(3), "100 configured bins against a 50-bin volume");
}

#[test]
fn eval_command_contract() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.dmap");
    let pred = dir.path().join("pred.dmap");
    write_dmap(&gt, &DepthMap::from_values(2, 1, vec![2.0, 4.0]).unwrap()).unwrap();
    write_dmap(&pred, &DepthMap::from_values(2, 1, vec![1.0, 8.0]).unwrap()).unwrap();

    let same = ok(&["eval", "--gt", s(&gt), "--pred", s(&gt)]);
    assert_eq!(lines(&same)[1], "all,2,100,100,100,0,0,0");

    let hand = ok(&["eval", "--gt", s(&gt), "--pred", s(&pred)]);
    let cells: Vec<&str> = lines(&hand)[1].split(',').collect();
    assert_eq!(cells[2], "0");
    assert_eq!(cells[5], "0.75");
    assert!((cells[6].parse::<f64>().unwrap() - 2f64.log10()).abs() < 1e-15);
    assert!((cells[7].parse::<f64>().unwrap() - 8.5f64.sqrt()).abs() < 1e-15);

    let sample = generate(&SceneSpec::new(4, 20, 20, Layout::Blocks)).unwrap();
    let big = dir.path().join("big.dmap");
    write_dmap(&big, &sample.depth).unwrap();
    let table = ok(&[
        "eval",
        "--gt",
        s(&big),
        "--pred",
        s(&big),
        "--range",
        "0,3",
        "--range",
        "3,7",
        "--range",
        "7,10",
    ]);
    let rows = lines(&table);
    assert_eq!(rows.len(), 5);
    let pixels: Vec<usize> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(pixels[0], pixels[1..].iter().sum::<usize>());

    assert_eq!(
        run(&["eval", "--gt", s(&gt), s(&gt), "--pred", s(&pred)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bins_analyze_table() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..2000)
        .map(|i| 0.7 * (10.0f64 / 0.7).powf(i as f64 / 1999.0))
        .collect();
    let depth = dir.path().join("sweep.dmap");
    write_dmap(&depth, &DepthMap::from_values(40, 50, values).unwrap()).unwrap();
    let out = ok(&["bins-analyze", "--out", s(dir.path()), s(&depth)]);
    let rows = lines(&out);
    assert_eq!(rows[0], "space,bins,delta1,delta2,delta3,rel,log10,rms");
    assert_eq!(rows.len(), 11);
    for r in &rows[1..6] {
        let c: Vec<&str> = r.split(',').collect();
        let b: f64 = c[1].parse().unwrap();
        assert_eq!((c[0], c[2]), ("log", "100"));
        assert!(c[6].parse::<f64>().unwrap() <= (10.0f64 / 0.7).log10() / (2.0 * b));
    }
    let linear10: Vec<&str> = rows[6].split(',').collect();
    assert_eq!(linear10[..2], ["linear", "10"]);
    assert!(linear10[2].parse::<f64>().unwrap() < 100.0);
    assert!(dir.path().join("bins_analyze.csv").exists());
}

#[test]
fn compare_emits_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "compare",
        "--out",
        s(dir.path()),
        "--set",
        "compare.bins=10,20",
        "--set",
        "train.iterations=5",
        "--set",
        "data.count=4",
        "--set",
        "data.test_count=2",
        "--set",
        "data.width=16",
        "--set",
        "data.height=16",
    ]);
    let rows = lines(&out);
    assert_eq!(rows[0], "model,bins,delta1,delta2,delta3,rel,log10,rms");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("regression,,"));
    assert!(rows[2].starts_with("classification,10,") && rows[3].starts_with("classification,20,"));
    assert!(rows.iter().all(|r| r.split(',').count() == 8));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(
        run(&["train", "--out", s(&out), "--set", "bins=zero"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["train", "--out", s(&out), "--set", "no.such.key=1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["train", "--out", s(&out)]).status.code(),
        Some(2),
        "missing manifest key"
    );
    let missing = dir.path().join("missing.dmap");
    assert_eq!(
        run(&["bins-analyze", "--out", s(&out), s(&missing)])
            .status
            .code(),
        Some(3)
    );

    let (train, _) = small_data(dir.path());
    let diverge = run(&[
        "train",
        "--out",
        s(&out),
        "--set",
        &format!("data.manifest={}", s(&train)),
        "--set",
        "head=regression",
        "--set",
        "train.regression_lr=10",
        "--set",
        "train.iterations=50",
    ]);
    assert_eq!(
        diverge.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&diverge.stderr)
    );
}
