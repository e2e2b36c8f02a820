use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use depthcls::commands::{self, DEFAULT_ANALYZE_BINS};
use depthcls::config::RunConfig;
use depthcls::depth::BinSpace;
use depthcls::format::{read_dmap, read_manifest};
use depthcls::{Error, Result};

#[derive(Parser)]
#[command(
    name = "depthcls",
    version,
    about = "Depth estimation as per-pixel classification over depth bins"
)]
struct Cli {
    /// Worker threads for parallel kernels; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory, same as `--set output=DIR`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("output={}", out.display()));
        }
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic training and held-out splits with manifests.
    GenData(ConfigArgs),

    /// Quantize ground-truth depths and report the discretization error.
    BinsAnalyze {
        /// DMAP files.
        #[arg(required_unless_present = "manifest")]
        depths: Vec<PathBuf>,
        /// Use every depth file listed in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated bin counts.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ANALYZE_BINS)]
        bins: Vec<usize>,
        /// Restrict to one space; both by default.
        #[arg(long)]
        space: Option<BinSpace>,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Train the configured head; writes model.tnet and train_log.csv.
    Train(ConfigArgs),

    /// Run a model on PPM images.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(required_unless_present = "manifest")]
        images: Vec<PathBuf>,
        /// Use every image listed in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Fail unless the model classifies into this many bins.
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },

    /// Refine a score volume with the fully connected CRF.
    Crf {
        #[arg(long)]
        svol: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Score predicted depth maps against ground truth.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        /// Depth range `lo,hi`; repeatable.
        #[arg(long = "range", value_parser = parse_range)]
        ranges: Vec<(f64, f64)>,
    },

    /// Train regression and classification heads and tabulate held-out scores.
    Compare(ConfigArgs),
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("'{s}' is not lo,hi"))?;
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{t}' is not a number"))
    };
    Ok((num(lo)?, num(hi)?))
}

fn manifest_paths(
    manifest: &Option<PathBuf>,
    mut given: Vec<PathBuf>,
    depth: bool,
) -> Result<Vec<PathBuf>> {
    if let Some(m) = manifest {
        given.extend(
            read_manifest(m)?
                .into_iter()
                .map(|e| if depth { e.depth } else { e.rgb }),
        );
    }
    Ok(given)
}

fn write_table(dir: &std::path::Path, name: &str, csv: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::GenData(args) => {
            let cfg = args.load()?;
            let out = commands::gen_data(&cfg)?;
            println!("{}", out.train_manifest.display());
            println!("{}", out.test_manifest.display());
        }
        Command::BinsAnalyze {
            depths,
            manifest,
            bins,
            space,
            config,
        } => {
            let cfg = config.load()?;
            let paths = manifest_paths(&manifest, depths, true)?;
            let maps = paths.iter().map(read_dmap).collect::<Result<Vec<_>>>()?;
            let spaces = space.map_or_else(|| vec![BinSpace::Log, BinSpace::Linear], |s| vec![s]);
            let rows = commands::bins_analyze(&maps, &bins, &spaces, cfg.d_min, cfg.d_max)?;
            write_table(&cfg.output, "bins_analyze.csv", &commands::bins_csv(&rows))?;
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let every = (cfg.train.iterations / 20).max(1);
            let out = commands::train(&cfg, |it, loss| {
                if it % every == 0 {
                    eprintln!("iteration {it} loss {loss:.6}");
                }
            })?;
            let (first, last) = (out.log.losses.first(), out.log.losses.last());
            if let (Some(first), Some(last)) = (first, last) {
                eprintln!("loss {first:.6} -> {last:.6}");
            }
            println!("{}", out.model.display());
            println!("{}", out.log_path.display());
        }
        Command::Predict {
            model,
            images,
            manifest,
            bins,
            out,
        } => {
            let images = manifest_paths(&manifest, images, false)?;
            for o in commands::predict(&model, &images, &out, bins)? {
                for p in [o.svol.as_ref(), Some(&o.depth), o.confidence.as_ref()]
                    .into_iter()
                    .flatten()
                {
                    println!("{}", p.display());
                }
            }
        }
        Command::Crf { svol, rgb, config } => {
            let cfg = config.load()?;
            let out = commands::crf(&svol, &rgb, &cfg, &cfg.output)?;
            eprint!("{}", commands::crf_report(&out.result));
            println!("{}", out.depth.display());
            println!("{}", out.svol.display());
            println!("{}", out.report.display());
        }
        Command::Eval { gt, pred, ranges } => {
            print!(
                "{}",
                commands::eval_csv(&commands::eval(&gt, &pred, &ranges)?)
            );
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let every = (cfg.train.iterations / 10).max(1);
            let rows = commands::compare(&cfg, |model, bins, it, loss| {
                if it % every == 0 {
                    let bins = bins.map(|b| format!(" B={b}")).unwrap_or_default();
                    eprintln!("{model}{bins} iteration {it} loss {loss:.6}");
                }
            })?;
            write_table(&cfg.output, "compare.csv", &commands::compare_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
