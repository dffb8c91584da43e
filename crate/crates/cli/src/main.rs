use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use propsl::hdps::{write_selection_csv, HdpsSelection};
use propsl::metrics::write_reports_csv;
use propsl::pipeline::{
    benchmark, overfit_sweep, train_method, with_jobs, write_benchmark, write_sweep_csv, write_weights_csv, DataSource,
    Manifest, Method, RunConfig, SavedModel,
};
use propsl::synth::{generate, SynthConfig};
use propsl::{write_cohort, CohortDataset, HdpsConfig};

#[derive(Parser)]
#[command(
    name = "propsl",
    version,
    about = "hdPS and sample-split Super Learner propensity score models"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent fits
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Baseline CSV (overrides the config's data section)
    #[arg(long, requires = "claims")]
    baseline: Option<PathBuf>,
    /// Claims CSV
    #[arg(long, requires = "baseline")]
    claims: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RowsArg {
    Train,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort
    SynthGen {
        /// Write gzip-compressed files
        #[arg(long)]
        gzip: bool,
    },
    /// Run hdPS covariate selection and write the ranked covariates
    HdpsSelect {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        k: usize,
        /// Rows used for selection statistics
        #[arg(long, value_enum, default_value = "train")]
        rows: RowsArg,
    },
    /// Fit one method and save it
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// e.g. glm, gbm, hdps(k=500,n=200), hdps_lasso(k=100,n=200), SL1, dSL2
        #[arg(long)]
        method: String,
    },
    /// Evaluate a saved model on a cohort
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Score every patient instead of the model's train/test split
        #[arg(long)]
        all: bool,
    },
    /// Run every configured method and write the comparison tables
    Benchmark {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Print the nonzero weights of a saved Super Learner
    Weights {
        #[arg(long)]
        model: PathBuf,
    },
    /// hdPS train/test performance over a k schedule at fixed n/k
    OverfitSweep {
        #[command(flatten)]
        data: DataArgs,
    },
}

fn run_config(common: &Common, data: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_toml_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let (Some(b), Some(c)) = (&data.baseline, &data.claims) {
        cfg.data = Some(DataSource {
            baseline: b.clone(),
            claims: c.clone(),
        });
        cfg.synth = None;
    }
    if cfg.data.is_none() && cfg.synth.is_none() {
        bail!("no cohort given: pass --baseline/--claims or a config with [data] or [synth]");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("propsl-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load(cfg: &RunConfig) -> Result<CohortDataset> {
    cfg.load_data().context("loading cohort")
}

fn finish(
    dir: &Path,
    command: &str,
    seed: u64,
    common: &Common,
    config: &impl Serialize,
    outputs: Vec<PathBuf>,
) -> Result<()> {
    let mut m = Manifest::new(command, seed, common.jobs, config)?;
    m.outputs = outputs;
    m.write(dir)?;
    Ok(())
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let p = dir.join("config.toml");
    fs::write(&p, cfg.to_toml()?)?;
    Ok(p)
}

/// Returns whether every requested method succeeded.
fn run(command: Command, common: Common) -> Result<bool> {
    match command {
        Command::SynthGen { gzip } => {
            let mut cfg = match &common.config {
                Some(p) => SynthConfig::from_toml_file(p).with_context(|| format!("reading {}", p.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dir = out_dir(&common, None)?;
            let cohort = generate(&cfg)?;
            let ext = if gzip { "csv.gz" } else { "csv" };
            let baseline = dir.join(format!("baseline.{ext}"));
            let claims = dir.join(format!("claims.{ext}"));
            write_cohort(&cohort.data, &baseline, &claims)?;
            let signal = dir.join("signal_codes.csv");
            let mut text = String::from("dimension,code,coefficient\n");
            for (d, c, b) in &cohort.signal_codes {
                text.push_str(&format!("{d},{c},{b}\n"));
            }
            fs::write(&signal, text)?;
            let echo = dir.join("synth.toml");
            fs::write(&echo, cfg.to_toml()?)?;
            finish(
                &dir,
                "synth-gen",
                cfg.seed,
                &common,
                &cfg,
                vec![baseline, claims, signal, echo],
            )?;
            Ok(true)
        }
        Command::HdpsSelect { data, n, k, rows } => {
            let cfg = run_config(&common, &data)?;
            let cohort = load(&cfg)?;
            let dir = out_dir(&common, Some(&cfg))?;
            let rows = match rows {
                RowsArg::Train => cfg.split(&cohort)?.train_idx,
                RowsArg::All => (0..cohort.n_patients()).collect(),
            };
            let sel = HdpsSelection::fit(&cohort, &HdpsConfig::new(n, k), &rows)?;
            let path = dir.join("hdps_selection.csv");
            write_selection_csv(&sel, fs::File::create(&path)?)?;
            let echo = echo_config(&dir, &cfg)?;
            finish(&dir, "hdps-select", cfg.seed, &common, &cfg, vec![path, echo])?;
            Ok(true)
        }
        Command::Train { data, method } => {
            let cfg = run_config(&common, &data)?;
            let method: Method = method.parse()?;
            let cohort = load(&cfg)?;
            let dir = out_dir(&common, Some(&cfg))?;
            let split = cfg.split(&cohort)?;
            let saved = with_jobs(common.jobs, || train_method(method, &cfg, &cohort, &split))?;
            let report = saved.evaluate(&cohort)?;
            let model = dir.join("model.json");
            saved.save(&model)?;
            let rep = dir.join("report.csv");
            write_reports_csv(&[report], fs::File::create(&rep)?)?;
            let echo = echo_config(&dir, &cfg)?;
            finish(&dir, "train", cfg.seed, &common, &cfg, vec![model, rep, echo])?;
            Ok(true)
        }
        Command::Evaluate { data, model, all } => {
            let cfg = run_config(&common, &data)?;
            let saved = SavedModel::load(&model).with_context(|| format!("reading {}", model.display()))?;
            let cohort = load(&cfg)?;
            let dir = out_dir(&common, Some(&cfg))?;
            let path = if all {
                let (nll, auc) = saved.score_all(&cohort)?;
                let p = dir.join("scores.csv");
                fs::write(
                    &p,
                    format!(
                        "method,n,nll,auc\n{},{},{nll},{auc}\n",
                        csv_field(&saved.method),
                        cohort.n_patients()
                    ),
                )?;
                p
            } else {
                let p = dir.join("evaluation.csv");
                write_reports_csv(&[saved.evaluate(&cohort)?], fs::File::create(&p)?)?;
                p
            };
            finish(&dir, "evaluate", cfg.seed, &common, &cfg, vec![path])?;
            Ok(true)
        }
        Command::Benchmark { data } => {
            let cfg = run_config(&common, &data)?;
            let cohort = load(&cfg)?;
            let dir = out_dir(&common, Some(&cfg))?;
            let out = benchmark(&cfg, &cohort, common.jobs)?;
            let mut files = write_benchmark(&dir, &out)?;
            files.push(echo_config(&dir, &cfg)?);
            for f in &out.failures {
                eprintln!("method {} failed: {}", f.method, f.error);
            }
            finish(&dir, "benchmark", cfg.seed, &common, &cfg, files)?;
            Ok(out.failures.is_empty())
        }
        Command::Weights { model } => {
            let saved = SavedModel::load(&model).with_context(|| format!("reading {}", model.display()))?;
            let Some(sl) = saved.as_ensemble() else {
                bail!("{} holds a single model, not a Super Learner", model.display());
            };
            let mut buf = Vec::new();
            write_weights_csv(sl, &mut buf)?;
            print!("{}", String::from_utf8(buf.clone())?);
            let dir = out_dir(&common, None)?;
            let path = dir.join("weights.csv");
            fs::write(&path, buf)?;
            finish(&dir, "weights", saved.split.seed, &common, &model, vec![path])?;
            Ok(true)
        }
        Command::OverfitSweep { data } => {
            let cfg = run_config(&common, &data)?;
            let cohort = load(&cfg)?;
            let dir = out_dir(&common, Some(&cfg))?;
            let rows = overfit_sweep(&cfg, &cohort, common.jobs)?;
            let path = dir.join("overfit_sweep.csv");
            write_sweep_csv(&path, &rows)?;
            let echo = echo_config(&dir, &cfg)?;
            finish(&dir, "overfit-sweep", cfg.seed, &common, &cfg, vec![path, echo])?;
            Ok(true)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command, cli.common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
