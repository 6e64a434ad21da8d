use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tsdetect::harness::{self, ExperimentConfig, ExperimentReport, Role, Stage};
use tsdetect::par::Exec;

#[derive(Parser)]
#[command(
    name = "tsdetect",
    version,
    about = "Synthetic time series detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); every field has a default.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Window lengths, e.g. `32,64`.
    #[arg(long, value_name = "CSV", value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    /// Run without the parallel pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest datasets and write windows, splits and normalization.
    MakeData(Common),
    /// Train every generator of the zoo.
    TrainGenerator(Common),
    /// Sample synthetic pools from every generator.
    Generate(Common),
    /// Fit the white-box detector and the classifiers on real and reference windows.
    TrainDetector(Common),
    /// Score every test window with every detector.
    Detect(Common),
    /// Compute metric rows and quality scores.
    Evaluate(Common),
    /// Write report files and print the metric table.
    Report(Common),
    /// Run the whole pipeline, or one stage of it.
    RunExperiment {
        #[command(flatten)]
        common: Common,
        /// Run only this stage, reading earlier artifacts from the output directory.
        #[arg(long, value_name = "STAGE")]
        only: Option<Stage>,
    },
    /// Print the resolved config as JSON.
    PrintConfig(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(lengths) = &common.lengths {
        if lengths.is_empty() {
            bail!("--lengths needs at least one value");
        }
        cfg.lengths = lengths.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exec(common: &Common) -> Exec {
    if common.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn print_table(report: &ExperimentReport) {
    println!(
        "{:<8} {:>4} {:<14} {:<10} {:<4} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "dataset", "L", "detector", "generator", "role", "F1", "Acc", "AP", "AUC", "TPR"
    );
    for r in &report.rows {
        let p = r.metrics.percent();
        println!(
            "{:<8} {:>4} {:<14} {:<10} {:<4} {:>6} {:>6} {:>6} {:>6} {:>6}",
            r.dataset, r.length, r.detector, r.generator, r.role, p[0], p[1], p[2], p[3], p[4]
        );
    }
    for a in &report.ood_averages {
        let p = a.metrics.percent();
        println!(
            "{:<8} {:>4} {:<14} {:<10} {:<4} {:>6} {:>6} {:>6} {:>6} {:>6}",
            a.dataset,
            a.length,
            a.detector,
            "avg",
            Role::Ood,
            p[0],
            p[1],
            p[2],
            p[3],
            p[4]
        );
    }
}

fn run_stage(common: &Common, only: Option<Stage>) -> Result<()> {
    let cfg = resolve(common)?;
    if let Some(report) = harness::run_experiment(&cfg, only, exec(common))? {
        print_table(&report);
    }
    eprintln!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData(c) => run_stage(&c, Some(Stage::MakeData)),
        Command::TrainGenerator(c) => run_stage(&c, Some(Stage::TrainGenerator)),
        Command::Generate(c) => run_stage(&c, Some(Stage::Generate)),
        Command::TrainDetector(c) => run_stage(&c, Some(Stage::TrainDetector)),
        Command::Detect(c) => run_stage(&c, Some(Stage::Detect)),
        Command::Evaluate(c) => run_stage(&c, Some(Stage::Evaluate)),
        Command::Report(c) => run_stage(&c, Some(Stage::Report)),
        Command::RunExperiment { common, only } => run_stage(&common, only),
        Command::PrintConfig(c) => {
            let cfg = resolve(&c)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
