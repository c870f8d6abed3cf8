use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use resdyn::bench::{self, ExperimentConfig, Preset, ScenarioFilter};
use resdyn::sim::TrajectoryKind;

#[derive(Parser, Debug)]
#[command(name = "resdyn", version, about = "Residual-dynamics experiments: data, training, evaluation, ablations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file overriding preset values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk", value_parser = ["desk", "paper"])]
    preset: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate PID-tracked excitation runs, one per payload condition.
    GenerateData,
    /// Train the forecaster on the generated data.
    Train,
    /// Open-loop prediction on the held-out payload, frozen and adapted.
    EvalPrediction {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Closed-loop tracking grid.
    RunScenario {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// a (pick-and-place S-shape), b (figure-8), or all.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Restrict to one payload of the grid, kg.
        #[arg(long)]
        payload: Option<f64>,
        /// Restrict to one speed of the grid, m/s.
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Retrain architecture variants and compare against the full model.
    Ablate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge metrics from run directories and export figure data and plots.
    Report {
        /// Run directories; defaults to --out.
        runs: Vec<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let preset: Preset = c.preset.parse()?;
    let mut cfg = ExperimentConfig::load(preset, c.config.as_deref())
        .with_context(|| format!("loading config (preset {})", c.preset))?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn checkpoint(cfg: &ExperimentConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| bench::checkpoint_path(&cfg.out_dir))
}

fn print_summary(report: &bench::MetricsReport) {
    println!("{:<28} {:<18} {:>4} {:>12} {:>12} {:>9} {:>9}", "group", "method", "n", "median_rmse", "iqr", "r2", "delta%");
    for s in report.summary() {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<28} {:<18} {:>4} {:>12.6} {:>12.6} {:>9} {:>9}",
            s.group,
            s.method,
            s.n,
            s.median_rmse,
            s.iqr_rmse,
            opt(s.median_r2, 4),
            opt(s.median_delta_pct, 1)
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::GenerateData => {
            for p in bench::generate_data(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train => {
            let s = bench::train_command(&cfg)?;
            println!(
                "trained {} parameters: best epoch {} of {}, val loss {:.5}, test loss {:.5}",
                s.parameters, s.best_epoch, s.epochs_run, s.best_val_loss, s.test_loss
            );
            println!("checkpoint {}", bench::checkpoint_path(&cfg.out_dir).display());
        }
        Command::EvalPrediction { checkpoint: ck } => {
            print_summary(&bench::eval_prediction(&cfg, &checkpoint(&cfg, ck))?);
        }
        Command::RunScenario { checkpoint: ck, scenario, payload, speed } => {
            let scenario = match scenario.as_str() {
                "a" | "A" => Some(TrajectoryKind::SShape),
                "b" | "B" => Some(TrajectoryKind::Figure8),
                "all" => None,
                other => bail!("unknown scenario {other:?}; expected a, b or all"),
            };
            let filter = ScenarioFilter { scenario, payload: *payload, speed: *speed };
            print_summary(&bench::run_scenario(&cfg, &checkpoint(&cfg, ck), &filter)?);
        }
        Command::Ablate { checkpoint: ck } => {
            print_summary(&bench::ablate(&cfg, &checkpoint(&cfg, ck))?);
        }
        Command::Report { runs } => {
            let runs = if runs.is_empty() { vec![cfg.out_dir.clone()] } else { runs.clone() };
            let out = bench::report(&runs, &cfg.out_dir)?;
            println!("{} metric rows, {} plots under {}", out.rows.len(), out.plots.len(), cfg.out_dir.join("report").display());
        }
    }
    Ok(())
}
