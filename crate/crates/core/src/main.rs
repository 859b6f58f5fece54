use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsnloc::eval_cli::{
    emit_cdf, gradcheck_default_config, run_gradcheck, run_sweep, write_sweep_csv, ExperimentConfig, SweepParam,
    SweepSpec, GRADCHECK_TOLERANCE,
};
use wsnloc::model::{Model, ModelKind};
use wsnloc::numcore::Checkpoint;
use wsnloc::training::{build_dataset, evaluate, read_ndjson, train, write_history_csv, write_ndjson, TrainConfig};

#[derive(Parser)]
#[command(name = "wsnloc", version, about = "RSSI sensor-network localization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate topologies and write an NDJSON dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        topologies: usize,
        #[arg(long)]
        draws: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and `<out>.history.csv`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cdf: Option<PathBuf>,
    },
    /// Sweep one simulation parameter over models and seeds.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelKind>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end finite-difference gradient check; fails above 1e-4.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> wsnloc::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn history_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn run(cli: Cli) -> wsnloc::Result<ExitCode> {
    match cli.command {
        Command::Gen { config, topologies, draws, seed, out } => {
            let cfg = load_config(&config)?;
            let data = build_dataset(&cfg.sim, topologies, draws, seed)?;
            let unreachable: usize = data.iter().filter(|s| s.noise_draw_id == 0).map(|s| s.unreachable.len()).sum();
            if unreachable > 0 {
                eprintln!("warning: {unreachable} nodes across all topologies have no route to the central unit");
            }
            write_ndjson(&out, &data)?;
            eprintln!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Train { dataset, model, config, seed, out } => {
            let cfg = load_config(&config)?;
            let tc = TrainConfig { model, seed, ..cfg.train };
            let data = read_ndjson(&dataset)?;
            let outcome = train(&data, &tc)?;
            outcome.checkpoint(&tc)?.save(&out)?;
            write_history_csv(history_path(&out), &outcome.history)?;
            for (p, score) in &outcome.cv_scores {
                eprintln!("cv lr={} dropout={}: mean val loss {score:.4} m^2", p.learning_rate, p.dropout);
            }
            if let Some(last) = outcome.history.last() {
                eprintln!("final mean train loss {:.4} m^2", last.mean_train_loss);
            }
        }
        Command::Eval { ckpt, dataset, out, cdf } => {
            let model = Model::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
            let data = read_ndjson(&dataset)?;
            let table = evaluate(&model, &data)?;
            table.write_csv(&out)?;
            if let Some(path) = cdf {
                emit_cdf(&table.node_errors)?.write_csv(path)?;
            }
            println!(
                "masked mse {:.4} +- {:.4} m^2, mean error {:.4} +- {:.4} m",
                table.mse_mean, table.mse_std, table.error_mean, table.error_std
            );
        }
        Command::Sweep { param, values, models, seeds, config, out } => {
            let spec = SweepSpec { param, values, models, seeds, base: load_config(&config)? };
            let result = run_sweep(&spec, |row| match &row.error {
                None => eprintln!(
                    "{} {}={} seed {}: mse {:.4} m^2, mean error {:.4} m",
                    row.model, param, row.value, row.seed, row.mse, row.mean_error
                ),
                Some(e) => eprintln!("{} {}={} seed {}: failed: {e}", row.model, param, row.value, row.seed),
            })?;
            write_sweep_csv(&out, &result)?;
        }
        Command::Gradcheck { config } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => gradcheck_default_config(),
            };
            let mut worst = 0.0f64;
            for report in run_gradcheck(&cfg, cfg.train.seed)? {
                println!("{}: max relative error {:.3e}", report.model, report.max_relative_error);
                worst = worst.max(report.max_relative_error);
            }
            if worst >= GRADCHECK_TOLERANCE {
                eprintln!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
