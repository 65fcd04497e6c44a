use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jointrecon_cli::config::{Mode, RunConfig};
use jointrecon_cli::{commands, CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "jointrecon",
    version,
    about = "Joint reconstruction and registration with directional total variation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write the image after every scale-space stage.
    #[arg(long, global = true)]
    save_stages: bool,
    /// Worker threads for sweeps; 0 runs cells sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a phantom dataset.
    Simulate,
    /// Reconstruct from a dataset directory.
    Reconstruct {
        /// Dataset directory (overrides `dataset` in the config).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the three-step comparison method.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score run directories against a dataset's ground truth.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Image to compare against instead of the ground truth.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Run directories containing `u.grd` and `phi.json`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Grid of joint runs over rotation angles and scale-space depths.
    Sweep,
}

fn load_config(cli: &Cli, dataset: Option<&PathBuf>) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = dataset {
        cfg.dataset = Some(d.clone());
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.save_stages |= cli.save_stages;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> CliResult<PathBuf> {
    cli.out.clone().or_else(|| cfg.output.clone()).ok_or_else(|| CliError::config("output", "pass --out or set output"))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(cli, None)?;
            cfg.validate(Mode::Simulate)?;
            commands::simulate(&cfg, &out_dir(cli, &cfg)?)?;
        }
        Command::Reconstruct { dataset } => {
            let cfg = load_config(cli, dataset.as_ref())?;
            cfg.validate(Mode::Reconstruct)?;
            let out = commands::reconstruct(&cfg, &out_dir(cli, &cfg)?)?;
            println!("phi {:?}", out.phi.params);
        }
        Command::Baseline { dataset } => {
            let cfg = load_config(cli, dataset.as_ref())?;
            let out = commands::baseline(&cfg, &out_dir(cli, &cfg)?)?;
            println!("phi {:?}", out.phi.params);
        }
        Command::Evaluate { dataset, reference, runs } => {
            let rows = commands::evaluate(dataset, runs, reference.as_deref())?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let path = out.join("metrics.csv");
            commands::write_metrics(&path, &rows)?;
            print!("{}", std::fs::read_to_string(&path).map_err(CliError::io(path.as_path()))?);
        }
        Command::Sweep => {
            let cfg = load_config(cli, None)?;
            cfg.validate(Mode::Sweep)?;
            let out = out_dir(cli, &cfg)?;
            let cells = commands::sweep(&cfg, &out, cli.threads)?;
            let ok = cells.iter().filter(|c| c.success).count();
            println!("{ok}/{} cells succeeded; report in {}", cells.len(), Path::new(&out).join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RECON_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, CliError::Config { .. }) { 2 } else { 1 })
        }
    }
}
