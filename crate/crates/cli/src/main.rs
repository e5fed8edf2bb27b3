use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use remd_cli::commands::{self, MODEL_FILE};
use remd_cli::RunConfig;

#[derive(Parser)]
#[command(name = "remd", version, about = "Few-step residual-diffusion super-resolution for 2D fields")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sampler.nfe=2`. Repeatable; last wins.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded random training and test fields under the run directory.
    Gen,
    /// Block-average a field file or a directory of them.
    Degrade {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the model; writes model.rmdp and loss.csv into the run directory.
    Train {
        /// Directory of HR fields (default: the run's generated training set).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Super-resolve one LR field.
    Sample {
        /// Model checkpoint; omit to use the untrained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        lr: PathBuf,
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        init_noise: Option<f64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare a prediction with ground truth; writes <out>.csv and <out>.spectrum.csv.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Radial power spectrum of a field as CSV.
    Spectrum {
        field: PathBuf,
        /// Number of bins; 0 covers every shell.
        #[arg(long, default_value_t = 0)]
        nbins: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// RMSE and wall time against step count.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        steps: Vec<usize>,
        /// Output CSV (default: <run_dir>/sweep.csv).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.common.overrides;
    if let Command::Sample { nfe, seed, init_noise, .. } = &cli.command {
        overrides.extend(nfe.map(|v| format!("sampler.nfe={v}")));
        overrides.extend(seed.map(|v| format!("sampler.seed={v}")));
        overrides.extend(init_noise.map(|v| format!("sampler.init_noise={v:?}")));
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Gen => {
            let (train, test) = commands::cmd_gen(&cfg)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Degrade { input, scale, out } => {
            let written = commands::cmd_degrade(&cfg, &input, scale, &out)?;
            println!("{} file(s) -> {}", written.len(), out.display());
        }
        Command::Train { data } => {
            let model = commands::cmd_train(&cfg, data.as_deref())?;
            println!("{}", model.display());
        }
        Command::Sample { checkpoint, lr, out, .. } => {
            commands::cmd_sample(&cfg, checkpoint.as_deref(), &lr, &out)?;
            println!("{}", out.display());
        }
        Command::Eval { pred, gt, out } => {
            let report = commands::cmd_eval(&cfg, &pred, &gt, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Spectrum { field, nbins, out } => {
            commands::cmd_spectrum(&cfg, &field, nbins, &out)?;
            println!("{}", out.display());
        }
        Command::Sweep { checkpoint, lr_dir, gt_dir, steps, out } => {
            let out = out.unwrap_or_else(|| cfg.run_dir.join("sweep.csv"));
            let checkpoint = checkpoint.or_else(|| {
                let p = cfg.run_dir.join(MODEL_FILE);
                p.is_file().then_some(p)
            });
            let rows = commands::cmd_sweep(&cfg, checkpoint.as_deref(), &lr_dir, &gt_dir, &steps, &out)?;
            print!("{}", commands::sweep_csv(&rows));
        }
    }
    Ok(())
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
