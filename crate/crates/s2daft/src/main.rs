use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use s2daft::commands;
use s2daft::config::ExperimentConfig;
use s2daft::container::load_cube;
use s2daft::Result;
use s2daft_core::data::SynthConfig;
use s2daft_core::metrics::EvalReport;

#[derive(Parser)]
#[command(name = "s2daft", version, about = "Self-supervised cross-domain hyperspectral classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Ablations {
    /// Replace cross-attention with a pass-through.
    #[arg(long = "no_s2former")]
    no_s2former: bool,
    /// Drop the frequency-domain term (alpha = 0).
    #[arg(long = "no_fdc")]
    no_fdc: bool,
    /// Fine-tune without the teacher trajectory term (lambda = 0).
    #[arg(long = "no_daft")]
    no_daft: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target pair and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        shift: f64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 32)]
        bands: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
    },
    /// Pretrain the encoder on the source cube.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        ablations: Ablations,
    },
    /// Fine-tune students on the few-shot target split.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretraining checkpoint used as teacher.
        #[arg(long)]
        teacher: PathBuf,
        /// Comma-separated; defaults to the configured seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        ablations: Ablations,
    },
    /// Score a student checkpoint on every labeled pixel.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cube to evaluate instead of the configured target.
        #[arg(long, requires = "labels")]
        cube: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

fn load_config(path: &Path, ablations: Option<&Ablations>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(a) = ablations {
        cfg.ablation.no_s2former |= a.no_s2former;
        cfg.ablation.no_fdc |= a.no_fdc;
        cfg.ablation.no_daft |= a.no_daft;
    }
    Ok(cfg)
}

fn print_report(report: &EvalReport) {
    println!("runs\t{}", report.runs.len());
    for (name, s) in [("oa", report.oa), ("aa", report.aa), ("kappa", report.kappa)] {
        println!("{name}\t{:.4}\t{:.4}", s.mean, s.std);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, shift, classes, size, bands, noise } => {
            let cfg = SynthConfig {
                num_classes: classes,
                height: size,
                width: size,
                bands,
                domain_shift: shift,
                noise_std: noise,
                seed,
                ..SynthConfig::default()
            };
            let files = commands::synth(&cfg, &out)?;
            println!("wrote {}", files.config.display());
        }
        Command::Pretrain { config, out, seed, resume, ablations } => {
            let cfg = load_config(&config, Some(&ablations))?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let outcome = commands::pretrain(&cfg, seed, &out, resume.as_deref())?;
            if let Some(l) = outcome.last {
                println!("epochs\t{}\nL_spa\t{}\nL_freq\t{}\nL_dfs\t{}\nL_pretrain\t{}", outcome.epochs, l.spa, l.freq, l.dfs, l.total);
            }
            println!("wrote {}", outcome.checkpoint.display());
        }
        Command::Finetune { config, out, teacher, seeds, ablations } => {
            let cfg = load_config(&config, Some(&ablations))?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            print_report(&commands::finetune(&cfg, &seeds, &teacher, &out)?);
        }
        Command::Eval { config, out, checkpoint, cube, labels } => {
            let cfg = load_config(&config, None)?;
            let cube = match cube {
                Some(c) => Some(load_cube(&c, labels.as_deref(), None)?),
                None => None,
            };
            print_report(&commands::eval(&cfg, &checkpoint, cube, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
