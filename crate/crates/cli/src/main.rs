use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnn_mcmc::augmentation::AugmentPolicy;
use bnn_mcmc_cli::commands::{self, EvalSplit, PredictInput, SynthParams};
use bnn_mcmc_cli::{CliError, CliResult, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "bnn-mcmc", version, about = "Bayesian neural network classification with MCMC weight sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Sample network weights and write chains, model and diagnostics.
    Train(RunFlags),
    /// Score a trained run on the test (or training) split.
    Evaluate {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Posterior-predictive class probabilities for one input.
    Predict {
        /// Run configuration; locates the run directory.
        #[arg(long, required_unless_present = "out")]
        config: Option<PathBuf>,
        /// Run directory (overrides the config output directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated raw feature vector.
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        input: Option<String>,
        /// PGM image, for runs trained on images.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Write augmented copies of an image directory.
    Augment {
        /// Directory of class subdirectories holding .pgm files.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Augmentation policy (TOML; a run config's [augmentation] table is also accepted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of copies per image.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Generate Gaussian blob data as CSV.
    Synth {
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        n_per_class: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convergence diagnostics for chain tables or run directories.
    Diagnose {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(flags: &RunFlags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&flags.config)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.out = std::path::absolute(out)?;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

#[derive(Deserialize)]
struct PolicyFile {
    augmentation: AugmentPolicy,
}

fn load_policy(path: &Path) -> CliResult<AugmentPolicy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(file) = toml::from_str::<PolicyFile>(&text) {
        return Ok(file.augmentation);
    }
    toml::from_str(&text).map_err(|e| CliError::config(e.to_string().trim_end().to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(flags) => {
            let cfg = load_config(&flags)?;
            let s = commands::train(&cfg)?;
            let d = &s.diagnostics;
            println!("wrote {}", s.out_dir.display());
            println!("train samples      {}", s.n_train);
            println!("test samples       {}", s.n_test);
            println!("parameters         {}", s.n_params);
            println!("chains             {}", d.chains.n_chains);
            println!("retained draws     {}", d.chains.n_retained);
            println!("acceptance rate    {:.2}", d.chains.acceptance_rate);
            println!("divergence rate    {:.2}", d.chains.divergence_rate);
            println!("max split R-hat    {}", two_decimals(d.max_rhat));
            println!("R-hat < {:.2}       {:.2}", d.rhat_threshold, d.fraction_rhat_below_threshold);
            println!("min ESS            {}", two_decimals(d.min_ess));
            for w in &d.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Evaluate { run, split } => {
            let cfg = load_config(&run)?;
            let split = match split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Test => EvalSplit::Test,
            };
            let r = commands::evaluate(&cfg, split)?;
            let m = &r.metrics;
            println!("samples            {}", r.n_samples);
            println!("accuracy           {:.2}", m.accuracy);
            println!("macro precision    {:.2}", m.macro_precision);
            println!("macro recall       {:.2}", m.macro_recall);
            println!("macro F1           {:.2}", m.macro_f1);
            match r.macro_auc {
                Some(auc) => println!("macro AUC          {auc:.2}"),
                None => println!("macro AUC          n/a"),
            }
            for (c, name) in r.class_names.iter().enumerate() {
                let cm = &m.per_class[c];
                println!(
                    "class {name:<12} precision {:.2} recall {:.2} F1 {:.2} support {}",
                    cm.precision, cm.recall, cm.f1, cm.support
                );
            }
        }
        Command::Predict {
            config,
            out,
            input,
            image,
        } => {
            let dir = match (out, config) {
                (Some(out), _) => out,
                (None, Some(config)) => RunConfig::load(&config)?.out_dir(),
                (None, None) => unreachable!("clap requires one of --config/--out"),
            };
            let input = match (input, image) {
                (Some(text), _) => PredictInput::Vector(
                    text.split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| CliError::data(format!("--input: {e}")))?,
                ),
                (None, Some(path)) => PredictInput::Image(path),
                (None, None) => unreachable!("clap requires one of --input/--image"),
            };
            print_json(&commands::predict(&dir, &input)?);
        }
        Command::Augment {
            input,
            out,
            config,
            seed,
            count,
        } => {
            let mut policy = match config {
                Some(path) => load_policy(&path)?,
                None => AugmentPolicy::default(),
            };
            if let Some(seed) = seed {
                policy.seed = seed;
            }
            if let Some(count) = count {
                policy.per_image_count = count;
            }
            let s = commands::augment(&input, &out, &policy)?;
            println!("wrote {} images ({} originals) to {}", s.n_output, s.n_input, out.display());
        }
        Command::Synth {
            out,
            n_per_class,
            classes,
            dim,
            separation,
            noise,
            seed,
        } => {
            let params = SynthParams {
                n_per_class,
                n_classes: classes,
                dim,
                separation,
                noise,
                seed,
            };
            let data = commands::synth(&params, &out)?;
            println!("wrote {} samples to {}", data.n_samples(), out.display());
        }
        Command::Diagnose { paths, out } => {
            let report = commands::diagnose(&paths)?;
            match out {
                Some(path) => bnn_mcmc_cli::artifacts::write_json(&path, &report)?,
                None => print_json(&report),
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn two_decimals(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}"))
}
