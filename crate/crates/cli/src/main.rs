//! `fusegram`: every pipeline stage as a subcommand.
//!
//! Settings come from built-in defaults, then `--config FILE`, then
//! `--set key=value`, then the dedicated flags. Exit codes: 0 success,
//! 1 usage, 2 data error, 3 numeric failure.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RawConfig, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "fusegram",
    version,
    about = "Gesture data pipelines: encode, kernels, detectors, evaluation"
)]
struct Cli {
    /// Config file, or any JSON/CSV artifact of an earlier run.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 picks one per core. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Print the resolved config to stderr before running.
    #[arg(long, global = true)]
    show_config: bool,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// csvc, ocsvm, iforest or gmm.
    #[arg(long)]
    model: Option<String>,
    /// `family:mean:form` tag, or `all`.
    #[arg(long)]
    kernel: Option<String>,
    /// Kernel bandwidth, or `auto` for the median distance.
    #[arg(long)]
    sigma: Option<String>,
    /// signal, gist-raw or gist-resized.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded two-class dataset as CSV.
    Synth {
        #[arg(long)]
        n_per_class: Option<usize>,
        /// Distance between class centres in noise standard deviations.
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Encode each CSV row as a 4×4 image plus a manifest.
    Encode { input: Option<String> },
    /// Decode an encoded directory back to CSV.
    Decode { dir: PathBuf },
    /// GIST descriptors of the encoded images.
    Gist {
        input: Option<String>,
        /// Describe the 256×256 upsampled image instead of the 4×4 one.
        #[arg(long)]
        resized: bool,
    },
    /// Principal components of a descriptor CSV.
    Pca {
        features: String,
        /// Report the fewest components reaching this variance share.
        #[arg(long)]
        variance: Option<f64>,
    },
    /// Gram matrix of one kernel as JSON.
    Gram {
        input: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Gram matrix in LIBSVM precomputed-kernel format.
    ExportGram {
        input: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train a model and save it as JSON.
    Train {
        input: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score samples with a trained model.
    Detect {
        model_file: PathBuf,
        input: Option<String>,
    },
    /// Nested cross-validation (csvc) or novelty evaluation (others).
    Eval {
        input: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.set.clone();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push(format!("{k}={v}"));
        }
    };
    push("seed", cli.seed.map(|x| x.to_string()));
    push("workers", cli.workers.map(|x| x.to_string()));
    push("out", cli.out.as_ref().map(|p| p.display().to_string()));
    let model_args = |m: &ModelArgs, push: &mut dyn FnMut(&str, Option<String>)| {
        push("model", m.model.clone());
        push("kernel", m.kernel.clone());
        push("kernel.sigma", m.sigma.clone());
        push("features", m.features.clone());
        push("threshold", m.threshold.map(|x| x.to_string()));
    };
    match &cli.command {
        Command::Synth {
            n_per_class,
            separation,
            noise,
        } => {
            push("input", Some("synth".into()));
            push("synth.n_per_class", n_per_class.map(|x| x.to_string()));
            push("synth.separation", separation.map(|x| x.to_string()));
            push("synth.noise", noise.map(|x| x.to_string()));
        }
        Command::Encode { input } | Command::Detect { input, .. } => push("input", input.clone()),
        Command::Gist { input, resized } => {
            push("input", input.clone());
            push(
                "features",
                Some(if *resized { "gist-resized" } else { "gist-raw" }.into()),
            );
            // descriptors are reported unprojected
            push("pca.variance", Some("0".into()));
        }
        Command::Pca { variance, .. } => push("pca.variance", variance.map(|x| x.to_string())),
        Command::Gram { input, model }
        | Command::ExportGram { input, model }
        | Command::Train { input, model }
        | Command::Eval { input, model } => {
            push("input", input.clone());
            model_args(model, &mut push);
        }
        Command::Decode { .. } => {}
    }
    out
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    raw.apply(overrides(cli))?;
    if matches!(cli.command, Command::Gist { .. })
        && raw.get("model") != "iforest"
        && raw.get("model") != "gmm"
    {
        // gist output does not depend on the model; keep validation happy
        raw.set("model", "iforest");
    }
    let settings = raw.resolve()?;
    if cli.show_config {
        eprint!("{}", raw.canonical_text());
        eprintln!("# config_hash = {}", raw.hash());
    }
    if settings.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build_global()?;
    }
    match &cli.command {
        Command::Synth { .. } => commands::synth(&raw, &settings),
        Command::Encode { .. } => commands::encode_dir(&raw, &settings),
        Command::Decode { dir } => commands::decode_dir(&raw, &settings, dir),
        Command::Gist { .. } => commands::gist_cmd(&raw, &settings),
        Command::Pca { features, .. } => commands::pca_cmd(&raw, &settings, features),
        Command::Gram { .. } => commands::gram_cmd(&raw, &settings),
        Command::ExportGram { .. } => commands::export_gram(&raw, &settings),
        Command::Train { .. } => commands::train(&raw, &settings),
        Command::Detect { model_file, .. } => commands::detect(&raw, &settings, model_file),
        Command::Eval { .. } => commands::eval(&raw, &settings),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<fusegram::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
