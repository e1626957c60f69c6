use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "rirkit", version, about = "Room impulse response analysis, synthesis, tokenisation and sampling")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML configuration file.
    #[arg(long, global = true, env = "RIRKIT_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyse and quantize every WAV in a directory into a manifest.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured session sample rate.
        #[arg(long)]
        session_rate: Option<u32>,
    },
    /// Print the acoustic parameters of one WAV.
    Analyze {
        wav: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map a parameter JSON file to class indices.
    Quantize {
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesise RIRs from parameters, a manifest, or random grid targets.
    Synth {
        #[command(flatten)]
        source: SynthSource,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the token codec or convert between WAV and codegram.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Generate one RIR per reference manifest row.
    Sample {
        mode: SampleMode,
        #[arg(long)]
        codec: PathBuf,
        /// Reference rows: ids, conditions and oracle targets.
        #[arg(long)]
        manifest: PathBuf,
        /// Token corpus for the n-gram model (defaults to --manifest).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a generated manifest against its references.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Directory of dry WAVs; generated speech-like signals are used otherwise.
        #[arg(long)]
        dry_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "generated")]
        method: String,
    },
}

#[derive(Debug, clap::Args)]
#[group(required = true, multiple = false)]
struct SynthSource {
    /// JSON parameter set.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Manifest whose rows carry parameters.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of random grid-center targets.
    #[arg(long)]
    random: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum CodecAction {
    Train {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Encode {
        #[arg(long)]
        codec: PathBuf,
        wav: PathBuf,
        /// Codegram path; `.json` selects the JSON format.
        #[arg(long)]
        out: PathBuf,
    },
    Decode {
        #[arg(long)]
        codec: PathBuf,
        codegram: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    ArCfg,
    ArCg,
    Maskgit,
    Flow,
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let cfg = Config::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Ingest { dir, out, session_rate } => {
            commands::ingest(&cfg, &dir, &out, session_rate.unwrap_or(cfg.session_rate))
        }
        Command::Analyze { wav, out } => commands::analyze(&wav, out.as_deref()),
        Command::Quantize { params, out } => commands::quantize(&params, out.as_deref()),
        Command::Synth { source, out_dir } => {
            let source = match (source.params, source.manifest, source.random) {
                (Some(p), _, _) => commands::SynthInput::Params(p),
                (_, Some(m), _) => commands::SynthInput::Manifest(m),
                (_, _, Some(n)) => commands::SynthInput::Random(n),
                _ => unreachable!("clap requires one source"),
            };
            commands::synth(&cfg, source, &out_dir, seed)
        }
        Command::Codec { action } => match action {
            CodecAction::Train { manifest, out } => commands::codec_train(&cfg, &manifest, &out, seed),
            CodecAction::Encode { codec, wav, out } => commands::codec_encode(&cfg, &codec, &wav, &out),
            CodecAction::Decode { codec, codegram, out } => commands::codec_decode(&codec, &codegram, &out),
        },
        Command::Sample { mode, codec, manifest, train, out_dir } => {
            commands::sample(&cfg, mode, &codec, &manifest, train.as_deref(), &out_dir, seed)
        }
        Command::Eval { generated, reference, dry_dir, out, csv, method } => commands::eval(
            &cfg,
            &generated,
            &reference,
            dry_dir.as_deref(),
            &out,
            csv.as_deref(),
            &method,
            seed,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Sources often repeat their cause in their own message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
