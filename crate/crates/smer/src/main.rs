use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smer::commands::{cmd_ablate, cmd_evaluate, cmd_ingest, cmd_predict, cmd_preprocess, cmd_train};
use smer::config::{example_config, RunConfig};
use smer::error::{write_atomic, Error, EXIT_OK, EXIT_VALIDATION};
use smer::manifest::{Adapter, SplitPlan};
use smer::report;
use smer_core::tokenizer::Representation;

#[derive(Parser)]
#[command(name = "smer", version, about = "Symbolic music emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config field, e.g. `--set optimizer.base_lr=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> smer::Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

fn parse_representation(s: &str) -> Result<Representation, String> {
    match s {
        "cp" => Ok(Representation::Cp),
        "sw" => Ok(Representation::Sw),
        _ => Err(format!("unknown representation {s:?} (cp or sw)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset manifest from a corpus layout.
    Ingest {
        #[arg(long, value_enum)]
        adapter: Adapter,
        /// Corpus directory (emopia) or label CSV (vgmidi, generic-csv).
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the song-level split when the source has none.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.15)]
        valid_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
    },
    /// Tokenize and label every clip of the manifest into shards.
    Preprocess(ConfigArgs),
    /// Train one model per configured seed.
    Train(ConfigArgs),
    /// Score a checkpoint on a shard.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        shard: PathBuf,
        /// Write the emotion confusion matrix here as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Classify MIDI files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        clips: Vec<PathBuf>,
    },
    /// Train the auxiliary-task grid and tabulate emotion scores.
    Ablate(ConfigArgs),
    /// Write a complete example config.
    InitConfig {
        #[arg(long, value_parser = parse_representation)]
        representation: Representation,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> smer::Result<()> {
    match cli.command {
        Command::Ingest { adapter, source, out, seed, valid_fraction, test_fraction } => {
            let plan = SplitPlan { seed, valid_fraction, test_fraction };
            let m = cmd_ingest(&source, adapter, &plan, &out)?;
            for s in smer::Split::ALL {
                println!("{s}: {} clips", m.split(s).count());
            }
        }
        Command::Preprocess(args) => {
            cmd_preprocess(&args.load()?)?;
        }
        Command::Train(args) => {
            let summary = cmd_train(&args.load()?)?;
            print!("{}", summary.report);
        }
        Command::Evaluate { checkpoint, shard, confusion } => {
            let r = cmd_evaluate(&checkpoint, &shard)?;
            let names = report::emotion_names();
            let em = r.emotion().expect("emotion always enabled");
            print!("{}", report::classification_text(em, &names));
            for (task, c) in r.reports.iter_ref().filter(|(t, _)| *t != smer_core::Task::Emotion) {
                println!("{task}: accuracy {:.4}  macro-F1 {:.4}", c.accuracy, c.macro_f1);
            }
            if let Some(path) = confusion {
                write_atomic(&path, report::confusion_csv(em, &names).as_bytes())?;
            }
        }
        Command::Predict { checkpoint, clips } => {
            for p in cmd_predict(&checkpoint, &clips)? {
                let probs: Vec<String> = p.probabilities.iter().map(|x| format!("{x:.6}")).collect();
                println!("{}\t{}\t{}", p.path.display(), p.emotion, probs.join("\t"));
            }
        }
        Command::Ablate(args) => {
            let (_, text) = cmd_ablate(&args.load()?)?;
            print!("{text}");
        }
        Command::InitConfig { representation, out } => {
            write_atomic(&out, example_config(representation).to_toml().as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Missing { .. } = e {
                eprintln!("hint: run the earlier pipeline step that produces this file");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
