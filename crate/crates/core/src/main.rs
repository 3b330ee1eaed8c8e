use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use dialog_ilp::dialog::{Dialog, MwozDialog, SampleRecord};
use dialog_ilp::extract::{extract_program, PolicyProgram};
use dialog_ilp::infer::{gradcheck, Hyperparams, TrainedModel};
use dialog_ilp::metrics::TurnActs;
use dialog_ilp::pipeline::{self, read_jsonl, write_jsonl};
use dialog_ilp::template::ProgramTemplate;
use dialog_ilp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dialog-ilp",
    version,
    about = "Learn slot-filling dialog policies as logic programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Simdial,
    Multiwoz,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate dialogs in a built-in domain (JSONL).
    Generate {
        #[arg(long)]
        domain: String,
        /// Corpus size; required unless --representative is given.
        #[arg(long, required_unless_present = "representative")]
        n: Option<usize>,
        /// Emit only the one-shot training dialog.
        #[arg(long, conflicts_with = "n")]
        representative: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        correction_probability: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn dialogs into logic samples (JSONL).
    Convert {
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit clause weights; writes the model as JSON.
    Train {
        #[arg(long)]
        samples: PathBuf,
        /// Program template (TOML); defaults to the built-in one for the
        /// samples' encoding.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Hyperparameters (TOML).
        #[arg(long)]
        hp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the loss trace, one value per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Read off the symbolic program from a trained model.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a program to samples of any domain; writes predictions (JSONL).
    Transfer {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the gold acts of a sample file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            domain,
            n,
            representative,
            seed,
            correction_probability,
            out,
        } => {
            let n = if representative { None } else { n };
            let dialogs = pipeline::generate(&domain, n, seed, correction_probability)?;
            write_jsonl(&out, &dialogs)?;
            log::info!("wrote {} dialogs to {}", dialogs.len(), out.display());
        }
        Command::Convert { format, input, out } => {
            let records = match format {
                Format::Simdial => pipeline::convert_simdial(&read_jsonl::<Dialog>(&input)?)?,
                Format::Multiwoz => pipeline::convert_mwoz(&read_jsonl::<MwozDialog>(&input)?)?,
            };
            write_jsonl(&out, &records)?;
            log::info!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::Train {
            samples,
            template,
            hp,
            out,
            trace,
        } => {
            let records: Vec<SampleRecord> = read_jsonl(&samples)?;
            let template = template
                .map(|p| ProgramTemplate::from_toml(&fs::read_to_string(p)?))
                .transpose()?;
            let hp = hp
                .map(|p| Hyperparams::from_toml(&fs::read_to_string(p)?))
                .transpose()?;
            let model = pipeline::train_records(&records, template.as_ref(), hp.as_ref())?;
            fs::write(&out, model.to_json())?;
            if let Some(t) = trace {
                let text: String = model.loss_trace.iter().map(|l| format!("{l}\n")).collect();
                fs::write(t, text)?;
            }
            println!(
                "final loss {:.6} after {} steps",
                model.loss_trace.last().copied().unwrap_or(f64::NAN),
                model.loss_trace.len()
            );
        }
        Command::Extract {
            model,
            threshold,
            out,
        } => {
            let model = TrainedModel::from_json(&fs::read_to_string(model)?)?;
            let program = extract_program(&model, threshold)?;
            fs::write(&out, program.to_text())?;
        }
        Command::Transfer {
            program,
            samples,
            out,
        } => {
            let program = PolicyProgram::from_text(&fs::read_to_string(program)?)?;
            let records: Vec<SampleRecord> = read_jsonl(&samples)?;
            write_jsonl(&out, &pipeline::transfer(&program, &records)?)?;
        }
        Command::Eval { pred, gold, report } => {
            let predicted: Vec<TurnActs> = read_jsonl(&pred)?;
            let gold: Vec<SampleRecord> = read_jsonl(&gold)?;
            let r = pipeline::eval_records(&predicted, &gold)?;
            fs::write(&report, serde_json::to_string_pretty(&r)?)?;
            print!("{}", r.summary());
        }
        Command::Gradcheck {
            seed,
            n,
            h,
            tolerance,
        } => {
            let r = gradcheck(n, seed, h);
            println!("{}", serde_json::to_string(&r)?);
            if r.max_relative_error.is_nan() || r.max_relative_error > tolerance {
                return Err(Error::Numeric(format!(
                    "max relative error {} above {tolerance} (seed {})",
                    r.max_relative_error, r.worst_seed
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
