//! Command-line front end. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::{distill_dirs, DistillConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate_dirs;
use crate::filters::EditScript;
use crate::image::{load_image, save_image};
use crate::model::{Choice, Model};
use crate::trainer::{train_dirs, TrainerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "exposure", version, about = "White-box photo retouching")]
pub struct Cli {
    /// Seed for every stochastic choice (dropout, sampling, crops).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on unpaired raw and target directories.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retouch one image.
    Apply {
        #[arg(long, required_unless_present = "replay")]
        ckpt: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the chosen operations as an edit script.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Apply a saved edit script instead of running the agent.
        #[arg(long, conflicts_with_all = ["ckpt", "sample"])]
        replay: Option<PathBuf>,
        /// Sample filters from pi1 instead of taking the argmax.
        #[arg(long)]
        sample: bool,
    },
    /// Print the agent's per-step filter probabilities and choices.
    Trace {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sample: bool,
    },
    /// Histogram intersection of outputs against targets.
    Eval {
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long)]
        targets: PathBuf,
    },
    /// Fit an operation sequence to a black-box filter's before/after pairs.
    Distill {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DistillConfig::default().iterations)]
        iterations: usize,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) | Error::StaleTape => EXIT_NUMERIC,
        Error::Invalid(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn choice(sample: bool) -> Choice {
    if sample {
        Choice::Sample
    } else {
        Choice::Greedy
    }
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emit = |out: &mut dyn Write, text: &str| {
        writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
    };
    match cli.command {
        Command::Train { config, raw, target, out: ckpt } => {
            let mut cfg = TrainerConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let trainer = train_dirs(&cfg, &raw, &target, &ckpt)?;
            emit(out, &format!("trained {} iterations, checkpoint {}", trainer.iteration(), ckpt.display()))
        }
        Command::Apply { ckpt, input, out: dest, script, replay, sample } => {
            let image = load_image(&input)?;
            let edits = match (replay, ckpt) {
                (Some(path), _) => EditScript::load(path)?,
                (None, Some(ckpt)) => {
                    let (model, _) = Model::load(ckpt)?;
                    model.trace(&image, choice(sample), &mut rng)?.script()
                }
                (None, None) => return Err(Error::Invalid("apply needs --ckpt or --replay".into())),
            };
            save_image(&edits.apply(&image), &dest)?;
            if let Some(path) = script {
                edits.save(path)?;
            }
            let names: Vec<String> = edits.actions.iter().map(|a| a.display()).collect();
            emit(out, &names.join("\n"))
        }
        Command::Trace { ckpt, input, sample } => {
            let (model, _) = Model::load(ckpt)?;
            let image = load_image(&input)?;
            let trace = model.trace(&image, choice(sample), &mut rng)?;
            write!(out, "{}", trace.render()).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Eval { outputs, targets } => {
            let report = evaluate_dirs(outputs, targets, seed)?;
            emit(out, &report.to_string())
        }
        Command::Distill { before, after, steps, out: dest, iterations } => {
            if steps < 1 {
                return Err(Error::Invalid("--steps must be at least 1".into()));
            }
            let cfg = DistillConfig {
                steps,
                iterations,
                ..DistillConfig::default()
            };
            let result = distill_dirs(before, after, &cfg)?;
            result.script.save(&dest)?;
            let names: Vec<String> = result.script.actions.iter().map(|a| a.display()).collect();
            emit(out, &format!("{}\nresidual {:.3e}", names.join("\n"), result.residual))
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
