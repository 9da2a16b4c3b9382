use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skilltune::cli::{self, CliError, EvaluateArgs, SplitName};
use skilltune::dataset::SplitSpec;

#[derive(Parser)]
#[command(name = "skilltune", version, about = "Optimize agent skill documents against a validation gate")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a training run described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Score a skill file on a dataset split under a harness.
    Evaluate {
        #[arg(long)]
        skill: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// `simbench`, `simbench-chat`, or a JSON harness binding file.
        #[arg(long)]
        harness: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "2:1:7", value_parser = cli::parse_ratios)]
        ratios: [f64; 3],
        #[arg(long, default_value_t = 16)]
        workers: usize,
        #[arg(long, default_value_t = 1.0)]
        success_threshold: f64,
    },
    /// Print the gate log, epoch table and edit economy of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Synthetic benchmark utilities.
    Simbench {
        #[command(subcommand)]
        command: SimbenchCommand,
    },
}

#[derive(Subcommand)]
enum SimbenchCommand {
    /// Write a simbench dataset and its rules.json.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        tasks: usize,
        #[arg(long, default_value_t = 5)]
        rules: usize,
        #[arg(long, default_value_t = 0.3)]
        base_rate: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, resume } => {
            let summary = cli::cmd_train(&config, resume)?;
            let r = &summary.report;
            println!("selection score: {:.4} (seed {:.4})", r.best_selection_score, r.seed_selection_score);
            println!("test score: {:.4} over {} tasks", r.test_score, r.test_tasks);
            println!("accepted steps: {} of {}", r.accepted_steps, r.total_steps);
            println!("best skill: {}", summary.exports.best_skill.display());
            println!("run report: {}", summary.exports.run_report.display());
        }
        Command::Evaluate { skill, dataset, split, harness, seed, ratios, workers, success_threshold } => {
            let args = EvaluateArgs {
                skill,
                dataset,
                split,
                harness,
                split_spec: SplitSpec { ratios, seed },
                workers,
                success_threshold,
            };
            let eval = cli::cmd_evaluate(&args)?;
            for (id, score) in &eval.per_task {
                println!("{id}\t{score}");
            }
            println!("mean: {} ({} tasks, {} harness)", eval.mean, eval.per_task.len(), eval.harness);
        }
        Command::Report { run } => print!("{}", cli::cmd_report(&run)?),
        Command::Simbench { command: SimbenchCommand::Generate { out, tasks, rules, base_rate, seed } } => {
            let ds = cli::cmd_generate(&out, tasks, rules, base_rate, seed)?;
            println!("wrote {} tasks with {} rules to {}", ds.tasks.len(), ds.rules.rules.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
