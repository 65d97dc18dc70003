use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use eqsim::agents::{probabilistic_train_trial, AgentKind, Profile, ProbabilisticAgent};
use eqsim::oracle::oracle_csv;
use eqsim::runner::{
    self, read_results, results_to_csv, run_cell, run_full_matrix, sequential_probe, write_results,
    ExperimentConfig, Precision, ReportFormat,
};
use eqsim::structures::relation_matrix;
use eqsim::trials::{generate_eval_trials_with, generate_training_trials, Condition, PositionScheme};

#[derive(Parser)]
#[command(name = "eqsim", version, about = "Matching-to-sample stimulus-equivalence simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Experimental conditions.
    Conditions {
        #[command(subcommand)]
        action: ConditionsAction,
    },
    /// Trial generation.
    Trials {
        #[command(subcommand)]
        action: TrialsAction,
    },
    /// Train and evaluate one (condition, agent, seed) cell.
    Run {
        #[arg(long)]
        condition: Condition,
        #[arg(long)]
        agent: AgentKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        profile: Option<Profile>,
        /// Base settings (TOML or JSON); command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
        /// Also write the result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the trained probability table (probabilistic agent only).
        #[arg(long)]
        export_p: Option<PathBuf>,
    },
    /// Run every cell selected by a config file.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Expected probabilistic-agent rates per condition.
    Oracle {
        #[arg(long)]
        condition: Option<Condition>,
    },
    /// Relation matrix of a condition's training set.
    Matrix {
        #[arg(long)]
        condition: Condition,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert saved results.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        decimal_comma: bool,
    },
    /// Train on one sample stimulus at a time and test everything.
    Probe {
        #[arg(long)]
        condition: Condition,
        #[arg(long)]
        agent: AgentKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        profile: Option<Profile>,
    },
}

#[derive(Subcommand)]
enum ConditionsAction {
    List,
}

#[derive(Subcommand)]
enum TrialsAction {
    Gen {
        #[arg(long)]
        condition: Condition,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rotations")]
        scheme: PositionScheme,
        /// Generate the evaluation set instead of the training set.
        #[arg(long)]
        eval: bool,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got {s:?}")),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Conditions {
            action: ConditionsAction::List,
        } => {
            let mut text = String::from("index,name,slug\n");
            for c in Condition::all() {
                text.push_str(&format!("{},{},{}\n", c.ordinal() + 1, c.name(), c.slug()));
            }
            emit(&text)?;
        }
        Command::Trials {
            action: TrialsAction::Gen {
                condition,
                seed,
                out,
                scheme,
                eval,
            },
        } => {
            let set = if eval {
                generate_eval_trials_with(condition.ts, &scheme, seed)?
            } else {
                generate_training_trials(&condition, &scheme, seed)?
            };
            set.write_jsonl(&out)?;
            eprintln!("{} trials written to {}", set.len(), out.display());
        }
        Command::Run {
            condition,
            agent,
            seed,
            profile,
            config,
            precision,
            out,
            export_p,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(p) = profile {
                cfg.profile = p;
            }
            if let Some(p) = precision {
                cfg.precision = p;
            }
            cfg.validate()?;
            let result = run_cell(&condition, agent, &cfg, seed)?;
            emit(&results_to_csv(std::slice::from_ref(&result), cfg.decimal_comma)?)?;
            if result.failed {
                eprintln!("baseline mastery not reached after {} attempts", result.attempts);
            }
            if let Some(path) = out {
                write_results(std::slice::from_ref(&result), ReportFormat::Json, &path, false)?;
            }
            if let Some(path) = export_p {
                if agent != AgentKind::Probabilistic {
                    bail!("--export-p needs --agent probabilistic");
                }
                let training = generate_training_trials(&condition, &cfg.position_scheme, result.train_seed)?;
                let mut p = ProbabilisticAgent::new(result.train_seed);
                for t in &training.trials {
                    probabilistic_train_trial(&mut p, t);
                }
                std::fs::write(&path, p.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::RunAll { config, out_dir } => {
            let mut cfg = load_config(Some(&config))?;
            if out_dir.is_some() {
                cfg.output_dir = out_dir;
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let run = run_full_matrix(&cfg)?;
            write_results(&run.results, ReportFormat::Csv, &dir.join("results.csv"), cfg.decimal_comma)?;
            write_results(&run.results, ReportFormat::Json, &dir.join("results.json"), false)?;
            let failed = run.results.iter().filter(|r| r.failed).count();
            eprintln!(
                "{} cells run, {} without baseline mastery, {} errored; results in {}",
                run.results.len() + run.errors.len(),
                failed,
                run.errors.len(),
                dir.display()
            );
            for e in &run.errors {
                eprintln!("error: {e}");
            }
            if !run.errors.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Oracle { condition } => {
            let conditions = condition.map_or_else(Condition::all, |c| vec![c]);
            emit(&oracle_csv(&conditions)?)?;
        }
        Command::Matrix {
            condition,
            out,
            svg,
            seed,
        } => {
            let training = generate_training_trials(&condition, &PositionScheme::Rotations, seed)?;
            let m = relation_matrix(&condition, &training)?;
            std::fs::write(&out, m.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = svg {
                std::fs::write(&path, m.to_svg(&condition.name()))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Report {
            input,
            format,
            out,
            decimal_comma,
        } => {
            let results = read_results(&input)?;
            match out {
                Some(path) => write_results(&results, format, &path, decimal_comma)?,
                None => match format {
                    ReportFormat::Csv => emit(&results_to_csv(&results, decimal_comma)?)?,
                    ReportFormat::Json => emit(&(runner::results_to_json(&results)? + "\n"))?,
                },
            }
        }
        Command::Probe {
            condition,
            agent,
            seed,
            profile,
        } => {
            let cfg = ExperimentConfig {
                profile: profile.unwrap_or_default(),
                ..ExperimentConfig::default()
            };
            let mut text = String::from("sample,training_trials,trained_rate,untrained_rate\n");
            for p in sequential_probe(&condition, agent, &cfg, seed)? {
                text.push_str(&format!(
                    "{},{},{:.4},{:.4}\n",
                    p.sample,
                    p.training_trials,
                    p.trained_rate(),
                    p.untrained_rate()
                ));
            }
            emit(&text)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
