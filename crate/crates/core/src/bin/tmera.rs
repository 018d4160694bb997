//! Command-line front end. Exit codes: 0 success, 1 configuration or input
//! error, 2 numerical abort or invalid state.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tmera::cli::{self, CliError};
use tmera::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "tmera",
    version,
    about = "MERA time evolution of periodic transverse-field Ising rings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one state and stream measurements to CSV.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from this checkpoint, appending to the output log.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translation-invariant runs over several sizes (`ells`).
    StudyScaling {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated level counts.
        #[arg(long)]
        ells: Option<String>,
    },
    /// Runs over several bond dimensions (`ms`) at one size.
    StudyM {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated bond dimensions.
        #[arg(long)]
        ms: Option<String>,
    },
    /// Check unitarity, isometry and normalization of a checkpoint.
    ValidateState { checkpoint: PathBuf },
    /// Write the dense wave function of a checkpoint (at most 12 sites).
    Expand {
        checkpoint: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the configuration a command would use.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in parameter set: convergence, size-sweep, size-independence or bond-sweep.
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// `real` or `euclidean`.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    trotter_order: Option<u32>,
    /// `odd-even` or `sequential`.
    #[arg(long)]
    sweep_style: Option<String>,
    /// Translation-invariant mode.
    #[arg(long)]
    ti: Option<bool>,
    #[arg(long)]
    inner_sweeps: Option<usize>,
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Time before which disentanglers stay frozen.
    #[arg(long)]
    t_switch: Option<f64>,
    #[arg(long)]
    level_repeats: Option<usize>,
    /// `averaged` or `single`.
    #[arg(long)]
    ti_environment: Option<String>,
    #[arg(long)]
    measure_every: Option<usize>,
    #[arg(long)]
    early_stop_tol: Option<f64>,
    /// `product` or `random`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Progress on standard error.
    #[arg(long, short)]
    verbose: bool,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
        let mut overrides = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push(format!("{k}={v}"));
            }
        };
        let s = |x: &Option<f64>| x.map(|v| v.to_string());
        let u = |x: &Option<usize>| x.map(|v| v.to_string());
        let p = |x: &Option<PathBuf>| x.as_ref().map(|v| v.display().to_string());
        push("model", self.model.clone());
        push("h", s(&self.h));
        push("ell", u(&self.ell));
        push("m", u(&self.m));
        push("dt", s(&self.dt));
        push("t_final", s(&self.t_final));
        push("kind", self.kind.clone());
        push("trotter_order", self.trotter_order.map(|v| v.to_string()));
        push("sweep_style", self.sweep_style.clone());
        push("ti", self.ti.map(|v| v.to_string()));
        push("inner_sweeps", u(&self.inner_sweeps));
        push("inner_tol", s(&self.inner_tol));
        push("t_switch", s(&self.t_switch));
        push("level_repeats", u(&self.level_repeats));
        push("ti_environment", self.ti_environment.clone());
        push("measure_every", u(&self.measure_every));
        push("early_stop_tol", s(&self.early_stop_tol));
        push("init", self.init.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("output", p(&self.output));
        push("checkpoint", p(&self.checkpoint));
        push("checkpoint_every", u(&self.checkpoint_every));
        push("jobs", u(&self.jobs));
        for (k, v) in extra {
            push(k, v.clone());
        }
        overrides.extend(self.set.iter().cloned());
        cli::load_config(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, resume } => {
            let c = config.resolve(&[])?;
            let summary = cli::run(&c, resume.as_deref(), config.verbose)?;
            let last = summary.final_row.as_ref();
            println!(
                "{}: {} steps, tau {}, E/L {}{} -> {}",
                cli::stop_reason_name(summary.log.stop),
                summary.log.step,
                summary.log.tau,
                last.map_or("n/a".into(), |r| r.energy_per_site.to_string()),
                last.and_then(|r| r.err_vs_ff)
                    .map_or(String::new(), |e| format!(" (err {e:.3e})")),
                summary.output.display()
            );
        }
        Command::StudyScaling { config, ells } => {
            let c = config.resolve(&[("ells", ells)])?;
            let s = cli::study_scaling(&c, config.verbose)?;
            print!("{}", s.csv);
        }
        Command::StudyM { config, ms } => {
            let c = config.resolve(&[("ms", ms)])?;
            let s = cli::study_m(&c, config.verbose)?;
            print!("{}", s.csv);
        }
        Command::ValidateState { checkpoint } => print!("{}", cli::validate_state(&checkpoint)?),
        Command::Expand { checkpoint, output } => {
            let text = cli::expand(&checkpoint)?;
            match output {
                Some(p) => {
                    let p = cli::resolve(&p);
                    std::fs::write(&p, text).map_err(|source| CliError::Io {
                        path: p.clone(),
                        source,
                    })?
                }
                None => print!("{text}"),
            }
        }
        Command::ShowConfig { config } => {
            let c = config.resolve(&[])?;
            c.validate()?;
            print!("{}", c.echo());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
