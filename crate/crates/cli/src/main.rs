//! `drccmdp`: solve, validate and benchmark from the command line.
//!
//! Exit codes: 0 ok, 1 validation verdict `fail`, 2 infeasible, 3 solver
//! failure, 4 bad input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use drccmdp_core::ambiguity::AmbiguitySpec;
use drccmdp_core::bench::{parse_models, results_csv, run_experiment, write_outputs, BenchConfig};
use drccmdp_core::mdp::MdpModel;
use drccmdp_core::solution::{solve, DrccmdpSolution, SolverConfig};
use drccmdp_core::validation::{certify, Verdict};

const EXIT_VERDICT_FAIL: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_SOLVER_FAILURE: u8 = 3;
const EXIT_BAD_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "drccmdp",
    version,
    about = "Distributionally robust chance-constrained MDP solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model and print the solution as JSON.
    Solve(SolveArgs),
    /// Check a solution against its ambiguity set and print a JSON report.
    Validate(ValidateArgs),
    /// Run a benchmark experiment.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    ambiguity: PathBuf,
    /// Write the solution here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the conic program as JSON. Without a path it goes next to
    /// `--out` (or to `program.ir.json`).
    #[arg(long, value_name = "PATH", num_args = 0..=1)]
    dump_ir: Option<Option<PathBuf>>,
    #[command(flatten)]
    budget: Budget,
}

#[derive(Args)]
struct Budget {
    /// Wall-clock cap on branch-and-bound, in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Node cap on branch-and-bound.
    #[arg(long)]
    node_limit: Option<usize>,
}

impl Budget {
    fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(t) = self.time_limit {
            cfg = cfg.with_bnb_time_limit(t);
        }
        if let Some(n) = self.node_limit {
            cfg.misocp.bnb.node_limit = n;
            cfg.acs.init.bnb.node_limit = n;
        }
        cfg
    }
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    ambiguity: PathBuf,
    /// Gaussian samples for the sampled checks; 0 skips sampling.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Machine-replacement instance: every requested model on one instance.
    MachineReplacement(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated models; all by default.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Number of Wasserstein scenarios.
    #[arg(long, default_value_t = 1000)]
    scenarios: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    theta_phi: Option<f64>,
    #[arg(long)]
    theta_w: Option<f64>,
    #[command(flatten)]
    budget: Budget,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_BAD_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Maps an error chain to an exit code through the first library error in it.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<drccmdp_core::Error>() {
            return if err.is_infeasible() {
                EXIT_INFEASIBLE
            } else if err.is_bad_input() {
                EXIT_BAD_INPUT
            } else {
                EXIT_SOLVER_FAILURE
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_BAD_INPUT;
        }
    }
    EXIT_SOLVER_FAILURE
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Validate(a) => run_validate(a),
        Command::Bench(BenchCommand::MachineReplacement(a)) => run_bench(a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_solve(a: SolveArgs) -> Result<u8> {
    let mdp = MdpModel::load(&a.mdp).with_context(|| format!("loading MDP {}", a.mdp.display()))?;
    let spec = AmbiguitySpec::load(&a.ambiguity)
        .with_context(|| format!("loading ambiguity set {}", a.ambiguity.display()))?;
    let cfg = a.budget.apply(SolverConfig::default());
    let out = solve(&mdp, &spec, &cfg)?;
    for w in &out.solution.diagnostics.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &a.dump_ir {
        let path = path.clone().unwrap_or_else(|| {
            a.out
                .as_ref()
                .map(|o| o.with_extension("ir.json"))
                .unwrap_or_else(|| PathBuf::from("program.ir.json"))
        });
        match &out.program {
            Some(p) => std::fs::write(&path, p.to_json()?)
                .with_context(|| format!("writing {}", path.display()))?,
            None => log::warn!("no conic program was built; nothing dumped"),
        }
    }
    emit(&out.solution.to_json()?, a.out.as_deref())?;
    Ok(0)
}

fn run_validate(a: ValidateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.solution)
        .with_context(|| format!("reading {}", a.solution.display()))?;
    let solution = DrccmdpSolution::from_json(&text)?;
    let spec = AmbiguitySpec::load(&a.ambiguity)
        .with_context(|| format!("loading ambiguity set {}", a.ambiguity.display()))?;
    let report = certify(&solution, &spec, a.samples, a.seed)?;
    emit(&serde_json::to_string_pretty(&report)?, a.out.as_deref())?;
    Ok(if report.verdict == Verdict::Fail {
        EXIT_VERDICT_FAIL
    } else {
        0
    })
}

fn run_bench(a: BenchArgs) -> Result<u8> {
    let mut cfg = BenchConfig::new(a.states, a.seed);
    if let Some(m) = &a.models {
        cfg.models = parse_models(m)?;
    }
    cfg.h = a.scenarios;
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = a.theta_phi {
        cfg.theta_phi = t;
    }
    if let Some(t) = a.theta_w {
        cfg.theta_w = t;
    }
    cfg.solver = a.budget.apply(cfg.solver);
    let run = run_experiment(&cfg)?;
    write_outputs(&run, &a.out)?;
    print!("{}", results_csv(&run.results));
    for row in run.results.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{}: {} ({})",
            row.model,
            row.status,
            row.error.as_deref().unwrap_or_default()
        );
    }
    Ok(0)
}
