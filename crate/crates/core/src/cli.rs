//! The `impulsolve` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::control_rn::{epsilon_budget, epsilon_tail, paper_c0, EpsFormula};
use crate::error::{Error, Result};
use crate::oracle::{cross_check, EnumerationBudget, DEFAULT_ORACLE_NODE_CAP};
use crate::policy::{evaluate_exact_with, evaluate_monte_carlo_with, EvalOptions};
use crate::problem::{load_problem, Mode, ProblemSpec};
use crate::regime::{ValueField, DEFAULT_STATE_CAP};
use crate::scenario::{generate_walk_tree_with, load_tree, validate_tree, ScenarioTree, WalkOptions, DEFAULT_NODE_CAP};
use crate::scheme::{solve, SolveOptions};
use crate::strategy::{load_strategy, Strategy};

pub const NODE_CAP_ENV: &str = "IMPULSOLVE_NODE_CAP";

#[derive(Parser, Debug)]
#[command(
    name = "impulsolve",
    version,
    about = "Impulse control with execution delay on scenario trees"
)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random-walk scenario tree.
    Generate(GenerateArgs),
    /// Validate a tree, and a problem against it when given.
    Validate(ValidateArgs),
    /// Solve: value, optimal strategy and bound checks.
    Solve(SolveArgs),
    /// Exact value of a strategy.
    Evaluate(EvaluateArgs),
    /// Monte Carlo value of a strategy.
    #[command(name = "mc-evaluate")]
    McEvaluate(McArgs),
    /// Compare the solver against exhaustive search on a small tree.
    Oracle(OracleArgs),
    /// Impulse budget for a target accuracy.
    #[command(name = "eps-bound")]
    EpsBound(EpsArgs),
    /// Run the a priori bound checks; exits 1 on any violation.
    #[command(name = "check-bounds")]
    CheckBounds(SolveArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Inputs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Risk-sensitive mode with this ρ.
    #[arg(long, conflicts_with = "risk_neutral")]
    rho: Option<f64>,
    /// Risk-neutral mode whatever the problem file says.
    #[arg(long)]
    risk_neutral: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    branching: usize,
    #[arg(long)]
    depth: usize,
    /// One `x1,x2,...:p` per branch, separated by `;`.
    #[arg(long)]
    increments: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Comma-separated root state (default: zeros).
    #[arg(long)]
    initial_state: Option<String>,
    #[arg(long)]
    node_cap: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Total impulse budget (default ⌈T/Δ⌉ + 1).
    #[arg(long)]
    n_cap: Option<usize>,
    /// Highest iterate index computed (default: the budget).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    state_cap: Option<usize>,
    /// Write the extracted strategy here.
    #[arg(long)]
    strategy_out: Option<PathBuf>,
    /// Write the limit value table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    strategy: PathBuf,
    /// Charge impulses that execute after the horizon.
    #[arg(long)]
    strict_horizon_charging: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct McArgs {
    #[command(flatten)]
    eval: EvaluateArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Impulse budget for both sides (default ⌈T/Δ⌉ + 1).
    #[arg(long)]
    n_cap: Option<usize>,
    #[arg(long)]
    node_cap: Option<usize>,
    #[arg(long)]
    max_strategies: Option<u128>,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Formula {
    Paper,
    Theta,
}

#[derive(Args, Debug)]
struct EpsArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = Formula::Theta)]
    formula: Formula,
    #[command(flatten)]
    output: Output,
}

/// Runs one command line (including the program name) and returns the exit
/// code: 0 success, 1 I/O or internal error (or failed checks), 2 invalid
/// input, 3 guard abort.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let run = || dispatch(cli.command);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                return 1;
            }
        },
        None => run(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: &Output, json: &str) -> Result<()> {
    write_text(out.out.as_deref(), json)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = File::create(p)?;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
        }
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes())?;
            s.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports always serialize")
}

fn env_node_cap() -> Result<Option<usize>> {
    match std::env::var(NODE_CAP_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Invalid(format!("{NODE_CAP_ENV} must be a non-negative integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn node_cap(flag: Option<usize>, default: usize) -> Result<usize> {
    Ok(match flag {
        Some(c) => c,
        None => env_node_cap()?.unwrap_or(default),
    })
}

fn load_inputs(inputs: &Inputs) -> Result<(ScenarioTree, ProblemSpec)> {
    let tree = load_tree(open(&inputs.tree)?)?;
    let mut spec = load_problem(open(&inputs.spec)?)?;
    if let Some(rho) = inputs.rho {
        spec = spec.with_mode(Mode::RiskSensitive { rho })?;
    } else if inputs.risk_neutral {
        spec = spec.risk_neutral();
    }
    spec.check_tree(&tree)?;
    Ok((tree, spec))
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {x:?}")))
        })
        .collect()
}

/// Parses `x1,x2:p;y1,y2:q`.
fn parse_increments(s: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    s.split(';')
        .filter(|b| !b.trim().is_empty())
        .map(|branch| {
            let (x, p) = branch
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("increment {branch:?} lacks ':probability'")))?;
            let p = p
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad probability in {branch:?}")))?;
            Ok((parse_numbers(x)?, p))
        })
        .collect()
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Validate(a) => validate(a),
        Command::Solve(a) => run_solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::McEvaluate(a) => mc_evaluate(a),
        Command::Oracle(a) => oracle(a),
        Command::EpsBound(a) => eps_bound(a),
        Command::CheckBounds(a) => check_bounds(a),
    }
}

fn generate(a: GenerateArgs) -> Result<i32> {
    let mut opts = WalkOptions::new(a.branching, a.depth, parse_increments(&a.increments)?, a.seed);
    opts.jitter = a.jitter;
    opts.initial_state = a.initial_state.as_deref().map(parse_numbers).transpose()?;
    opts.node_cap = node_cap(a.node_cap, DEFAULT_NODE_CAP)?;
    let tree = generate_walk_tree_with(&opts)?;
    emit(&a.output, &tree.to_json())?;
    Ok(0)
}

#[derive(Serialize)]
struct ValidationReport {
    valid: bool,
    nodes: usize,
    depth: usize,
    dim: usize,
}

fn validate(a: ValidateArgs) -> Result<i32> {
    let tree = load_tree(open(&a.tree)?)?;
    let violations = validate_tree(&tree);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if let Some(path) = &a.spec {
        load_problem(open(path)?)?.check_tree(&tree)?;
    }
    let report = ValidationReport {
        valid: true,
        nodes: tree.len(),
        depth: tree.depth(),
        dim: tree.dim(),
    };
    emit(&a.output, &to_json(&report))?;
    Ok(0)
}

fn solve_options(a: &SolveArgs) -> SolveOptions {
    SolveOptions {
        n_cap: a.n_cap,
        state_cap: a.state_cap.unwrap_or(DEFAULT_STATE_CAP),
        ..SolveOptions::default()
    }
}

/// `node,time,regime,value` for every key of the field.
pub fn value_table_csv(tree: &ScenarioTree, field: &ValueField) -> String {
    let mut s = String::from("node,time,regime,value\n");
    for (r, v, value) in field.entries() {
        s.push_str(&format!("{},{},{},{}\n", tree.node(v).id, tree.time(v), r, value));
    }
    s
}

fn run_solve(a: SolveArgs) -> Result<i32> {
    let (tree, spec) = load_inputs(&a.inputs)?;
    let outcome = solve(&tree, &spec, &solve_options(&a), a.iterations)?;
    if let Some(p) = &a.strategy_out {
        write_text(Some(p), &outcome.strategy.to_json(&tree))?;
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, value_table_csv(&tree, &outcome.limit))?;
    }
    emit(&a.output, &outcome.report.to_json())?;
    Ok(0)
}

fn check_bounds(a: SolveArgs) -> Result<i32> {
    let (tree, spec) = load_inputs(&a.inputs)?;
    let outcome = solve(&tree, &spec, &solve_options(&a), a.iterations)?;
    emit(&a.output, &outcome.bounds.to_json())?;
    if outcome.bounds.passed() {
        Ok(0)
    } else {
        eprintln!("error: {} bound violation(s)", outcome.bounds.violations());
        Ok(1)
    }
}

#[derive(Serialize)]
struct EvaluationReport {
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    value: f64,
    /// `ln(value) / ρ` in risk-sensitive mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    certainty_equivalent: Option<f64>,
    expected_running: f64,
    expected_impulse_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    strict_horizon_charging: bool,
}

fn load_eval(a: &EvaluateArgs) -> Result<(ScenarioTree, ProblemSpec, Strategy, EvalOptions)> {
    let (tree, spec) = load_inputs(&a.inputs)?;
    let strategy = load_strategy(open(&a.strategy)?, &tree)?;
    let opts = EvalOptions {
        strict_horizon_charging: a.strict_horizon_charging,
    };
    Ok((tree, spec, strategy, opts))
}

fn evaluate(a: EvaluateArgs) -> Result<i32> {
    let (tree, spec, strategy, opts) = load_eval(&a)?;
    let b = evaluate_exact_with(&tree, &spec, &strategy, &opts)?;
    let rho = spec.mode.rho();
    let report = EvaluationReport {
        mode: spec.mode.name(),
        rho,
        value: b.value,
        certainty_equivalent: rho.map(|r| b.value.ln() / r),
        expected_running: b.running,
        expected_impulse_cost: b.impulse,
        stderr: None,
        samples: None,
        seed: None,
        strict_horizon_charging: opts.strict_horizon_charging,
    };
    emit(&a.output, &to_json(&report))?;
    Ok(0)
}

fn mc_evaluate(a: McArgs) -> Result<i32> {
    let (tree, spec, strategy, opts) = load_eval(&a.eval)?;
    let est = evaluate_monte_carlo_with(&tree, &spec, &strategy, a.samples, a.seed, &opts)?;
    let rho = spec.mode.rho();
    let report = EvaluationReport {
        mode: spec.mode.name(),
        rho,
        value: est.estimate,
        certainty_equivalent: rho.map(|r| est.estimate.ln() / r),
        expected_running: est.mean_running,
        expected_impulse_cost: est.mean_impulse,
        stderr: Some(est.stderr),
        samples: Some(est.samples),
        seed: Some(est.seed),
        strict_horizon_charging: opts.strict_horizon_charging,
    };
    emit(&a.eval.output, &to_json(&report))?;
    Ok(0)
}

fn oracle(a: OracleArgs) -> Result<i32> {
    let (tree, spec) = load_inputs(&a.inputs)?;
    let mut budget = EnumerationBudget::new(a.n_cap.unwrap_or_else(|| spec.default_n_cap(tree.depth())));
    budget.node_cap = node_cap(a.node_cap, DEFAULT_ORACLE_NODE_CAP)?;
    if let Some(m) = a.max_strategies {
        budget.max_strategy_count = m;
    }
    let report = cross_check(&tree, &spec, &budget)?;
    emit(&a.output, &to_json(&report))?;
    if report.pass {
        Ok(0)
    } else {
        eprintln!("error: solver and exhaustive search disagree");
        Ok(1)
    }
}

#[derive(Serialize)]
struct EpsReport {
    eps: f64,
    formula: &'static str,
    n_eps: usize,
    /// `C₀` for the paper formula, the attained tail for the theta formula.
    constant: f64,
}

fn eps_bound(a: EpsArgs) -> Result<i32> {
    let spec = load_problem(open(&a.spec)?)?;
    let (formula, name) = match a.formula {
        Formula::Paper => (EpsFormula::Paper, "paper"),
        Formula::Theta => (EpsFormula::ThetaExplicit, "theta"),
    };
    let n = epsilon_budget(&spec, a.eps, formula)?;
    let constant = match formula {
        EpsFormula::Paper => paper_c0(&spec),
        EpsFormula::ThetaExplicit => epsilon_tail(&spec, n),
    };
    let report = EpsReport {
        eps: a.eps,
        formula: name,
        n_eps: n,
        constant,
    };
    emit(&a.output, &to_json(&report))?;
    Ok(0)
}
