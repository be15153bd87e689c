//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use approx_bft::costmodel::{curvature, worst_case_curvature, CurvatureCoefficients};
use approx_bft::dataset::{generate_synthetic, load_dataset, regression6, render_dataset, write_dataset};
use approx_bft::experiment::{
    diagnostics, filter_comparison, gnuplot_script, random_fault_sweep, run_experiment, trajectory_file_name,
    write_summary, ExperimentConfig, ExperimentSpec, SummaryRecord, REFERENCE_X0,
};
use approx_bft::redundancy::measure_redundancy;
use approx_bft::resilient::{inject, resilient_solve_with};
use approx_bft::simengine::BoxRegion;
use approx_bft::theory::{cge_bound, cwtm_bound, estimate_lambda};
use approx_bft::{AgentSet, CompositeCost, Error, FilterKind, QuadraticCost, Result};

#[derive(Parser)]
#[command(name = "approx-bft", version, about = "Approximate Byzantine fault-tolerant distributed optimization")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (or file, for `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// CSV of rows `a_1,...,a_d,b`.
    #[arg(long)]
    dataset: PathBuf,
    /// Skip the first line of the dataset.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    f: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the (2f, eps)-redundancy of a dataset.
    Redundancy {
        #[command(flatten)]
        data: DatasetArgs,
        /// Allow more than 20 agents.
        #[arg(long)]
        force: bool,
    },
    /// Curvature coefficients and the CGE / CWTM resilience bounds.
    Bounds {
        #[command(flatten)]
        data: DatasetArgs,
        /// One-based faulty agents; coefficients then use the remaining agents.
        #[arg(long, value_delimiter = ',')]
        faulty: Vec<usize>,
        /// Sample count for the lambda estimate.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = -1000.0, allow_hyphen_values = true)]
        w_lower: f64,
        #[arg(long, default_value_t = 1000.0, allow_hyphen_values = true)]
        w_upper: f64,
    },
    /// Run the exhaustive resilient solver.
    Exhaustive {
        #[command(flatten)]
        data: DatasetArgs,
        /// Replace an agent's cost: `AGENT=a_1,...,a_d,b[;a_1,...,a_d,b...]`,
        /// one-based agent, each group one squared-residual term. Repeatable.
        #[arg(long, allow_hyphen_values = true)]
        inject: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Run filtered distributed gradient descent.
    Simulate(SimulateArgs),
    /// Write a synthetic regression dataset.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
    },
    /// Compare CGE and CWTM on the six-agent regression instance.
    ReproduceTable1 {
        /// Dataset to use instead of the built-in instance.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        header: bool,
        #[arg(long, value_enum, default_value_t = Init::Reference)]
        init: Init,
        /// Seeds for the random-fault sweep.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Also write a gnuplot script.
        #[arg(long)]
        gnuplot: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    /// x0 = (-0.0085, -0.5643).
    Reference,
    /// x0 = (0, 0).
    Origin,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    f: Option<usize>,
    /// One-based faulty agents.
    #[arg(long, value_delimiter = ',')]
    faulty: Option<Vec<usize>>,
    /// honest, gradient-reverse or random.
    #[arg(long)]
    fault: Option<String>,
    #[arg(long)]
    fault_std: Option<f64>,
    /// average, cge or cwtm.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    eta_c: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    w_lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    w_upper: Option<f64>,
    #[arg(long)]
    gnuplot: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Redundancy { data, force } => cmd_redundancy(&data, force, cli.json),
        Command::Bounds { data, faulty, samples, w_lower, w_upper } => {
            cmd_bounds(&data, &faulty, samples, w_lower, w_upper, cli.seed)
        }
        Command::Exhaustive { data, inject, force } => cmd_exhaustive(&data, &inject, force, cli.json),
        Command::Simulate(args) => cmd_simulate(args, cli.seed, cli.out, cli.json),
        Command::Generate { n, d, noise_std } => cmd_generate(n, d, noise_std, cli.seed, cli.out.as_deref()),
        Command::ReproduceTable1 { dataset, header, init, seeds, gnuplot } => {
            let costs = match dataset {
                Some(path) => load_dataset(&path, header)?,
                None => regression6(),
            };
            cmd_table1(&costs, init, seeds, gnuplot, cli.seed, cli.out.as_deref(), cli.json)
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn coefficient_json(c: &CurvatureCoefficients) -> serde_json::Value {
    let half = c.without_hessian_factor();
    json!({
        "mu": c.mu,
        "gamma": c.gamma,
        "mu_over_gamma": c.mu / c.gamma,
        "mu_without_hessian_factor": half.mu,
        "gamma_without_hessian_factor": half.gamma,
    })
}

fn cmd_redundancy(data: &DatasetArgs, force: bool, as_json: bool) -> Result<()> {
    let costs = load_dataset(&data.dataset, data.header)?;
    let report = measure_redundancy(&costs, data.f, force)?;
    let coeffs = worst_case_curvature(&costs, data.f)?;
    if as_json {
        return print_json(&json!({
            "n": report.n,
            "f": report.f,
            "epsilon": report.epsilon,
            "witness": { "s": report.witness.0, "s_hat": report.witness.1 },
            "per_superset": report
                .per_superset
                .iter()
                .map(|(s, e)| json!({ "s": s, "epsilon": e }))
                .collect::<Vec<_>>(),
            "coefficients": coefficient_json(&coeffs),
        }));
    }
    println!("n = {}, f = {}", report.n, report.f);
    println!("epsilon = {:.8}", report.epsilon);
    println!("witness: S = {}, S_hat = {}", report.witness.0, report.witness.1);
    for (s, e) in &report.per_superset {
        println!("  eps_S {s:<16} {e:.8}");
    }
    let half = coeffs.without_hessian_factor();
    println!("mu = {:.6}, gamma = {:.6} (Hessian 2 A^T A)", coeffs.mu, coeffs.gamma);
    println!("mu = {:.6}, gamma = {:.6} (Hessian A^T A)", half.mu, half.gamma);
    Ok(())
}

fn cmd_bounds(data: &DatasetArgs, faulty: &[usize], samples: usize, w_lower: f64, w_upper: f64, seed: u64) -> Result<()> {
    let costs = load_dataset(&data.dataset, data.header)?;
    let n = costs.len();
    let dim = costs[0].row().dim();
    let region = BoxRegion::hypercube(dim, w_lower, w_upper)?;
    let (coeffs, honest) = if faulty.is_empty() {
        (worst_case_curvature(&costs, data.f)?, AgentSet::all(n))
    } else {
        let faulty = AgentSet::from_labels(faulty)?;
        if let Some(&bad) = faulty.members().iter().find(|&&i| i >= n) {
            return Err(Error::UnknownAgent(bad + 1));
        }
        let honest = faulty.complement(n);
        (curvature(&costs, &honest)?, honest)
    };
    let epsilon = measure_redundancy(&costs, data.f, false)?.epsilon;
    let honest_costs: Vec<QuadraticCost> = honest.members().iter().map(|&i| costs[i].clone()).collect();
    let lambda = estimate_lambda(&honest_costs, &region, samples, seed)?;
    let cge = cge_bound(n, data.f, coeffs.mu, coeffs.gamma, epsilon)?;
    let cwtm = cwtm_bound(dim, n, coeffs.mu, coeffs.gamma, lambda, epsilon)?;
    let half = coeffs.without_hessian_factor();
    print_json(&json!({
        "n": n,
        "f": data.f,
        "d": dim,
        "mu": coeffs.mu,
        "gamma": coeffs.gamma,
        "mu_without_hessian_factor": half.mu,
        "gamma_without_hessian_factor": half.gamma,
        "epsilon": epsilon,
        "alpha": cge.alpha,
        "D": cge.amplification,
        "D_eps": cge.bound,
        "cge_applicable": cge.applicable(),
        "lambda_hat": lambda,
        "lambda_threshold": cwtm.lambda_threshold,
        "D_prime": cwtm.amplification,
        "D_prime_eps": cwtm.bound,
        "cwtm_applicable": cwtm.applicable(),
    }))
}

/// Parses `AGENT=a_1,...,a_d,b[;...]` into a one-based agent and its cost.
fn parse_injection(spec: &str, dim: usize) -> Result<(usize, CompositeCost)> {
    let bad = |msg: &str| Error::InvalidConfig(format!("--inject {spec:?}: {msg}"));
    let (agent, body) = spec.split_once('=').ok_or_else(|| bad("expected AGENT=..."))?;
    let agent: usize = agent.trim().parse().map_err(|_| bad("agent must be a positive integer"))?;
    if agent == 0 {
        return Err(bad("agents are numbered from 1"));
    }
    let terms = body
        .split(';')
        .map(|group| {
            let values = group
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(&format!("not a number: {v:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim + 1 {
                return Err(bad(&format!("each term needs {} values", dim + 1)));
            }
            QuadraticCost::from_slice(&values[..dim], values[dim])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((agent, CompositeCost::new(terms)?))
}

fn cmd_exhaustive(data: &DatasetArgs, injections: &[String], force: bool, as_json: bool) -> Result<()> {
    let costs = load_dataset(&data.dataset, data.header)?;
    let dim = costs[0].row().dim();
    let mut replacements = BTreeMap::new();
    for spec in injections {
        let (agent, cost) = parse_injection(spec, dim)?;
        replacements.insert(agent - 1, cost);
    }
    let submitted = inject(&costs, &replacements, data.f)?;
    let outcome = resilient_solve_with(&submitted, force)?;
    if as_json {
        return print_json(&json!({
            "estimate": outcome.estimate,
            "chosen": outcome.chosen,
            "scores": outcome
                .scores
                .iter()
                .map(|(t, r)| json!({ "t": t, "r": r }))
                .collect::<Vec<_>>(),
        }));
    }
    println!("estimate = {:?}", outcome.estimate.as_slice());
    println!("chosen S = {}", outcome.chosen);
    for (t, r) in &outcome.scores {
        println!("  r_T {t:<16} {r:.8}");
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, seed: u64, out: Option<PathBuf>, as_json: bool) -> Result<()> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let flags = ExperimentConfig {
        f: args.f,
        faulty_agents: args.faulty,
        fault_type: args.fault,
        fault_std: args.fault_std,
        filter: args.filter,
        eta_c: args.eta_c,
        iterations: args.iterations,
        w_lower: args.w_lower,
        w_upper: args.w_upper,
        x0: args.x0,
        seed: (seed != 0 || base.seed.is_none()).then_some(seed),
        dataset_path: args.dataset,
        header: args.header.then_some(true),
        ..Default::default()
    };
    let config = base.overlay(flags);
    let mut spec = ExperimentSpec::from_config(&config)?;
    spec.out_dir = out.clone();
    let outcome = run_experiment(&spec)?;
    if args.gnuplot {
        if let Some(dir) = &out {
            let file = trajectory_file_name(&outcome.summary.filter, &outcome.summary.fault);
            fs::write(dir.join("plot.gp"), gnuplot_script(&[file]))?;
        }
    }
    if as_json {
        return print_json(&serde_json::to_value(&outcome.summary)?);
    }
    print_table_header();
    print_table_row(&outcome.summary);
    Ok(())
}

fn print_table_header() {
    println!("{:<8} {:<18} {:<30} {:>12}", "filter", "fault", "x_out", "dist to x_H");
}

fn print_table_row(r: &SummaryRecord) {
    let x: Vec<String> = r.x_out.iter().map(|v| format!("{v:.4}")).collect();
    println!("{:<8} {:<18} {:<30} {:>12.4e}", r.filter, r.fault, format!("({})", x.join(", ")), r.dist_to_xh);
}

fn cmd_generate(n: usize, d: usize, noise_std: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let data = generate_synthetic(n, d, noise_std, seed)?;
    match out {
        Some(path) => write_dataset(path, &data.costs),
        None => {
            print!("{}", render_dataset(&data.costs));
            Ok(())
        }
    }
}

fn cmd_table1(
    costs: &[QuadraticCost],
    init: Init,
    seeds: u64,
    gnuplot: bool,
    seed: u64,
    out: Option<&Path>,
    as_json: bool,
) -> Result<()> {
    let x0 = match init {
        Init::Reference => REFERENCE_X0.to_vec(),
        Init::Origin => vec![0.0; costs[0].row().dim()],
    };
    let runs = filter_comparison(costs, &x0, seed)?;
    let seed_list: Vec<u64> = (0..seeds).collect();
    let mut sweep = random_fault_sweep(costs, &x0, FilterKind::Cge, &seed_list)?;
    sweep.extend(random_fault_sweep(costs, &x0, FilterKind::Cwtm, &seed_list)?);
    let records: Vec<SummaryRecord> = runs.iter().map(|r| r.outcome.summary.clone()).collect();

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for run in &runs {
            let s = &run.outcome.summary;
            let file = trajectory_file_name(&s.filter, &s.fault);
            fs::write(dir.join(&file), run.outcome.trajectory.to_csv())?;
            files.push(file);
        }
        let first = &runs[0];
        let n = costs.len();
        let honest = AgentSet::new(first.spec.faulty.clone()).complement(n);
        let region = BoxRegion::hypercube(x0.len(), first.spec.w_lower, first.spec.w_upper)?;
        let diag = diagnostics(costs, first.spec.f, &honest, &region, seed)?;
        write_summary(dir, &records, &diag, Some(&sweep))?;
        if gnuplot {
            fs::write(dir.join("plot.gp"), gnuplot_script(&files))?;
        }
    }

    if as_json {
        return print_json(&json!({ "records": records, "random_seed_sweep": sweep }));
    }
    print_table_header();
    for r in &records {
        print_table_row(r);
    }
    for filter in [FilterKind::Cge, FilterKind::Cwtm] {
        let mut d: Vec<f64> = sweep.iter().filter(|r| r.filter == filter.name()).map(|r| r.dist_to_xh).collect();
        d.sort_by(f64::total_cmp);
        if let (Some(lo), Some(hi)) = (d.first(), d.last()) {
            println!(
                "{filter} random fault over {} seeds: median {:.4e}, range [{lo:.4e}, {hi:.4e}]",
                d.len(),
                d[d.len() / 2]
            );
        }
    }
    if let Some(eps) = records.first().and_then(|r| r.epsilon) {
        println!("epsilon = {eps:.6}, 2 epsilon = {:.6}", 2.0 * eps);
    }
    Ok(())
}
