//! Experiment orchestration: configuration files, single runs with result
//! persistence, and the reference linear-regression comparison of the CGE and
//! CWTM filters.
//!
//! Configuration is flat TOML:
//!
//! ```toml
//! dataset_path = "data/regression6.csv"
//! f = 1
//! faulty_agents = [1]          # one-based
//! fault_type = "gradient-reverse"
//! fault_std = 200.0
//! filter = "cge"
//! eta_c = 1.5
//! iterations = 500
//! w_lower = -1000.0
//! w_upper = 1000.0
//! x0 = [-0.0085, -0.5643]
//! seed = 0
//! ```
//!
//! Instead of `dataset_path`, a synthetic instance is described by `n`, `d`,
//! `noise_std` (and optionally `synthetic_seed`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costmodel::{curvature, QuadraticCost};
use crate::dataset::{generate_synthetic, load_dataset};
use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::redundancy::{measure_redundancy, MAX_ENUMERATED_AGENTS};
use crate::simengine::{run_dgd, BoxRegion, FaultBehavior, SimConfig, Trajectory};
use crate::theory::{cge_bound, cwtm_bound, estimate_lambda, CgeBound, CwtmBound, DEFAULT_LAMBDA_SAMPLES};
use crate::vector::{AgentSet, Vector};

/// Initial estimate used for the reference filter comparison.
pub const REFERENCE_X0: [f64; 2] = [-0.0085, -0.5643];
/// Standard deviation of the random fault in the reference comparison.
pub const REFERENCE_FAULT_STD: f64 = 200.0;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub noise_std: Option<f64>,
    pub synthetic_seed: Option<u64>,
    pub f: Option<usize>,
    pub faulty_agents: Option<Vec<usize>>,
    pub fault_type: Option<String>,
    pub fault_std: Option<f64>,
    pub filter: Option<String>,
    pub eta_c: Option<f64>,
    pub iterations: Option<usize>,
    pub w_lower: Option<f64>,
    pub w_upper: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub dataset_path: Option<PathBuf>,
    pub header: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        // Relative dataset paths resolve against the config file's directory.
        if let (Some(ds), Some(dir)) = (&config.dataset_path, path.parent()) {
            if ds.is_relative() && !ds.exists() {
                config.dataset_path = Some(dir.join(ds));
            }
        }
        Ok(config)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(self, other: ExperimentConfig) -> ExperimentConfig {
        macro_rules! pick {
            ($($field:ident),*) => {
                ExperimentConfig { $($field: other.$field.or(self.$field)),* }
            };
        }
        pick!(
            n, d, noise_std, synthetic_seed, f, faulty_agents, fault_type, fault_std, filter, eta_c,
            iterations, w_lower, w_upper, x0, seed, dataset_path, header
        )
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Dataset { path: PathBuf, header: bool },
    Synthetic { n: usize, d: usize, noise_std: f64, seed: u64 },
    Inline(Vec<QuadraticCost>),
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<QuadraticCost>> {
        match self {
            DataSource::Dataset { path, header } => load_dataset(path, *header),
            DataSource::Synthetic { n, d, noise_std, seed } => {
                Ok(generate_synthetic(*n, *d, *noise_std, *seed)?.costs)
            }
            DataSource::Inline(costs) => Ok(costs.clone()),
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub f: usize,
    /// Zero-based ids of the faulty agents.
    pub faulty: Vec<usize>,
    pub fault: FaultBehavior,
    pub filter: FilterKind,
    pub eta_c: f64,
    pub iterations: usize,
    pub w_lower: f64,
    pub w_upper: f64,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Defaults: `f = 1`, agent 1 faulty with gradient reversal, CGE,
    /// `eta_t = 1.5 / (t + 1)`, 500 rounds, `W = [-1000, 1000]^d`, `x^0 = 0`.
    pub fn new(source: DataSource) -> Self {
        ExperimentSpec {
            source,
            f: 1,
            faulty: vec![0],
            fault: FaultBehavior::GradientReverse,
            filter: FilterKind::Cge,
            eta_c: 1.5,
            iterations: 500,
            w_lower: -1000.0,
            w_upper: 1000.0,
            x0: None,
            seed: 0,
            out_dir: None,
        }
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let source = match (&config.dataset_path, config.noise_std) {
            (Some(path), None) => DataSource::Dataset {
                path: path.clone(),
                header: config.header.unwrap_or(false),
            },
            (None, Some(noise_std)) => DataSource::Synthetic {
                n: config.n.ok_or_else(|| Error::InvalidConfig("synthetic data needs n".into()))?,
                d: config.d.ok_or_else(|| Error::InvalidConfig("synthetic data needs d".into()))?,
                noise_std,
                seed: config.synthetic_seed.or(config.seed).unwrap_or(0),
            },
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "specify either dataset_path or synthetic parameters, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "no data: set dataset_path or noise_std with n and d".into(),
                ))
            }
        };
        let mut spec = ExperimentSpec::new(source);
        if let Some(f) = config.f {
            spec.f = f;
        }
        if let Some(labels) = &config.faulty_agents {
            spec.faulty = AgentSet::from_labels(labels)?.members().to_vec();
        }
        let std = config.fault_std.unwrap_or(REFERENCE_FAULT_STD);
        if let Some(name) = &config.fault_type {
            spec.fault = FaultBehavior::parse(name, std)?;
        }
        if let Some(name) = &config.filter {
            spec.filter = name.parse()?;
        }
        spec.eta_c = config.eta_c.unwrap_or(spec.eta_c);
        spec.iterations = config.iterations.unwrap_or(spec.iterations);
        spec.w_lower = config.w_lower.unwrap_or(spec.w_lower);
        spec.w_upper = config.w_upper.unwrap_or(spec.w_upper);
        spec.x0 = config.x0.clone();
        spec.seed = config.seed.unwrap_or(0);
        Ok(spec)
    }

    pub fn sim_config(&self, n: usize, dim: usize) -> Result<SimConfig> {
        let region = BoxRegion::hypercube(dim, self.w_lower, self.w_upper)?;
        let mut builder = SimConfig::builder(n, self.f, dim)
            .filter(self.filter)
            .step_constant(self.eta_c)
            .region(region)
            .iterations(self.iterations)
            .seed(self.seed);
        if let Some(x0) = &self.x0 {
            builder = builder.x0(Vector::new(x0.clone())?);
        }
        for &agent in &self.faulty {
            builder = builder.fault(agent, self.fault.clone());
        }
        builder.build()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub filter: String,
    pub fault: String,
    pub x_out: Vector,
    pub x_ref: Vector,
    pub dist_to_xh: f64,
    /// Redundancy of the whole instance; absent when the enumeration is too
    /// large to run.
    pub epsilon: Option<f64>,
    pub rounds: usize,
    pub seed: u64,
}

/// Coefficients and resilience bounds for the honest agents of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub mu: f64,
    pub gamma: f64,
    pub mu_without_hessian_factor: f64,
    pub gamma_without_hessian_factor: f64,
    pub epsilon: Option<f64>,
    pub two_epsilon: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub cge: Option<CgeBound>,
    pub cwtm: Option<CwtmBound>,
}

pub fn diagnostics(costs: &[QuadraticCost], f: usize, honest: &AgentSet, region: &BoxRegion, seed: u64) -> Result<Diagnostics> {
    let c = curvature(costs, honest)?;
    let half = c.without_hessian_factor();
    let epsilon = instance_epsilon(costs, f)?;
    let honest_costs: Vec<QuadraticCost> = honest.members().iter().map(|&i| costs[i].clone()).collect();
    let lambda_hat = if honest_costs.len() >= 2 {
        Some(estimate_lambda(&honest_costs, region, DEFAULT_LAMBDA_SAMPLES, seed)?)
    } else {
        None
    };
    let eps = epsilon.unwrap_or(0.0);
    let n = costs.len();
    let cge = cge_bound(n, f, c.mu, c.gamma, eps).ok();
    let cwtm = lambda_hat.and_then(|l| cwtm_bound(region.dim(), n, c.mu, c.gamma, l, eps).ok());
    Ok(Diagnostics {
        mu: c.mu,
        gamma: c.gamma,
        mu_without_hessian_factor: half.mu,
        gamma_without_hessian_factor: half.gamma,
        epsilon,
        two_epsilon: epsilon.map(|e| 2.0 * e),
        lambda_hat,
        cge,
        cwtm,
    })
}

fn instance_epsilon(costs: &[QuadraticCost], f: usize) -> Result<Option<f64>> {
    if costs.len() > MAX_ENUMERATED_AGENTS {
        return Ok(None);
    }
    Ok(Some(measure_redundancy(costs, f, false)?.epsilon))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: SummaryRecord,
    pub trajectory: Trajectory,
}

pub fn fault_label(spec: &ExperimentSpec) -> &'static str {
    if spec.faulty.is_empty() {
        "fault-free"
    } else {
        spec.fault.name()
    }
}

pub fn trajectory_file_name(filter: &str, fault: &str) -> String {
    format!("trajectory_{filter}_{fault}.csv")
}

/// Runs one experiment. With an output directory set, writes the trajectory
/// CSV and a `summary.json` holding this run's record and diagnostics.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let costs = spec.source.load()?;
    let dim = costs[0].row().dim();
    let config = spec.sim_config(costs.len(), dim)?;
    let trajectory = run_dgd(&config, &costs)?;
    let last = trajectory.last();
    let summary = SummaryRecord {
        filter: spec.filter.to_string(),
        fault: fault_label(spec).to_string(),
        x_out: last.x.clone(),
        x_ref: trajectory.reference.clone(),
        dist_to_xh: last.x.distance(&trajectory.reference),
        epsilon: instance_epsilon(&costs, spec.f)?,
        rounds: spec.iterations,
        seed: spec.seed,
    };
    if let Some(dir) = &spec.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(trajectory_file_name(&summary.filter, &summary.fault)),
            trajectory.to_csv(),
        )?;
        let diag = diagnostics(&costs, spec.f, &config.honest_set(), &config.region, spec.seed)?;
        write_summary(dir, std::slice::from_ref(&summary), &diag, None)?;
    }
    Ok(ExperimentOutcome { summary, trajectory })
}

pub fn write_summary(
    dir: &Path,
    records: &[SummaryRecord],
    diagnostics: &Diagnostics,
    seed_sweep: Option<&[SummaryRecord]>,
) -> Result<()> {
    let mut doc = serde_json::json!({
        "records": records,
        "diagnostics": diagnostics,
    });
    if let Some(sweep) = seed_sweep {
        doc["random_seed_sweep"] = serde_json::to_value(sweep)?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// A gnuplot script drawing loss and distance against the round index for
/// each trajectory file.
pub fn gnuplot_script(files: &[String]) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel 't'\n",
    );
    for (column, title) in [("loss", "loss"), ("distance", "distance")] {
        s.push_str(&format!("set ylabel '{title}'\nset output '{column}.png'\nset terminal pngcairo size 900,600\nplot "));
        let plots: Vec<String> = files
            .iter()
            .map(|f| format!("'{f}' using 1:(column('{column}')) with lines title '{}'", f.trim_end_matches(".csv")))
            .collect();
        s.push_str(&plots.join(", \\\n     "));
        s.push('\n');
    }
    s
}

/// One row of the filter comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub spec: ExperimentSpec,
    pub outcome: ExperimentOutcome,
}

/// The filter comparison on a six-agent-style instance: agent 1 faulty,
/// CGE and CWTM under gradient reversal and Gaussian noise, plus fault-free
/// DGD over the honest agents and unfiltered averaging under each fault.
pub fn filter_comparison(costs: &[QuadraticCost], x0: &[f64], seed: u64) -> Result<Vec<ComparisonRun>> {
    let base = |filter: FilterKind, fault: FaultBehavior| {
        let mut spec = ExperimentSpec::new(DataSource::Inline(costs.to_vec()));
        spec.filter = filter;
        spec.fault = fault;
        spec.x0 = Some(x0.to_vec());
        spec.seed = seed;
        spec
    };
    let mut specs = Vec::new();
    for fault in [
        FaultBehavior::GradientReverse,
        FaultBehavior::Gaussian { std: REFERENCE_FAULT_STD },
    ] {
        for filter in [FilterKind::Cge, FilterKind::Cwtm, FilterKind::Average] {
            specs.push(base(filter, fault.clone()));
        }
    }
    let mut fault_free = base(FilterKind::Average, FaultBehavior::Honest);
    fault_free.source = DataSource::Inline(costs[1..].to_vec());
    fault_free.f = 0;
    fault_free.faulty.clear();
    specs.push(fault_free);

    specs
        .into_iter()
        .map(|spec| {
            let outcome = run_experiment(&spec)?;
            Ok(ComparisonRun { spec, outcome })
        })
        .collect()
}

/// Final distances of `filter` under the Gaussian fault for each seed.
pub fn random_fault_sweep(costs: &[QuadraticCost], x0: &[f64], filter: FilterKind, seeds: &[u64]) -> Result<Vec<SummaryRecord>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut spec = ExperimentSpec::new(DataSource::Inline(costs.to_vec()));
            spec.filter = filter;
            spec.fault = FaultBehavior::Gaussian { std: REFERENCE_FAULT_STD };
            spec.x0 = Some(x0.to_vec());
            spec.seed = seed;
            Ok(run_experiment(&spec)?.summary)
        })
        .collect()
}
