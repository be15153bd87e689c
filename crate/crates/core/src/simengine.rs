//! Synchronous server-based distributed gradient descent with injected
//! Byzantine faults.
//!
//! Every round `t` the server broadcasts `x^t`, each agent answers with a
//! gradient (honest agents send `grad Q_i(x^t)`, faulty ones whatever their
//! [`FaultBehavior`] dictates), the server applies a gradient filter, and the
//! estimate moves to
//!
//! ```text
//! x^{t+1} = proj_W(x^t - eta_t * filter(g_1^t, ..., g_n^t)),   eta_t = c / (t + 1)
//! ```
//!
//! with `W` an axis-aligned box. Runs are deterministic: each agent draws from
//! its own ChaCha stream keyed by the master seed and the agent's original id,
//! so removing an agent does not shift anyone else's draws.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::costmodel::{aggregate_minimizer, CostFunction, QuadraticCost};
use crate::dataset::format_float;
use crate::error::{Error, Result};
use crate::filters::{FilterKind, GradientBundle};
use crate::vector::{AgentSet, Vector};

/// Signature of a user-supplied fault: `(x^t, true gradient, round, rng)`.
pub type FaultFn = dyn Fn(&Vector, &Vector, usize, &mut ChaCha20Rng) -> Vector + Send + Sync;

#[derive(Clone)]
pub enum FaultBehavior {
    Honest,
    /// Sends the negated true gradient.
    GradientReverse,
    /// Sends a fresh isotropic Gaussian vector with mean 0 each round.
    Gaussian { std: f64 },
    Custom(Arc<FaultFn>),
}

impl FaultBehavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, FaultBehavior::Honest)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FaultBehavior::Honest => "honest",
            FaultBehavior::GradientReverse => "gradient-reverse",
            FaultBehavior::Gaussian { .. } => "random",
            FaultBehavior::Custom(_) => "custom",
        }
    }

    /// Parses `honest`, `gradient-reverse`/`reverse`, or `random`/`gaussian`
    /// (the latter using `std`).
    pub fn parse(name: &str, std: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "honest" | "none" => Ok(FaultBehavior::Honest),
            "gradient-reverse" | "gradient_reverse" | "reverse" => Ok(FaultBehavior::GradientReverse),
            "random" | "gaussian" | "gaussian_random" => Ok(FaultBehavior::Gaussian { std }),
            other => Err(Error::InvalidConfig(format!("unknown fault type {other:?}"))),
        }
    }
}

impl fmt::Debug for FaultBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultBehavior::Honest => write!(f, "Honest"),
            FaultBehavior::GradientReverse => write!(f, "GradientReverse"),
            FaultBehavior::Gaussian { std } => write!(f, "Gaussian {{ std: {std} }}"),
            FaultBehavior::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// The constraint set `W = [lower_1, upper_1] x ... x [lower_d, upper_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lower: Vector,
    upper: Vector,
}

impl BoxRegion {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        upper.check_dim(lower.dim())?;
        if lower.dim() == 0 {
            return Err(Error::Empty("box region"));
        }
        if let Some(k) = (0..lower.dim()).find(|&k| lower[k] >= upper[k]) {
            return Err(Error::InvalidConfig(format!(
                "box bounds must satisfy lower < upper, coordinate {} has [{}, {}]",
                k + 1,
                lower[k],
                upper[k]
            )));
        }
        Ok(BoxRegion { lower, upper })
    }

    pub fn hypercube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        BoxRegion::new(Vector::new(vec![lower; dim])?, Vector::new(vec![upper; dim])?)
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.dim() == self.dim() && (0..self.dim()).all(|k| self.lower[k] <= x[k] && x[k] <= self.upper[k])
    }
}

/// Euclidean projection onto a box, which is a coordinate-wise clamp.
pub fn project_box(x: &Vector, region: &BoxRegion) -> Vector {
    Vector::from_raw(
        x.iter()
            .enumerate()
            .map(|(k, v)| v.clamp(region.lower[k], region.upper[k]))
            .collect(),
    )
}

/// Diminishing step sizes `eta_t = c / (t + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    c: f64,
}

impl StepSchedule {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("step constant must be positive, got {c}")));
        }
        Ok(StepSchedule { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn step(&self, t: usize) -> f64 {
        self.c / (t as f64 + 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub f: usize,
    pub behaviors: Vec<FaultBehavior>,
    pub filter: FilterKind,
    pub schedule: StepSchedule,
    pub region: BoxRegion,
    pub x0: Vector,
    pub iterations: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Starts a configuration for `n` agents in dimension `dim`: everyone
    /// honest, averaging filter, `eta_t = 1.5 / (t + 1)`, `W = [-1000, 1000]^d`,
    /// `x^0 = 0`, 500 rounds, seed 0.
    pub fn builder(n: usize, f: usize, dim: usize) -> SimConfigBuilder {
        SimConfigBuilder {
            n,
            f,
            dim,
            behaviors: vec![FaultBehavior::Honest; n],
            faults: Vec::new(),
            filter: FilterKind::Average,
            step_c: 1.5,
            region: None,
            x0: None,
            iterations: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n <= 2 * self.f {
            return Err(Error::FaultBound { n: self.n, f: self.f });
        }
        if self.behaviors.len() != self.n {
            return Err(Error::InvalidConfig(format!(
                "{} behaviors for {} agents",
                self.behaviors.len(),
                self.n
            )));
        }
        let faulty = self.behaviors.iter().filter(|b| !b.is_honest()).count();
        if faulty > self.f {
            return Err(Error::InvalidConfig(format!(
                "{faulty} faulty agents exceed the fault bound f = {}",
                self.f
            )));
        }
        for b in &self.behaviors {
            if let FaultBehavior::Gaussian { std } = b {
                if !(*std > 0.0 && std.is_finite()) {
                    return Err(Error::InvalidConfig(format!("gaussian fault std must be positive, got {std}")));
                }
            }
        }
        self.x0.check_dim(self.region.dim())?;
        if !self.region.contains(&self.x0) {
            return Err(Error::InvalidConfig("x0 lies outside the box region".into()));
        }
        if self.filter == FilterKind::Cwtm && self.n <= 2 * self.f {
            return Err(Error::FilterPrecondition("cwtm needs n > 2f".into()));
        }
        Ok(())
    }

    /// Agents configured as honest.
    pub fn honest_set(&self) -> AgentSet {
        AgentSet::new(
            self.behaviors
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_honest())
                .map(|(i, _)| i)
                .collect(),
        )
    }
}

pub struct SimConfigBuilder {
    n: usize,
    f: usize,
    dim: usize,
    behaviors: Vec<FaultBehavior>,
    faults: Vec<(usize, FaultBehavior)>,
    filter: FilterKind,
    step_c: f64,
    region: Option<BoxRegion>,
    x0: Option<Vector>,
    iterations: usize,
    seed: u64,
}

impl SimConfigBuilder {
    /// Makes agent `agent` (zero-based) faulty.
    pub fn fault(mut self, agent: usize, behavior: FaultBehavior) -> Self {
        self.faults.push((agent, behavior));
        self
    }

    pub fn filter(mut self, filter: FilterKind) -> Self {
        self.filter = filter;
        self
    }

    pub fn step_constant(mut self, c: f64) -> Self {
        self.step_c = c;
        self
    }

    pub fn region(mut self, region: BoxRegion) -> Self {
        self.region = Some(region);
        self
    }

    pub fn x0(mut self, x0: Vector) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(self) -> Result<SimConfig> {
        let mut behaviors = self.behaviors;
        for (agent, b) in self.faults {
            *behaviors.get_mut(agent).ok_or(Error::UnknownAgent(agent + 1))? = b;
        }
        let region = match self.region {
            Some(r) => r,
            None => BoxRegion::hypercube(self.dim, -1000.0, 1000.0)?,
        };
        let config = SimConfig {
            n: self.n,
            f: self.f,
            behaviors,
            filter: self.filter,
            schedule: StepSchedule::new(self.step_c)?,
            x0: self.x0.unwrap_or_else(|| Vector::zeros(self.dim)),
            region,
            iterations: self.iterations,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub x: Vector,
    /// Aggregate honest cost at `x^t`.
    pub loss: f64,
    /// `||x^t - x_H||`.
    pub distance: f64,
    /// `<x^t - x_H, filter output>`.
    pub phi: f64,
    pub filter_norm: f64,
}

/// One record per round, `x^0` through `x^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub reference: Vector,
    pub records: Vec<RoundRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("trajectory always holds x^0")
    }

    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=dim).map(|k| format!("x_{k}")));
        cols.extend(["loss", "distance", "phi", "filter_norm"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Trajectory::csv_header(self.reference.dim());
        out.push('\n');
        for r in &self.records {
            let mut fields = vec![r.t.to_string()];
            fields.extend(r.x.iter().map(|v| format_float(*v)));
            fields.extend([r.loss, r.distance, r.phi, r.filter_norm].map(format_float));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// `<x^t - x_ref, filter output>`.
pub fn phi(x: &Vector, reference: &Vector, filter_output: &Vector) -> Result<f64> {
    reference.check_dim(x.dim())?;
    filter_output.check_dim(x.dim())?;
    Ok((x - reference).dot(filter_output))
}

struct Agent {
    id: usize,
    cost: QuadraticCost,
    behavior: FaultBehavior,
    rng: ChaCha20Rng,
}

impl Agent {
    fn respond(&mut self, x: &Vector, round: usize) -> Result<Vector> {
        let truth = self.cost.gradient(x)?;
        Ok(match &self.behavior {
            FaultBehavior::Honest => truth,
            FaultBehavior::GradientReverse => -&truth,
            FaultBehavior::Gaussian { std } => Vector::from_raw(
                (0..x.dim())
                    .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng))
                    .collect(),
            ),
            FaultBehavior::Custom(fault) => fault(x, &truth, round, &mut self.rng),
        })
    }
}

/// A DGD run in progress. [`Simulation::eliminate_agent`] is the hook for
/// removing an unresponsive agent between construction and [`Simulation::run`].
pub struct Simulation {
    config: SimConfig,
    agents: Vec<Agent>,
    f: usize,
    honest: AgentSet,
    honest_costs: Vec<QuadraticCost>,
    reference: Vector,
}

impl Simulation {
    pub fn new(config: SimConfig, costs: &[QuadraticCost]) -> Result<Self> {
        config.validate()?;
        if costs.len() != config.n {
            return Err(Error::InvalidConfig(format!(
                "{} costs for n = {} agents",
                costs.len(),
                config.n
            )));
        }
        for c in costs {
            c.row().check_dim(config.region.dim())?;
        }
        let honest = config.honest_set();
        let honest_costs: Vec<QuadraticCost> = honest.members().iter().map(|&i| costs[i].clone()).collect();
        let reference = aggregate_minimizer(&honest_costs)?;
        let agents = costs
            .iter()
            .zip(&config.behaviors)
            .enumerate()
            .map(|(id, (cost, behavior))| {
                let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
                rng.set_stream(id as u64);
                Agent {
                    id,
                    cost: cost.clone(),
                    behavior: behavior.clone(),
                    rng,
                }
            })
            .collect();
        Ok(Simulation {
            f: config.f,
            config,
            agents,
            honest,
            honest_costs,
            reference,
        })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// Original (construction-time, zero-based) ids of the agents still
    /// present, in their current index order.
    pub fn agent_ids(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.id).collect()
    }

    /// The honest agents that define the reference point and the loss.
    pub fn honest_set(&self) -> &AgentSet {
        &self.honest
    }

    /// Minimizer of the honest agents' aggregate cost.
    pub fn reference(&self) -> &Vector {
        &self.reference
    }

    /// Removes the agent with original id `id`, decrementing both `n` and
    /// `f`; the remaining agents keep their relative order. The loss and
    /// distance reference stays the one computed at construction.
    pub fn eliminate_agent(&mut self, id: usize) -> Result<()> {
        if self.f == 0 {
            return Err(Error::InvalidConfig("cannot eliminate an agent when f = 0".into()));
        }
        let pos = self
            .agents
            .iter()
            .position(|a| a.id == id)
            .ok_or(Error::UnknownAgent(id + 1))?;
        self.agents.remove(pos);
        self.f -= 1;
        Ok(())
    }

    fn filtered_direction(&mut self, x: &Vector, round: usize) -> Result<Vector> {
        let gradients = self
            .agents
            .iter_mut()
            .map(|a| a.respond(x, round))
            .collect::<Result<Vec<_>>>()?;
        let bundle = GradientBundle::new(gradients, self.f)?;
        self.config.filter.apply(&bundle)
    }

    fn honest_loss(&self, x: &Vector) -> Result<f64> {
        self.honest_costs.iter().map(|c| c.value(x)).sum()
    }

    pub fn run(mut self) -> Result<Trajectory> {
        let iterations = self.config.iterations;
        let mut x = self.config.x0.clone();
        let mut records = Vec::with_capacity(iterations + 1);
        for t in 0..=iterations {
            let direction = self.filtered_direction(&x, t)?;
            records.push(RoundRecord {
                t,
                loss: self.honest_loss(&x)?,
                distance: x.distance(&self.reference),
                phi: phi(&x, &self.reference, &direction)?,
                filter_norm: direction.norm(),
                x: x.clone(),
            });
            if t == iterations {
                break;
            }
            let step = self.config.schedule.step(t);
            let next = project_box(&(&x - &direction.scale(step)), &self.config.region);
            if !next.is_finite() {
                return Err(Error::NonFiniteIterate { round: t + 1 });
            }
            x = next;
        }
        Ok(Trajectory {
            reference: self.reference,
            records,
        })
    }
}

/// Runs a full simulation of `config` over `costs`.
pub fn run_dgd(config: &SimConfig, costs: &[QuadraticCost]) -> Result<Trajectory> {
    Simulation::new(config.clone(), costs)?.run()
}
