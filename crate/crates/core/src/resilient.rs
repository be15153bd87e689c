//! Exhaustive `(f, 2 eps)`-resilient solver over submitted cost functions.
//!
//! The server receives one cost per agent, up to `f` of them arbitrary. For
//! every candidate set `T` of `n - f` agents it computes the minimizer `x_T`
//! and the score
//!
//! ```text
//! r_T = max_{T_hat in T, |T_hat| = n - 2f} dist(x_T, argmin Q_{T_hat})
//! ```
//!
//! and outputs `x_S` for the set `S` of smallest score (lexicographically
//! smallest `S` on ties). If the honest costs have `(2f, eps)`-redundancy, the
//! output is within `2 eps` of the minimizer of every `n - f` honest agents.
//!
//! Inner subsets have size exactly `n - 2f`, unlike [`crate::redundancy`],
//! which also visits the intermediate sizes. The cost is exponential in `n`;
//! the same agent limit as redundancy measurement applies.

use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;

use crate::costmodel::{CompositeCost, LeastSquaresTerms};
use crate::error::{Error, Result};
use crate::redundancy::{check_enumeration, minimizer_table};
use crate::vector::{AgentSet, Vector};

/// The cost functions as received by the server, one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmittedCosts {
    costs: Vec<CompositeCost>,
    f: usize,
}

impl SubmittedCosts {
    pub fn new(costs: Vec<CompositeCost>, f: usize) -> Result<Self> {
        let n = costs.len();
        if n <= 2 * f {
            return Err(Error::FaultBound { n, f });
        }
        Ok(SubmittedCosts { costs, f })
    }

    pub fn costs(&self) -> &[CompositeCost] {
        &self.costs
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }
}

#[derive(Debug, Clone)]
pub struct ResilientOutcome {
    pub estimate: Vector,
    pub chosen: AgentSet,
    /// `r_T` for every candidate set `T`.
    pub scores: BTreeMap<AgentSet, f64>,
}

pub fn resilient_solve(submitted: &SubmittedCosts) -> Result<ResilientOutcome> {
    resilient_solve_with(submitted, false)
}

/// As [`resilient_solve`]; `force` lifts the agent-count limit.
pub fn resilient_solve_with(submitted: &SubmittedCosts, force: bool) -> Result<ResilientOutcome> {
    let (n, f) = (submitted.n(), submitted.f());
    check_enumeration(n, f, force)?;
    let costs = submitted.costs();
    let candidate_size = n - f;
    let inner_size = n - 2 * f;

    let minimizers = minimizer_table(costs, &AgentSet::all(n), [inner_size, candidate_size])?;

    let candidates: Vec<AgentSet> = (0..n).combinations(candidate_size).map(AgentSet::new).collect();
    let scored: Vec<(AgentSet, f64)> = candidates
        .into_par_iter()
        .map(|t| {
            let x_t = &minimizers[&t];
            let r = t
                .members()
                .iter()
                .copied()
                .combinations(inner_size)
                .map(|sub| x_t.distance(&minimizers[&AgentSet::new(sub)]))
                .fold(0.0_f64, f64::max);
            (t, r)
        })
        .collect();

    let mut best: Option<(f64, &AgentSet)> = None;
    for (t, r) in &scored {
        // `scored` is in lexicographic order, so strict improvement keeps the
        // smallest set among equal scores.
        if best.is_none_or(|(br, _)| *r < br) {
            best = Some((*r, t));
        }
    }
    let chosen = best.map(|(_, t)| t.clone()).ok_or(Error::Empty("candidate sets"))?;
    Ok(ResilientOutcome {
        estimate: minimizers[&chosen].clone(),
        chosen,
        scores: scored.into_iter().collect(),
    })
}

/// Honest costs with selected agents' submissions replaced.
pub fn inject<C: LeastSquaresTerms>(
    honest: &[C],
    replacements: &BTreeMap<usize, CompositeCost>,
    f: usize,
) -> Result<SubmittedCosts> {
    let mut costs: Vec<CompositeCost> = honest
        .iter()
        .map(|c| CompositeCost::new(c.terms().to_vec()))
        .collect::<Result<_>>()?;
    for (&agent, cost) in replacements {
        let slot = costs.get_mut(agent).ok_or(Error::UnknownAgent(agent + 1))?;
        *slot = cost.clone();
    }
    SubmittedCosts::new(costs, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{subset_minimizer, QuadraticCost};
    use crate::dataset::{regression6, regression6_scaled_noise};
    use crate::redundancy::measure_redundancy_among;

    fn scalar(min: f64) -> CompositeCost {
        QuadraticCost::from_slice(&[1.0], min).unwrap().into()
    }

    #[test]
    fn noise_free_recovers_ground_truth() {
        let costs = regression6_scaled_noise(0.0);
        let submitted = inject(&costs, &BTreeMap::new(), 1).unwrap();
        let out = resilient_solve(&submitted).unwrap();
        assert!(out.estimate.approx_eq(&Vector::new(vec![1.0, 1.0]).unwrap(), 1e-12));
        assert!(out.scores.values().all(|r| *r < 1e-12));
    }

    #[test]
    fn adversarial_agent_one_stays_within_twice_epsilon() {
        let costs = regression6();
        let mut replacements = BTreeMap::new();
        let scale = 5.0;
        replacements.insert(
            0,
            CompositeCost::new(vec![
                QuadraticCost::from_slice(&[1.0, 0.0], 10.0).unwrap(),
                QuadraticCost::from_slice(&[0.0, scale], 10.0 * scale).unwrap(),
            ])
            .unwrap(),
        );
        let submitted = inject(&costs, &replacements, 1).unwrap();
        let out = resilient_solve(&submitted).unwrap();
        let honest = AgentSet::from_labels(&[2, 3, 4, 5, 6]).unwrap();
        let x_h = subset_minimizer(&costs, &honest).unwrap();
        assert!(out.estimate.distance(&x_h) <= 2.0 * 0.0890);
    }

    #[test]
    fn scalar_outlier_is_excluded() {
        let costs = vec![scalar(0.0), scalar(0.1), scalar(0.2), scalar(100.0)];
        let out = resilient_solve(&SubmittedCosts::new(costs.clone(), 1).unwrap()).unwrap();
        assert!(!out.chosen.contains(3));

        // Full enumeration oracle: r_T for each triple is the largest distance
        // from the triple's mean to a pair mean.
        let mean = |ms: &[f64]| ms.iter().sum::<f64>() / ms.len() as f64;
        let minima = [0.0, 0.1, 0.2, 100.0];
        let mut oracle_best = (f64::INFINITY, vec![]);
        for t in (0..4).combinations(3) {
            let xt = mean(&t.iter().map(|&i| minima[i]).collect::<Vec<_>>());
            let r = t
                .iter()
                .copied()
                .combinations(2)
                .map(|p| (xt - mean(&[minima[p[0]], minima[p[1]]])).abs())
                .fold(0.0, f64::max);
            if r < oracle_best.0 {
                oracle_best = (r, t);
            }
        }
        assert_eq!(out.chosen.members(), oracle_best.1.as_slice());

        let honest = AgentSet::new(vec![0, 1, 2]);
        let eps = measure_redundancy_among(&costs, 1, &honest, false).unwrap().epsilon;
        let x_honest = subset_minimizer(&costs, &honest).unwrap();
        assert!(out.estimate.distance(&x_honest) <= 2.0 * eps + 1e-12);
    }

    #[test]
    fn deterministic() {
        let costs: Vec<CompositeCost> = [0.3, -1.0, 2.0, 0.5, 7.0].iter().map(|&m| scalar(m)).collect();
        let s = SubmittedCosts::new(costs, 2).unwrap();
        let a = resilient_solve(&s).unwrap();
        let b = resilient_solve(&s).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn ties_choose_lexicographically_smallest_set() {
        let costs: Vec<CompositeCost> = (0..5).map(|_| scalar(1.0)).collect();
        let out = resilient_solve(&SubmittedCosts::new(costs, 1).unwrap()).unwrap();
        assert_eq!(out.chosen, AgentSet::new(vec![0, 1, 2, 3]));
    }

    #[test]
    fn guards() {
        let costs: Vec<CompositeCost> = (0..4).map(|i| scalar(i as f64)).collect();
        assert!(matches!(SubmittedCosts::new(costs, 2), Err(Error::FaultBound { .. })));
    }
}
