//! Point/set distances and measurement of `(2f, eps)`-redundancy.
//!
//! An instance has `(2f, eps)`-redundancy when, for every set `S` of `n - f`
//! agents and every `S_hat` inside it with `|S_hat| >= n - 2f`, the minimizer
//! sets of the aggregate costs over `S` and over `S_hat` are within Hausdorff
//! distance `eps`. All costs handled here have unique minimizers, so the
//! Hausdorff distance collapses to the distance between two points and the
//! measurement is an exhaustive enumeration.
//!
//! The enumeration performs `C(n, f) * sum_{k <= f} C(n - f, k)` distance
//! evaluations over roughly `sum_{k = n-2f}^{n-f} C(n, k)` distinct minimizer
//! solves (each solve is memoized by subset). It is refused above
//! [`MAX_ENUMERATED_AGENTS`] agents unless forced.
//!
//! This differs from the subset scan in [`crate::resilient`], which compares
//! each `(n - f)`-set only against subsets of size exactly `n - 2f`.

use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;

use crate::costmodel::{subset_minimizer, LeastSquaresTerms};
use crate::error::{Error, Result};
use crate::vector::{AgentSet, Vector};

pub const MAX_ENUMERATED_AGENTS: usize = 20;

/// `dist(x, X) = min_{y in X} ||x - y||`.
pub fn point_set_distance(x: &Vector, set: &[Vector]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("point set"));
    }
    for y in set {
        y.check_dim(x.dim())?;
    }
    Ok(set.iter().map(|y| x.distance(y)).fold(f64::INFINITY, f64::min))
}

/// Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &[Vector], b: &[Vector]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let directed = |from: &[Vector], to: &[Vector]| -> Result<f64> {
        from.iter()
            .map(|x| point_set_distance(x, to))
            .try_fold(0.0_f64, |acc, d| d.map(|d| acc.max(d)))
    };
    Ok(directed(a, b)?.max(directed(b, a)?))
}

#[derive(Debug, Clone)]
pub struct RedundancyReport {
    pub n: usize,
    pub f: usize,
    pub epsilon: f64,
    /// `(S, S_hat)` attaining `epsilon`; the lexicographically smallest pair on
    /// ties.
    pub witness: (AgentSet, AgentSet),
    /// `eps_S` for every `(n - f)`-set `S`.
    pub per_superset: BTreeMap<AgentSet, f64>,
    /// Every minimizer computed during the scan.
    pub minimizers: BTreeMap<AgentSet, Vector>,
}

/// Number of `(S, S_hat)` pairs examined for `n` agents and fault bound `f`.
pub fn enumeration_size(n: usize, f: usize) -> u128 {
    let supersets = binomial(n, f);
    let inner: u128 = (0..=f).map(|k| binomial(n - f, k)).sum();
    supersets * inner
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub(crate) fn check_enumeration(n: usize, f: usize, force: bool) -> Result<()> {
    if n <= 2 * f {
        return Err(Error::FaultBound { n, f });
    }
    if n > MAX_ENUMERATED_AGENTS && !force {
        return Err(Error::TooManyAgents {
            n,
            limit: MAX_ENUMERATED_AGENTS,
        });
    }
    Ok(())
}

/// Solves the minimizer of every subset of `pool` whose size is in `sizes`,
/// in parallel. Errors are reported for the lexicographically first failing
/// subset.
pub(crate) fn minimizer_table<C: LeastSquaresTerms + Sync>(
    costs: &[C],
    pool: &AgentSet,
    sizes: impl IntoIterator<Item = usize>,
) -> Result<BTreeMap<AgentSet, Vector>> {
    let subsets: Vec<AgentSet> = sizes
        .into_iter()
        .flat_map(|k| pool.members().iter().copied().combinations(k).map(AgentSet::new))
        .collect();
    let solved: Vec<(AgentSet, Result<Vector>)> = subsets
        .into_par_iter()
        .map(|s| {
            let x = subset_minimizer(costs, &s);
            (s, x)
        })
        .collect();
    let mut table = BTreeMap::new();
    let mut first_err: Option<(AgentSet, Error)> = None;
    for (s, x) in solved {
        match x {
            Ok(x) => {
                table.insert(s, x);
            }
            Err(e) => {
                if first_err.as_ref().is_none_or(|(fs, _)| s < *fs) {
                    first_err = Some((s, e));
                }
            }
        }
    }
    match first_err {
        Some((_, e)) => Err(e),
        None => Ok(table),
    }
}

/// Measures the redundancy of all `n` agents under fault bound `f`.
pub fn measure_redundancy<C: LeastSquaresTerms + Sync>(costs: &[C], f: usize, force: bool) -> Result<RedundancyReport> {
    measure_redundancy_among(costs, f, &AgentSet::all(costs.len()), force)
}

/// Measures redundancy restricted to the agents in `honest`: only sets
/// `S` of size `n - f` drawn from `honest` are examined, with `n` the total
/// number of agents.
pub fn measure_redundancy_among<C: LeastSquaresTerms + Sync>(
    costs: &[C],
    f: usize,
    honest: &AgentSet,
    force: bool,
) -> Result<RedundancyReport> {
    let n = costs.len();
    check_enumeration(n, f, force)?;
    if let Some(&last) = honest.members().last() {
        if last >= n {
            return Err(Error::UnknownAgent(last + 1));
        }
    }
    let superset_size = n - f;
    let min_size = n - 2 * f;
    if honest.len() < superset_size {
        return Err(Error::InvalidConfig(format!(
            "{} honest agents cannot form a set of {superset_size}",
            honest.len()
        )));
    }

    let minimizers = minimizer_table(costs, honest, min_size..=superset_size)?;

    let supersets: Vec<AgentSet> = honest
        .members()
        .iter()
        .copied()
        .combinations(superset_size)
        .map(AgentSet::new)
        .collect();

    // Per superset: eps_S and its lexicographically smallest maximizing S_hat.
    let scored: Vec<(AgentSet, f64, AgentSet)> = supersets
        .into_par_iter()
        .map(|s| {
            let x_s = &minimizers[&s];
            let mut best = (0.0_f64, s.clone());
            for k in min_size..=superset_size {
                for sub in s.members().iter().copied().combinations(k) {
                    let sub = AgentSet::new(sub);
                    let d = x_s.distance(&minimizers[&sub]);
                    if d > best.0 || (d == best.0 && sub < best.1) {
                        best = (d, sub);
                    }
                }
            }
            (s, best.0, best.1)
        })
        .collect();

    let mut per_superset = BTreeMap::new();
    let mut best: Option<(f64, AgentSet, AgentSet)> = None;
    for (s, eps_s, sub) in scored {
        per_superset.insert(s.clone(), eps_s);
        let better = match &best {
            None => true,
            Some((e, bs, bsub)) => eps_s > *e || (eps_s == *e && (&s, &sub) < (bs, bsub)),
        };
        if better {
            best = Some((eps_s, s, sub));
        }
    }
    let (epsilon, s, sub) = best.ok_or(Error::Empty("agent set"))?;
    Ok(RedundancyReport {
        n,
        f,
        epsilon,
        witness: (s, sub),
        per_superset,
        minimizers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::QuadraticCost;
    use crate::dataset::{regression6, regression6_scaled_noise};

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn point_set_distance_examples() {
        assert_eq!(point_set_distance(&v(&[0.0, 0.0]), &[v(&[3.0, 4.0])]).unwrap(), 5.0);
        let x = v(&[0.3, -2.0]);
        assert_eq!(point_set_distance(&x, &[v(&[9.0, 9.0]), x.clone()]).unwrap(), 0.0);
        assert_eq!(
            point_set_distance(&v(&[1.0, 0.0]), &[v(&[0.0, 0.0]), v(&[2.0, 1.0])]).unwrap(),
            1.0
        );
        assert!(point_set_distance(&x, &[]).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let d = hausdorff_distance(&[v(&[0.0, 0.0])], &[v(&[1.0, 1.0])]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        let x = [v(&[1.0, 2.0]), v(&[-1.0, 0.5])];
        assert_eq!(hausdorff_distance(&x, &x).unwrap(), 0.0);
        let d = hausdorff_distance(&[v(&[0.0, 0.0]), v(&[2.0, 0.0])], &[v(&[1.0, 0.0])]).unwrap();
        assert_eq!(d, 1.0);
        assert!(hausdorff_distance(&[], &x).is_err());
    }

    #[test]
    fn regression_instance_epsilon() {
        let report = measure_redundancy(&regression6(), 1, false).unwrap();
        assert!((report.epsilon - 0.0890).abs() < 1e-3, "{}", report.epsilon);
        assert_eq!(report.per_superset.len(), 6);
        let (s, sub) = &report.witness;
        assert!(sub.is_subset(s) && sub.len() >= 4);
        let max = report.per_superset.values().cloned().fold(0.0, f64::max);
        assert_eq!(max, report.epsilon);
    }

    #[test]
    fn noise_scaling_is_linear() {
        let e0 = measure_redundancy(&regression6_scaled_noise(0.0), 1, false).unwrap().epsilon;
        let e_half = measure_redundancy(&regression6_scaled_noise(0.5), 1, false).unwrap().epsilon;
        let e1 = measure_redundancy(&regression6_scaled_noise(1.0), 1, false).unwrap().epsilon;
        assert!(e0 < 1e-12);
        assert!(e0 <= e_half && e_half <= e1);
        assert!((e_half - 0.5 * e1).abs() < 1e-9);
    }

    #[test]
    fn epsilon_is_permutation_invariant() {
        let costs = regression6();
        let base = measure_redundancy(&costs, 1, false).unwrap().epsilon;
        let perm: Vec<QuadraticCost> = [3, 0, 5, 1, 4, 2].iter().map(|&i| costs[i].clone()).collect();
        let permuted = measure_redundancy(&perm, 1, false).unwrap().epsilon;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let costs = regression6();
        assert!(matches!(measure_redundancy(&costs, 3, false), Err(Error::FaultBound { .. })));
        let rank_deficient = vec![
            QuadraticCost::from_slice(&[1.0, 0.0], 1.0).unwrap(),
            QuadraticCost::from_slice(&[2.0, 0.0], 1.0).unwrap(),
            QuadraticCost::from_slice(&[0.0, 1.0], 1.0).unwrap(),
        ];
        assert!(matches!(
            measure_redundancy(&rank_deficient, 1, false),
            Err(Error::RankDeficient { .. })
        ));
        let many: Vec<QuadraticCost> = (0..21)
            .map(|i| QuadraticCost::from_slice(&[1.0, i as f64], 0.0).unwrap())
            .collect();
        assert!(matches!(measure_redundancy(&many, 1, false), Err(Error::TooManyAgents { .. })));
    }

    #[test]
    fn enumeration_size_counts_pairs() {
        // C(6,1) * (C(5,0) + C(5,1)) = 6 * 6
        assert_eq!(enumeration_size(6, 1), 36);
        assert_eq!(enumeration_size(5, 0), 1);
        assert_eq!(binomial(20, 10), 184_756);
    }

    #[test]
    fn honest_restriction() {
        let costs = regression6();
        let honest = AgentSet::from_labels(&[2, 3, 4, 5, 6]).unwrap();
        let r = measure_redundancy_among(&costs, 1, &honest, false).unwrap();
        assert_eq!(r.per_superset.len(), 1);
        assert!(r.epsilon <= measure_redundancy(&costs, 1, false).unwrap().epsilon);
        let too_few = AgentSet::from_labels(&[2, 3, 4]).unwrap();
        assert!(measure_redundancy_among(&costs, 1, &too_few, false).is_err());
    }
}
