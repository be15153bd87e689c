//! Closed-form resilience bounds for the CGE and CWTM filters, empirical
//! estimation of the gradient-dissimilarity coefficient, and the two-scenario
//! construction showing that redundancy is necessary.
//!
//! The bounds are sufficient conditions. An instance can violate them and
//! still converge close to the honest minimizer, so callers report the
//! diagnostic and keep going.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::costmodel::{CompositeCost, CostFunction, QuadraticCost};
use crate::error::{Error, Result};
use crate::resilient::SubmittedCosts;
use crate::simengine::BoxRegion;
use crate::vector::{AgentSet, Vector};

pub const DEFAULT_LAMBDA_SAMPLES: usize = 10_000;

/// Gradient pairs whose norms are both below this are skipped when
/// estimating lambda.
const NEGLIGIBLE_GRADIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgeBound {
    pub n: usize,
    pub f: usize,
    pub mu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `1 - (f / n) (1 + 2 mu / gamma)`.
    pub alpha: f64,
    /// `4 mu f / (alpha gamma)`, present only when `alpha > 0`.
    pub amplification: Option<f64>,
    /// `amplification * epsilon`.
    pub bound: Option<f64>,
}

impl CgeBound {
    pub fn applicable(&self) -> bool {
        self.amplification.is_some()
    }
}

fn check_curvature(mu: f64, gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidCoefficients(format!("need finite mu and gamma > 0, got mu = {mu}, gamma = {gamma}")));
    }
    if gamma > mu {
        return Err(Error::InvalidCoefficients(format!("gamma = {gamma} exceeds mu = {mu}")));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidCoefficients(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(())
}

/// Asymptotic resilience of DGD with CGE.
pub fn cge_bound(n: usize, f: usize, mu: f64, gamma: f64, epsilon: f64) -> Result<CgeBound> {
    if n <= 2 * f {
        return Err(Error::FaultBound { n, f });
    }
    check_curvature(mu, gamma)?;
    check_epsilon(epsilon)?;
    let alpha = 1.0 - (f as f64 / n as f64) * (1.0 + 2.0 * mu / gamma);
    let amplification = (alpha > 0.0).then(|| 4.0 * mu * f as f64 / (alpha * gamma));
    Ok(CgeBound {
        n,
        f,
        mu,
        gamma,
        epsilon,
        alpha,
        amplification,
        bound: amplification.map(|d| d * epsilon),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CwtmBound {
    pub d: usize,
    pub n: usize,
    pub mu: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// `gamma / (mu sqrt(d))`; lambda must be strictly below it.
    pub lambda_threshold: f64,
    /// `2 sqrt(d) n mu lambda / (gamma - sqrt(d) mu lambda)`.
    pub amplification: Option<f64>,
    pub bound: Option<f64>,
}

impl CwtmBound {
    pub fn applicable(&self) -> bool {
        self.amplification.is_some()
    }
}

/// Asymptotic resilience of DGD with CWTM.
pub fn cwtm_bound(d: usize, n: usize, mu: f64, gamma: f64, lambda: f64, epsilon: f64) -> Result<CwtmBound> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidCoefficients(format!("need d, n >= 1, got d = {d}, n = {n}")));
    }
    check_curvature(mu, gamma)?;
    check_epsilon(epsilon)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidCoefficients(format!("lambda must be >= 0, got {lambda}")));
    }
    let root_d = (d as f64).sqrt();
    let lambda_threshold = gamma / (mu * root_d);
    let amplification =
        (lambda < lambda_threshold).then(|| 2.0 * root_d * n as f64 * mu * lambda / (gamma - root_d * mu * lambda));
    Ok(CwtmBound {
        d,
        n,
        mu,
        gamma,
        lambda,
        epsilon,
        lambda_threshold,
        amplification,
        bound: amplification.map(|v| v * epsilon),
    })
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().all(|p| !candidate.is_multiple_of(*p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Sample points for the lambda scan: the centre and corners of the box
/// (corners only up to d = 16), then a Halton sequence with a seeded random
/// shift.
fn lambda_sample_points(region: &BoxRegion, samples: usize, seed: u64) -> Vec<Vector> {
    let d = region.dim();
    let (lo, hi) = (region.lower(), region.upper());
    let mut points = Vec::with_capacity(samples + 1 + (1usize << d.min(16)));
    points.push(Vector::from_raw((0..d).map(|k| 0.5 * (lo[k] + hi[k])).collect()));
    if d <= 16 {
        for mask in 0..(1u32 << d) {
            points.push(Vector::from_raw(
                (0..d).map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] }).collect(),
            ));
        }
    }
    let primes = first_primes(d);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    for i in 1..=samples as u64 {
        points.push(Vector::from_raw(
            (0..d)
                .map(|k| {
                    let u = (radical_inverse(i, primes[k]) + shift[k]).fract();
                    lo[k] + u * (hi[k] - lo[k])
                })
                .collect(),
        ));
    }
    points
}

/// Largest observed `||g_i - g_j|| / max(||g_i||, ||g_j||)` over honest pairs
/// and sampled points of `region`.
///
/// Sampling cannot certify a supremum over a continuum, so this is a lower
/// bound on the true coefficient ("empirical lambda").
pub fn estimate_lambda(costs: &[QuadraticCost], region: &BoxRegion, samples: usize, seed: u64) -> Result<f64> {
    if costs.len() < 2 {
        return Err(Error::InvalidConfig("lambda needs at least two honest costs".into()));
    }
    for c in costs {
        c.row().check_dim(region.dim())?;
    }
    let mut lambda = 0.0_f64;
    for x in lambda_sample_points(region, samples, seed) {
        let grads = costs.iter().map(|c| c.gradient(&x)).collect::<Result<Vec<_>>>()?;
        let norms: Vec<f64> = grads.iter().map(Vector::norm).collect();
        for i in 0..grads.len() {
            for j in i + 1..grads.len() {
                let scale = norms[i].max(norms[j]);
                if scale < NEGLIGIBLE_GRADIENT {
                    continue;
                }
                lambda = lambda.max(grads[i].distance(&grads[j]) / scale);
            }
        }
    }
    Ok(lambda)
}

/// Server input with one possible labeling of who is honest.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub submitted: SubmittedCosts,
    pub honest: AgentSet,
    pub honest_minimizer: f64,
}

/// Two executions the server cannot tell apart.
#[derive(Debug, Clone)]
pub struct NecessityScenario {
    pub first: LabeledScenario,
    pub second: LabeledScenario,
}

impl NecessityScenario {
    /// Distance between the two honest minimizers, `2 eps + 2 delta` by
    /// construction.
    pub fn separation(&self) -> f64 {
        (self.first.honest_minimizer - self.second.honest_minimizer).abs()
    }

    /// Worse of the two errors a single output would incur.
    pub fn worst_error(&self, output: f64) -> f64 {
        (output - self.first.honest_minimizer)
            .abs()
            .max((output - self.second.honest_minimizer).abs())
    }
}

/// Scalar instance with `n = 3`, `f = 1` whose honest costs lack
/// `(2f, eps)`-redundancy by margin `delta`.
///
/// Agents submit `(x - 0)^2`, `(x - 2m)^2` and `(x + 2m)^2` with
/// `m = eps + delta`. In the first labeling agents {1, 2} are honest and
/// their minimizer is `m`; in the second {1, 3} are honest with minimizer
/// `-m`. Both labelings present byte-identical inputs, so any deterministic
/// output is at least `eps + delta` from one of the two honest minimizers.
pub fn necessity_scenario(epsilon: f64, delta: f64) -> Result<NecessityScenario> {
    check_epsilon(epsilon)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidCoefficients(format!("delta must be > 0, got {delta}")));
    }
    let m = epsilon + delta;
    let scalar = |min: f64| -> Result<CompositeCost> { Ok(QuadraticCost::from_slice(&[1.0], min)?.into()) };
    let submitted = SubmittedCosts::new(vec![scalar(0.0)?, scalar(2.0 * m)?, scalar(-2.0 * m)?], 1)?;
    Ok(NecessityScenario {
        first: LabeledScenario {
            submitted: submitted.clone(),
            honest: AgentSet::new(vec![0, 1]),
            honest_minimizer: m,
        },
        second: LabeledScenario {
            submitted,
            honest: AgentSet::new(vec![0, 2]),
            honest_minimizer: -m,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{curvature, subset_minimizer};
    use crate::dataset::regression6;
    use crate::redundancy::measure_redundancy_among;
    use crate::resilient::resilient_solve;

    #[test]
    fn cge_examples() {
        let b = cge_bound(6, 0, 2.0, 1.0, 0.3).unwrap();
        assert_eq!((b.alpha, b.amplification, b.bound), (1.0, Some(0.0), Some(0.0)));
        let b = cge_bound(6, 1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(b.alpha, 0.5);
        assert_eq!(b.amplification, Some(8.0));
    }

    #[test]
    fn cge_inapplicable_on_regression_instance() {
        let costs = regression6();
        let c = curvature(&costs, &AgentSet::from_labels(&[2, 3, 4, 5, 6]).unwrap()).unwrap();
        assert!((c.mu / c.gamma - 2.809).abs() < 1e-3);
        let b = cge_bound(6, 1, c.mu, c.gamma, 0.089).unwrap();
        assert!(b.alpha < 0.0);
        assert!(!b.applicable() && b.bound.is_none());
        let half = c.without_hessian_factor();
        let b2 = cge_bound(6, 1, half.mu, half.gamma, 0.089).unwrap();
        assert!((b.alpha - b2.alpha).abs() < 1e-12);
    }

    #[test]
    fn cge_scale_invariance() {
        for c in [0.5, 2.0, 10.0] {
            let a = cge_bound(10, 1, 1.2, 1.0, 0.1).unwrap();
            let b = cge_bound(10, 1, 1.2 * c, 1.0 * c, 0.1).unwrap();
            assert!((a.alpha - b.alpha).abs() < 1e-12);
            assert!((a.amplification.unwrap() - b.amplification.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_coefficients_rejected() {
        assert!(cge_bound(6, 1, 1.0, 2.0, 0.1).is_err());
        assert!(cge_bound(6, 1, 1.0, 0.0, 0.1).is_err());
        assert!(cge_bound(4, 2, 1.0, 1.0, 0.1).is_err());
        assert!(cge_bound(6, 1, 1.0, 1.0, -0.1).is_err());
        assert!(cwtm_bound(0, 5, 1.0, 1.0, 0.1, 0.1).is_err());
        assert!(cwtm_bound(1, 5, 1.0, 1.0, -0.1, 0.1).is_err());
    }

    #[test]
    fn cwtm_examples() {
        assert_eq!(cwtm_bound(2, 5, 1.0, 0.5, 0.0, 1.0).unwrap().amplification, Some(0.0));
        assert_eq!(cwtm_bound(1, 5, 1.0, 1.0, 0.5, 1.0).unwrap().amplification, Some(10.0));
        assert!(!cwtm_bound(1, 5, 1.0, 1.0, 1.0, 1.0).unwrap().applicable());
    }

    #[test]
    fn cwtm_boundary_is_sharp() {
        let (d, mu, gamma) = (3usize, 2.0, 0.7);
        let threshold = gamma / (mu * (d as f64).sqrt());
        assert!(!cwtm_bound(d, 6, mu, gamma, threshold, 0.1).unwrap().applicable());
        let inside = cwtm_bound(d, 6, mu, gamma, threshold - 1e-9, 0.1).unwrap();
        assert!(inside.amplification.unwrap().is_finite());
    }

    #[test]
    fn lambda_examples() {
        let w = BoxRegion::hypercube(2, -10.0, 10.0).unwrap();
        let same = vec![QuadraticCost::from_slice(&[1.0, 2.0], 3.0).unwrap(); 3];
        assert_eq!(estimate_lambda(&same, &w, 500, 1).unwrap(), 0.0);
        let costs = regression6();
        let lambda = estimate_lambda(&costs, &w, 2000, 1).unwrap();
        assert!(lambda <= 2.0 + 1e-9);
        assert!(estimate_lambda(&costs[..1], &w, 10, 1).is_err());
    }

    #[test]
    fn lambda_matches_dense_grid_on_scalar_pair() {
        let costs = vec![
            QuadraticCost::from_slice(&[1.0], 1.0).unwrap(),
            QuadraticCost::from_slice(&[1.0], -1.0).unwrap(),
        ];
        let w = BoxRegion::hypercube(1, -10.0, 10.0).unwrap();
        // Grid oracle with 1e5 + 1 points over [-10, 10].
        let points = 100_000;
        let mut oracle = 0.0_f64;
        for i in 0..=points {
            let x = -10.0 + 20.0 * i as f64 / points as f64;
            let (g1, g2) = (2.0 * (x - 1.0), 2.0 * (x + 1.0));
            let scale = g1.abs().max(g2.abs());
            if scale >= 1e-12 {
                oracle = oracle.max((g1 - g2).abs() / scale);
            }
        }
        let estimate = estimate_lambda(&costs, &w, DEFAULT_LAMBDA_SAMPLES, 3).unwrap();
        assert!((estimate - oracle).abs() < 1e-3, "{estimate} vs {oracle}");
    }

    #[test]
    fn necessity_examples() {
        let s = necessity_scenario(1.0, 0.5).unwrap();
        assert!((s.separation() - 3.0).abs() < 1e-12);
        assert_eq!(s.first.submitted, s.second.submitted);
        assert_ne!(s.first.honest, s.second.honest);
        let s = necessity_scenario(0.0, 0.1).unwrap();
        assert!((s.separation() - 0.2).abs() < 1e-12);
        assert!(necessity_scenario(1.0, 0.0).is_err());
    }

    #[test]
    fn necessity_defeats_any_output() {
        let (eps, delta) = (0.7, 0.05);
        let s = necessity_scenario(eps, delta).unwrap();
        for i in -200..=200 {
            let out = i as f64 * 0.01;
            assert!(s.worst_error(out) >= eps + delta - 1e-12);
        }
        let out = resilient_solve(&s.first.submitted).unwrap().estimate[0];
        assert!(s.worst_error(out) >= eps + delta - 1e-12);
    }

    #[test]
    fn necessity_minimizers_match_submissions() {
        let s = necessity_scenario(0.4, 0.2).unwrap();
        for sc in [&s.first, &s.second] {
            let x = subset_minimizer(sc.submitted.costs(), &sc.honest).unwrap();
            assert!((x[0] - sc.honest_minimizer).abs() < 1e-12);
            // The honest costs alone are not (2f, eps)-redundant.
            let r = measure_redundancy_among(sc.submitted.costs(), 1, &sc.honest, false).unwrap();
            assert!(r.epsilon > 0.4);
        }
    }
}
