//! Agent cost functions for distributed least-squares regression.
//!
//! Agent `i` holds a row `A_i` and a response `B_i` and its cost is the
//! squared residual `Q_i(x) = (B_i - A_i x)^2`. The Hessian of that cost is
//! `2 A_i^T A_i`, so every curvature coefficient reported here carries the
//! factor 2. Quoting the same instance without it halves both the smoothness
//! coefficient `mu` and the strong-convexity coefficient `gamma`; the ratio
//! `mu / gamma`, and therefore every resilience bound built from it, is the
//! same under either convention. [`CurvatureCoefficients::without_hessian_factor`]
//! converts between the two.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vector::{AgentSet, Vector};

/// A subset's design matrix is treated as full column rank iff its smallest
/// singular value exceeds this fraction of the largest.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Above this dimension minimizers are computed by QR instead of normal
/// equations.
const NORMAL_EQUATIONS_MAX_DIM: usize = 8;

pub trait CostFunction {
    fn dimension(&self) -> usize;
    fn value(&self, x: &Vector) -> Result<f64>;
    fn gradient(&self, x: &Vector) -> Result<Vector>;
}

/// Costs that are a sum of squared affine residuals. Anything of this shape
/// has a closed-form aggregate minimizer.
pub trait LeastSquaresTerms {
    fn terms(&self) -> &[QuadraticCost];
}

/// One regression observation: `Q(x) = (response - row . x)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    row: Vector,
    response: f64,
}

impl QuadraticCost {
    pub fn new(row: Vector, response: f64) -> Result<Self> {
        if row.dim() == 0 {
            return Err(Error::Empty("cost row"));
        }
        if row.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroRow);
        }
        if !response.is_finite() {
            return Err(Error::NonFinite { index: row.dim() });
        }
        Ok(QuadraticCost { row, response })
    }

    pub fn from_slice(row: &[f64], response: f64) -> Result<Self> {
        QuadraticCost::new(Vector::new(row.to_vec())?, response)
    }

    pub fn row(&self) -> &Vector {
        &self.row
    }

    pub fn response(&self) -> f64 {
        self.response
    }

    pub fn residual(&self, x: &Vector) -> Result<f64> {
        x.check_dim(self.row.dim())?;
        Ok(self.response - self.row.dot(x))
    }
}

impl CostFunction for QuadraticCost {
    fn dimension(&self) -> usize {
        self.row.dim()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        let r = self.residual(x)?;
        Ok(r * r)
    }

    /// `-2 A^T (B - A x)`.
    fn gradient(&self, x: &Vector) -> Result<Vector> {
        let r = self.residual(x)?;
        Ok(self.row.scale(-2.0 * r))
    }
}

impl LeastSquaresTerms for QuadraticCost {
    fn terms(&self) -> &[QuadraticCost] {
        std::slice::from_ref(self)
    }
}

/// A cost made of several squared residuals, e.g. what a faulty agent may
/// submit in place of its single observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeCost {
    terms: Vec<QuadraticCost>,
}

impl CompositeCost {
    pub fn new(terms: Vec<QuadraticCost>) -> Result<Self> {
        let first = terms.first().ok_or(Error::Empty("composite cost"))?;
        let d = first.dimension();
        for t in &terms {
            t.row().check_dim(d)?;
        }
        Ok(CompositeCost { terms })
    }
}

impl From<QuadraticCost> for CompositeCost {
    fn from(cost: QuadraticCost) -> Self {
        CompositeCost { terms: vec![cost] }
    }
}

impl LeastSquaresTerms for CompositeCost {
    fn terms(&self) -> &[QuadraticCost] {
        &self.terms
    }
}

impl CostFunction for CompositeCost {
    fn dimension(&self) -> usize {
        self.terms[0].dimension()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        let mut acc = Vector::zeros(self.dimension());
        for t in &self.terms {
            acc = &acc + &t.gradient(x)?;
        }
        Ok(acc)
    }
}

/// Smoothness and strong-convexity coefficients, Hessian factor included.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CurvatureCoefficients {
    pub mu: f64,
    pub gamma: f64,
}

impl CurvatureCoefficients {
    /// The same coefficients quoted as plain eigenvalues of `A^T A`.
    pub fn without_hessian_factor(&self) -> CurvatureCoefficients {
        CurvatureCoefficients {
            mu: self.mu / 2.0,
            gamma: self.gamma / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongConvexity {
    pub coefficient: f64,
    pub strongly_convex: bool,
}

fn design_matrix(terms: &[&QuadraticCost]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let first = terms.first().ok_or(Error::Empty("cost subset"))?;
    let d = first.dimension();
    for t in terms {
        t.row().check_dim(d)?;
    }
    let a = DMatrix::from_fn(terms.len(), d, |i, j| terms[i].row()[j]);
    let b = DVector::from_iterator(terms.len(), terms.iter().map(|t| t.response()));
    Ok((a, b))
}

fn is_full_column_rank(a: &DMatrix<f64>) -> bool {
    if a.nrows() < a.ncols() {
        return false;
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > RANK_TOLERANCE * max
}

fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.ncols() <= NORMAL_EQUATIONS_MAX_DIM {
        let gram = a.transpose() * a;
        let rhs = a.transpose() * b;
        gram.cholesky().map(|c| c.solve(&rhs))
    } else {
        let qr = a.clone().qr();
        let qtb = qr.q().transpose() * b;
        qr.r().solve_upper_triangular(&qtb)
    }
}

fn minimizer_of_terms(terms: &[&QuadraticCost], label: impl FnOnce() -> String) -> Result<Vector> {
    let (a, b) = design_matrix(terms)?;
    if !is_full_column_rank(&a) {
        return Err(Error::RankDeficient { subset: label() });
    }
    let x = solve_least_squares(&a, &b).ok_or_else(|| Error::RankDeficient { subset: label() })?;
    Vector::new(x.iter().copied().collect())
}

/// Unique minimizer of `sum_i Q_i(x)` over the given costs.
///
/// Fails with [`Error::RankDeficient`] when the stacked rows do not have full
/// column rank, i.e. when the minimizer is not unique.
pub fn aggregate_minimizer(costs: &[QuadraticCost]) -> Result<Vector> {
    let terms: Vec<&QuadraticCost> = costs.iter().collect();
    minimizer_of_terms(&terms, || format!("{} costs", costs.len()))
}

/// Minimizer of the aggregate cost of the agents in `subset`.
pub fn subset_minimizer<C: LeastSquaresTerms>(costs: &[C], subset: &AgentSet) -> Result<Vector> {
    let mut terms = Vec::new();
    for &agent in subset.members() {
        let cost = costs.get(agent).ok_or(Error::UnknownAgent(agent + 1))?;
        terms.extend(cost.terms());
    }
    minimizer_of_terms(&terms, || subset.to_string())
}

/// Value of the aggregate cost of `subset` at `x`.
pub fn subset_value<C: CostFunction>(costs: &[C], subset: &AgentSet, x: &Vector) -> Result<f64> {
    subset.members().iter().map(|&i| costs[i].value(x)).sum()
}

/// Lipschitz coefficient of the gradient: the largest Hessian eigenvalue,
/// `2 ||A_i||^2`.
pub fn lipschitz_coefficient(cost: &QuadraticCost) -> f64 {
    2.0 * cost.row().norm_squared()
}

/// Strong-convexity coefficient of the average cost of a set of agents:
/// `(2 / |S|) * lambda_min(A_S^T A_S)`.
///
/// A rank-deficient set is not strongly convex and reports coefficient 0.
pub fn strong_convexity_coefficient<C: LeastSquaresTerms>(costs: &[C]) -> Result<StrongConvexity> {
    let terms: Vec<&QuadraticCost> = costs.iter().flat_map(|c| c.terms()).collect();
    let (a, _) = design_matrix(&terms)?;
    if !is_full_column_rank(&a) {
        return Ok(StrongConvexity {
            coefficient: 0.0,
            strongly_convex: false,
        });
    }
    let gram = a.transpose() * &a;
    let lambda_min = gram.symmetric_eigenvalues().min();
    Ok(StrongConvexity {
        coefficient: 2.0 * lambda_min / costs.len() as f64,
        strongly_convex: lambda_min > 0.0,
    })
}

/// `mu` is the largest per-agent Lipschitz coefficient in `set`, `gamma` the
/// strong-convexity coefficient of the set's average cost.
pub fn curvature(costs: &[QuadraticCost], set: &AgentSet) -> Result<CurvatureCoefficients> {
    let members: Vec<QuadraticCost> = set
        .members()
        .iter()
        .map(|&i| costs.get(i).cloned().ok_or(Error::UnknownAgent(i + 1)))
        .collect::<Result<_>>()?;
    let mu = members
        .iter()
        .map(lipschitz_coefficient)
        .fold(0.0_f64, f64::max);
    let sc = strong_convexity_coefficient(&members)?;
    if !sc.strongly_convex {
        return Err(Error::RankDeficient {
            subset: set.to_string(),
        });
    }
    Ok(CurvatureCoefficients {
        mu,
        gamma: sc.coefficient,
    })
}

/// Conservative coefficients over every set of `n - f` agents: the largest
/// `mu` and the smallest `gamma`.
pub fn worst_case_curvature(costs: &[QuadraticCost], f: usize) -> Result<CurvatureCoefficients> {
    use itertools::Itertools;
    let n = costs.len();
    if n <= f {
        return Err(Error::FaultBound { n, f });
    }
    let mut worst: Option<CurvatureCoefficients> = None;
    for combo in (0..n).combinations(n - f) {
        let c = curvature(costs, &AgentSet::new(combo))?;
        worst = Some(match worst {
            None => c,
            Some(w) => CurvatureCoefficients {
                mu: w.mu.max(c.mu),
                gamma: w.gamma.min(c.gamma),
            },
        });
    }
    worst.ok_or(Error::Empty("agent set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::regression6;

    fn cost(row: &[f64], b: f64) -> QuadraticCost {
        QuadraticCost::from_slice(row, b).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn value_examples() {
        let c = cost(&[1.0, 0.0], 0.9108);
        let expected = (0.9108_f64 - 1.0).powi(2);
        assert!((c.value(&v(&[1.0, 1.0])).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.007957).abs() < 1e-6);
        assert_eq!(cost(&[1.0, 0.0], 1.0).value(&v(&[1.0, 0.0])).unwrap(), 0.0);
        let c = cost(&[0.8, 0.5], 1.3349);
        assert_eq!(c.value(&v(&[0.0, 0.0])).unwrap(), 1.3349 * 1.3349);
    }

    #[test]
    fn gradient_examples() {
        let c = cost(&[1.0, 0.0], 1.0);
        assert_eq!(c.gradient(&v(&[1.0, 5.0])).unwrap().as_slice(), &[0.0, 0.0]);
        let c = cost(&[1.0, 0.0], 0.0);
        assert_eq!(c.gradient(&v(&[1.0, 0.0])).unwrap().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let c = cost(&[1.0, 0.0], 1.0);
        assert!(matches!(
            c.value(&v(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(c.gradient(&v(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn zero_row_rejected() {
        assert!(matches!(
            QuadraticCost::from_slice(&[0.0, 0.0], 1.0),
            Err(Error::ZeroRow)
        ));
    }

    #[test]
    fn honest_minimizer_matches_reference_value() {
        let costs = regression6();
        let x = aggregate_minimizer(&costs[1..]).unwrap();
        assert!((x[0] - 1.0780).abs() < 1e-3);
        assert!((x[1] - 0.9825).abs() < 1e-3);
    }

    #[test]
    fn noise_free_minimizer_is_ground_truth() {
        let costs: Vec<QuadraticCost> = regression6()
            .iter()
            .map(|c| cost(c.row().as_slice(), c.row()[0] + c.row()[1]))
            .collect();
        let x = aggregate_minimizer(&costs[..3]).unwrap();
        assert!(x.approx_eq(&v(&[1.0, 1.0]), 1e-12));
    }

    #[test]
    fn minimizer_matches_cramer_rule_oracle() {
        // Normal equations for S = {1,2,3,4} solved by hand with Cramer's rule.
        let costs = regression6();
        let s = &costs[..4];
        let (mut g11, mut g12, mut g22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for c in s {
            let (a1, a2, b) = (c.row()[0], c.row()[1], c.response());
            g11 += a1 * a1;
            g12 += a1 * a2;
            g22 += a2 * a2;
            r1 += a1 * b;
            r2 += a2 * b;
        }
        let det = g11 * g22 - g12 * g12;
        let oracle = [(r1 * g22 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det];
        let x = aggregate_minimizer(s).unwrap();
        assert!(x.approx_eq(&v(&oracle), 1e-12));
    }

    #[test]
    fn rank_deficient_subset_rejected() {
        let costs = vec![cost(&[1.0, 0.0], 1.0), cost(&[2.0, 0.0], 3.0)];
        assert!(matches!(
            aggregate_minimizer(&costs),
            Err(Error::RankDeficient { .. })
        ));
        assert!(aggregate_minimizer(&costs[..1]).is_err());
    }

    #[test]
    fn qr_path_agrees_with_normal_equations() {
        // d = 10 goes through QR; compare with the normal-equations residual.
        let d = 10;
        let costs: Vec<QuadraticCost> = (0..25)
            .map(|i| {
                let row: Vec<f64> = (0..d).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64).collect();
                cost(&row, (i as f64).sin())
            })
            .collect();
        let x = aggregate_minimizer(&costs).unwrap();
        let mut grad = Vector::zeros(d);
        for c in &costs {
            grad = &grad + &c.gradient(&x).unwrap();
        }
        assert!(grad.norm() < 1e-9, "{}", grad.norm());
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_coefficient(&cost(&[1.0, 0.0], 0.0)), 2.0);
        assert!((lipschitz_coefficient(&cost(&[0.8, 0.5], 0.0)) - 1.78).abs() < 1e-12);
        let base = lipschitz_coefficient(&cost(&[0.8, 0.5], 0.0));
        let scaled = lipschitz_coefficient(&cost(&[2.4, 1.5], 0.0));
        assert!((scaled - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn strong_convexity_examples() {
        let costs = regression6();
        let all = strong_convexity_coefficient(&costs).unwrap();
        assert!(all.strongly_convex && all.coefficient > 0.0);
        let mu = costs.iter().map(lipschitz_coefficient).fold(0.0, f64::max);
        assert!(all.coefficient <= mu);

        let single = strong_convexity_coefficient(&[cost(&[1.0, 0.0], 0.0)]).unwrap();
        assert_eq!(single.coefficient, 0.0);
        assert!(!single.strongly_convex);

        let doubled: Vec<QuadraticCost> = costs.iter().chain(costs.iter()).cloned().collect();
        let dup = strong_convexity_coefficient(&doubled).unwrap();
        assert!((dup.coefficient - all.coefficient).abs() < 1e-12);
    }

    #[test]
    fn honest_curvature_matches_reference_coefficients() {
        let costs = regression6();
        let c = curvature(&costs, &AgentSet::from_labels(&[2, 3, 4, 5, 6]).unwrap()).unwrap();
        assert!((c.mu - 2.0).abs() < 1e-12);
        assert!((c.gamma - 0.712).abs() < 1e-9);
        let half = c.without_hessian_factor();
        assert!((half.mu - 1.0).abs() < 1e-12);
        assert!((half.gamma - 0.356).abs() < 1e-9);
        assert!((c.mu / c.gamma - half.mu / half.gamma).abs() < 1e-12);
    }

    #[test]
    fn composite_cost_sums_terms() {
        let comp = CompositeCost::new(vec![cost(&[1.0, 0.0], 10.0), cost(&[0.0, 3.0], 30.0)]).unwrap();
        let x = v(&[1.0, 2.0]);
        assert_eq!(comp.value(&x).unwrap(), 81.0 + 576.0);
        assert_eq!(comp.gradient(&x).unwrap().as_slice(), &[-18.0, -144.0]);
        assert!(CompositeCost::new(vec![]).is_err());
    }
}
