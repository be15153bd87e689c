//! Gradient filters: the server-side rules that map the `n` received
//! gradients to a single update direction.
//!
//! Both robust filters break ties by ascending agent index. Received gradients
//! may contain NaN or infinite entries; NaN norms and NaN coordinates sort
//! after every number, so with `f > 0` they are among the values discarded.
//!
//! CGE returns the *sum* of the kept gradients while CWTM and the plain
//! average return means, so the same step size moves CGE roughly `n - f`
//! times further.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// The `n` gradients received in one round together with the fault bound `f`.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    gradients: Vec<Vector>,
    f: usize,
}

impl GradientBundle {
    pub fn new(gradients: Vec<Vector>, f: usize) -> Result<Self> {
        let first = gradients.first().ok_or(Error::Empty("gradient bundle"))?;
        let d = first.dim();
        for g in &gradients {
            g.check_dim(d)?;
        }
        Ok(GradientBundle { gradients, f })
    }

    pub fn n(&self) -> usize {
        self.gradients.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn dim(&self) -> usize {
        self.gradients[0].dim()
    }

    pub fn gradients(&self) -> &[Vector] {
        &self.gradients
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Average,
    Cge,
    Cwtm,
}

impl FilterKind {
    pub fn apply(self, bundle: &GradientBundle) -> Result<Vector> {
        match self {
            FilterKind::Average => Ok(filter_average(bundle)),
            FilterKind::Cge => filter_cge(bundle),
            FilterKind::Cwtm => filter_cwtm(bundle),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Average => "average",
            FilterKind::Cge => "cge",
            FilterKind::Cwtm => "cwtm",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "mean" => Ok(FilterKind::Average),
            "cge" => Ok(FilterKind::Cge),
            "cwtm" => Ok(FilterKind::Cwtm),
            other => Err(Error::InvalidConfig(format!(
                "unknown filter {other:?} (expected average, cge or cwtm)"
            ))),
        }
    }
}

// Numbers ascending, NaN after everything.
fn cmp_nan_last(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (false, false) => a.partial_cmp(&b).expect("non-NaN"),
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
    }
}

/// Coordinate-wise mean of all gradients.
pub fn filter_average(bundle: &GradientBundle) -> Vector {
    let n = bundle.n() as f64;
    let mut sum = vec![0.0; bundle.dim()];
    for g in bundle.gradients() {
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    Vector::from_raw(sum.into_iter().map(|s| s / n).collect())
}

/// Comparative gradient elimination: sort by Euclidean norm and return the
/// vector sum of the `n - f` smallest, accumulated in ascending-norm order.
pub fn filter_cge(bundle: &GradientBundle) -> Result<Vector> {
    let (n, f) = (bundle.n(), bundle.f());
    if f >= n {
        return Err(Error::FilterPrecondition(format!(
            "cge needs f < n, got n = {n}, f = {f}"
        )));
    }
    let norms: Vec<f64> = bundle.gradients().iter().map(Vector::norm).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ascending index among equal norms.
    order.sort_by(|&i, &j| cmp_nan_last(norms[i], norms[j]));

    let mut sum = vec![0.0; bundle.dim()];
    for &i in &order[..n - f] {
        for (s, v) in sum.iter_mut().zip(bundle.gradients()[i].iter()) {
            *s += v;
        }
    }
    Ok(Vector::from_raw(sum))
}

/// Coordinate-wise trimmed mean: in every coordinate drop the `f` largest and
/// `f` smallest values and average the remaining `n - 2f`.
pub fn filter_cwtm(bundle: &GradientBundle) -> Result<Vector> {
    let (n, f) = (bundle.n(), bundle.f());
    if n <= 2 * f {
        return Err(Error::FilterPrecondition(format!(
            "cwtm needs n > 2f, got n = {n}, f = {f}"
        )));
    }
    let kept = (n - 2 * f) as f64;
    let mut column: Vec<f64> = Vec::with_capacity(n);
    let out = (0..bundle.dim())
        .map(|k| {
            column.clear();
            column.extend(bundle.gradients().iter().map(|g| g[k]));
            column.sort_by(|a, b| cmp_nan_last(*a, *b));
            column[f..n - f].iter().fold(0.0, |acc, v| acc + v) / kept
        })
        .collect();
    Ok(Vector::from_raw(out))
}
