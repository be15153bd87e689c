//! Regression datasets: the built-in six-agent instance, CSV ingestion, and
//! synthetic generation.
//!
//! A dataset file has one row per agent with columns `a_1, ..., a_d, b`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::costmodel::QuadraticCost;
use crate::error::{Error, Result};
use crate::vector::Vector;

const REGRESSION6_ROWS: [[f64; 2]; 6] = [
    [1.0, 0.0],
    [0.8, 0.5],
    [0.5, 0.8],
    [0.0, 1.0],
    [-0.5, 0.8],
    [-0.8, 0.5],
];
const REGRESSION6_RESPONSES: [f64; 6] = [0.9108, 1.3349, 1.3376, 1.0033, 0.2142, -0.3615];
const REGRESSION6_NOISE: [f64; 6] = [-0.0892, 0.0349, 0.0376, 0.0033, -0.0858, -0.0615];

/// The six-agent, two-dimensional regression instance generated from
/// ground truth `x* = (1, 1)`. Agent 1 plays the faulty agent in the
/// reference experiments.
pub fn regression6() -> Vec<QuadraticCost> {
    REGRESSION6_ROWS
        .iter()
        .zip(REGRESSION6_RESPONSES)
        .map(|(row, b)| QuadraticCost::from_slice(row, b).expect("valid built-in row"))
        .collect()
}

/// Same design as [`regression6`] with the noise scaled by `scale`
/// (`B = A x* + scale * N`).
pub fn regression6_scaled_noise(scale: f64) -> Vec<QuadraticCost> {
    REGRESSION6_ROWS
        .iter()
        .zip(REGRESSION6_NOISE)
        .map(|(row, noise)| {
            QuadraticCost::from_slice(row, row[0] + row[1] + scale * noise).expect("valid built-in row")
        })
        .collect()
}

/// Reads a dataset. With `header` set, the first record is skipped.
pub fn load_dataset(path: &Path, header: bool) -> Result<Vec<QuadraticCost>> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, header, path)
}

pub(crate) fn parse_dataset(text: &str, header: bool, path: &Path) -> Result<Vec<QuadraticCost>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut costs = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let values = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("not a number: {field:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(parse_err(line, "need at least one regressor and a response".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    line,
                    format!("expected {w} columns, found {}", values.len()),
                ))
            }
            Some(_) => {}
        }
        let (row, b) = values.split_at(values.len() - 1);
        let cost = QuadraticCost::from_slice(row, b[0]).map_err(|e| parse_err(line, e.to_string()))?;
        costs.push(cost);
    }
    if costs.is_empty() {
        return Err(parse_err(0, "dataset has no rows".into()));
    }
    Ok(costs)
}

/// Writes a dataset with a header row and 17 significant digits per value.
pub fn write_dataset(path: &Path, costs: &[QuadraticCost]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    out.write_all(render_dataset(costs).as_bytes())?;
    Ok(())
}

pub fn render_dataset(costs: &[QuadraticCost]) -> String {
    let d = costs.first().map(|c| c.row().dim()).unwrap_or(0);
    let mut s = String::new();
    let header: Vec<String> = (1..=d).map(|k| format!("a_{k}")).chain(["b".to_string()]).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for c in costs {
        let fields: Vec<String> = c
            .row()
            .iter()
            .chain(std::iter::once(&c.response()))
            .map(|v| format_float(*v))
            .collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub costs: Vec<QuadraticCost>,
    pub ground_truth: Vector,
}

/// Draws `n` regression rows on the unit sphere and responses
/// `B = A x* + N` with `x* = (1, ..., 1)` and `N ~ Gaussian(0, noise_std)`.
///
/// For `d = 2` the rows are evenly spaced on the upper unit half-circle at
/// angles `k * 180 / n` degrees; otherwise they are normalized Gaussian
/// draws. Rank conditions on subsets are left to the caller.
pub fn generate_synthetic(n: usize, d: usize, noise_std: f64, seed: u64) -> Result<SyntheticDataset> {
    if d == 0 || n <= d {
        return Err(Error::InvalidConfig(format!("synthetic data needs n > d >= 1, got n = {n}, d = {d}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let rows: Vec<Vec<f64>> = if d == 2 {
        (0..n)
            .map(|k| {
                let theta = std::f64::consts::PI * k as f64 / n as f64;
                vec![round_small(theta.cos()), round_small(theta.sin())]
            })
            .collect()
    } else {
        (0..n)
            .map(|_| loop {
                let raw: Vec<f64> = (0..d).map(|_| standard.sample(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    break raw.into_iter().map(|v| v / norm).collect();
                }
            })
            .collect()
    };

    let ground_truth = Vector::new(vec![1.0; d])?;
    let costs = rows
        .iter()
        .map(|row| {
            let noise = if noise_std > 0.0 {
                noise_std * standard.sample(&mut rng)
            } else {
                0.0
            };
            let b = row.iter().sum::<f64>() + noise;
            QuadraticCost::from_slice(row, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { costs, ground_truth })
}

// cos(pi/2) is 6e-17, not 0; keep axis-aligned rows exact.
fn round_small(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_instance_is_consistent_with_its_noise() {
        let costs = regression6();
        let noisy = regression6_scaled_noise(1.0);
        for (a, b) in costs.iter().zip(&noisy) {
            assert!((a.response() - b.response()).abs() < 1e-12);
        }
        assert_eq!(costs[0].row().as_slice(), &[1.0, 0.0]);
        assert_eq!(costs[0].response(), 0.9108);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let p = Path::new("mem.csv");
        let err = parse_dataset("1,0,1\n0,1,x\n", false, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_dataset("1,0,1\n0,1\n", false, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_dataset("", false, p).is_err());
        assert!(parse_dataset("a_1,a_2,b\n", true, p).is_err());
    }

    #[test]
    fn header_flag_skips_first_row() {
        let p = Path::new("mem.csv");
        let costs = parse_dataset("a_1,a_2,b\n1,0,2\n0,1,3\n", true, p).unwrap();
        assert_eq!(costs.len(), 2);
        assert!(parse_dataset("a_1,a_2,b\n1,0,2\n", false, p).is_err());
    }

    #[test]
    fn synthetic_two_dimensional_design_is_evenly_spaced() {
        let data = generate_synthetic(6, 2, 0.0, 1).unwrap();
        let expected = [
            [1.0, 0.0],
            [0.8660, 0.5],
            [0.5, 0.8660],
            [0.0, 1.0],
            [-0.5, 0.8660],
            [-0.8660, 0.5],
        ];
        for (c, e) in data.costs.iter().zip(expected) {
            assert!((c.row()[0] - e[0]).abs() < 1e-4 && (c.row()[1] - e[1]).abs() < 1e-4);
            assert!((c.row().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let a = render_dataset(&generate_synthetic(9, 3, 0.1, 42).unwrap().costs);
        let b = render_dataset(&generate_synthetic(9, 3, 0.1, 42).unwrap().costs);
        let c = render_dataset(&generate_synthetic(9, 3, 0.1, 43).unwrap().costs);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(generate_synthetic(2, 2, 0.0, 0).is_err());
    }
}
