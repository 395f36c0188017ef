use serde::{Deserialize, Serialize};

use super::NORMALIZATION_TOL;
use crate::error::{Error, Result};

/// Weighted atoms on pairwise-distinct support points in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteMeasureRaw", into = "DiscreteMeasureRaw")]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteMeasureRaw {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<DiscreteMeasureRaw> for DiscreteMeasure {
    type Error = Error;
    fn try_from(raw: DiscreteMeasureRaw) -> Result<Self> {
        DiscreteMeasure::new(raw.points, raw.weights)
    }
}

impl From<DiscreteMeasure> for DiscreteMeasureRaw {
    fn from(m: DiscreteMeasure) -> Self {
        DiscreteMeasureRaw { points: m.points, weights: m.weights }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

impl DiscreteMeasure {
    /// Validate atoms: matching dimensions, nonnegative weights summing to 1
    /// within tolerance (then renormalized exactly), distinct support points.
    pub fn new(points: Vec<Vec<f64>>, mut weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no atoms"));
        }
        if points.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidMeasure("zero-dimensional support point"));
        }
        for p in &points {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.len() });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite support point"));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidMeasure("weights must sum to 1 within 1e-12"));
        }
        for w in &mut weights {
            *w /= total;
        }

        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
        for w in order.windows(2) {
            if lex_cmp(&points[w[0]], &points[w[1]]) == std::cmp::Ordering::Equal {
                return Err(Error::InvalidMeasure("support points must be pairwise distinct"));
            }
        }
        Ok(DiscreteMeasure { points, weights })
    }

    /// Build without the sum-to-one precheck (weights are renormalized);
    /// used where the caller guarantees validity, e.g. `GridDensity::atomize`.
    pub(crate) fn new_unchecked(points: Vec<Vec<f64>>, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        DiscreteMeasure { points, weights }
    }

    /// Merge duplicate points (mass added) before validating; used for
    /// pushforwards that may collide atoms.
    pub fn from_points_merging(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
        let mut merged_points: Vec<Vec<f64>> = Vec::new();
        let mut merged_weights: Vec<f64> = Vec::new();
        for &i in &order {
            if let Some(last) = merged_points.last() {
                if lex_cmp(last, &points[i]) == std::cmp::Ordering::Equal {
                    *merged_weights.last_mut().unwrap() += weights[i];
                    continue;
                }
            }
            merged_points.push(points[i].clone());
            merged_weights.push(weights[i]);
        }
        DiscreteMeasure::new(merged_points, merged_weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ w_i |x_i|²`.
    pub fn second_moment(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * p.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Atoms sorted lexicographically by support point (indices into `points`).
    pub fn lex_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&self.points[a], &self.points[b]));
        order
    }

    /// CSV rows `x1,...,xd,weight`, one per atom.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.dim() {
            out.push_str(&format!("x{},", k + 1));
        }
        out.push_str("weight\n");
        for (p, w) in self.points.iter().zip(&self.weights) {
            for x in p {
                out.push_str(&format!("{x},"));
            }
            out.push_str(&format!("{w}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<DiscreteMeasure> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::CsvParse {
                        line: lineno + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() < 2 {
                return Err(Error::CsvParse { line: lineno + 1, message: "need coordinates and a weight".into() });
            }
            weights.push(*fields.last().unwrap());
            points.push(fields[..fields.len() - 1].to_vec());
        }
        DiscreteMeasure::new(points, weights)
    }
}

/// Dirac mass at a point.
#[cfg(test)]
pub(crate) fn dirac(point: Vec<f64>) -> DiscreteMeasure {
    DiscreteMeasure { points: vec![point], weights: vec![1.0] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn second_moment_examples() {
        assert_abs_diff_eq!(dirac(vec![0.0]).second_moment(), 0.0);
        let m = DiscreteMeasure::new(vec![vec![0.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(m.second_moment(), 2.0);
    }

    #[test]
    fn duplicate_points_rejected_and_merged() {
        let dup = DiscreteMeasure::new(vec![vec![1.0], vec![1.0]], vec![0.5, 0.5]);
        assert!(matches!(dup, Err(Error::InvalidMeasure(_))));
        let merged =
            DiscreteMeasure::from_points_merging(vec![vec![1.0], vec![1.0], vec![2.0]], vec![0.25, 0.25, 0.5])
                .unwrap();
        assert_eq!(merged.len(), 2);
        assert_abs_diff_eq!(merged.weights()[0], 0.5);
    }

    #[test]
    fn weights_must_normalize() {
        let bad = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.6, 0.6]);
        assert!(bad.is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = DiscreteMeasure::new(vec![vec![0.0, 1.0], vec![2.0, -1.0]], vec![0.25, 0.75]).unwrap();
        let back = DiscreteMeasure::from_csv(&m.to_csv()).unwrap();
        assert_eq!(m, back);
    }
}
