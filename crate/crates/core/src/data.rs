use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::VARIANCE_FLOOR_RATIO;
use crate::math::Matrix;

/// `n` observations in `R^Q`, with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Matrix,
    pub true_states: Option<Vec<usize>>,
    pub true_components: Option<Vec<usize>>,
    pub source: String,
    variance_scale: f64,
}

impl Dataset {
    pub fn new(observations: Matrix, source: impl Into<String>) -> Result<Self> {
        let n = observations.rows();
        if n < 2 {
            return Err(Error::Size { needed: 2, found: n });
        }
        if observations.cols() == 0 {
            return Err(Error::Parameter("observations have no coordinates".into()));
        }
        if let Some(pos) = observations.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite value at row {}, column {}",
                pos / observations.cols(),
                pos % observations.cols()
            )));
        }
        let variance_scale = mean_coordinate_variance(&observations);
        Ok(Self {
            observations,
            true_states: None,
            true_components: None,
            source: source.into(),
            variance_scale,
        })
    }

    pub fn with_truth(mut self, states: Option<Vec<usize>>, components: Option<Vec<usize>>) -> Result<Self> {
        for labels in [&states, &components].into_iter().flatten() {
            if labels.len() != self.len() {
                return Err(Error::Dimension {
                    expected: self.len(),
                    found: labels.len(),
                });
            }
        }
        self.true_states = states;
        self.true_components = components;
        Ok(self)
    }

    pub fn observations(&self) -> &Matrix {
        &self.observations
    }

    #[inline]
    pub fn point(&self, t: usize) -> &[f64] {
        self.observations.row(t)
    }

    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.cols()
    }

    /// Average per-coordinate variance of the whole sample.
    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }

    /// Lower bound applied to covariance eigenvalues during estimation.
    pub fn variance_floor(&self) -> f64 {
        VARIANCE_FLOOR_RATIO * self.variance_scale
    }
}

fn mean_coordinate_variance(x: &Matrix) -> f64 {
    let (n, q) = (x.rows() as f64, x.cols());
    let mut total = 0.0;
    for j in 0..q {
        let mean = x.iter_rows().map(|r| r[j]).sum::<f64>() / n;
        total += x.iter_rows().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
    }
    let v = total / q as f64;
    // A constant sample still needs a positive floor.
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_or_invalid_samples() {
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(Dataset::new(one, "x"), Err(Error::Size { .. })));
        let nan = Matrix::from_rows(&[[1.0, 2.0], [f64::NAN, 0.0]]).unwrap();
        assert!(Dataset::new(nan, "x").is_err());
    }

    #[test]
    fn floor_scales_with_data() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        let d = Dataset::new(m, "x").unwrap();
        // variances 1 and 4
        assert!((d.variance_scale() - 2.5).abs() < 1e-15);
        assert!((d.variance_floor() - 2.5e-6).abs() < 1e-20);
    }

    #[test]
    fn truth_length_is_checked() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let d = Dataset::new(m, "x").unwrap();
        assert!(d.clone().with_truth(Some(vec![0, 1]), None).is_err());
        assert!(d.with_truth(Some(vec![0, 1, 1]), Some(vec![0, 0, 1])).is_ok());
    }
}
