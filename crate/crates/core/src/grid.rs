use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major H×W field of latent values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self { height, width, values: vec![v; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("latent values must be finite".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.width + c] = v;
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            })
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> LatentGrid {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`; shapes must match.
    pub fn zip_map(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<LatentGrid> {
        self.check_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scaled(&self, k: f64) -> LatentGrid {
        self.map(|v| v * k)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sq_dist(&self, other: &LatentGrid) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bitwise equality, distinguishing signed zeros.
    pub fn bit_eq(&self, other: &LatentGrid) -> bool {
        self.same_shape(other)
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_non_finite() {
        assert!(LatentGrid::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(LatentGrid::from_vec(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(LatentGrid::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn moments() {
        let g = LatentGrid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.mean(), 2.5);
        assert!((g.std() - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(g.get(1, 0), 3.0);
    }
}
