//! Dense row-major 64-bit float arrays with explicit shapes.

use crate::error::{Error, Result};

/// A dense array of `f64` values in row-major order.
///
/// Invariants enforced at construction: the shape product equals the data
/// length, the tensor holds at least one element, and every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected == 0 {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} must have at least one element"
            )));
        }
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some((i, bad)) = data.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite tensor entry {bad} at flat index {i}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![1], vec![x])
    }

    /// An all-zeros tensor. Panics if the shape is empty or has a zero dim.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert!(!shape.is_empty() && n > 0, "zero-sized tensor shape {shape:?}");
        Self { shape, data: vec![0.0; n] }
    }

    /// Builds a rank-2 tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("from_rows requires at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("from_rows requires equal-length rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty tensors
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Contract(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> Result<&[f64]> {
        let (rows, cols) = self.dims2()?;
        if r >= rows {
            return Err(Error::Contract(format!("row {r} out of range 0..{rows}")));
        }
        Ok(&self.data[r * cols..(r + 1) * cols])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn new_rejects_non_finite_entries() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn from_rows_builds_row_major() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.row(1).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        assert!(Tensor::from_rows(&[vec![1.0], vec![2.0, 3.0]]).is_err());
    }
}
