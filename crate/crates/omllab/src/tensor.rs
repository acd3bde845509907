//! Dense 64-bit float tensors: the storage type for parameters, data batches
//! and checkpoint payloads. Shapes are at most rank 2 (scalar, vector, matrix).

use crate::error::GraphError;

/// A dense row-major f64 tensor. `shape` is `[]` for scalars, `[n]` for
/// vectors and `[rows, cols]` for matrices. All stored values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, checking the shape/length contract and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GraphError> {
        if numel(&shape) != data.len() {
            return Err(GraphError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GraphError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Result<Self, GraphError> {
        Tensor::from_vec(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, GraphError> {
        let n = data.len();
        Tensor::from_vec(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GraphError> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a matrix (a vector is one row, a scalar a 1x1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    /// Stacks row vectors of equal width into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(GraphError::ShapeMismatch {
                    op: "from_rows",
                    detail: format!("row width {} != {}", r.len(), cols),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(vec![rows.len(), cols], data)
    }

    /// Row-concatenation of matrices with equal column counts.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self, GraphError> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for t in parts {
            if t.shape.len() != 2 || t.cols() != cols {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("expected matrices with {} cols, got {:?}", cols, t.shape),
                });
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// One row of a matrix as a plain vec.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0]).is_err());
        assert!(Tensor::from_vec(vec![2], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::from_vec(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn concat_rows_stacks() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
