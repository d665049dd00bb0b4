use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major array with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension { op: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(value: F) -> Self {
        Self { shape: vec![], data: vec![value], requires_grad: false, grad: None }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension { op: "from_rows", lhs: vec![cols], rhs: vec![row.len()] });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Marks the tensor as differentiable, allocating a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on {
            if self.grad.is_none() {
                self.grad = Some(vec![F::zero(); self.data.len()]);
            }
        } else {
            self.grad = None;
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[F] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension { op: "reshape", lhs: self.shape, rhs: shape });
        }
        self.shape = shape;
        Ok(self)
    }

    /// First `n` rows of a 2-D tensor.
    pub fn take_rows(&self, n: usize) -> Self {
        let d = self.last_dim();
        let n = n.min(self.rows());
        let mut shape = self.shape.clone();
        shape[0] = n;
        Self { shape, data: self.data[..n * d].to_vec(), requires_grad: false, grad: None }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion (gradient state is dropped).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(G::nan())).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).abs()).fold(F::zero(), F::max)
    }
}

/// Bit-level equality: shape plus the IEEE bit patterns of every element.
pub fn bit_identical(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn grad_tracks_flag() {
        let mut t = Tensor::<f32>::zeros(&[2, 2]).with_grad();
        assert_eq!(t.grad().unwrap().len(), 4);
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
    }

    #[test]
    fn bit_identity_sees_signed_zero() {
        let a = Tensor::new(vec![1], vec![0.0f32]).unwrap();
        let b = Tensor::new(vec![1], vec![-0.0f32]).unwrap();
        assert_eq!(a, b);
        assert!(!bit_identical(&a, &b));
    }
}
