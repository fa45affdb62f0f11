use crate::{Error, Result, Scalar};

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension { what: "tensor data", expected: n, got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => (0, 0),
        }
    }

    /// `x · self` for a `[in, out]` matrix.
    pub fn vecmat(&self, x: &[T]) -> Result<Vec<T>> {
        let (r, c) = self.rows_cols();
        if x.len() != r {
            return Err(Error::Dimension { what: "matrix input", expected: r, got: x.len() });
        }
        let mut y = vec![T::zero(); c];
        for (row, &xi) in self.data.chunks_exact(c).zip(x) {
            if xi == T::zero() {
                continue;
            }
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += xi * w;
            }
        }
        Ok(y)
    }

    /// `self · dy` for a `[in, out]` matrix: the input gradient of `vecmat`.
    pub fn matvec(&self, dy: &[T]) -> Vec<T> {
        let (_, c) = self.rows_cols();
        self.data.chunks_exact(c).map(|row| row.iter().zip(dy).map(|(&w, &d)| w * d).sum()).collect()
    }

    /// `self += x^T · dy`.
    pub fn add_outer(&mut self, x: &[T], dy: &[T]) {
        let (_, c) = self.rows_cols();
        for (row, &xi) in self.data.chunks_exact_mut(c).zip(x) {
            if xi == T::zero() {
                continue;
            }
            for (g, &d) in row.iter_mut().zip(dy) {
                *g += xi * d;
            }
        }
    }

    pub fn add_slice(&mut self, v: &[T]) {
        for (a, &b) in self.data.iter_mut().zip(v) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn vecmat_matches_hand_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(w.vecmat(&[1.0, -1.0]).unwrap(), vec![-3.0, -3.0, -3.0]);
        assert_eq!(w.matvec(&[1.0, 0.0, 1.0]), vec![4.0, 10.0]);
        assert!(w.vecmat(&[1.0]).is_err());
    }

    #[test]
    fn outer_accumulates() {
        let mut g = Tensor::<f64>::zeros(&[2, 2]);
        g.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        g.add_outer(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(g.data(), &[4.0, 5.0, 6.0, 8.0]);
    }
}
