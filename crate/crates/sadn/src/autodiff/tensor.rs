//! Dense rank-4 tensor of f64 values, laid out (batch, channels, height, width).

use rand::Rng;

use crate::{Error, Result};

/// Row-major (n, c, h, w) tensor. Rank-1 data such as biases is stored as
/// `[1, c, 1, 1]`, scalars as `[1, 1, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: [1, 1, 1, 1], data: vec![value] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Uniform values in `[lo, hi)` drawn from `rng` in index order.
    pub fn rand_uniform<R: Rng>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!("expected scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    #[inline]
    pub fn index_of(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(n < self.shape[0] && c < self.shape[1] && i < self.shape[2] && j < self.shape[3]);
        ((n * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j
    }

    /// Contiguous row `(n, c, i, ..)`.
    #[inline]
    pub fn row(&self, n: usize, c: usize, i: usize) -> &[f64] {
        let start = self.index_of(n, c, i, 0);
        &self.data[start..start + self.shape[3]]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, c: usize, i: usize) -> &mut [f64] {
        let start = self.index_of(n, c, i, 0);
        let w = self.shape[3];
        &mut self.data[start..start + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "accumulate on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat dot product; shapes must match.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dot on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

impl std::ops::Index<[usize; 4]> for Tensor {
    type Output = f64;
    #[inline]
    fn index(&self, idx: [usize; 4]) -> &f64 {
        &self.data[self.index_of(idx[0], idx[1], idx[2], idx[3])]
    }
}

impl std::ops::IndexMut<[usize; 4]> for Tensor {
    #[inline]
    fn index_mut(&mut self, idx: [usize; 4]) -> &mut f64 {
        let i = self.index_of(idx[0], idx[1], idx[2], idx[3]);
        &mut self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major() {
        let t = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t[[0, 0, 0, 0]], 0.0);
        assert_eq!(t[[0, 0, 1, 2]], 5.0);
        assert_eq!(t[[0, 1, 0, 0]], 6.0);
        assert_eq!(t[[0, 1, 1, 2]], 11.0);
        assert_eq!(t.row(0, 1, 0), &[6.0, 7.0, 8.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn rand_uniform_respects_bounds() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t = Tensor::rand_uniform([2, 3, 4, 5], -0.25, 0.25, &mut rng);
        assert!(t.data().iter().all(|&v| (-0.25..0.25).contains(&v)));
    }
}
