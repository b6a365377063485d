//! Tensor values at a point: `n^(r+s)` components, contravariant indices first,
//! row-major.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tensor rank `(r, s)`: `r` contravariant and `s` covariant slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rank {
    pub contra: usize,
    pub co: usize,
}

impl Rank {
    pub const SCALAR: Rank = Rank { contra: 0, co: 0 };
    pub const VECTOR: Rank = Rank { contra: 1, co: 0 };
    pub const COVECTOR: Rank = Rank { contra: 0, co: 1 };

    pub fn new(contra: usize, co: usize) -> Self {
        Rank { contra, co }
    }

    /// Rank of the dual fields paired with this one.
    pub fn dual(self) -> Rank {
        Rank {
            contra: self.co,
            co: self.contra,
        }
    }

    pub fn order(self) -> usize {
        self.contra + self.co
    }

    pub fn components(self, n: usize) -> usize {
        n.pow(self.order() as u32)
    }

    pub(crate) fn expect(self, found: Rank) -> Result<()> {
        if self == found {
            Ok(())
        } else {
            Err(Error::RankMismatch {
                expected_contra: self.contra,
                expected_co: self.co,
                found_contra: found.contra,
                found_co: found.co,
            })
        }
    }
}

impl std::fmt::Display for Rank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.contra, self.co)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    rank: Rank,
    dim: usize,
    data: Vec<f64>,
}

impl TensorValue {
    pub fn new(rank: Rank, dim: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rank.components(dim);
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(TensorValue { rank, dim, data })
    }

    pub fn zeros(rank: Rank, dim: usize) -> Self {
        TensorValue {
            rank,
            dim,
            data: vec![0.0; rank.components(dim)],
        }
    }

    pub fn scalar(v: f64) -> Self {
        TensorValue {
            rank: Rank::SCALAR,
            dim: 0,
            data: vec![v],
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        TensorValue {
            rank: Rank::VECTOR,
            dim: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn covector(v: &[f64]) -> Self {
        TensorValue {
            rank: Rank::COVECTOR,
            dim: v.len(),
            data: v.to_vec(),
        }
    }

    /// The `index`-th element of the coordinate basis of the given rank.
    pub fn basis(rank: Rank, dim: usize, index: usize) -> Self {
        let mut t = TensorValue::zeros(rank, dim);
        t.data[index] = 1.0;
        t
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[f64] {
        &self.data
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_components(self) -> Vec<f64> {
        self.data
    }

    pub fn scale(&self, a: f64) -> TensorValue {
        TensorValue {
            rank: self.rank,
            dim: self.dim,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &TensorValue) -> Result<TensorValue> {
        self.rank.expect(other.rank)?;
        Ok(TensorValue {
            rank: self.rank,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Full contraction with a tensor of the dual rank.
    pub fn contract(&self, dual: &TensorValue) -> Result<f64> {
        self.rank.dual().expect(dual.rank)?;
        let n = self.dim.max(dual.dim);
        let r = self.rank.contra;
        let s = self.rank.co;
        if r == 0 || s == 0 || n <= 1 {
            return Ok(self.data.iter().zip(&dual.data).map(|(a, b)| a * b).sum());
        }
        // self index (I, J) pairs with dual index (J, I).
        let block_i = n.pow(r as u32);
        let block_j = n.pow(s as u32);
        let mut acc = 0.0;
        for i in 0..block_i {
            for j in 0..block_j {
                acc += self.data[i * block_j + j] * dual.data[j * block_i + i];
            }
        }
        Ok(acc)
    }

    /// Tensor product; slots are ordered `(I1, I2, J1, J2)`.
    pub fn tensor(&self, other: &TensorValue) -> TensorValue {
        let n = self.dim.max(other.dim);
        let (r1, s1) = (self.rank.contra, self.rank.co);
        let (r2, s2) = (other.rank.contra, other.rank.co);
        let (bi1, bj1) = (n.pow(r1 as u32), n.pow(s1 as u32));
        let (bi2, bj2) = (n.pow(r2 as u32), n.pow(s2 as u32));
        let rank = Rank::new(r1 + r2, s1 + s2);
        let mut data = vec![0.0; rank.components(n)];
        for i1 in 0..bi1 {
            for i2 in 0..bi2 {
                for j1 in 0..bj1 {
                    for j2 in 0..bj2 {
                        let i = i1 * bi2 + i2;
                        let j = j1 * bj2 + j2;
                        data[i * (bj1 * bj2) + j] =
                            self.data[i1 * bj1 + j1] * other.data[i2 * bj2 + j2];
                    }
                }
            }
        }
        TensorValue { rank, dim: n, data }
    }

    /// Applies `contra` to every contravariant slot and `co` to every
    /// covariant slot: `t'[..i'..] = sum_i M[i'][i] t[..i..]`.
    pub fn map_slots(&self, contra: &DMatrix<f64>, co: &DMatrix<f64>) -> TensorValue {
        let n = self.dim;
        let order = self.rank.order();
        let mut data = self.data.clone();
        let mut buf = vec![0.0; data.len()];
        for slot in 0..order {
            let m = if slot < self.rank.contra { contra } else { co };
            let stride = n.pow((order - 1 - slot) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for rest in 0..stride {
                    for i_new in 0..n {
                        let mut acc = 0.0;
                        for i_old in 0..n {
                            acc += m[(i_new, i_old)] * data[base + i_old * stride + rest];
                        }
                        buf[base + i_new * stride + rest] = acc;
                    }
                }
            }
            std::mem::swap(&mut data, &mut buf);
        }
        TensorValue {
            rank: self.rank,
            dim: n,
            data,
        }
    }

    /// Transports with the linear map `a`: contravariant slots get `a`,
    /// covariant slots the inverse adjoint `(a^-1)^T`.
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<TensorValue> {
        if self.rank.order() == 0 {
            return Ok(self.clone());
        }
        if self.rank.co == 0 {
            return Ok(self.map_slots(a, a));
        }
        let inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("transport matrix".into()))?;
        Ok(self.map_slots(a, &inv.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn contraction_of_vector_and_covector() {
        let v = TensorValue::vector(&[1.0, 2.0]);
        let w = TensorValue::covector(&[3.0, -1.0]);
        assert_eq!(v.contract(&w).unwrap(), 1.0);
        assert!(v.contract(&v).is_err());
    }

    #[test]
    fn mixed_contraction_is_trace_of_product() {
        let a = TensorValue::new(Rank::new(1, 1), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = TensorValue::new(Rank::new(1, 1), 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        // sum_ij a^i_j b^j_i = tr(AB)
        assert_eq!(a.contract(&b).unwrap(), 1.0 * 5.0 + 2.0 * 7.0 + 3.0 * 6.0 + 4.0 * 8.0);
    }

    #[test]
    fn transform_preserves_trace_and_pairing() {
        let a = mat(2, &[1.2, 0.3, -0.4, 0.9]);
        let t = TensorValue::new(Rank::new(1, 1), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tt = t.transform(&a).unwrap();
        let tr = |x: &TensorValue| x.components()[0] + x.components()[3];
        assert!((tr(&t) - tr(&tt)).abs() < 1e-12);
        let v = TensorValue::vector(&[0.5, -1.5]);
        let w = TensorValue::covector(&[2.0, 1.0]);
        let pv = v.transform(&a).unwrap().contract(&w.transform(&a).unwrap()).unwrap();
        assert!((pv - v.contract(&w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn transform_commutes_with_tensor_product() {
        let a = mat(2, &[1.1, -0.2, 0.25, 0.8]);
        let s = TensorValue::vector(&[0.3, 0.7]);
        let t = TensorValue::new(Rank::new(1, 1), 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let lhs = s.tensor(&t).transform(&a).unwrap();
        let rhs = s.transform(&a).unwrap().tensor(&t.transform(&a).unwrap());
        for (x, y) in lhs.components().iter().zip(rhs.components()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_is_untouched() {
        let a = mat(2, &[2.0, 0.0, 0.0, 2.0]);
        let s = TensorValue::scalar(3.5);
        assert_eq!(s.transform(&a).unwrap(), s);
    }
}
