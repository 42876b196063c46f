//! Dense row-major tensors.
//!
//! `Tensor` is a plain value type: shape plus row-major data. Gradient
//! tracking lives in [`crate::params`] (per-parameter grad buffers) and
//! [`crate::tape`] (node identity within a recording); this keeps the value
//! type `Send + Sync` and trivially clonable.
//!
//! Values are validated finite at construction, so every op boundary that
//! builds its output through [`Tensor::from_vec`] fails fast on NaN/Inf.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, checking element count and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape, data })
    }

    /// 2-D constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// 1x1 tensor; the engine's scalar convention.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Gaussian init with mean 0. Samples are drawn in `f64` and converted,
    /// so a given seed yields the same weights for every scalar type.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(z * std)
            })
            .collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> Result<T> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Row count, requiring a 2-D shape.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Consumes the tensor, returning its data.
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// FNV-1a hash over the little-endian `f64` bit patterns. Used by the
    /// freeze-contract tests to detect any bitwise change.
    pub fn bit_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.as_f64().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

// --- raw kernels -----------------------------------------------------------
//
// Pure forward computations shared by the tape ops and by gradient-free
// paths (greedy decoding, evaluation).

/// `a[m x k] @ b[k x n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    // i-k-j order: streams over b's rows and the output row.
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out).map_err(|_| Error::NonFinite { op: "matmul" })
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.get(i, j);
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape().to_vec(), data).map_err(|_| Error::NonFinite { op: "add" })
}

/// Adds a `[1 x n]` bias row to every row of `a[m x n]`.
pub fn add_row<T: Scalar>(a: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if !bias.is_matrix() || bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "add_row",
            lhs: a.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let n = a.cols();
    let mut data = Vec::with_capacity(a.numel());
    for i in 0..a.rows() {
        for (j, &v) in a.row(i).iter().enumerate().take(n) {
            data.push(v + bias.data()[j]);
        }
    }
    Tensor::from_vec(a.shape().to_vec(), data).map_err(|_| Error::NonFinite { op: "add_row" })
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "hadamard",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape().to_vec(), data).map_err(|_| Error::NonFinite { op: "hadamard" })
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
    Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|&v| v * c).collect())
        .map_err(|_| Error::NonFinite { op: "scale" })
}

/// Smooth GELU (tanh form).
pub fn gelu_val<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::from_f64(0.044_715);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// Derivative of [`gelu_val`].
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044_715);
    let three_k = T::from_f64(3.0 * 0.044_715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three_k * x * x)
}

pub fn gelu<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|&v| gelu_val(v)).collect())
        .map_err(|_| Error::NonFinite { op: "gelu" })
}

/// Row-wise softmax; `causal` masks entries `j > i` (square input expected
/// when set). Numerically stabilized with the row max.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    let (m, n) = (a.rows(), a.cols());
    if causal && m != n {
        return Err(Error::Contract(format!(
            "causal softmax expects a square matrix, got {:?}",
            a.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let limit = if causal { i + 1 } else { n };
        let row = a.row(i);
        let mut max = row[0];
        for &v in &row[..limit] {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for j in 0..limit {
            let e = (row[j] - max).exp();
            out[i * n + j] = e;
            sum += e;
        }
        for v in &mut out[i * n..i * n + limit] {
            *v = *v / sum;
        }
    }
    Tensor::from_vec(a.shape().to_vec(), out).map_err(|_| Error::NonFinite { op: "softmax" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn from_vec_rejects_shape_mismatch_and_nan() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0f64; 3]).is_err());
        assert!(Tensor::from_vec(vec![1, 2], vec![1.0f64, f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![1, 2], vec![1.0f64, f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_identity_leaves_input_unchanged() {
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(3, 3, vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 7.0, 1.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_computed_product() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_of_zeros_annihilates() {
        let z = Tensor::<f64>::zeros(vec![2, 3]);
        let ones = Tensor::full(vec![3, 2], 1.0f64);
        let c = matmul(&z, &ones).unwrap();
        assert_eq!(c.data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn randn_is_seed_deterministic_and_width_consistent() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f64>::randn(3, 4, 0.02, &mut r1);
        let b = Tensor::<f64>::randn(3, 4, 0.02, &mut r2);
        assert_eq!(a, b);

        let mut r3 = ChaCha8Rng::seed_from_u64(7);
        let c = Tensor::<f32>::randn(3, 4, 0.02, &mut r3);
        for (x, y) in a.data().iter().zip(c.data()) {
            assert_eq!(*y, *x as f32);
        }
    }

    #[test]
    fn causal_softmax_zeroes_future_positions() {
        let a = Tensor::matrix(3, 3, vec![0.0f64; 9]).unwrap();
        let s = softmax_rows(&a, true).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(1, 2), 0.0);
        assert!((s.get(2, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu_val(x + h) - gelu_val(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
