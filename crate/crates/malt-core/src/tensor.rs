//! Dense row-major f64 tensors and the raw math kernels.
//!
//! Everything is 64-bit and single-threaded with a fixed reduction order, so
//! results are bit-reproducible run to run. Values are finite except for the
//! IEEE `-inf` sentinel that masking writes into attention score matrices.

use crate::error::{shape_str, MaltError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(MaltError::Contract(format!(
                "tensor: shape {} implies {} elements, got {}",
                shape_str(&shape),
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// 1x1 tensor holding a single value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// Build a matrix from rows; rows must have equal length.
    pub fn matrix(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Tensor {
            shape: vec![r, c],
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// True for 1x1 tensors (the shape every loss must have).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape == [1, 1]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-singleton tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert!(self.is_matrix(), "rows() on non-matrix");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert!(self.is_matrix(), "cols() on non-matrix");
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_matrix(&self, op: &'static str) -> Result<()> {
        if !self.is_matrix() {
            return Err(MaltError::ShapeMismatch {
                op,
                lhs: shape_str(&self.shape),
                rhs: "a 2-d matrix".into(),
            });
        }
        Ok(())
    }
}

/// C = A @ B. Fixed i-k-j loop order; deterministic and autovectorizes well.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_matrix("matmul")?;
    b.check_matrix("matmul")?;
    let (m, p) = (a.shape[0], a.shape[1]);
    let (p2, q) = (b.shape[0], b.shape[1]);
    if p != p2 {
        return Err(MaltError::ShapeMismatch {
            op: "matmul",
            lhs: shape_str(&a.shape),
            rhs: shape_str(&b.shape),
        });
    }
    let mut out = vec![0.0; m * q];
    for i in 0..m {
        let arow = &a.data[i * p..(i + 1) * p];
        let orow = &mut out[i * q..(i + 1) * q];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * q..(k + 1) * q];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Tensor::new(vec![m, q], out)
}

/// C = A @ B^T, computed as row-row dot products.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_matrix("matmul_nt")?;
    b.check_matrix("matmul_nt")?;
    let (m, p) = (a.shape[0], a.shape[1]);
    let (n, p2) = (b.shape[0], b.shape[1]);
    if p != p2 {
        return Err(MaltError::ShapeMismatch {
            op: "matmul_nt",
            lhs: shape_str(&a.shape),
            rhs: shape_str(&b.shape),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * p..(i + 1) * p];
        for j in 0..n {
            let brow = &b.data[j * p..(j + 1) * p];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    a.check_matrix("transpose")?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(MaltError::ShapeMismatch {
            op: "add",
            lhs: shape_str(&a.shape),
            rhs: shape_str(&b.shape),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(MaltError::ShapeMismatch {
            op: "hadamard",
            lhs: shape_str(&a.shape),
            rhs: shape_str(&b.shape),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x * c).collect(),
    }
}

/// Matrix plus a broadcast row vector (bias add).
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    a.check_matrix("add_row")?;
    let d = a.shape[1];
    if row.numel() != d {
        return Err(MaltError::ShapeMismatch {
            op: "add_row",
            lhs: shape_str(&a.shape),
            rhs: shape_str(&row.shape),
        });
    }
    let mut out = a.data.clone();
    for r in out.chunks_mut(d) {
        for (o, b) in r.iter_mut().zip(&row.data) {
            *o += b;
        }
    }
    Tensor::new(a.shape.clone(), out)
}

/// Row-wise softmax, stabilized by subtracting the row max. `-inf` entries map
/// to exactly 0; a row with no finite entry is an invalid mask.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    a.check_matrix("softmax_rows")?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(MaltError::InvalidMask(format!(
                "softmax row {i} has no finite entry"
            )));
        }
        let orow = &mut out[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            // exp(-inf - max) = 0 exactly
            *o = (x - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(a.shape.clone(), out)
}

/// Per-row normalization to zero mean / unit variance, then affine.
/// `gain` and `bias` have length = columns of `x`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    x.check_matrix("layer_norm")?;
    let (m, d) = (x.shape[0], x.shape[1]);
    if gain.numel() != d || bias.numel() != d {
        return Err(MaltError::ShapeMismatch {
            op: "layer_norm",
            lhs: shape_str(&x.shape),
            rhs: format!("gain {} / bias {}", shape_str(&gain.shape), shape_str(&bias.shape)),
        });
    }
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        let row = &x.data[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            orow[j] = (row[j] - mean) * inv_std * gain.data[j] + bias.data[j];
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Gaussian error linear unit, tanh form. Smooth everywhere, which keeps
/// central-difference gradient checks tight.
pub fn gelu_scalar(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let u = SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let u = SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_expansion() {
        let a = Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::matrix(vec![vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Tensor::matrix(vec![vec![19.0, 22.0], vec![43.0, 50.0]]));
    }

    #[test]
    fn matmul_identity_left() {
        let i2 = Tensor::matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_dimension_error_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_mask() {
        let s = softmax_rows(&Tensor::matrix(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let masked = softmax_rows(&Tensor::matrix(vec![vec![f64::NEG_INFINITY, 0.0]])).unwrap();
        assert_eq!(masked.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_direct_evaluation() {
        let s = softmax_rows(&Tensor::matrix(vec![vec![1.0, 2.0, 3.0]])).unwrap();
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_7, 0.665_240_955_774_821_8];
        for (a, e) in s.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn softmax_all_masked_row_errors() {
        let t = Tensor::matrix(vec![vec![f64::NEG_INFINITY, f64::NEG_INFINITY]]);
        assert!(matches!(softmax_rows(&t), Err(MaltError::InvalidMask(_))));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::matrix(vec![vec![5.0, 5.0, 5.0]]);
        let gain = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let bias = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = Tensor::matrix(vec![vec![1.0, -1.0]]);
        let gain = Tensor::vector(vec![1.0, 1.0]);
        let bias = Tensor::vector(vec![0.0, 0.0]);
        let y = layer_norm(&x, &gain, &bias, 1e-15).unwrap();
        assert!((y.at(0, 0) - 1.0).abs() < 1e-7);
        assert!((y.at(0, 1) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let x = Tensor::matrix(vec![vec![3.0, -2.0, 9.0]]);
        let gain = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let bias = Tensor::vector(vec![0.25, -1.0, 4.0]);
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn add_row_broadcasts() {
        let a = Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::vector(vec![10.0, 20.0]);
        let c = add_row(&a, &b).unwrap();
        assert_eq!(c, Tensor::matrix(vec![vec![11.0, 22.0], vec![13.0, 24.0]]));
    }
}
