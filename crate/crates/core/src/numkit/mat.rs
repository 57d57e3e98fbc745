//! Dense row-major f64 matrices with deterministic arithmetic.
//!
//! Every reduction (matrix products, row sums, norms) accumulates
//! left-to-right in index order, so identical inputs give bit-identical
//! outputs on every run. The multiply kernels iterate i-k-j, which keeps
//! that per-element accumulation order while letting the inner loop
//! vectorize over contiguous rows.

use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Dense 2-D array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn shape_err(op: &'static str, a: &Mat, b: &Mat) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: format!("{}x{}", a.rows, a.cols),
        rhs: format!("{}x{}", b.rows, b.cols),
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        assert!(rows > 0 && cols > 0, "Mat dimensions must be positive");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "Mat::from_vec: {} elements for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig(
                "Mat::from_vec: non-finite element".into(),
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Single-column matrix from a slice.
    pub fn col(values: &[f64]) -> Mat {
        Mat::from_vec(values.len(), 1, values.to_vec()).expect("finite column vector")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Mat {
        Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Standard product `self · b`. Each output element accumulates over k
    /// in ascending order starting from 0.0.
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.rows {
            return Err(shape_err("matmul", self, b));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        let n = b.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                let b_row = &b.data[k * n..(k + 1) * n];
                for j in 0..n {
                    out_row[j] += aik * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` without materializing the transpose; same per-element
    /// accumulation order as `self.transpose().matmul(b)`.
    pub fn matmul_tn(&self, b: &Mat) -> Result<Mat> {
        if self.rows != b.rows {
            return Err(shape_err("matmul_tn", self, b));
        }
        let mut out = Mat::zeros(self.cols, b.cols);
        let n = b.cols;
        for k in 0..self.rows {
            let a_row = &self.data[k * self.cols..(k + 1) * self.cols];
            let b_row = &b.data[k * n..(k + 1) * n];
            for i in 0..self.cols {
                let aki = a_row[i];
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    out_row[j] += aki * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.cols {
            return Err(shape_err("matmul_nt", self, b));
        }
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..b.rows {
                let b_row = &b.data[j * self.cols..(j + 1) * self.cols];
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += a_row[k] * b_row[k];
                }
                out.data[i * b.rows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn zip(&self, b: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != b.shape() {
            return Err(shape_err(op, self, b));
        }
        let data = self
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, b: &Mat) -> Result<Mat> {
        self.zip(b, "add", |x, y| x + y)
    }

    pub fn sub(&self, b: &Mat) -> Result<Mat> {
        self.zip(b, "sub", |x, y| x - y)
    }

    /// Element-wise product.
    pub fn hadamard(&self, b: &Mat) -> Result<Mat> {
        self.zip(b, "hadamard", |x, y| x * y)
    }

    pub fn add_assign(&mut self, b: &Mat) -> Result<()> {
        if self.shape() != b.shape() {
            return Err(shape_err("add_assign", self, b));
        }
        for (x, y) in self.data.iter_mut().zip(&b.data) {
            *x += y;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|x| x * s)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// Logistic sigmoid, numerically stable on both tails.
    pub fn sigmoid(&self) -> Mat {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Mat {
        self.map(f64::tanh)
    }

    /// 1 − x, element-wise.
    pub fn sub_from_one(&self) -> Mat {
        self.map(|x| 1.0 - x)
    }

    /// Column vector of row sums (sums left-to-right across each row).
    pub fn row_sums(&self) -> Mat {
        let mut out = Mat::zeros(self.rows, 1);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self.data[r * self.cols + c];
            }
            out.data[r] = acc;
        }
        out
    }

    /// Add a column vector to every column of self.
    pub fn add_col_broadcast(&self, bias: &Mat) -> Result<Mat> {
        if bias.cols != 1 || bias.rows != self.rows {
            return Err(shape_err("add_col_broadcast", self, bias));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = bias.data[r];
            for c in 0..self.cols {
                out.data[r * self.cols + c] += b;
            }
        }
        Ok(out)
    }

    /// Frobenius / L2 norm over all elements.
    pub fn l2_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn sum_squares(&self) -> f64 {
        let mut acc = 0.0;
        for &x in &self.data {
            acc += x * x;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W·a + U·b + bias` with bias broadcast across columns. Every gate
/// pre-activation in the cell family is an instance of this.
pub fn affine_pair(w: &Mat, a: &Mat, u: &Mat, b: &Mat, bias: &Mat) -> Result<Mat> {
    let wa = w.matmul(a)?;
    let ub = u.matmul(b)?;
    wa.add(&ub)?.add_col_broadcast(bias)
}

/// Numerically stable softmax + categorical cross-entropy over each column.
///
/// `targets[c]` is the class index for column c. Returns the summed loss
/// (natural log) over columns and the gradient `softmax(logits) − onehot`.
pub fn softmax_cce(logits: &Mat, targets: &[usize]) -> Result<(f64, Mat)> {
    let v = logits.rows();
    if targets.len() != logits.cols() {
        return Err(Error::InvalidConfig(format!(
            "softmax_cce: {} targets for {} columns",
            targets.len(),
            logits.cols()
        )));
    }
    for &t in targets {
        if t >= v {
            return Err(Error::TargetOutOfRange {
                target: t,
                classes: v,
            });
        }
    }
    let mut grad = Mat::zeros(v, logits.cols());
    let mut loss_sum = 0.0;
    for c in 0..logits.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..v {
            max = max.max(logits.get(r, c));
        }
        let mut denom = 0.0;
        for r in 0..v {
            denom += (logits.get(r, c) - max).exp();
        }
        let log_denom = denom.ln();
        loss_sum += log_denom - (logits.get(targets[c], c) - max);
        for r in 0..v {
            let p = (logits.get(r, c) - max).exp() / denom;
            grad.set(r, c, p - if r == targets[c] { 1.0 } else { 0.0 });
        }
    }
    Ok((loss_sum, grad))
}

/// Glorot-uniform initialization: i.i.d. on [−L, L], L = √(6/(rows+cols)).
pub fn glorot_init(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-limit, limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent naive triple-loop oracle, i-j-k order.
    fn matmul_oracle(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_mat(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn matmul_identity() {
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i2 = Mat::identity(2);
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_forced_arithmetic() {
        let a = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Mat::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_naive_oracle_exactly() {
        let mut rng = Rng::new(99);
        let a = random_mat(&mut rng, 5, 7);
        let b = random_mat(&mut rng, 7, 3);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert_eq!(got.data(), want.data(), "bit-exact match required");
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(4, 5);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x5"), "{err}");
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = Rng::new(3);
        let a = random_mat(&mut rng, 6, 4);
        let b = random_mat(&mut rng, 6, 5);
        let c = random_mat(&mut rng, 4, 5);
        let x = random_mat(&mut rng, 7, 5);
        assert_eq!(
            a.matmul_tn(&b).unwrap().data(),
            a.transpose().matmul(&b).unwrap().data()
        );
        assert_eq!(
            c.matmul_nt(&x).unwrap().data(),
            c.matmul(&x.transpose()).unwrap().data()
        );
    }

    #[test]
    fn affine_pair_zero_annihilation() {
        let w = Mat::zeros(2, 3);
        let a = Mat::col(&[1.0, 2.0, 3.0]);
        let u = Mat::zeros(2, 2);
        let b = Mat::col(&[4.0, 5.0]);
        let bias = Mat::zeros(2, 1);
        let out = affine_pair(&w, &a, &u, &b, &bias).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_pair_identity_shift() {
        let w = Mat::identity(2);
        let a = Mat::col(&[1.0, 2.0]);
        let u = Mat::zeros(2, 2);
        let b = Mat::col(&[9.0, 9.0]);
        let bias = Mat::col(&[1.0, 1.0]);
        let out = affine_pair(&w, &a, &u, &b, &bias).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
    }

    #[test]
    fn affine_pair_matches_composition_oracle() {
        let mut rng = Rng::new(11);
        let w = random_mat(&mut rng, 4, 3);
        let a = random_mat(&mut rng, 3, 1);
        let u = random_mat(&mut rng, 4, 4);
        let b = random_mat(&mut rng, 4, 1);
        let bias = random_mat(&mut rng, 4, 1);
        let got = affine_pair(&w, &a, &u, &b, &bias).unwrap();
        let want = matmul_oracle(&w, &a)
            .add(&matmul_oracle(&u, &b))
            .unwrap()
            .add(&bias)
            .unwrap();
        for (g, w_) in got.data().iter().zip(want.data()) {
            assert!((g - w_).abs() < 1e-15);
        }
    }

    #[test]
    fn elementwise_basics() {
        assert_eq!(Mat::col(&[0.0]).sigmoid().data(), &[0.5]);
        assert_eq!(Mat::col(&[0.0]).tanh().data(), &[0.0]);
        let h = Mat::col(&[2.0, 3.0])
            .hadamard(&Mat::col(&[4.0, 5.0]))
            .unwrap();
        assert_eq!(h.data(), &[8.0, 15.0]);
        assert_eq!(Mat::col(&[0.25, 1.0]).sub_from_one().data(), &[0.75, 0.0]);
    }

    #[test]
    fn logistic_symmetry() {
        // 1 − σ(x) = σ(−x)
        let mut rng = Rng::new(5);
        let x = random_mat(&mut rng, 8, 8).scale(20.0);
        let lhs = x.sigmoid().sub_from_one();
        let rhs = x.scale(-1.0).sigmoid();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_cce_uniform_is_log_v() {
        let logits = Mat::zeros(27, 1);
        let (loss, _) = softmax_cce(&logits, &[13]).unwrap();
        assert!((loss - 27f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn softmax_cce_saturated_correct_prediction() {
        let mut logits = Mat::zeros(10, 1);
        logits.set(4, 0, 1e3);
        let (loss, _) = softmax_cce(&logits, &[4]).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn softmax_cce_loss_nonnegative() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let logits = random_mat(&mut rng, 9, 3).scale(10.0);
            let (loss, _) = softmax_cce(&logits, &[0, 4, 8]).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn softmax_cce_target_out_of_range() {
        let logits = Mat::zeros(5, 1);
        assert!(matches!(
            softmax_cce(&logits, &[5]),
            Err(Error::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_cce_grad_matches_finite_differences() {
        let mut rng = Rng::new(23);
        let logits = random_mat(&mut rng, 7, 1).scale(2.0);
        let target = [3usize];
        let (_, grad) = softmax_cce(&logits, &target).unwrap();
        let h = 1e-6;
        for r in 0..7 {
            let mut plus = logits.clone();
            plus.set(r, 0, logits.get(r, 0) + h);
            let mut minus = logits.clone();
            minus.set(r, 0, logits.get(r, 0) - h);
            let (lp, _) = softmax_cce(&plus, &target).unwrap();
            let (lm, _) = softmax_cce(&minus, &target).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let a = grad.get(r, 0);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel <= 1e-7, "row {r}: analytic {a}, fd {fd}, rel {rel}");
        }
    }

    #[test]
    fn glorot_bound_and_determinism() {
        let limit = (6.0 / 200.0f64).sqrt();
        let mut rng = Rng::new(1);
        let a = glorot_init(&mut rng, 100, 100);
        assert!(a.data().iter().all(|x| x.abs() <= limit));
        let mut rng2 = Rng::new(1);
        let b = glorot_init(&mut rng2, 100, 100);
        assert_eq!(a.data(), b.data(), "same seed, identical bytes");
    }

    #[test]
    fn glorot_variance_monte_carlo() {
        // Var of U(−L, L) is L²/3 = 2/(rows+cols).
        let mut rng = Rng::new(2024);
        let rows = 1000;
        let cols = 1000;
        let a = glorot_init(&mut rng, rows, cols);
        let n = a.len() as f64;
        let mean: f64 = a.data().iter().sum::<f64>() / n;
        let var: f64 = a.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let want = 2.0 / (rows + cols) as f64;
        assert!((var - want).abs() / want < 0.05, "var {var}, want {want}");
    }

    #[test]
    fn row_sums_and_broadcast() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.row_sums().data(), &[6.0, 15.0]);
        let b = a.add_col_broadcast(&Mat::col(&[10.0, 20.0])).unwrap();
        assert_eq!(b.data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Mat::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Mat::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }
}
