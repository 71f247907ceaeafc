//! Dense f64 tensor and the numeric primitives the models build on.
//!
//! Tensors are immutable values once constructed: every public operation
//! returns a new tensor, so they are safe to share across threads. Data is
//! row-major contiguous.

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `shape` accounts for every element.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                what: format!("tensor with shape {shape:?}"),
                expected: format!("{expected} elements"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Dimension {
                    what: format!("row {i}"),
                    expected: format!("{c} columns"),
                    got: format!("{}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let len = data.len();
        Tensor {
            shape: vec![len],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Element of a rank-2 tensor.
    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub(crate) fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    /// Row `r` of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Same data, new shape (element counts must agree).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    /// Rank-2 tensor with the rows in reverse order.
    pub fn reverse_rows(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(r * c);
        for i in (0..r).rev() {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += k * other`, used by gradient accumulation and SGD.
    pub(crate) fn add_scaled_in_place(&mut self, other: &Tensor, k: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub(crate) fn scale_in_place(&mut self, k: f64) {
        for a in self.data.iter_mut() {
            *a *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Matrix product of a `M x K` and a `K x N` tensor, f64 accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for p in 0..k {
            let av = arow[p];
            let brow = b.row(p);
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], data)
}

/// Element-wise (Hadamard) product; shapes must match exactly.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op: "hadamard",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Matrix-vector product of a `N x M` tensor and a length-M slice.
pub(crate) fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let (n, m) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(out.len(), n);
    for i in 0..n {
        let row = w.row(i);
        let mut acc = 0.0;
        for j in 0..m {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

/// `out[j] += sum_i w[i][j] * d[i]`: transpose matvec, accumulating.
pub(crate) fn matvec_t_accum(w: &Tensor, d: &[f64], out: &mut [f64]) {
    let (n, m) = (w.rows(), w.cols());
    debug_assert_eq!(d.len(), n);
    debug_assert_eq!(out.len(), m);
    for i in 0..n {
        let row = w.row(i);
        let di = d[i];
        for j in 0..m {
            out[j] += row[j] * di;
        }
    }
}

/// Element-wise activation kind. ReLU fights saturation over long sequences;
/// tanh is available where a smooth function is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU's subgradient at 0 is
    /// taken as 0.
    pub fn grad_scalar(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Element-wise activation of a whole tensor.
pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| kind.apply_scalar(v)).collect(),
    }
}

/// Element-wise activation derivative evaluated at the pre-activations.
pub fn activation_grad(pre: &Tensor, kind: Activation) -> Tensor {
    Tensor {
        shape: pre.shape.clone(),
        data: pre.data.iter().map(|&v| kind.grad_scalar(v)).collect(),
    }
}

/// Row-wise softmax of a `T x C` logit matrix, max-subtracted for stability.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (t, c) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(vec![t, c]);
    for i in 0..t {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let dst = out.row_mut(i);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            dst[j] = e;
            sum += e;
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean frame-wise categorical cross-entropy over a `T x C` logit matrix.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / T`. The per-row loss is computed as
/// `logsumexp(row) - row[label]` with max subtraction, so saturated logits do
/// not overflow.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (t, c) = (logits.rows(), logits.cols());
    if labels.len() != t {
        return Err(Error::Dimension {
            what: "label vector".into(),
            expected: format!("{t} labels"),
            got: format!("{}", labels.len()),
        });
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                index: i,
                classes: c,
            });
        }
    }
    let mut dlogits = softmax_rows(logits);
    let mut loss = 0.0;
    for i in 0..t {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]];
    }
    loss /= t as f64;
    let inv_t = 1.0 / t as f64;
    for i in 0..t {
        let row = dlogits.row_mut(i);
        row[labels[i]] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_t;
        }
    }
    Ok((loss, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = Rng::new(1);
        let a = random_tensor(vec![4, 4], &mut rng);
        let i = Tensor::identity(4);
        assert_eq!(matmul(&a, &i).unwrap(), a);
        assert_eq!(matmul(&i, &a).unwrap(), a);
    }

    #[test]
    fn matmul_identity_applies_to_rectangular() {
        let mut rng = Rng::new(2);
        let a = random_tensor(vec![3, 5], &mut rng);
        assert_eq!(matmul(&a, &Tensor::identity(5)).unwrap(), a);
        assert_eq!(matmul(&Tensor::identity(3), &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let a = random_tensor(vec![5, 4], &mut rng);
        let b = random_tensor(vec![4, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        // Independent brute-force recomputation.
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get2(i, k) * b.get2(k, j);
                }
                assert!((c.get2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn hadamard_ones_identity_and_hand_case() {
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let ones = Tensor::filled(vec![3], 1.0);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);

        let x = Tensor::vector(vec![2.0, -3.0]);
        let y = Tensor::vector(vec![4.0, 5.0]);
        assert_eq!(hadamard(&x, &y).unwrap().data(), &[8.0, -15.0]);
    }

    #[test]
    fn hadamard_matches_element_loop() {
        let mut rng = Rng::new(4);
        let a = random_tensor(vec![17], &mut rng);
        let b = random_tensor(vec![17], &mut rng);
        let h = hadamard(&a, &b).unwrap();
        for i in 0..17 {
            assert!((h.data()[i] - a.data()[i] * b.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn hadamard_is_commutative_bitwise() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let a = random_tensor(vec![9], &mut rng);
            let b = random_tensor(vec![9], &mut rng);
            let ab = hadamard(&a, &b).unwrap();
            let ba = hadamard(&b, &a).unwrap();
            for (x, y) in ab.data().iter().zip(ba.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn hadamard_shape_mismatch() {
        let a = Tensor::zeros(vec![2]);
        let b = Tensor::zeros(vec![3]);
        assert!(hadamard(&a, &b).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(6);
        let logits = random_tensor(vec![8, 5], &mut rng);
        let p = softmax_rows(&logits);
        for i in 0..8 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let logits = Tensor::zeros(vec![3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_margin_does_not_overflow() {
        let mut logits = Tensor::zeros(vec![1, 4]);
        logits.set2(0, 2, 1000.0);
        let (loss, dl) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-9);
        assert!(dl.is_finite());
    }

    #[test]
    fn cross_entropy_loss_is_nonnegative() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let logits = random_tensor(vec![4, 6], &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::zeros(vec![2, 3]);
        let err = softmax_cross_entropy(&logits, &[0, 3]).unwrap_err();
        match err {
            Error::LabelOutOfRange { label, index, .. } => {
                assert_eq!(label, 3);
                assert_eq!(index, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    // Central finite differences on the loss, the independent oracle for the
    // analytic dlogits.
    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let logits = random_tensor(vec![6, 4], &mut rng);
        let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
        let (_, dl) = softmax_cross_entropy(&logits, &labels).unwrap();
        let step = 1e-6;
        for i in 0..6 {
            for j in 0..4 {
                let mut plus = logits.clone();
                plus.set2(i, j, logits.get2(i, j) + step);
                let mut minus = logits.clone();
                minus.set2(i, j, logits.get2(i, j) - step);
                let (lp, _) = softmax_cross_entropy(&plus, &labels).unwrap();
                let (lm, _) = softmax_cross_entropy(&minus, &labels).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let analytic = dl.get2(i, j);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((numeric - analytic) / denom).abs() < 1e-6,
                    "({i},{j}): numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn relu_and_tanh_basics() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Activation::Tanh.apply_scalar(0.0), 0.0);
    }

    #[test]
    fn activation_grads_match_finite_differences_away_from_kink() {
        let mut rng = Rng::new(9);
        let step = 1e-6;
        for kind in [Activation::Relu, Activation::Tanh] {
            for _ in 0..200 {
                let mut x = rng.uniform(-3.0, 3.0);
                if kind == Activation::Relu && x.abs() <= 1e-3 {
                    x += 0.5; // keep clear of the kink
                }
                let numeric =
                    (kind.apply_scalar(x + step) - kind.apply_scalar(x - step)) / (2.0 * step);
                let analytic = kind.grad_scalar(x);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((numeric - analytic) / denom).abs() < 1e-6,
                    "{kind:?} at {x}: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn tensor_shape_data_mismatch_is_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn reverse_rows_involution() {
        let mut rng = Rng::new(10);
        let a = random_tensor(vec![7, 3], &mut rng);
        assert_eq!(a.reverse_rows().reverse_rows(), a);
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = Rng::new(11);
        let a = random_tensor(vec![4, 6], &mut rng);
        assert_eq!(a.transpose().transpose(), a);
    }
}
