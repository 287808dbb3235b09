//! Recording tape. Operations append nodes in execution order; the backward
//! pass walks them exactly once in reverse, accumulating gradients only into
//! subgraphs that can reach a parameter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::RealScalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

enum Op<T> {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    SoftmaxRows(VarId),
    /// `diag(scale) * mat` with `scale` an N x 1 column.
    RowScale {
        scale: VarId,
        mat: VarId,
    },
    ConcatCols(Vec<VarId>),
    SliceCols {
        src: VarId,
        start: usize,
        end: usize,
    },
    /// Mask already folds in the inverted 1/(1-p) scaling.
    Dropout {
        src: VarId,
        mask: Mat<T>,
    },
    ScaleConst {
        src: VarId,
        c: T,
    },
    Sum(VarId),
    MulElem(VarId, VarId),
    /// Plain cross entropy on probabilities, summed over rows; the log is
    /// clamped at 1e-12 outside the gradient path.
    CrossEntropy {
        probs: VarId,
        targets: Mat<T>,
    },
    /// Fused log-sum-exp softmax + cross entropy, summed over `rows`
    /// (all rows when `None`). Backward is `softmax(logits) - targets`.
    SoftmaxCrossEntropy {
        logits: VarId,
        targets: Mat<T>,
        rows: Option<Vec<usize>>,
    },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: RealScalar> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Option<Mat<T>>>>,
}

impl<T: RealScalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: RealScalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: None,
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: VarId) -> &Mat<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass; `None` for non-parameter subgraphs.
    pub fn grad(&self, id: VarId) -> Option<&Mat<T>> {
        self.grads.as_ref()?.get(id.0)?.as_ref()
    }

    /// Records a constant; no gradient will be tracked through it.
    pub fn leaf(&mut self, value: Mat<T>) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, value: Mat<T>) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(Error::DimMismatch(format!(
                "matmul {ar}x{ac} * {br}x{bc}"
            )));
        }
        let value = self.value(a).matmul(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::DimMismatch(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let value = self.value(a).add(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let zero = T::zero();
        let value = self.value(a).map(|x| if *x > zero { *x } else { zero });
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let one = T::one();
        let value = self.value(a).map(|x| one / (one + (-*x).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let value = softmax_rows_value(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), needs)
    }

    /// `diag(scale) * mat`, with `scale` a column vector.
    pub fn row_scale(&mut self, scale: VarId, mat: VarId) -> Result<VarId> {
        let (sr, sc) = self.value(scale).shape();
        let (mr, _) = self.value(mat).shape();
        if sc != 1 || sr != mr {
            return Err(Error::DimMismatch(format!(
                "row_scale needs {mr}x1 scale, got {sr}x{sc}"
            )));
        }
        let s = self.value(scale).clone();
        let value = Mat::from_fn(mr, self.value(mat).cols(), |i, j| {
            s[(i, 0)] * self.value(mat)[(i, j)]
        });
        let needs = self.needs(scale) || self.needs(mat);
        Ok(self.push(value, Op::RowScale { scale, mat }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::DimMismatch("concat of zero parts".into()));
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::DimMismatch("concat row mismatch".into()));
        }
        let mats: Vec<&Mat<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_cols(&mats);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, src: VarId, start: usize, end: usize) -> Result<VarId> {
        if end > self.value(src).cols() || start > end {
            return Err(Error::DimMismatch(format!(
                "slice {start}..{end} of {} cols",
                self.value(src).cols()
            )));
        }
        let value = self.value(src).slice_cols(start, end);
        let needs = self.needs(src);
        Ok(self.push(value, Op::SliceCols { src, start, end }, needs))
    }

    /// Inverted dropout: keeps an entry with probability 1-p and scales it by
    /// 1/(1-p); evaluation mode (train = false) and p = 0 are the identity.
    pub fn dropout(
        &mut self,
        src: VarId,
        p: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0,1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(src);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p)).expect("scale fits scalar");
        let (r, c) = self.value(src).shape();
        let mask = Mat::from_fn(r, c, |_, _| {
            if rng.gen::<f64>() >= p {
                keep_scale
            } else {
                T::zero()
            }
        });
        let value = self.value(src).zip_map(&mask, |a, m| *a * *m);
        let needs = self.needs(src);
        Ok(self.push(value, Op::Dropout { src, mask }, needs))
    }

    pub fn scale_const(&mut self, src: VarId, c: T) -> VarId {
        let value = self.value(src).scale(&c);
        let needs = self.needs(src);
        self.push(value, Op::ScaleConst { src, c }, needs)
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, src: VarId) -> VarId {
        let value = Mat::from_vec(1, 1, vec![self.value(src).sum()]);
        let needs = self.needs(src);
        self.push(value, Op::Sum(src), needs)
    }

    pub fn mul_elem(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::DimMismatch("elementwise mul shape".into()));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| *x * *y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MulElem(a, b), needs))
    }

    /// `-sum_i log(probs[i, class(i)])` over all rows, for row-stochastic
    /// probabilities. Probabilities are clamped at 1e-12 before the log.
    pub fn cross_entropy(&mut self, probs: VarId, targets: &Mat<T>) -> Result<VarId> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::DimMismatch("cross entropy shape".into()));
        }
        let tol = T::from_f64(1e-8).unwrap();
        let one = T::one();
        for i in 0..p.rows() {
            let mut row_sum = T::zero();
            for j in 0..p.cols() {
                let v = p[(i, j)];
                if v <= T::zero() && targets[(i, j)] > T::zero() {
                    return Err(Error::Numeric(format!(
                        "nonpositive probability at true class of row {i}"
                    )));
                }
                row_sum = row_sum + v;
            }
            if (row_sum - one).abs() > tol {
                return Err(Error::Numeric(format!(
                    "probability row {i} sums to {row_sum}, not 1"
                )));
            }
        }
        let clamp = T::from_f64(1e-12).unwrap();
        let mut loss = T::zero();
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                if targets[(i, j)] > T::zero() {
                    loss = loss - targets[(i, j)] * p[(i, j)].max(clamp).ln();
                }
            }
        }
        let needs = self.needs(probs);
        Ok(self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                probs,
                targets: targets.clone(),
            },
            needs,
        ))
    }

    /// Numerically stable fused softmax + cross entropy, summed over `rows`
    /// (all rows when `None`).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: VarId,
        targets: &Mat<T>,
        rows: Option<&[usize]>,
    ) -> Result<VarId> {
        let x = self.value(logits);
        if x.shape() != targets.shape() {
            return Err(Error::DimMismatch("softmax cross entropy shape".into()));
        }
        let all: Vec<usize>;
        let row_set: &[usize] = match rows {
            Some(r) => r,
            None => {
                all = (0..x.rows()).collect();
                &all
            }
        };
        let mut loss = T::zero();
        for &i in row_set {
            let row = x.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut lse = T::zero();
            for v in row {
                lse = lse + (*v - max).exp();
            }
            let lse = max + lse.ln();
            for j in 0..x.cols() {
                if targets[(i, j)] > T::zero() {
                    loss = loss + targets[(i, j)] * (lse - x[(i, j)]);
                }
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.clone(),
                rows: rows.map(<[usize]>::to_vec),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss. May be called once per tape.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Tape(
                "backward already ran on this tape; record a fresh tape".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be 1x1, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![T::one()]));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Mat<T>>], target: VarId, delta: Mat<T>) {
        if !self.needs(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let delta = g.matmul(&self.value(*b).transpose());
                    self.accumulate(grads, *a, delta);
                }
                if self.needs(*b) {
                    let delta = self.value(*a).transpose().matmul(g);
                    self.accumulate(grads, *b, delta);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let delta = g.zip_map(x, |gi, xi| if *xi > T::zero() { *gi } else { T::zero() });
                self.accumulate(grads, *a, delta);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let delta = g.zip_map(y, |gi, yi| *gi * *yi * (T::one() - *yi));
                self.accumulate(grads, *a, delta);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut delta = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let mut dot = T::zero();
                    for j in 0..y.cols() {
                        dot = dot + g[(i, j)] * y[(i, j)];
                    }
                    for j in 0..y.cols() {
                        delta[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                self.accumulate(grads, *a, delta);
            }
            Op::RowScale { scale, mat } => {
                if self.needs(*mat) {
                    let s = self.value(*scale);
                    let delta = Mat::from_fn(g.rows(), g.cols(), |i, j| s[(i, 0)] * g[(i, j)]);
                    self.accumulate(grads, *mat, delta);
                }
                if self.needs(*scale) {
                    let m = self.value(*mat);
                    let delta = Mat::from_fn(g.rows(), 1, |i, _| {
                        let mut acc = T::zero();
                        for j in 0..g.cols() {
                            acc = acc + g[(i, j)] * m[(i, j)];
                        }
                        acc
                    });
                    self.accumulate(grads, *scale, delta);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            Op::SliceCols { src, start, end } => {
                let (r, c) = self.value(*src).shape();
                let mut delta = Mat::zeros(r, c);
                for i in 0..r {
                    for j in *start..*end {
                        delta[(i, j)] = g[(i, j - start)];
                    }
                }
                self.accumulate(grads, *src, delta);
            }
            Op::Dropout { src, mask } => {
                let delta = g.zip_map(mask, |gi, mi| *gi * *mi);
                self.accumulate(grads, *src, delta);
            }
            Op::ScaleConst { src, c } => {
                self.accumulate(grads, *src, g.scale(c));
            }
            Op::Sum(src) => {
                let (r, c) = self.value(*src).shape();
                let delta = Mat::fill(r, c, g[(0, 0)]);
                self.accumulate(grads, *src, delta);
            }
            Op::MulElem(a, b) => {
                if self.needs(*a) {
                    let delta = g.zip_map(self.value(*b), |gi, bi| *gi * *bi);
                    self.accumulate(grads, *a, delta);
                }
                if self.needs(*b) {
                    let delta = g.zip_map(self.value(*a), |gi, ai| *gi * *ai);
                    self.accumulate(grads, *b, delta);
                }
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let clamp = T::from_f64(1e-12).unwrap();
                let scale = g[(0, 0)];
                let delta = Mat::from_fn(p.rows(), p.cols(), |i, j| {
                    if targets[(i, j)] > T::zero() {
                        -scale * targets[(i, j)] / p[(i, j)].max(clamp)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *probs, delta);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                rows,
            } => {
                let x = self.value(*logits);
                let soft = softmax_rows_value(x);
                let scale = g[(0, 0)];
                let mut delta = Mat::zeros(x.rows(), x.cols());
                let all: Vec<usize>;
                let row_set: &[usize] = match rows {
                    Some(r) => r,
                    None => {
                        all = (0..x.rows()).collect();
                        &all
                    }
                };
                for &i in row_set {
                    for j in 0..x.cols() {
                        delta[(i, j)] = scale * (soft[(i, j)] - targets[(i, j)]);
                    }
                }
                self.accumulate(grads, *logits, delta);
            }
        }
    }
}

/// Row-wise softmax with the usual max-subtraction stabilization.
pub fn softmax_rows_value<T: RealScalar>(x: &Mat<T>) -> Mat<T> {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for j in 0..x.cols() {
            let e = (x[(i, j)] - max).exp();
            out[(i, j)] = e;
            denom = denom + e;
        }
        for j in 0..x.cols() {
            out[(i, j)] = out[(i, j)] / denom;
        }
    }
    out
}
