//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every differentiable operation executed during a
//! forward pass. [`Tape::backward`] replays the record in exact reverse
//! order, accumulating gradients into every [`Parameter`] that was
//! registered as a leaf. The operation set is deliberately small: exactly
//! what an LSTM-style cell and a cross-entropy loss need.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Scalar, Tensor};

/// A named, trainable tensor with a gradient accumulator of the same shape.
///
/// Handles are cheap clones sharing one underlying value, so a model can
/// hand the same parameter to several tapes over its lifetime. Gradients
/// accumulate (`+=`) across backward passes until [`Parameter::zero_grad`].
#[derive(Clone)]
pub struct Parameter<T> {
    inner: Rc<RefCell<ParamInner<T>>>,
}

struct ParamInner<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            inner: Rc::new(RefCell::new(ParamInner {
                name: name.into(),
                value,
                grad,
            })),
        }
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.inner.borrow().value.clone()
    }

    /// Reads the value without cloning it.
    pub fn map_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.inner.borrow().value)
    }

    pub fn grad(&self) -> Tensor<T> {
        self.inner.borrow().grad.clone()
    }

    pub fn set_value(&self, value: Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            inner.value.shape(),
            value.shape(),
            "parameter {} shape changed",
            inner.name
        );
        inner.value = value;
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.fill(T::zero());
    }

    pub fn add_to_grad(&self, delta: &Tensor<T>) {
        self.inner.borrow_mut().grad.add_assign(delta);
    }

    pub fn scale_grad(&self, factor: T) {
        self.inner.borrow_mut().grad.scale_assign(factor);
    }

    /// Mutable access to value and gradient together, for optimizer steps.
    pub fn update(&self, f: impl FnOnce(&mut Tensor<T>, &Tensor<T>)) {
        let inner = &mut *self.inner.borrow_mut();
        f(&mut inner.value, &inner.grad);
    }

    /// True when both handles refer to the same underlying parameter.
    pub fn same_as(&self, other: &Parameter<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Zeroes the gradients of a whole parameter collection.
pub fn zero_grads<T: Scalar>(params: &[Parameter<T>]) {
    for p in params {
        p.zero_grad();
    }
}

enum Op<T> {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: usize, b: usize, out: usize },
    /// `[m,k] x [k] -> [m]`
    MatVec { m: usize, v: usize, out: usize },
    /// Row extraction from a matrix node (embedding lookup).
    Row { m: usize, row: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Hadamard { a: usize, b: usize, out: usize },
    /// Elementwise product with a constant (non-differentiated) tensor.
    MulConst { a: usize, k: Tensor<T>, out: usize },
    Scale { a: usize, factor: T, out: usize },
    Sigmoid { a: usize, out: usize },
    Tanh { a: usize, out: usize },
    /// Sum of all elements, producing a scalar.
    Sum { a: usize, out: usize },
    /// Softmax cross-entropy of a logit vector against a class index.
    CrossEntropy { logits: usize, gold: usize, out: usize },
}

struct TapeInner<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    /// Leaf nodes mirroring parameters; gradients flow back into them.
    leaves: Vec<(usize, Parameter<T>)>,
    consumed: bool,
}

/// Records a forward computation for one sentence (or one test expression).
///
/// Confined to a single thread; distinct training runs each own their tape.
#[derive(Clone)]
pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone)]
pub struct Val<T> {
    tape: Tape<T>,
    idx: usize,
}

impl<T: Scalar> std::fmt::Debug for Val<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Val")
            .field("idx", &self.idx)
            .field("value", &self.value())
            .finish()
    }
}

impl<T: Scalar> Val<T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.inner.borrow().values[self.idx].clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().values[self.idx].shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.tape.inner.borrow().values[self.idx].item()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                values: Vec::new(),
                ops: Vec::new(),
                leaves: Vec::new(),
                consumed: false,
            })),
        }
    }

    fn push(&self, value: Tensor<T>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.values.len() - 1
    }

    fn push_op(&self, value: Tensor<T>, make: impl FnOnce(usize) -> Op<T>) -> Val<T> {
        let idx = self.push(value);
        self.inner.borrow_mut().ops.push(make(idx));
        Val {
            tape: self.clone(),
            idx,
        }
    }

    fn val(&self, idx: usize) -> Val<T> {
        Val {
            tape: self.clone(),
            idx,
        }
    }

    /// A value that participates in the forward pass but receives no gradient.
    pub fn constant(&self, t: Tensor<T>) -> Val<T> {
        let idx = self.push(t);
        self.val(idx)
    }

    /// Registers a parameter as a leaf; `backward` accumulates into its grad.
    pub fn param(&self, p: &Parameter<T>) -> Val<T> {
        let idx = self.push(p.value());
        self.inner.borrow_mut().leaves.push((idx, p.clone()));
        self.val(idx)
    }

    fn values<R>(&self, f: impl FnOnce(&[Tensor<T>]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    pub fn matmul(&self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>> {
        let out = self.values(|vals| {
            let (ta, tb) = (&vals[a.idx], &vals[b.idx]);
            if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
                return Err(Error::Shape {
                    context: "matmul".into(),
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            Ok(matmul_raw(ta, tb))
        })?;
        Ok(self.push_op(out, |idx| Op::MatMul {
            a: a.idx,
            b: b.idx,
            out: idx,
        }))
    }

    pub fn matvec(&self, m: &Val<T>, v: &Val<T>) -> Result<Val<T>> {
        let out = self.values(|vals| {
            let (tm, tv) = (&vals[m.idx], &vals[v.idx]);
            if !tm.is_matrix() || !tv.is_vector() || tm.cols() != tv.len() {
                return Err(Error::Shape {
                    context: "matvec".into(),
                    left: tm.shape().to_vec(),
                    right: tv.shape().to_vec(),
                });
            }
            Ok(matvec_raw(tm, tv))
        })?;
        Ok(self.push_op(out, |idx| Op::MatVec {
            m: m.idx,
            v: v.idx,
            out: idx,
        }))
    }

    /// Extracts row `row` of a matrix node as a vector.
    pub fn row(&self, m: &Val<T>, row: usize) -> Result<Val<T>> {
        let out = self.values(|vals| {
            let tm = &vals[m.idx];
            if !tm.is_matrix() || row >= tm.rows() {
                return Err(Error::Shape {
                    context: format!("row {row}"),
                    left: tm.shape().to_vec(),
                    right: vec![row],
                });
            }
            Ok(tm.row(row))
        })?;
        Ok(self.push_op(out, |idx| Op::Row {
            m: m.idx,
            row,
            out: idx,
        }))
    }

    pub fn add(&self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>> {
        let out = self.binary_elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(out, |idx| Op::Add {
            a: a.idx,
            b: b.idx,
            out: idx,
        }))
    }

    pub fn hadamard(&self, a: &Val<T>, b: &Val<T>) -> Result<Val<T>> {
        let out = self.binary_elementwise(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push_op(out, |idx| Op::Hadamard {
            a: a.idx,
            b: b.idx,
            out: idx,
        }))
    }

    fn binary_elementwise(
        &self,
        a: &Val<T>,
        b: &Val<T>,
        what: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.values(|vals| {
            let (ta, tb) = (&vals[a.idx], &vals[b.idx]);
            if ta.shape() != tb.shape() {
                return Err(Error::Shape {
                    context: what.into(),
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            let data = ta
                .data()
                .iter()
                .zip(tb.data().iter())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Ok(Tensor::new(ta.shape().to_vec(), data).expect("same shape"))
        })
    }

    /// Elementwise product with a constant mask; the mask gets no gradient.
    pub fn mul_const(&self, a: &Val<T>, k: Tensor<T>) -> Result<Val<T>> {
        let out = self.values(|vals| {
            let ta = &vals[a.idx];
            if ta.shape() != k.shape() {
                return Err(Error::Shape {
                    context: "mul_const".into(),
                    left: ta.shape().to_vec(),
                    right: k.shape().to_vec(),
                });
            }
            let data = ta
                .data()
                .iter()
                .zip(k.data().iter())
                .map(|(&x, &y)| x * y)
                .collect();
            Ok(Tensor::new(ta.shape().to_vec(), data).expect("same shape"))
        })?;
        Ok(self.push_op(out, |idx| Op::MulConst {
            a: a.idx,
            k,
            out: idx,
        }))
    }

    pub fn scale(&self, a: &Val<T>, factor: T) -> Val<T> {
        let out = self.values(|vals| vals[a.idx].map(|x| x * factor));
        self.push_op(out, |idx| Op::Scale {
            a: a.idx,
            factor,
            out: idx,
        })
    }

    pub fn sigmoid(&self, a: &Val<T>) -> Val<T> {
        let out = self.values(|vals| vals[a.idx].map(sigmoid));
        self.push_op(out, |idx| Op::Sigmoid { a: a.idx, out: idx })
    }

    pub fn tanh(&self, a: &Val<T>) -> Val<T> {
        let out = self.values(|vals| vals[a.idx].map(|x| x.tanh()));
        self.push_op(out, |idx| Op::Tanh { a: a.idx, out: idx })
    }

    pub fn sum(&self, a: &Val<T>) -> Val<T> {
        let out = self.values(|vals| {
            let total = vals[a.idx]
                .data()
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            Tensor::scalar(total)
        });
        self.push_op(out, |idx| Op::Sum { a: a.idx, out: idx })
    }

    /// `-log(softmax(logits)[gold])`, computed with max subtraction so that
    /// large logits cannot overflow.
    pub fn softmax_cross_entropy(&self, logits: &Val<T>, gold: usize) -> Result<Val<T>> {
        let out = self.values(|vals| {
            let tl = &vals[logits.idx];
            if !tl.is_vector() {
                return Err(Error::Shape {
                    context: "softmax_cross_entropy".into(),
                    left: tl.shape().to_vec(),
                    right: vec![],
                });
            }
            if gold >= tl.len() {
                return Err(Error::Label {
                    got: gold,
                    classes: tl.len(),
                });
            }
            let loss = cross_entropy_value(tl.data(), gold);
            Ok(Tensor::scalar(loss))
        })?;
        Ok(self.push_op(out, |idx| Op::CrossEntropy {
            logits: logits.idx,
            gold,
            out: idx,
        }))
    }

    /// Reverse sweep from a scalar root. Accumulates `d root / d p` into
    /// every registered parameter's gradient and consumes the tape.
    pub fn backward(&self, root: &Val<T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        if !inner.values[root.idx].is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: inner.values[root.idx].shape().to_vec(),
            });
        }
        inner.consumed = true;

        let mut grads: Vec<Tensor<T>> = inner
            .values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect();
        grads[root.idx].data_mut()[0] = T::one();

        let values = &inner.values;
        for op in inner.ops.iter().rev() {
            match op {
                Op::MatMul { a, b, out } => {
                    let go = grads[*out].clone();
                    let (ta, tb) = (&values[*a], &values[*b]);
                    // dA += dC * B^T, dB += A^T * dC
                    accumulate(&mut grads[*a], &matmul_nt(&go, tb));
                    accumulate(&mut grads[*b], &matmul_tn(ta, &go));
                }
                Op::MatVec { m, v, out } => {
                    let go = grads[*out].clone();
                    let (tm, tv) = (&values[*m], &values[*v]);
                    // dM += dy (outer) x, dx += M^T dy
                    outer_accumulate(&mut grads[*m], go.data(), tv.data());
                    matvec_t_accumulate(&mut grads[*v], tm, go.data());
                }
                Op::Row { m, row, out } => {
                    let go = grads[*out].clone();
                    let cols = values[*m].cols();
                    let gm = grads[*m].data_mut();
                    for (c, &g) in go.data().iter().enumerate() {
                        gm[row * cols + c] = gm[row * cols + c] + g;
                    }
                }
                Op::Add { a, b, out } => {
                    let go = grads[*out].clone();
                    accumulate(&mut grads[*a], &go);
                    accumulate(&mut grads[*b], &go);
                }
                Op::Hadamard { a, b, out } => {
                    let go = grads[*out].clone();
                    let (ta, tb) = (values[*a].clone(), values[*b].clone());
                    mul_accumulate(&mut grads[*a], go.data(), tb.data());
                    mul_accumulate(&mut grads[*b], go.data(), ta.data());
                }
                Op::MulConst { a, k, out } => {
                    let go = grads[*out].clone();
                    mul_accumulate(&mut grads[*a], go.data(), k.data());
                }
                Op::Scale { a, factor, out } => {
                    let go = grads[*out].clone();
                    let ga = grads[*a].data_mut();
                    for (g, &d) in ga.iter_mut().zip(go.data()) {
                        *g = *g + d * *factor;
                    }
                }
                Op::Sigmoid { a, out } => {
                    let go = grads[*out].clone();
                    let s = values[*out].clone();
                    let ga = grads[*a].data_mut();
                    for ((g, &d), &sv) in ga.iter_mut().zip(go.data()).zip(s.data()) {
                        *g = *g + d * sv * (T::one() - sv);
                    }
                }
                Op::Tanh { a, out } => {
                    let go = grads[*out].clone();
                    let u = values[*out].clone();
                    let ga = grads[*a].data_mut();
                    for ((g, &d), &uv) in ga.iter_mut().zip(go.data()).zip(u.data()) {
                        *g = *g + d * (T::one() - uv * uv);
                    }
                }
                Op::Sum { a, out } => {
                    let go = grads[*out].item();
                    for g in grads[*a].data_mut() {
                        *g = *g + go;
                    }
                }
                Op::CrossEntropy { logits, gold, out } => {
                    let go = grads[*out].item();
                    let probs = softmax(values[*logits].data());
                    let gl = grads[*logits].data_mut();
                    for (i, (g, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *gold { T::one() } else { T::zero() };
                        *g = *g + go * (p - onehot);
                    }
                }
            }
        }

        for (idx, param) in &inner.leaves {
            param.add_to_grad(&grads[*idx]);
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    dst.add_assign(src);
}

fn mul_accumulate<T: Scalar>(dst: &mut Tensor<T>, go: &[T], other: &[T]) {
    for ((g, &d), &o) in dst.data_mut().iter_mut().zip(go).zip(other) {
        *g = *g + d * o;
    }
}

/// `dst[h,d] += dy (outer) x`
fn outer_accumulate<T: Scalar>(dst: &mut Tensor<T>, dy: &[T], x: &[T]) {
    let cols = dst.cols();
    let data = dst.data_mut();
    for (i, &dyi) in dy.iter().enumerate() {
        let row = &mut data[i * cols..(i + 1) * cols];
        for (c, &xv) in x.iter().enumerate() {
            row[c] = row[c] + dyi * xv;
        }
    }
}

/// `dst[d] += M^T dy`
fn matvec_t_accumulate<T: Scalar>(dst: &mut Tensor<T>, m: &Tensor<T>, dy: &[T]) {
    let cols = m.cols();
    let md = m.data();
    let data = dst.data_mut();
    for (i, &dyi) in dy.iter().enumerate() {
        let row = &md[i * cols..(i + 1) * cols];
        for (c, g) in data.iter_mut().enumerate() {
            *g = *g + row[c] * dyi;
        }
    }
}

fn matmul_raw<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out).expect("sized above")
}

/// `A * B^T` without materializing the transpose.
fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(k, b.cols());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, out).expect("sized above")
}

/// `A^T * B` without materializing the transpose.
fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = &a.data()[p * m..(p + 1) * m];
        let brow = &b.data()[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out).expect("sized above")
}

fn matvec_raw<T: Scalar>(m: &Tensor<T>, v: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![T::zero(); rows];
    for i in 0..rows {
        let row = &m.data()[i * cols..(i + 1) * cols];
        let mut acc = T::zero();
        for (c, &x) in v.data().iter().enumerate() {
            acc = acc + row[c] * x;
        }
        out[i] = acc;
    }
    Tensor::vector(out)
}

/// Max-subtracted softmax; sums to one within rounding.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z = exps.iter().fold(T::zero(), |acc, &v| acc + v);
    exps.into_iter().map(|e| e / z).collect()
}

/// Loss value behind [`Tape::softmax_cross_entropy`], shared with tests.
pub fn cross_entropy_value<T: Scalar>(logits: &[T], gold: usize) -> T {
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let z = logits
        .iter()
        .map(|&v| (v - max).exp())
        .fold(T::zero(), |acc, v| acc + v);
    z.ln() + max - logits[gold]
}

/// Central-difference gradient estimate of `f` at `at`, one coordinate at a
/// time. Serves as the independent oracle for every autodiff gradient in
/// this crate; it never touches the tape.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> Result<T>,
    at: &Tensor<T>,
    step: T,
) -> Result<Tensor<T>> {
    assert!(step > T::zero(), "finite difference step must be positive");
    let mut grad = Tensor::zeros(at.shape());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (step + step);
    }
    Ok(grad)
}

/// Normwise relative error between two gradients:
/// `|a - b| / max(|a|, |b|, 1e-12)` in the Euclidean norm.
pub fn gradient_rel_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let mut diff = T::zero();
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = *x - *y;
        diff = diff + d * d;
    }
    let diff = diff.sqrt().as_f64();
    let denom = a.norm().as_f64().max(b.norm().as_f64()).max(1e-12);
    diff / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = tape.matmul(&i2, &a).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::matrix(3, 4, (0..12).map(|v| v as f64).collect()).unwrap());
        let c = tape.matmul(&z, &b).unwrap();
        assert_eq!(c.value(), Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        match tape.matmul(&a, &b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0 = rand_tensor(&mut rng, &[2, 3]);
        let b0 = rand_tensor(&mut rng, &[3, 4]);

        let loss = |a_val: &Tensor<f64>| -> crate::error::Result<f64> {
            let tape = Tape::new();
            let a = tape.constant(a_val.clone());
            let b = tape.constant(b0.clone());
            let c = tape.matmul(&a, &b)?;
            Ok(tape.sum(&c).item())
        };
        let fd = finite_diff_grad(loss, &a0, 1e-6).unwrap();

        let tape = Tape::new();
        let pa = Parameter::new("a", a0.clone());
        let a = tape.param(&pa);
        let b = tape.constant(b0.clone());
        let c = tape.matmul(&a, &b).unwrap();
        let s = tape.sum(&c);
        tape.backward(&s).unwrap();

        assert!(gradient_rel_error(&pa.grad(), &fd) < 1e-7);
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let zero = tape.constant(Tensor::vector(vec![0.0]));
        assert_eq!(tape.sigmoid(&zero).value().data(), &[0.5]);
        assert_eq!(tape.tanh(&zero).value().data(), &[0.0]);

        let a = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 1.0, 2.0]));
        let h = tape.hadamard(&a, &b).unwrap();
        assert_eq!(h.value().data(), &[0.0, 2.0, 6.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let loss = tape.softmax_cross_entropy(&logits, 0).unwrap();
        assert!((loss.item() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_huge_logit_is_stable() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![1000.0, 0.0, 0.0]));
        let loss = tape.softmax_cross_entropy(&logits, 0).unwrap();
        let value: f64 = loss.item();
        assert!(value.is_finite());
        assert!(value.abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_gold_out_of_range() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(
            tape.softmax_cross_entropy(&logits, 2),
            Err(Error::Label { got: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits0 = rand_tensor(&mut rng, &[5]);

        let loss = |l: &Tensor<f64>| -> crate::error::Result<f64> {
            let tape = Tape::new();
            let lv = tape.constant(l.clone());
            Ok(tape.softmax_cross_entropy(&lv, 2)?.item())
        };
        let fd = finite_diff_grad(loss, &logits0, 1e-6).unwrap();

        let p = Parameter::new("logits", logits0);
        let tape = Tape::new();
        let lv = tape.param(&p);
        let ce = tape.softmax_cross_entropy(&lv, 2).unwrap();
        tape.backward(&ce).unwrap();

        assert!(gradient_rel_error(&p.grad(), &fd) < 1e-7);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let total: f64 = softmax(&logits).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_sum_gives_ones() {
        let p = Parameter::new("p", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let tape = Tape::new();
        let v = tape.param(&p);
        let s = tape.sum(&v);
        tape.backward(&s).unwrap();
        assert_eq!(p.grad().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_scales_linearly() {
        let p = Parameter::new("p", Tensor::vector(vec![1.0, 2.0]));
        let tape = Tape::new();
        let v = tape.param(&p);
        let s = tape.scale(&tape.sum(&v), 2.5);
        tape.backward(&s).unwrap();
        assert_eq!(p.grad().data(), &[2.5, 2.5]);
    }

    #[test]
    fn backward_accumulates_across_tapes() {
        let p = Parameter::new("p", Tensor::vector(vec![1.0, 2.0]));
        for _ in 0..2 {
            let tape = Tape::new();
            let v = tape.param(&p);
            let s = tape.sum(&v);
            tape.backward(&s).unwrap();
        }
        assert_eq!(p.grad().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(&v),
            Err(Error::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn tape_cannot_be_consumed_twice() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::scalar(1.0));
        tape.backward(&v).unwrap();
        assert!(matches!(tape.backward(&v), Err(Error::TapeConsumed)));
    }

    #[test]
    fn finite_diff_on_sum_of_squares() {
        let f = |x: &Tensor<f64>| -> crate::error::Result<f64> {
            Ok(x.data().iter().map(|v| v * v).sum())
        };
        let grad = finite_diff_grad(f, &Tensor::vector(vec![1.0, 2.0]), 1e-6).unwrap();
        assert!((grad.data()[0] - 2.0).abs() < 1e-6);
        assert!((grad.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let f = |_: &Tensor<f64>| -> crate::error::Result<f64> { Ok(42.0) };
        let grad = finite_diff_grad(f, &Tensor::vector(vec![1.0, 2.0, 3.0]), 1e-6).unwrap();
        assert!(grad.data().iter().all(|&g| g.abs() < 1e-9));
    }

    #[test]
    fn finite_diff_agrees_with_backward_on_random_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let w0 = rand_tensor(&mut rng, &[3, 4]);
        let x0 = rand_tensor(&mut rng, &[4]);
        let b0 = rand_tensor(&mut rng, &[3]);

        let f = |w: &Tensor<f64>| -> crate::error::Result<f64> {
            let tape = Tape::new();
            let wv = tape.constant(w.clone());
            let xv = tape.constant(x0.clone());
            let bv = tape.constant(b0.clone());
            let y = tape.add(&tape.matvec(&wv, &xv)?, &bv)?;
            Ok(tape.sum(&y).item())
        };
        let fd = finite_diff_grad(f, &w0, 1e-6).unwrap();

        let p = Parameter::new("w", w0);
        let tape = Tape::new();
        let wv = tape.param(&p);
        let xv = tape.constant(x0.clone());
        let bv = tape.constant(b0.clone());
        let y = tape.add(&tape.matvec(&wv, &xv).unwrap(), &bv).unwrap();
        let s = tape.sum(&y);
        tape.backward(&s).unwrap();

        assert!(gradient_rel_error(&p.grad(), &fd) < 1e-7);
    }

    // Gradient vs finite differences for each differentiable op, ten random
    // small inputs each.
    #[test]
    fn every_op_matches_finite_differences() {
        type Builder = fn(&Tape<f64>, &Val<f64>) -> Val<f64>;
        let cases: Vec<(&str, &[usize], Builder)> = vec![
            ("sigmoid", &[6], |t, x| t.sum(&t.sigmoid(x))),
            ("tanh", &[6], |t, x| t.sum(&t.tanh(x))),
            ("hadamard_self", &[6], |t, x| {
                t.sum(&t.hadamard(x, x).unwrap())
            }),
            ("scale", &[6], |t, x| t.scale(&t.sum(x), -1.7)),
            ("add_self", &[6], |t, x| t.sum(&t.add(x, x).unwrap())),
            ("mul_const", &[6], |t, x| {
                let mask = Tensor::vector(vec![0.0, 1.0, 0.5, 2.0, 1.0, 0.0]);
                t.sum(&t.mul_const(x, mask).unwrap())
            }),
            ("matmul", &[2, 3], |t, x| {
                let b = t.constant(
                    Tensor::matrix(3, 2, vec![0.4, -0.2, 1.1, 0.7, -0.9, 0.3]).unwrap(),
                );
                t.sum(&t.matmul(x, &b).unwrap())
            }),
            ("matvec", &[2, 3], |t, x| {
                let v = t.constant(Tensor::vector(vec![0.8, -0.5, 0.2]));
                t.sum(&t.tanh(&t.matvec(x, &v).unwrap()))
            }),
            ("row", &[3, 2], |t, x| {
                t.sum(&t.sigmoid(&t.row(x, 1).unwrap()))
            }),
            ("cross_entropy", &[6], |t, x| {
                t.softmax_cross_entropy(x, 2).unwrap()
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (name, shape, build) in cases {
            for trial in 0..10 {
                let x0 = rand_tensor(&mut rng, shape);
                let fd = finite_diff_grad(
                    |x| {
                        let tape = Tape::new();
                        let xv = tape.constant(x.clone());
                        Ok(build(&tape, &xv).item())
                    },
                    &x0,
                    1e-6,
                )
                .unwrap();

                let p = Parameter::new("x", x0);
                let tape = Tape::new();
                let xv = tape.param(&p);
                let root = build(&tape, &xv);
                tape.backward(&root).unwrap();
                let rel = gradient_rel_error(&p.grad(), &fd);
                assert!(rel < 1e-4, "{name} trial {trial}: rel err {rel}");
            }
        }
    }

    #[test]
    fn row_gradient_flows_to_selected_row_only() {
        let m0 = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = Parameter::new("m", m0);
        let tape = Tape::new();
        let m = tape.param(&p);
        let r = tape.row(&m, 1).unwrap();
        let s = tape.sum(&r);
        tape.backward(&s).unwrap();
        assert_eq!(p.grad().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_grad_resets_accumulator() {
        let p = Parameter::new("p", Tensor::vector(vec![1.0]));
        let tape = Tape::new();
        let s = tape.sum(&tape.param(&p));
        tape.backward(&s).unwrap();
        assert_ne!(p.grad().data()[0], 0.0);
        p.zero_grad();
        assert_eq!(p.grad().data(), &[0.0]);
    }
}
