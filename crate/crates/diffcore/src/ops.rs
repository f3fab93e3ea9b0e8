//! Differentiable tensor operations.

use std::sync::Arc;

use crate::error::{mismatch, DiffError, Result};
use crate::scalar::{gemm, Scalar};
use crate::simd::wide;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Rows per block in the inference path of `dense_stack`.
const BLOCK_ROWS: usize = 256;

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    /// tanh-approximated GELU
    #[default]
    Gelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Self::Gelu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(DiffError::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Gelu => "gelu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
        };
        f.write_str(name)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).act_tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    let three = T::from_f64c(3.0);
    let t = (c * (x + a * x * x * x)).act_tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// one monomorphic loop per activation so the bodies vectorize
#[inline(always)]
fn apply_all<T: Scalar>(act: Activation, x: &[T]) -> Vec<T> {
    match act {
        Activation::Gelu => x.iter().map(|&v| gelu(v)).collect(),
        Activation::Tanh => x.iter().map(|&v| v.act_tanh()).collect(),
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Identity => x.to_vec(),
    }
}

#[inline(always)]
fn apply_in_place<T: Scalar>(act: Activation, x: &mut [T]) {
    match act {
        Activation::Gelu => x.iter_mut().for_each(|v| *v = gelu(*v)),
        Activation::Tanh => x.iter_mut().for_each(|v| *v = v.act_tanh()),
        Activation::Sigmoid => x.iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Identity => {}
    }
}

/// `g * act'(x)` given the activation input `x` and output `y`.
#[inline(always)]
fn backward_all<T: Scalar>(act: Activation, g: &[T], x: &[T], y: &[T]) -> Vec<T> {
    match act {
        Activation::Gelu => g.iter().zip(x).map(|(&g, &x)| g * gelu_grad(x)).collect(),
        Activation::Tanh => g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
        Activation::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
        Activation::Identity => g.to_vec(),
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Gelu => gelu(x),
            Self::Tanh => x.act_tanh(),
            Self::Sigmoid => sigmoid(x),
            Self::Identity => x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Self::Gelu => gelu_grad(x),
            Self::Tanh => T::one() - y * y,
            Self::Sigmoid => y * (T::one() - y),
            Self::Identity => T::one(),
        }
    }
}

/// Edge lists grouped by destination, for neighborhood aggregation.
///
/// Destination `d` owns edges `offsets[d]..offsets[d + 1]`; edge `e` reads
/// source row `sources[e]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
}

impl Segments {
    pub fn num_destinations(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    /// Destination index of every edge, in edge order.
    pub fn destinations(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sources.len());
        for d in 0..self.num_destinations() {
            out.extend(std::iter::repeat_n(d, self.offsets[d + 1] - self.offsets[d]));
        }
        out
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let total: usize = shape.iter().product();
    (total.checked_div(cols).unwrap_or(0), cols)
}

fn sum_rows_raw<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    fn check_same(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        self.same_tape(other);
        if self.shape() != other.shape() {
            return Err(mismatch(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same(other, "add")?;
        let value = self.value().zip_map(other.value(), "add", |a, b| a + b)?;
        Ok(self.tape().record(value, &[self, other], |_| Box::new(|g| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same(other, "sub")?;
        let value = self.value().zip_map(other.value(), "sub", |a, b| a - b)?;
        Ok(self.tape().record(value, &[self, other], |needs| {
            Box::new(move |g| vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))])
        }))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same(other, "mul")?;
        let value = self.value().zip_map(other.value(), "mul", |a, b| a * b)?;
        let (a, b) = (self.value().clone(), other.value().clone());
        Ok(self.tape().record(value, &[self, other], move |needs| {
            Box::new(move |g| {
                vec![
                    needs[0].then(|| g.zip_map(&b, "mul", |x, y| x * y).unwrap()),
                    needs[1].then(|| g.zip_map(&a, "mul", |x, y| x * y).unwrap()),
                ]
            })
        }))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let value = self.value().map(|v| v * s);
        self.tape().record(value, &[self], move |_| Box::new(move |g| vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(&self, s: T) -> Var<'t, T> {
        let value = self.value().map(|v| v + s);
        self.tape().record(value, &[self], |_| Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn square(&self) -> Var<'t, T> {
        let x = self.value().clone();
        let value = x.map(|v| v * v);
        let two = T::from_f64c(2.0);
        self.tape().record(value, &[self], move |_| {
            Box::new(move |g| vec![Some(g.zip_map(&x, "square", |g, x| two * g * x).unwrap())])
        })
    }

    pub fn exp(&self) -> Var<'t, T> {
        let value = self.value().map(|v| v.exp());
        let y = value.clone();
        self.tape()
            .record(value, &[self], move |_| Box::new(move |g| vec![Some(g.zip_map(&y, "exp", |g, y| g * y).unwrap())]))
    }

    pub fn sin(&self) -> Var<'t, T> {
        let x = self.value().clone();
        let value = x.map(|v| v.sin());
        self.tape().record(value, &[self], move |_| {
            Box::new(move |g| vec![Some(g.zip_map(&x, "sin", |g, x| g * x.cos()).unwrap())])
        })
    }

    pub fn activation(&self, act: Activation) -> Var<'t, T> {
        if act == Activation::Identity {
            return self.clone();
        }
        let x = self.value().clone();
        let value = Tensor::new(x.shape().to_vec(), wide(|| apply_all(act, x.data()))).unwrap();
        let y = value.clone();
        self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let d = wide(|| backward_all(act, g.data(), x.data(), y.data()));
                vec![Some(Tensor::new(g.shape().to_vec(), d).unwrap())]
            })
        })
    }

    pub fn gelu(&self) -> Var<'t, T> {
        self.activation(Activation::Gelu)
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.activation(Activation::Tanh)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.activation(Activation::Sigmoid)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let value = Tensor::scalar(self.value().sum());
        self.tape()
            .record(value, &[self], move |_| Box::new(move |g| vec![Some(Tensor::full(shape.clone(), g.data()[0]))]))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.value().len().max(1);
        self.sum().scale(T::one() / T::from_usize(n).unwrap())
    }

    /// Sums over every axis but the last: `[.., C] -> [C]`.
    pub fn sum_rows(&self) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let (rows, cols) = rows_cols(&shape);
        let value = Tensor::new(vec![cols], sum_rows_raw(self.value().data(), rows, cols)).unwrap();
        self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let mut out = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    out.extend_from_slice(g.data());
                }
                vec![Some(Tensor::new(shape.clone(), out).unwrap())]
            })
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let old = self.shape().to_vec();
        let value = self.value().reshape(shape)?;
        Ok(self.tape().record(value, &[self], move |_| Box::new(move |g| vec![Some(g.reshape(old.clone()).unwrap())])))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value().data(), false, other.value().data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        let (a, b) = (self.value().clone(), other.value().clone());
        Ok(self.tape().record(value, &[self, other], move |needs| {
            Box::new(move |g| {
                let da = needs[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), false, b.data(), true, &mut d, false);
                    Tensor::new(vec![m, k], d).unwrap()
                });
                let db = needs[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut d, false);
                    Tensor::new(vec![k, n], d).unwrap()
                });
                vec![da, db]
            })
        }))
    }

    /// `act(X W + b)` for `X: [M, K]`, `W: [K, N]`, `b: [N]` in one buffer.
    pub fn affine(&self, w: &Var<'t, T>, b: &Var<'t, T>, act: Activation) -> Result<Var<'t, T>> {
        self.same_tape(w);
        self.same_tape(b);
        let (sa, sw) = (self.shape(), w.shape());
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[0] {
            return Err(mismatch("affine", sa, sw));
        }
        let (m, k, n) = (sa[0], sa[1], sw[1]);
        if b.shape() != [n] {
            return Err(mismatch("affine bias", sw, b.shape()));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(b.value().data());
        }
        gemm(m, k, n, self.value().data(), false, w.value().data(), false, &mut out, true);
        let recording = self.tape().is_recording();
        let pre = (recording && act != Activation::Identity).then(|| out.clone());
        wide(|| apply_in_place(act, &mut out));
        let value = Tensor::new(vec![m, n], out)?;
        let (x, wt, y) = (self.value().clone(), w.value().clone(), value.clone());
        Ok(self.tape().record(value, &[self, w, b], move |needs| {
            Box::new(move |g| {
                let dz = match &pre {
                    Some(z) => wide(|| backward_all(act, g.data(), z, y.data())),
                    None => g.data().to_vec(),
                };
                let dx = needs[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, &dz, false, wt.data(), true, &mut d, false);
                    Tensor::new(vec![m, k], d).unwrap()
                });
                let dw = needs[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, x.data(), true, &dz, false, &mut d, false);
                    Tensor::new(vec![k, n], d).unwrap()
                });
                let db = needs[2].then(|| Tensor::new(vec![n], sum_rows_raw(&dz, m, n)).unwrap());
                vec![dx, dw, db]
            })
        }))
    }

    /// `input(X)` followed by a chain of `affine` layers.
    ///
    /// Without a recording tape the rows are pushed through the whole chain a
    /// block at a time, so the intermediates stay in cache.
    pub fn dense_stack(
        &self,
        input: Activation,
        layers: &[(&Var<'t, T>, &Var<'t, T>, Activation)],
    ) -> Result<Var<'t, T>> {
        if self.tape().is_recording() {
            let mut h = self.activation(input);
            for &(w, b, act) in layers {
                h = h.affine(w, b, act)?;
            }
            return Ok(h);
        }
        let sa = self.shape();
        if sa.len() != 2 {
            return Err(mismatch("dense_stack", sa, &[]));
        }
        let (m, mut k) = (sa[0], sa[1]);
        let mut widest = k;
        for &(w, b, _) in layers {
            self.same_tape(w);
            self.same_tape(b);
            let sw = w.shape();
            if sw.len() != 2 || sw[0] != k {
                return Err(mismatch("dense_stack", &[m, k], sw));
            }
            if b.shape() != [sw[1]] {
                return Err(mismatch("dense_stack bias", sw, b.shape()));
            }
            k = sw[1];
            widest = widest.max(k);
        }
        let n_out = k;
        let x = self.value().data();
        let mut out = vec![T::zero(); m * n_out];
        let (mut cur, mut next) = (Vec::with_capacity(BLOCK_ROWS * widest), Vec::with_capacity(BLOCK_ROWS * widest));
        for r0 in (0..m).step_by(BLOCK_ROWS) {
            let rows = BLOCK_ROWS.min(m - r0);
            let mut width = sa[1];
            cur.clear();
            cur.extend_from_slice(&x[r0 * width..(r0 + rows) * width]);
            wide(|| apply_in_place(input, &mut cur));
            for (i, &(w, b, act)) in layers.iter().enumerate() {
                let n = w.shape()[1];
                let dst = if i + 1 == layers.len() {
                    &mut out[r0 * n..(r0 + rows) * n]
                } else {
                    next.clear();
                    next.resize(rows * n, T::zero());
                    &mut next[..]
                };
                for row in dst.chunks_mut(n) {
                    row.copy_from_slice(b.value().data());
                }
                gemm(rows, width, n, &cur, false, w.value().data(), false, dst, true);
                wide(|| apply_in_place(act, dst));
                std::mem::swap(&mut cur, &mut next);
                width = n;
            }
        }
        Ok(self.tape().constant(Tensor::new(vec![m, n_out], out)?))
    }

    /// Adds a `[C]` row to every row of `[.., C]`.
    pub fn add_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(row);
        let shape = self.shape().to_vec();
        let (rows, cols) = rows_cols(&shape);
        if row.shape() != [cols] {
            return Err(mismatch("add_row", &shape, row.shape()));
        }
        let r = row.value().data();
        let mut out = self.value().to_vec();
        for chunk in out.chunks_mut(cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.tape().record(value, &[self, row], move |needs| {
            Box::new(move |g| {
                vec![
                    Some(g.clone()),
                    needs[1].then(|| Tensor::new(vec![cols], sum_rows_raw(g.data(), rows, cols)).unwrap()),
                ]
            })
        }))
    }

    /// Multiplies every row of `[.., C]` by a `[C]` row, elementwise.
    pub fn mul_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(row);
        let shape = self.shape().to_vec();
        let (rows, cols) = rows_cols(&shape);
        if row.shape() != [cols] {
            return Err(mismatch("mul_row", &shape, row.shape()));
        }
        let r = row.value().clone();
        let x = self.value().clone();
        let mut out = x.to_vec();
        for chunk in out.chunks_mut(cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        let value = Tensor::new(shape.clone(), out)?;
        Ok(self.tape().record(value, &[self, row], move |needs| {
            Box::new(move |g| {
                let dx = needs[0].then(|| {
                    let mut d = g.to_vec();
                    for chunk in d.chunks_mut(cols.max(1)) {
                        for (o, &b) in chunk.iter_mut().zip(r.data()) {
                            *o *= b;
                        }
                    }
                    Tensor::new(shape.clone(), d).unwrap()
                });
                let dr = needs[1].then(|| {
                    let prod: Vec<T> = g.data().iter().zip(x.data()).map(|(&a, &b)| a * b).collect();
                    Tensor::new(vec![cols], sum_rows_raw(&prod, rows, cols)).unwrap()
                });
                vec![dx, dr]
            })
        }))
    }

    /// Selects rows of `[N, C]` by index: `[E, C]`.
    pub fn gather_rows(&self, index: Arc<Vec<usize>>) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 2 {
            return Err(DiffError::InvalidArgument(format!("gather_rows needs rank 2, got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(DiffError::InvalidArgument(format!("gather index {bad} out of {n} rows")));
        }
        let src = self.value().data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![index.len(), c], out)?;
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let mut d = vec![T::zero(); n * c];
                for (e, &i) in index.iter().enumerate() {
                    for (o, &v) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data()[e * c..(e + 1) * c]) {
                        *o += v;
                    }
                }
                vec![Some(Tensor::new(vec![n, c], d).unwrap())]
            })
        }))
    }

    /// `self[index[e]] + other[other_index[e]]` per row `e`, in one pass.
    pub fn gather_add(
        &self,
        index: Arc<Vec<usize>>,
        other: &Var<'t, T>,
        other_index: Arc<Vec<usize>>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] || index.len() != other_index.len() {
            return Err(mismatch("gather_add", &sa, &sb));
        }
        let (na, nb, c) = (sa[0], sb[0], sa[1]);
        for (idx, n) in [(&index, na), (&other_index, nb)] {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(DiffError::InvalidArgument(format!("gather index {bad} out of {n} rows")));
            }
        }
        let (a, b) = (self.value().data(), other.value().data());
        let mut out = Vec::with_capacity(index.len() * c);
        for (&i, &j) in index.iter().zip(other_index.iter()) {
            out.extend(a[i * c..(i + 1) * c].iter().zip(&b[j * c..(j + 1) * c]).map(|(&x, &y)| x + y));
        }
        let value = Tensor::new(vec![index.len(), c], out)?;
        Ok(self.tape().record(value, &[self, other], move |needs| {
            Box::new(move |g| {
                let scatter = |idx: &[usize], n: usize| {
                    let mut d = vec![T::zero(); n * c];
                    for (e, &i) in idx.iter().enumerate() {
                        for (o, &v) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data()[e * c..(e + 1) * c]) {
                            *o += v;
                        }
                    }
                    Tensor::new(vec![n, c], d).unwrap()
                };
                vec![needs[0].then(|| scatter(&index, na)), needs[1].then(|| scatter(&other_index, nb))]
            })
        }))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat_last", &sa, &sb));
        }
        let (rows, ca) = rows_cols(&sa);
        let cb = *sb.last().unwrap();
        let (a, b) = (self.value().data(), other.value().data());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&a[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&b[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(shape, out)?;
        Ok(self.tape().record(value, &[self, other], move |needs| {
            Box::new(move |g| {
                let gd = g.data();
                let w = ca + cb;
                let da = needs[0].then(|| {
                    let d: Vec<T> = (0..rows).flat_map(|r| gd[r * w..r * w + ca].to_vec()).collect();
                    Tensor::new(sa.clone(), d).unwrap()
                });
                let db = needs[1].then(|| {
                    let d: Vec<T> = (0..rows).flat_map(|r| gd[r * w + ca..(r + 1) * w].to_vec()).collect();
                    Tensor::new(sb.clone(), d).unwrap()
                });
                vec![da, db]
            })
        }))
    }

    /// Repeats `[M, C]` along a new middle axis: `[M, times, C]`.
    pub fn repeat_middle(&self, times: usize) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 2 {
            return Err(DiffError::InvalidArgument(format!("repeat_middle needs rank 2, got {shape:?}")));
        }
        let (m, c) = (shape[0], shape[1]);
        let x = self.value().data();
        let mut out = Vec::with_capacity(m * times * c);
        for i in 0..m {
            for _ in 0..times {
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new(vec![m, times, c], out)?;
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let gd = g.data();
                let mut d = vec![T::zero(); m * c];
                for i in 0..m {
                    for t in 0..times {
                        let base = (i * times + t) * c;
                        for (o, &v) in d[i * c..(i + 1) * c].iter_mut().zip(&gd[base..base + c]) {
                            *o += v;
                        }
                    }
                }
                vec![Some(Tensor::new(vec![m, c], d).unwrap())]
            })
        }))
    }

    /// Swaps the first two axes of a rank-3 tensor.
    pub fn swap_leading(&self) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 3 {
            return Err(DiffError::InvalidArgument(format!("swap_leading needs rank 3, got {shape:?}")));
        }
        let swap = |data: &[T], a: usize, b: usize, c: usize| {
            let mut out = vec![T::zero(); a * b * c];
            for i in 0..a {
                for j in 0..b {
                    out[(j * a + i) * c..(j * a + i + 1) * c]
                        .copy_from_slice(&data[(i * b + j) * c..(i * b + j + 1) * c]);
                }
            }
            out
        };
        let (a, b, c) = (shape[0], shape[1], shape[2]);
        let value = Tensor::new(vec![b, a, c], swap(self.value().data(), a, b, c))?;
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| vec![Some(Tensor::new(vec![a, b, c], swap(g.data(), b, a, c)).unwrap())])
        }))
    }
}
