//! Dense row-major tensors and the forward kernels shared by every graph backend.
//!
//! Batched values are laid out as `batch x features`. Stacked encoder states
//! use a `(positions * batch) x features` block layout where block `i` holds
//! position `i` for every batch row.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(values: &[T]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("ragged rows");
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => dim_err(format!("expected a matrix, got shape {:?}", s)),
        }
    }

    /// Length of the trailing axis; rank-1 and rank-2 only.
    pub fn width(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.width() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return dim_err(format!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Index of the largest entry in each row; first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let w = self.width().max(1);
        self.data
            .chunks(w)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        same_shape(self, other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return dim_err(format!("{op}: shapes {:?} and {:?} differ", a.shape, b.shape));
    }
    Ok(())
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    same_shape(a, b, op)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "sub", |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, "mul", |x, y| x * y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x * s)
}

pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.tanh())
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `a (m x k) * b (k x n)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul: {:?} x {:?}", a.shape, b.shape));
    }
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(
        m, k, n, T::one(), &a.data, k as isize, 1, &b.data, n as isize, 1, T::zero(),
        &mut out.data, n as isize, 1,
    );
    Ok(out)
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub fn matmul_bt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul_bt: {:?} x {:?}^T", a.shape, b.shape));
    }
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(
        m, k, n, T::one(), &a.data, k as isize, 1, &b.data, 1, k as isize, T::zero(),
        &mut out.data, n as isize, 1,
    );
    Ok(out)
}

/// `a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub fn matmul_at<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul_at: {:?}^T x {:?}", a.shape, b.shape));
    }
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(
        m, k, n, T::one(), &a.data, 1, m as isize, &b.data, n as isize, 1, T::zero(),
        &mut out.data, n as isize, 1,
    );
    Ok(out)
}

/// Adds a bias vector of length `n` to every row of an `m x n` matrix.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2()?;
    if bias.len() != n {
        return dim_err(format!("add_bias: {:?} + {:?}", x.shape, bias.shape));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(n) {
        for (v, &b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(out)
}

/// Sums the rows of a matrix into a vector shaped like `like`.
pub fn sum_rows_into<T: Scalar>(g: &Tensor<T>, like: &[usize]) -> Tensor<T> {
    let n = g.width();
    let mut out = vec![T::zero(); n];
    for row in g.data.chunks(n.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor {
        shape: like.to_vec(),
        data: out,
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Concatenates tensors along `axis`; every other dimension must agree.
/// Rank-1 empty tensors act as the identity.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let parts: Vec<&Tensor<T>> = parts
        .iter()
        .copied()
        .filter(|p| !(p.shape.len() == 1 && p.shape[0] == 0))
        .collect();
    let Some(first) = parts.first() else {
        return Ok(Tensor::zeros(&[0]));
    };
    let rank = first.shape.len();
    if axis >= rank {
        return dim_err(format!("concat axis {axis} out of range for rank {rank}"));
    }
    for p in &parts {
        if p.shape.len() != rank
            || p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return dim_err(format!(
                "concat: {:?} incompatible with {:?} on axis {axis}",
                p.shape, first.shape
            ));
        }
    }
    let mut shape = first.shape.clone();
    shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in &parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor { shape, data })
}

/// Splits `g` along `axis` into pieces of the given sizes (inverse of [`concat`]).
pub fn split<T: Scalar>(g: &Tensor<T>, axis: usize, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (outer, _, inner) = axis_split(&g.shape, axis);
    let total: usize = sizes.iter().sum();
    let mut out: Vec<Tensor<T>> = sizes
        .iter()
        .map(|&s| {
            let mut shape = g.shape.clone();
            shape[axis] = s;
            Tensor {
                data: Vec::with_capacity(shape.iter().product()),
                shape,
            }
        })
        .collect();
    for o in 0..outer {
        let mut off = o * total * inner;
        for (t, &s) in out.iter_mut().zip(sizes) {
            t.data.extend_from_slice(&g.data[off..off + s * inner]);
            off += s * inner;
        }
    }
    out
}

/// Columns `start..end` of a matrix.
pub fn slice_cols<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (m, n) = x.dims2()?;
    if start > end || end > n {
        return dim_err(format!("slice_cols {start}..{end} of width {n}"));
    }
    let w = end - start;
    let mut data = Vec::with_capacity(m * w);
    for row in x.data.chunks(n.max(1)).take(m) {
        data.extend_from_slice(&row[start..end]);
    }
    Ok(Tensor {
        shape: vec![m, w],
        data,
    })
}

/// Row lookup `table[indices[b]]`, i.e. an embedding.
pub fn gather_rows<T: Scalar>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let (v, e) = table.dims2()?;
    let mut data = Vec::with_capacity(indices.len() * e);
    for &i in indices {
        if i >= v {
            return Err(Error::Index { index: i, size: v });
        }
        data.extend_from_slice(table.row(i));
    }
    Ok(Tensor {
        shape: vec![indices.len(), e],
        data,
    })
}

/// Row-wise softmax with max-shift stabilization.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2()?;
    let mut out = x.clone();
    if n == 0 {
        return Ok(out);
    }
    for row in out.data.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Per-row `-log softmax(x)[target]` and the softmax itself.
pub fn softmax_xent_rows<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(Vec<T>, Tensor<T>)> {
    let (m, n) = logits.dims2()?;
    if targets.len() != m {
        return dim_err(format!("{} targets for {m} rows", targets.len()));
    }
    let probs = softmax_rows(logits)?;
    let mut losses = Vec::with_capacity(m);
    for (r, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::Index { index: t, size: n });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        losses.push(lse - row[t]);
    }
    Ok((losses, probs))
}

/// `p + tile(q)`: adds the `b x d` matrix `q` to each of the `t` blocks of `p` (`t*b x d`).
pub fn add_tiled<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, d) = p.dims2()?;
    let (b, d2) = q.dims2()?;
    if d != d2 || b == 0 || rows % b != 0 {
        return dim_err(format!("add_tiled: {:?} + tile({:?})", p.shape, q.shape));
    }
    let mut out = p.clone();
    for block in out.data.chunks_mut(b * d) {
        for (v, &w) in block.iter_mut().zip(&q.data) {
            *v += w;
        }
    }
    Ok(out)
}

/// Sum of the `t` blocks of a `t*b x d` matrix, giving `b x d`.
pub fn sum_blocks<T: Scalar>(g: &Tensor<T>, b: usize) -> Tensor<T> {
    let d = g.width();
    let mut out = Tensor::zeros(&[b, d]);
    for block in g.data.chunks(b * d) {
        for (o, &v) in out.data.iter_mut().zip(block) {
            *o += v;
        }
    }
    out
}

/// Reinterprets a `t*b x 1` column of per-block scores as a `b x t` matrix.
pub fn blocks_to_rows<T: Scalar>(s: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    if t == 0 || s.len() % t != 0 {
        return dim_err(format!("blocks_to_rows: {} values into {t} blocks", s.len()));
    }
    let b = s.len() / t;
    let mut out = Tensor::zeros(&[b, t]);
    for i in 0..t {
        for r in 0..b {
            out.data[r * t + i] = s.data[i * b + r];
        }
    }
    Ok(out)
}

/// Inverse of [`blocks_to_rows`].
pub fn rows_to_blocks<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, t) = g.dims2()?;
    let mut out = Tensor::zeros(&[t * b, 1]);
    for r in 0..b {
        for i in 0..t {
            out.data[i * b + r] = g.data[r * t + i];
        }
    }
    Ok(out)
}

/// `out[r] = sum_i a[r, i] * h[i*b + r]` for weights `a` (`b x t`) and blocks `h` (`t*b x d`).
pub fn weighted_block_sum<T: Scalar>(a: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, t) = a.dims2()?;
    let (rows, d) = h.dims2()?;
    if rows != t * b {
        return dim_err(format!("weighted_block_sum: weights {:?}, blocks {:?}", a.shape, h.shape));
    }
    let mut out = Tensor::zeros(&[b, d]);
    for i in 0..t {
        for r in 0..b {
            let w = a.data[r * t + i];
            let src = &h.data[(i * b + r) * d..(i * b + r + 1) * d];
            let dst = &mut out.data[r * d..(r + 1) * d];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    type T64 = Tensor<f64>;

    #[test]
    fn matmul_examples() {
        let col = T64::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&T64::eye(2), &col).unwrap(), col);
        let z = matmul(&T64::zeros(&[2, 3]), &T64::from_f64(&[3, 1], &[1.0, -2.0, 5.0]).unwrap()).unwrap();
        assert_eq!(z, T64::zeros(&[2, 1]));
        let a = T64::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = T64::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3.0, 7.0]);
        assert!(matches!(matmul(&a, &T64::zeros(&[3, 1])), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = T64::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = T64::from_f64(&[4, 3], &(0..12).map(|v| v as f64 * 0.5 - 2.0).collect::<Vec<_>>()).unwrap();
        let bt = T64::from_f64(&[3, 4], &{
            let mut v = vec![0.0; 12];
            for i in 0..4 {
                for j in 0..3 {
                    v[j * 4 + i] = b.get2(i, j);
                }
            }
            v
        })
        .unwrap();
        assert_eq!(matmul_bt(&a, &b).unwrap(), matmul(&a, &bt).unwrap());
        let at = matmul_at(&bt, &T64::eye(3)).unwrap();
        assert_eq!(at, b);
    }

    #[test]
    fn concat_examples() {
        let a = T64::vector(&[1.0, 2.0]);
        let b = T64::vector(&[3.0]);
        assert_eq!(concat(&[&a, &b], 0).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert_eq!(concat(&[&a, &T64::zeros(&[0])], 0).unwrap(), a);
        assert!(matches!(concat(&[&a, &b], 1), Err(Error::Dimension(_))));

        let m = T64::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let n = T64::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = concat(&[&m, &n], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let parts = split(&c, 1, &[2, 1]);
        assert_eq!(parts[0], m);
        assert_eq!(parts[1], n);
    }

    #[test]
    fn elementwise_examples() {
        let a = T64::vector(&[1.0, 2.0]);
        assert_eq!(add(&a, &T64::zeros(&[2])).unwrap(), a);
        assert_eq!(mul(&a, &T64::ones(&[2])).unwrap(), a);
        assert_eq!(mul(&a, &T64::vector(&[3.0, 4.0])).unwrap().data(), &[3.0, 8.0]);
        assert!(add(&a, &T64::zeros(&[3])).is_err());
        assert_eq!(tanh(&T64::scalar(0.0)).item().unwrap(), 0.0);
        assert_eq!(sigmoid(&T64::scalar(0.0)).item().unwrap(), 0.5);
        assert!((tanh(&T64::scalar(0.5)).item().unwrap() - 0.46211716).abs() < 1e-8);
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
    }

    #[test]
    fn softmax_xent_examples() {
        let (l, _) = softmax_xent_rows(&T64::zeros(&[1, 4]), &[2]).unwrap();
        assert!((l[0] - 4f64.ln()).abs() < 1e-12);
        let (l, p) = softmax_xent_rows(&T64::from_f64(&[1, 2], &[1000.0, 0.0]).unwrap(), &[0]).unwrap();
        assert!(l[0].abs() < 1e-12 && p.all_finite());
        let (l, _) = softmax_xent_rows(&T64::from_f64(&[1, 2], &[0.0, 3f64.ln()]).unwrap(), &[1]).unwrap();
        assert!((l[0] - 0.2876821).abs() < 1e-7);
        assert!(matches!(
            softmax_xent_rows(&T64::zeros(&[1, 4]), &[4]),
            Err(Error::Index { index: 4, size: 4 })
        ));
    }

    #[test]
    fn block_layout_round_trip() {
        let s = T64::from_f64(&[6, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = blocks_to_rows(&s, 3).unwrap();
        assert_eq!(r.shape(), &[2, 3]);
        assert_eq!(r.data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(rows_to_blocks(&r).unwrap(), s);
    }
}
