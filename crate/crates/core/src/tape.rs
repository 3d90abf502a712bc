//! Reverse-mode differentiation by operation recording.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat { parts: Vec<Var>, axis: usize, sizes: Vec<usize> },
    SliceCols { x: Var, start: usize },
    Gather { table: Var, indices: Vec<usize> },
    SoftmaxRows(Var),
    AddTiled(Var, Var),
    BlocksToRows(Var),
    WeightedBlockSum(Var, Var),
    Sum(Var),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Linear record of a forward pass. Nodes only ever reference earlier nodes,
/// so a single reverse sweep visits them in topological order.
pub struct Tape<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`; zeros if `v` does not reach the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients aligned with the [`ParamStore`] order.
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that is not a stored parameter (inputs, or tensors under test).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.val(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.val(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.val(root).shape(), T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let params = self
            .param_vars
            .iter()
            .enumerate()
            .map(|(p, var)| {
                var.and_then(|v| grads[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(ParamId(p)).shape()))
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, tensor::scale(g, -T::one()))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, tensor::mul(g, self.val(*b))?)?;
                accumulate(grads, *b, tensor::mul(g, self.val(*a))?)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, tensor::scale(g, *s))?,
            Op::AddBias(x, b) => {
                accumulate(grads, *x, g.clone())?;
                accumulate(grads, *b, tensor::sum_rows_into(g, self.val(*b).shape()))?;
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, tensor::matmul_bt(g, self.val(*b))?)?;
                accumulate(grads, *b, tensor::matmul_at(self.val(*a), g)?)?;
            }
            Op::MatMulBt(a, b) => {
                accumulate(grads, *a, tensor::matmul(g, self.val(*b))?)?;
                accumulate(grads, *b, tensor::matmul_at(g, self.val(*a))?)?;
            }
            Op::Tanh(a) => {
                let d = tensor::mul(g, &y.map(|t| T::one() - t * t))?;
                accumulate(grads, *a, d)?;
            }
            Op::Sigmoid(a) => {
                let d = tensor::mul(g, &y.map(|s| s * (T::one() - s)))?;
                accumulate(grads, *a, d)?;
            }
            Op::Concat { parts, axis, sizes } => {
                for (p, piece) in parts.iter().zip(tensor::split(g, *axis, sizes)) {
                    accumulate(grads, *p, piece.reshape(self.val(*p).shape())?)?;
                }
            }
            Op::SliceCols { x, start } => {
                let xs = self.val(*x);
                let (m, n) = xs.dims2()?;
                let w = g.width();
                let mut d = Tensor::zeros(&[m, n]);
                for r in 0..m {
                    d.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, d)?;
            }
            Op::Gather { table, indices } => {
                let shape = self.val(*table).shape().to_vec();
                let e = shape[1];
                let mut d = Tensor::zeros(&shape);
                for (r, &idx) in indices.iter().enumerate() {
                    let dst = &mut d.data_mut()[idx * e..(idx + 1) * e];
                    for (o, &v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, d)?;
            }
            Op::SoftmaxRows(a) => {
                let n = y.width();
                let mut d = Tensor::zeros(y.shape());
                for (r, out) in d.data_mut().chunks_mut(n.max(1)).enumerate() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::AddTiled(p, q) => {
                accumulate(grads, *p, g.clone())?;
                let b = self.val(*q).dims2()?.0;
                accumulate(grads, *q, tensor::sum_blocks(g, b))?;
            }
            Op::BlocksToRows(s) => accumulate(grads, *s, tensor::rows_to_blocks(g)?)?,
            Op::WeightedBlockSum(a, h) => {
                let av = self.val(*a);
                let hv = self.val(*h);
                let (b, t) = av.dims2()?;
                let d = hv.width();
                let mut ga = Tensor::zeros(&[b, t]);
                let mut gh = Tensor::zeros(hv.shape());
                for i in 0..t {
                    for r in 0..b {
                        let hrow = &hv.data()[(i * b + r) * d..(i * b + r + 1) * d];
                        let grow = g.row(r);
                        ga.data_mut()[r * t + i] = hrow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                        let w = av.data()[r * t + i];
                        let dst = &mut gh.data_mut()[(i * b + r) * d..(i * b + r + 1) * d];
                        for (o, &gv) in dst.iter_mut().zip(grow) {
                            *o += w * gv;
                        }
                    }
                }
                accumulate(grads, *a, ga)?;
                accumulate(grads, *h, gh)?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                accumulate(grads, *a, Tensor::filled(self.val(*a).shape(), s))?;
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let s = g.item()?;
                let mut d = probs.clone();
                let n = d.width();
                for (r, &t) in targets.iter().enumerate() {
                    d.data_mut()[r * n + t] -= T::one();
                }
                d.scale_in_place(s);
                accumulate(grads, *logits, d)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

impl<'p, T: Scalar> Graph<T> for Tape<'p, T> {
    type Node = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Leaf);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t)
    }

    fn value<'a>(&'a self, n: &'a Var) -> &'a Tensor<T> {
        self.val(*n)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::add(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::Add(*a, *b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::sub(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::Sub(*a, *b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::Mul(*a, *b)))
    }

    fn scale(&mut self, a: &Var, s: T) -> Var {
        let v = tensor::scale(self.val(*a), s);
        self.push(v, Op::Scale(*a, s))
    }

    fn add_bias(&mut self, x: &Var, bias: &Var) -> Result<Var> {
        let v = tensor::add_bias(self.val(*x), self.val(*bias))?;
        Ok(self.push(v, Op::AddBias(*x, *bias)))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::matmul(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::MatMul(*a, *b)))
    }

    fn matmul_bt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::matmul_bt(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::MatMulBt(*a, *b)))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let v = tensor::tanh(self.val(*a));
        self.push(v, Op::Tanh(*a))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = tensor::sigmoid(self.val(*a));
        self.push(v, Op::Sigmoid(*a))
    }

    fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        // Empty rank-1 pieces are dropped by the kernel; keep the recorded
        // parts in step with that.
        let kept: Vec<Var> = parts
            .iter()
            .copied()
            .filter(|p| !(self.val(*p).shape().len() == 1 && self.val(*p).is_empty()))
            .collect();
        let refs: Vec<&Tensor<T>> = kept.iter().map(|p| self.val(*p)).collect();
        let v = tensor::concat(&refs, axis)?;
        let sizes = kept.iter().map(|p| self.val(*p).shape()[axis]).collect();
        Ok(self.push(v, Op::Concat { parts: kept, axis, sizes }))
    }

    fn slice_cols(&mut self, x: &Var, start: usize, end: usize) -> Result<Var> {
        let v = tensor::slice_cols(self.val(*x), start, end)?;
        Ok(self.push(v, Op::SliceCols { x: *x, start }))
    }

    fn gather(&mut self, table: &Var, indices: &[usize]) -> Result<Var> {
        let v = tensor::gather_rows(self.val(*table), indices)?;
        Ok(self.push(
            v,
            Op::Gather {
                table: *table,
                indices: indices.to_vec(),
            },
        ))
    }

    fn softmax_rows(&mut self, x: &Var) -> Result<Var> {
        let v = tensor::softmax_rows(self.val(*x))?;
        Ok(self.push(v, Op::SoftmaxRows(*x)))
    }

    fn add_tiled(&mut self, p: &Var, q: &Var) -> Result<Var> {
        let v = tensor::add_tiled(self.val(*p), self.val(*q))?;
        Ok(self.push(v, Op::AddTiled(*p, *q)))
    }

    fn blocks_to_rows(&mut self, s: &Var, blocks: usize) -> Result<Var> {
        let v = tensor::blocks_to_rows(self.val(*s), blocks)?;
        Ok(self.push(v, Op::BlocksToRows(*s)))
    }

    fn weighted_block_sum(&mut self, a: &Var, h: &Var) -> Result<Var> {
        let v = tensor::weighted_block_sum(self.val(*a), self.val(*h))?;
        Ok(self.push(v, Op::WeightedBlockSum(*a, *h)))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.val(*a).sum());
        self.push(v, Op::Sum(*a))
    }

    fn softmax_xent(&mut self, logits: &Var, targets: &[usize]) -> Result<Var> {
        let (losses, probs) = tensor::softmax_xent_rows(self.val(*logits), targets)?;
        let v = Tensor::scalar(losses.into_iter().sum());
        Ok(self.push(
            v,
            Op::SoftmaxXent {
                logits: *logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        ParamStore::new()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let s = store();
        let mut tape = Tape::new(&s);
        let w = tape.leaf(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, 9.0]).unwrap());
        let l = tape.sum(&w);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient() {
        let s = store();
        let mut tape = Tape::new(&s);
        let w = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(&w, &w).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.wrt(w).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let s = store();
        let mut tape = Tape::new(&s);
        let w = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn concat_gradient_splits() {
        let s = store();
        let mut tape = Tape::new(&s);
        let a = tape.leaf(Tensor::vector(&[2.0]));
        let b = tape.leaf(Tensor::vector(&[5.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        let l = tape.sum(&c);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0]);
    }

    #[test]
    fn xent_gradient_is_softmax_minus_onehot() {
        let s = store();
        let mut tape = Tape::new(&s);
        let z = tape.leaf(Tensor::from_f64(&[1, 2], &[0.0, 3f64.ln()]).unwrap());
        let l = tape.softmax_xent(&z, &[1]).unwrap();
        let g = tape.backward(l).unwrap();
        let d = g.wrt(z).unwrap().data();
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut s = store();
        let p = s.add("w", Tensor::vector(&[2.0]));
        let mut tape = Tape::new(&s);
        let w1 = tape.param(p);
        let w2 = tape.param(p);
        assert_eq!(w1, w2);
        let a = tape.add(&w1, &w2).unwrap();
        let b = tape.add(&a, &w1).unwrap();
        let l = tape.sum(&b);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params()[0].data(), &[3.0]);
    }
}
