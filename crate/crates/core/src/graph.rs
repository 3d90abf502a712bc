//! Graph backends the model code is written against.
//!
//! Model code calls the [`Graph`] operations; [`crate::tape::Tape`] records
//! them for reverse-mode differentiation, [`Eval`] just computes values.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Differentiable tensor operations over some node representation.
pub trait Graph<T: Scalar> {
    type Node: Clone;

    fn param(&mut self, id: ParamId) -> Self::Node;
    fn constant(&mut self, t: Tensor<T>) -> Self::Node;
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor<T>;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, a: &Self::Node, s: T) -> Self::Node;
    fn add_bias(&mut self, x: &Self::Node, bias: &Self::Node) -> Result<Self::Node>;
    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    /// `a * b^T`; weights stored `out x in` are applied to row-vector batches this way.
    fn matmul_bt(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn tanh(&mut self, a: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, a: &Self::Node) -> Self::Node;
    fn concat(&mut self, parts: &[Self::Node], axis: usize) -> Result<Self::Node>;
    fn slice_cols(&mut self, x: &Self::Node, start: usize, end: usize) -> Result<Self::Node>;
    fn gather(&mut self, table: &Self::Node, indices: &[usize]) -> Result<Self::Node>;
    fn softmax_rows(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn add_tiled(&mut self, p: &Self::Node, q: &Self::Node) -> Result<Self::Node>;
    fn blocks_to_rows(&mut self, s: &Self::Node, blocks: usize) -> Result<Self::Node>;
    fn weighted_block_sum(&mut self, a: &Self::Node, h: &Self::Node) -> Result<Self::Node>;
    /// Sum of all entries, as a one-element tensor.
    fn sum(&mut self, a: &Self::Node) -> Self::Node;
    /// Sum over rows of `-log softmax(logits)[target]`, as a one-element tensor.
    fn softmax_xent(&mut self, logits: &Self::Node, targets: &[usize]) -> Result<Self::Node>;

    /// `x * w^T + b`.
    fn linear(&mut self, x: &Self::Node, w: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        let xw = self.matmul_bt(x, w)?;
        self.add_bias(&xw, b)
    }
}

/// Value-only backend: nothing is recorded, intermediates are dropped as soon
/// as the caller lets go of them.
pub struct Eval<T> {
    params: Vec<Rc<Tensor<T>>>,
}

impl<T: Scalar> Eval<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Eval {
            params: store.tensors().iter().cloned().map(Rc::new).collect(),
        }
    }
}

impl<T: Scalar> Graph<T> for Eval<T> {
    type Node = Rc<Tensor<T>>;

    fn param(&mut self, id: ParamId) -> Self::Node {
        Rc::clone(&self.params[id.0])
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::Node {
        Rc::new(t)
    }

    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor<T> {
        n
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        tensor::add(a, b).map(Rc::new)
    }

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        tensor::sub(a, b).map(Rc::new)
    }

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        tensor::mul(a, b).map(Rc::new)
    }

    fn scale(&mut self, a: &Self::Node, s: T) -> Self::Node {
        Rc::new(tensor::scale(a, s))
    }

    fn add_bias(&mut self, x: &Self::Node, bias: &Self::Node) -> Result<Self::Node> {
        tensor::add_bias(x, bias).map(Rc::new)
    }

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        tensor::matmul(a, b).map(Rc::new)
    }

    fn matmul_bt(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        tensor::matmul_bt(a, b).map(Rc::new)
    }

    fn tanh(&mut self, a: &Self::Node) -> Self::Node {
        Rc::new(tensor::tanh(a))
    }

    fn sigmoid(&mut self, a: &Self::Node) -> Self::Node {
        Rc::new(tensor::sigmoid(a))
    }

    fn concat(&mut self, parts: &[Self::Node], axis: usize) -> Result<Self::Node> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| p.as_ref()).collect();
        tensor::concat(&refs, axis).map(Rc::new)
    }

    fn slice_cols(&mut self, x: &Self::Node, start: usize, end: usize) -> Result<Self::Node> {
        tensor::slice_cols(x, start, end).map(Rc::new)
    }

    fn gather(&mut self, table: &Self::Node, indices: &[usize]) -> Result<Self::Node> {
        tensor::gather_rows(table, indices).map(Rc::new)
    }

    fn softmax_rows(&mut self, x: &Self::Node) -> Result<Self::Node> {
        tensor::softmax_rows(x).map(Rc::new)
    }

    fn add_tiled(&mut self, p: &Self::Node, q: &Self::Node) -> Result<Self::Node> {
        tensor::add_tiled(p, q).map(Rc::new)
    }

    fn blocks_to_rows(&mut self, s: &Self::Node, blocks: usize) -> Result<Self::Node> {
        tensor::blocks_to_rows(s, blocks).map(Rc::new)
    }

    fn weighted_block_sum(&mut self, a: &Self::Node, h: &Self::Node) -> Result<Self::Node> {
        tensor::weighted_block_sum(a, h).map(Rc::new)
    }

    fn sum(&mut self, a: &Self::Node) -> Self::Node {
        Rc::new(Tensor::scalar(a.sum()))
    }

    fn softmax_xent(&mut self, logits: &Self::Node, targets: &[usize]) -> Result<Self::Node> {
        let (losses, _) = tensor::softmax_xent_rows(logits, targets)?;
        Ok(Rc::new(Tensor::scalar(losses.into_iter().sum())))
    }
}

/// Convenience for single-example APIs: require a rank-1 vector of a given length.
pub(crate) fn expect_len<T: Scalar>(t: &Tensor<T>, n: usize, what: &str) -> Result<()> {
    if t.len() != n {
        return Err(Error::Dimension(format!(
            "{what}: expected {n} values, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}
