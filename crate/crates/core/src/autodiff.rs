//! Reverse-mode autodiff over a dynamically recorded tape.
//!
//! Every call on [`Tape`] evaluates its kernel immediately and appends a
//! node holding the value and the recipe for its backward rule. Inputs are
//! always recorded before the nodes that consume them, so the tape is in
//! topological order by construction and [`Tape::backward`] simply walks it
//! in reverse. Gradients reaching a node from several consumers are summed in
//! that same reverse order, which makes the result reproducible bit for bit.
//!
//! ```
//! use rdmnet_core::autodiff::Tape;
//! use rdmnet_core::Tensor;
//!
//! let mut tape = Tape::<f32>::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), true);
//! let loss = tape.sum_squares(x);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0]);
//! ```

use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Relu { input: Var },
    AvgPool { input: Var, kernel: usize, stride: usize },
    Linear { input: Var, weight: Var, bias: Var },
    Interleave { a: Var, b: Var, groups: usize },
    Add { a: Var, b: Var },
    Reshape { input: Var },
    Gather { input: Var, indices: Vec<usize> },
    Mse { pred: Var, target: Vec<T> },
    SumSquares { input: Var },
    Sum { input: Var },
    Dot { input: Var, weights: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let y = conv::conv2d(self.value(input), self.value(weight), self.value(bias), &spec)?;
        Ok(self.push(y, Op::Conv2d { input, weight, bias, spec }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = ops::relu(self.value(input));
        self.push(y, Op::Relu { input }, &[input])
    }

    pub fn avg_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let y = ops::avg_pool2d(self.value(input), kernel, stride)?;
        Ok(self.push(y, Op::AvgPool { input, kernel, stride }, &[input]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(y, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn interleave(&mut self, a: Var, b: Var, groups: usize) -> Result<Var> {
        let y = ops::interleave(self.value(a), self.value(b), groups)?;
        Ok(self.push(y, Op::Interleave { a, b, groups }, &[a, b]))
    }

    /// Elementwise sum of equally shaped values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let y = self.value(input).reshape(shape)?;
        Ok(self.push(y, Op::Reshape { input }, &[input]))
    }

    /// Collapses every axis after the first: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![n, rest])
    }

    pub fn gather_rows(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let y = ops::gather_rows(self.value(input), indices)?;
        Ok(self.push(
            y,
            Op::Gather {
                input,
                indices: indices.to_vec(),
            },
            &[input],
        ))
    }

    /// Mean squared difference against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.is_empty() || target.is_empty() {
            return Err(Error::Empty("mse batch"));
        }
        if p.len() != target.len() {
            return Err(Error::shape(
                "mse",
                format!("{} predictions vs {} targets", p.len(), target.len()),
            ));
        }
        let mut acc = T::zero();
        for (&a, &b) in p.iter().zip(target) {
            let d = a - b;
            acc += d * d;
        }
        let n = T::from_usize(p.len()).expect("batch size fits");
        let y = Tensor::scalar(acc / n);
        Ok(self.push(
            y,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(input).data() {
            acc += v * v;
        }
        self.push(Tensor::scalar(acc), Op::SumSquares { input }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(input).data() {
            acc += v;
        }
        self.push(Tensor::scalar(acc), Op::Sum { input }, &[input])
    }

    /// `Σ input[i] * weights[i]` with constant weights.
    pub fn dot(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let x = self.value(input).data();
        if x.len() != weights.len() {
            return Err(Error::shape("dot", format!("{} vs {}", x.len(), weights.len())));
        }
        let mut acc = T::zero();
        for (&a, &w) in x.iter().zip(weights) {
            acc += a * w;
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::Dot {
                input,
                weights: weights.to_vec(),
            },
            &[input],
        ))
    }

    /// Replays the tape backwards from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, spec } => {
                let cg = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    spec,
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                    self.wants(*bias),
                )?;
                accumulate(grads, *input, cg.input);
                accumulate(grads, *weight, cg.weight);
                accumulate(grads, *bias, cg.bias);
            }
            Op::Relu { input } => {
                if self.wants(*input) {
                    accumulate(grads, *input, Some(ops::relu_backward(self.value(*input), g)));
                }
            }
            Op::AvgPool { input, kernel, stride } => {
                if self.wants(*input) {
                    let dx = ops::avg_pool2d_backward(self.value(*input).shape(), *kernel, *stride, g)?;
                    accumulate(grads, *input, Some(dx));
                }
            }
            Op::Linear { input, weight, bias } => {
                let lg = ops::linear_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    g,
                    [self.wants(*input), self.wants(*weight), self.wants(*bias)],
                )?;
                accumulate(grads, *input, lg.input);
                accumulate(grads, *weight, lg.weight);
                accumulate(grads, *bias, lg.bias);
            }
            Op::Interleave { a, b, groups } => {
                let (ga, gb) = ops::interleave_backward(self.value(*a).shape(), *groups, g)?;
                if self.wants(*a) {
                    accumulate(grads, *a, Some(ga));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Some(gb));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, Some(g.to_vec()));
                    }
                }
            }
            Op::Reshape { input } => {
                if self.wants(*input) {
                    accumulate(grads, *input, Some(g.to_vec()));
                }
            }
            Op::Gather { input, indices } => {
                if self.wants(*input) {
                    let dx = ops::gather_rows_backward(self.value(*input).shape(), indices, g);
                    accumulate(grads, *input, Some(dx));
                }
            }
            Op::Mse { pred, target } => {
                if self.wants(*pred) {
                    let p = self.value(*pred).data();
                    let n = T::from_usize(p.len()).expect("batch size fits");
                    let two = T::one() + T::one();
                    let scale = g[0] * two / n;
                    let dx = p.iter().zip(target).map(|(&a, &b)| scale * (a - b)).collect();
                    accumulate(grads, *pred, Some(dx));
                }
            }
            Op::SumSquares { input } => {
                if self.wants(*input) {
                    let two = T::one() + T::one();
                    let dx = self.value(*input).data().iter().map(|&v| g[0] * two * v).collect();
                    accumulate(grads, *input, Some(dx));
                }
            }
            Op::Sum { input } => {
                if self.wants(*input) {
                    accumulate(grads, *input, Some(vec![g[0]; self.value(*input).len()]));
                }
            }
            Op::Dot { input, weights } => {
                if self.wants(*input) {
                    accumulate(grads, *input, Some(weights.iter().map(|&w| g[0] * w).collect()));
                }
            }
        }
        debug_assert_eq!(out.len(), g.len());
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], target: Var, contribution: Option<Vec<T>>) {
    let Some(c) = contribution else { return };
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(c) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(c),
    }
}

/// Result of a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
