//! Reverse-mode automatic differentiation over a linear tape.

use std::cell::Cell;
use std::sync::Arc;

use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::resample::ResamplePlan;

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of backward passes run on the current thread so far.
pub fn backward_pass_count() -> u64 {
    BACKWARD_PASSES.with(|c| c.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { requires_grad: bool },
    Conv { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    Shuffle { x: Var, r: usize },
    Resample { x: Var, plan: Arc<ResamplePlan> },
    L1 { pred: Var, target: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { requires_grad })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a leaf by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad_mut().take()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Conv { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(y, Op::Shuffle { x, r }))
    }

    pub fn resample(&mut self, x: Var, plan: Arc<ResamplePlan>) -> Result<Var> {
        let y = ops::resample(self.value(x), &plan)?;
        Ok(self.push(y, Op::Resample { x, plan }))
    }

    /// Scalar mean absolute error, stored as a `(1, 1, 1, 1)` tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::l1_loss(self.value(pred), self.value(target))?;
        let t = Tensor::from_vec([1, 1, 1, 1], vec![l])?;
        Ok(self.push(t, Op::L1 { pred, target }))
    }

    /// Back-propagates from the scalar `loss`, leaving gradients on every
    /// leaf created with `requires_grad`. Fails on non-finite gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        BACKWARD_PASSES.with(|c| c.set(c.get() + 1));
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(s) => s.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        grads[i] = Some(g);
                    }
                }
                Op::Conv { x, w, b } => {
                    let bias_len = self.value(*b).numel();
                    let cg = ops::conv2d_backward(self.value(*x), self.value(*w), bias_len, &g)?;
                    acc(&mut grads[x.0], cg.input);
                    acc(&mut grads[w.0], cg.weight);
                    acc(&mut grads[b.0], cg.bias);
                }
                Op::Relu(x) => {
                    let gx = ops::relu_backward(self.value(*x), &g);
                    acc(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[b.0], g.clone());
                    acc(&mut grads[a.0], g);
                }
                Op::Shuffle { x, r } => {
                    let gx = ops::pixel_unshuffle(&g, self.value(*x).shape(), *r);
                    acc(&mut grads[x.0], gx);
                }
                Op::Resample { x, plan } => {
                    let gx = ops::resample_backward(&g, self.value(*x).shape(), plan);
                    acc(&mut grads[x.0], gx);
                }
                Op::L1 { pred, target } => {
                    let gp = ops::l1_loss_backward(self.value(*pred), self.value(*target), g[0]);
                    acc(&mut grads[pred.0], gp);
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of tape node {i}")));
                }
                self.nodes[i].value.set_grad(Some(g));
            }
        }
        Ok(())
    }
}
