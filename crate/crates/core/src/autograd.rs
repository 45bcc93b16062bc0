//! Reverse-mode differentiation over a recorded tape.
//!
//! Every operation appends a node holding its value and the record of how it
//! was produced. Inputs always precede their consumers, so the lineage is
//! acyclic by construction and a single reverse sweep computes all gradients.
//! A tape is single-writer; build one per forward pass.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Concat(Vec<Var>),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Moments measured on a batch by [`Tape::batch_norm_train`].
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records an input (data or parameter) with no producing operation.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::max_pool2d(self.value(input), window, stride)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.value(input), factor)?;
        Ok(self.push(out, Op::Upsample { input, factor }))
    }

    /// Batch normalisation using the moments of this batch; the moments are
    /// returned so the caller can update running statistics.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchMoments<T>)> {
        let (mean, var) = ops::channel_moments(self.value(input))?;
        let (out, xhat, inv_std) = ops::batch_norm_apply(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            &mean,
            &var,
            eps,
        )?;
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((v, BatchMoments { mean, var }))
    }

    /// Batch normalisation with fixed (running) moments.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (out, xhat, inv_std) = ops::batch_norm_apply(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            mean,
            var,
            eps,
        )?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(input))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale(input, factor))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(inputs.to_vec())))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool(input)))
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of the loss
    /// with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    bias.is_some(),
                    *stride,
                    *padding,
                    g,
                )?;
                accumulate(grads, *input, cg.input.data());
                accumulate(grads, *weight, cg.weight.data());
                if let (Some(b), Some(db)) = (bias, cg.bias) {
                    accumulate(grads, *b, db.data());
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] = dx[idx] + gv;
                }
                accumulate(grads, *input, &dx);
            }
            Op::Upsample { input, factor } => {
                let dx = ops::upsample_nearest_backward(self.value(*input).shape(), *factor, g);
                accumulate(grads, *input, &dx);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let bg = ops::batch_norm_backward(
                    node.value.shape(),
                    self.value(*gamma).data(),
                    xhat,
                    inv_std,
                    g,
                    *batch_stats,
                );
                accumulate(grads, *input, &bg.input);
                accumulate(grads, *gamma, &bg.gamma);
                accumulate(grads, *beta, &bg.beta);
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let dx: Vec<T> = x
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *input, &dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<T> = g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                let db: Vec<T> = g.iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale(input, factor) => {
                let dx: Vec<T> = g.iter().map(|&v| v * *factor).collect();
                accumulate(grads, *input, &dx);
            }
            Op::Sum(input) => {
                let dx = vec![g[0]; self.value(*input).len()];
                accumulate(grads, *input, &dx);
            }
            Op::Concat(inputs) => {
                let (n, _, h, w) = node.value.dims4()?;
                let total: usize = node.value.shape()[1] * h * w;
                let mut offset = 0;
                for &v in inputs {
                    let per = self.value(v).shape()[1] * h * w;
                    let mut dx = Vec::with_capacity(per * n);
                    for s in 0..n {
                        dx.extend_from_slice(&g[s * total + offset..s * total + offset + per]);
                    }
                    accumulate(grads, v, &dx);
                    offset += per;
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (dx, dw, db) =
                    ops::linear_backward(self.value(*input), self.value(*weight), g)?;
                accumulate(grads, *input, &dx);
                accumulate(grads, *weight, &dw);
                if let Some(b) = bias {
                    accumulate(grads, *b, &db);
                }
            }
            Op::GlobalAvgPool(input) => {
                let shape = self.value(*input).shape();
                let hw = shape[2] * shape[3];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let dx: Vec<T> = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, hw))
                    .collect();
                accumulate(grads, *input, &dx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Gradients of a scalar with respect to every value on a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Raw gradient buffer; `None` when the value does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient shaped like the recorded value, zero when unreachable.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.value(v).shape();
        match self.get(v) {
            Some(g) => Tensor::new(shape.to_vec(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut t = Tape::<f64>::new();
        let w = t.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_value_has_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::full(&[3], 1.0));
        let b = t.leaf(Tensor::full(&[3], 2.0));
        let loss = t.sum(a);
        let g = t.backward(loss).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.wrt(&t, b).data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::full(&[3], 1.0));
        let r = t.relu(a);
        assert!(t.backward(r).is_err());
    }

    #[test]
    fn maxpool_gradient_routes_to_max() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = t.max_pool2d(x, 2, 2).unwrap();
        let loss = t.sum(p);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_gradient_sums_blocks() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
        let u = t.upsample_nearest(x, 2).unwrap();
        let loss = t.sum(u);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[4.0; 4]);
    }

    #[test]
    fn relu_and_add_examples() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.leaf(Tensor::zeros(&[3]));
        let s = t.add(x, z).unwrap();
        assert_eq!(t.value(s), t.value(x));
        let bad = t.leaf(Tensor::zeros(&[2]));
        assert!(t.add(x, bad).is_err());
    }
}
