//! Operation tape for reverse-mode differentiation.
//!
//! Every layer call on a [`Tape`] evaluates eagerly and appends a node holding
//! the result plus whatever the backward rule needs. [`Tape::backward`] walks
//! the nodes once in reverse recording order.

use super::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
use super::pool::{maxpool2d, maxpool2d_backward};
use super::{ConvSpec, Float, Tensor};
use crate::error::{Error, Result};

/// Named tensors in insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|(n, _)| keep(n));
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(usize),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    /// One gradient per parameter of the set passed to `backward`, zero for
    /// parameters the loss does not depend on.
    pub params: ParamSet<T>,
    inputs: Vec<(Var, Tensor<T>)>,
}

impl<T: Float> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Gradient reaching an input recorded with [`Tape::input`].
    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.iter().find(|(v, _)| *v == var).map(|(_, t)| t)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Records a constant; its gradient is reported but never applied.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Records parameter `name` of `params`.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let index = params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        let value = params.entries[index].1.clone();
        Ok(self.push(value, Op::Param(index)))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: &ConvSpec) -> Result<Var> {
        let y = conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            spec,
        )?;
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec: *spec,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let y = conv_transpose2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            spec,
        )?;
        Ok(self.push(
            y,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec: *spec,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let pooled = maxpool2d(self.value(input), window, stride)?;
        Ok(self.push(
            pooled.output,
            Op::MaxPool {
                input,
                argmax: pooled.argmax,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = self.value(input).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| x * x);
        self.push(y, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let y = self.value(a).map(|x| x * factor);
        self.push(y, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let y = Tensor::scalar(t.sum() / T::of_f64(t.len() as f64));
        self.push(y, Op::Mean(a))
    }

    /// Gradients of the single-element `loss` with respect to every parameter
    /// in `params` and every recorded input.
    pub fn backward(&self, loss: Var, params: &ParamSet<T>) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        let mut out = params.zeros_like();
        let mut inputs = Vec::new();

        for index in (0..=loss.0).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            match &node.op {
                Op::Input => inputs.push((Var(index), g)),
                Op::Param(p) => {
                    let Some((name, slot)) = out.entries.get_mut(*p) else {
                        return Err(Error::Contract(format!(
                            "tape parameter #{p} is not in the supplied parameter set"
                        )));
                    };
                    if slot.shape() != g.shape() {
                        return Err(Error::Contract(format!(
                            "parameter {name} has shape {:?} but was recorded as {:?}",
                            slot.shape(),
                            g.shape()
                        )));
                    }
                    for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                        *s += *v;
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let cg = conv2d_backward(self.value(*input), self.value(*weight), &g, spec)?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *weight, cg.weight);
                    accumulate(&mut grads, *bias, cg.bias);
                }
                Op::ConvTranspose2d {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let cg = conv_transpose2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        spec,
                    )?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *weight, cg.weight);
                    accumulate(&mut grads, *bias, cg.bias);
                }
                Op::MaxPool { input, argmax } => {
                    let gx = maxpool2d_backward(self.value(*input).shape(), argmax, &g)?;
                    accumulate(&mut grads, *input, gx);
                }
                Op::Relu(a) => {
                    let gx =
                        self.value(*a)
                            .zip_map(&g, |x, gy| if x > T::zero() { gy } else { T::zero() })?;
                    accumulate(&mut grads, *a, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |gy, y| gy * y)?;
                    let gb = g.zip_map(self.value(*a), |gy, x| gy * x)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Square(a) => {
                    let two = T::of_f64(2.0);
                    let gx = self.value(*a).zip_map(&g, |x, gy| two * x * gy)?;
                    accumulate(&mut grads, *a, gx);
                }
                Op::Scale(a, factor) => {
                    let factor = *factor;
                    accumulate(&mut grads, *a, g.map(|gy| gy * factor));
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(shape, g.data()[0]));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let v = g.data()[0] / T::of_f64(t.len() as f64);
                    accumulate(&mut grads, *a, Tensor::full(t.shape().to_vec(), v));
                }
            }
        }
        inputs.reverse();
        Ok(Gradients {
            params: out,
            inputs,
        })
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
