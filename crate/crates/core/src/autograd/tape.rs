use super::ops::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward inputs and output together with the
/// gradient flowing into the output, and returns one gradient per input
/// (`None` when the input is not differentiable).
pub trait Op {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op>>,
    requires_grad: bool,
}

/// Linear record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, inputs: Vec<Var>, op: Option<Box<dyn Op>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// Records an operation whose forward value has already been computed.
    pub fn record(&mut self, op: Box<dyn Op>, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, inputs.to_vec(), Some(op), requires_grad))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), self.value(bias), geom)?;
        self.record(Box::new(Conv2d(geom)), &[input, kernel, bias], out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = ops::relu(self.value(x));
        self.record(Box::new(Relu), &[x], out)
    }

    pub fn nearest_upsample2x(&mut self, x: Var) -> Result<Var> {
        let out = ops::nearest_upsample2x(self.value(x))?;
        self.record(Box::new(Upsample2x), &[x], out)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        self.record(Box::new(ConcatChannels), &[a, b], out)
    }

    pub fn softmax_channels(&mut self, z: Var) -> Result<Var> {
        let out = ops::softmax_channels(self.value(z))?;
        self.record(Box::new(SoftmaxChannels), &[z], out)
    }

    /// Mean of scalar values.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
            ops::mean_scalars(&vals)?
        };
        self.record(Box::new(MeanScalars), xs, out)
    }

    /// `Σ wᵢ·xᵢ` over scalar values.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let total = terms.iter().map(|&(v, w)| w * self.value(v).item()).sum::<f64>();
        let (vars, weights): (Vec<Var>, Vec<f64>) = terms.iter().copied().unzip();
        self.record(Box::new(WeightedSum(weights)), &vars, Tensor::scalar(total))
    }

    /// Reverse sweep from a scalar `root`, seeded with `d root = 1`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_seeded(root, Tensor::scalar(1.0))
    }

    pub fn backward_seeded(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape("backward", "seed shape differs from root"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad)?;
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: op.name() });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

struct Conv2d(ConvGeometry);

impl Op for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gk, gb) = ops::conv2d_backward(inputs[0], inputs[1], inputs[2], self.0, grad)?;
        Ok(vec![Some(gx), Some(gk), Some(gb)])
    }
}

struct Relu;

impl Op for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(ops::relu_backward(inputs[0], grad))])
    }
}

struct Upsample2x;

impl Op for Upsample2x {
    fn name(&self) -> &'static str {
        "nearest_upsample2x"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(ops::nearest_upsample2x_backward(inputs[0].shape(), grad)?)])
    }
}

struct ConcatChannels;

impl Op for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (ga, gb) = ops::concat_channels_backward(inputs[0].shape()[0], grad)?;
        Ok(vec![Some(ga), Some(gb)])
    }
}

struct SoftmaxChannels;

impl Op for SoftmaxChannels {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(ops::softmax_channels_backward(output, grad)?)])
    }
}

struct MeanScalars;

impl Op for MeanScalars {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let share = grad.item() / inputs.len() as f64;
        Ok(inputs.iter().map(|_| Some(Tensor::scalar(share))).collect())
    }
}

struct WeightedSum(Vec<f64>);

impl Op for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(self.0.iter().map(|w| Some(Tensor::scalar(w * grad.item()))).collect())
    }
}
