use super::kernels::{
    conv2d_backward, conv2d_forward, max_pool2_backward, max_pool2_forward, up_conv2_backward,
    up_conv2_forward,
};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    UpConv2 { input: Var, weight: Var },
    Concat { a: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Ln(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    ChannelSum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of a forward computation. Nodes are only ever appended,
/// so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidShape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant or input; gradients flow to it but nowhere further.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value().clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias }))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = max_pool2_forward(self.value(input))?;
        Ok(self.push(out, Op::MaxPool2 { input, argmax }))
    }

    pub fn up_conv2(&mut self, input: Var, weight: Var) -> Result<Var> {
        let out = up_conv2_forward(self.value(input), self.value(weight))?;
        Ok(self.push(out, Op::UpConv2 { input, weight }))
    }

    /// Concatenate two `C×H×W` tensors along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::InvalidShape(format!(
                "concat: spatial extents {ha}×{wa} and {hb}×{wb} differ"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(vec![ca + cb, ha, wa], data)?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    /// Softmax across the class axis of an `L×H×W` tensor, per pixel.
    pub fn softmax_channel(&mut self, x: Var) -> Result<Var> {
        let out = softmax_channel(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    fn binary(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(what, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push(out, Op::Ln(x))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor));
        self.push(out, Op::ClampMin(x, floor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        self.push(out, Op::Mean(x))
    }

    /// Sum of each channel of a `C×H×W` tensor, giving shape `[C]`.
    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let sums = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum())
            .collect();
        let out = Tensor::new(vec![c], sums)?;
        Ok(self.push(out, Op::ChannelSum(x)))
    }

    /// Reverse pass from a scalar `loss`, returning the gradient of every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(g);
                continue;
            }
            let mut send = |v: Var, contribution: Tensor| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Conv2d { input, weight, bias } => {
                    let (gi, gw, gb) = conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        self.value(*bias),
                        &g,
                    )?;
                    send(*input, gi);
                    send(*weight, gw);
                    send(*bias, gb);
                }
                Op::MaxPool2 { input, argmax } => {
                    send(*input, max_pool2_backward(self.value(*input).shape(), argmax, &g));
                }
                Op::UpConv2 { input, weight } => {
                    let (gi, gw) = up_conv2_backward(self.value(*input), self.value(*weight), &g)?;
                    send(*input, gi);
                    send(*weight, gw);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).numel();
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), g.data()[..na].to_vec())?;
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), g.data()[na..].to_vec())?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Relu(x) => {
                    let out = zip_map(&g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 });
                    send(*x, out);
                }
                Op::Sigmoid(x) => {
                    let out = zip_map(&g, &node.value, |g, s| g * s * (1.0 - s));
                    send(*x, out);
                }
                Op::Softmax(x) => {
                    send(*x, softmax_channel_backward(&node.value, &g)?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, zip_map(&g, self.value(*b), |g, y| g * y));
                    send(*b, zip_map(&g, self.value(*a), |g, x| g * x));
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(*a, zip_map(&g, tb, |g, y| g / y));
                    let num = zip_map(&g, ta, |g, x| g * x);
                    send(*b, zip_map(&num, tb, |gx, y| -gx / (y * y)));
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    send(*x, g.map(|v| v * f));
                }
                Op::AddScalar(x) => send(*x, g),
                Op::Square(x) => send(*x, zip_map(&g, self.value(*x), |g, x| 2.0 * g * x)),
                Op::Ln(x) => send(*x, zip_map(&g, self.value(*x), |g, x| g / x)),
                Op::ClampMin(x, floor) => {
                    let f = *floor;
                    send(*x, zip_map(&g, self.value(*x), |g, x| if x > f { g } else { 0.0 }));
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    send(*x, Tensor::filled(self.value(*x).shape(), s));
                }
                Op::Mean(x) => {
                    let t = self.value(*x);
                    let s = g.data()[0] / t.numel() as f64;
                    send(*x, Tensor::filled(t.shape(), s));
                }
                Op::ChannelSum(x) => {
                    let t = self.value(*x);
                    let (_, h, w) = t.dims3()?;
                    let data = g
                        .data()
                        .iter()
                        .flat_map(|&v| std::iter::repeat_n(v, h * w))
                        .collect();
                    send(*x, Tensor::new(t.shape().to_vec(), data)?);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

/// Softmax over the leading (class) axis of a `C×H×W` tensor.
pub fn softmax_channel(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for p in 0..hw {
        let max = (0..c).map(|l| src[l * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in 0..c {
            let e = (src[l * hw + p] - max).exp();
            out[l * hw + p] = e;
            total += e;
        }
        for l in 0..c {
            out[l * hw + p] /= total;
        }
    }
    Tensor::new(vec![c, h, w], out)
}

fn softmax_channel_backward(probs: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (c, h, w) = probs.dims3()?;
    let hw = h * w;
    let (p, gd) = (probs.data(), g.data());
    let mut out = vec![0.0; p.len()];
    for px in 0..hw {
        let dot: f64 = (0..c).map(|l| p[l * hw + px] * gd[l * hw + px]).sum();
        for l in 0..c {
            let i = l * hw + px;
            out[i] = p[i] * (gd[i] - dot);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Per-node gradients from one reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf or parameter node, if the loss
    /// depends on it. Interior gradients are released during the pass.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Add every parameter gradient into its parameter's gradient slot.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                params.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}

/// Run the reverse pass and accumulate into `params`.
pub fn backward(tape: &Tape, loss: Var, params: &mut ParamSet) -> Result<()> {
    tape.backward(loss)?.accumulate_into(params)
}
