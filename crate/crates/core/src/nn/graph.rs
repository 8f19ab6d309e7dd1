//! Immediate-mode autodiff tape.
//!
//! Ops evaluate eagerly as they are recorded; `backward` replays the tape in
//! reverse, accumulating gradients per node. Parameters are bound by name and
//! deduplicated, so a weight used twice in one graph accumulates both
//! contributions.

use std::collections::HashMap;

use super::kernels as k;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Conv2d { stride: usize, pad: usize },
    ConvT2d { stride: usize, pad: usize },
    Linear,
    LeakyRelu { slope: f64 },
    UpsampleNearest { factor: usize },
    GlobalAvgPool,
    ConcatCh,
    Film,
    AddBiasCh,
    Add,
    Scale { c: f64 },
    SliceRows { start: usize, len: usize },
    Mse,
    L1,
    Triplet { margin: f64, n: usize },
}

struct Node<T> {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    bindings: HashMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor<T>) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Input => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1]`-shaped node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "expected scalar node");
        t.data()[0]
    }

    /// Constant (no gradient) leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, vec![], value)
    }

    /// Named trainable leaf; the same name returns the same node.
    pub fn bind(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.bindings.get(name) {
            return v;
        }
        let v = self.push(Op::Param, vec![], value.clone());
        self.bindings.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&String, Var)> {
        self.bindings.iter().map(|(n, &v)| (n, v))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let value = k::conv2d_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            pad,
        );
        self.push(Op::Conv2d { stride, pad }, vec![x, w, b], value)
    }

    pub fn convt2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let value = k::convt2d_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            pad,
        );
        self.push(Op::ConvT2d { stride, pad }, vec![x, w, b], value)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let value = k::linear_forward(self.value(x), self.value(w), self.value(b));
        self.push(Op::Linear, vec![x, w, b], value)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = k::leaky_relu_forward(self.value(x), slope);
        self.push(Op::LeakyRelu { slope }, vec![x], value)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let value = k::upsample_nearest_forward(self.value(x), factor);
        self.push(Op::UpsampleNearest { factor }, vec![x], value)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let value = k::global_avg_pool_forward(self.value(x));
        self.push(Op::GlobalAvgPool, vec![x], value)
    }

    pub fn concat_ch(&mut self, a: Var, b: Var) -> Var {
        let value = k::concat_ch_forward(self.value(a), self.value(b));
        self.push(Op::ConcatCh, vec![a, b], value)
    }

    pub fn film(&mut self, x: Var, gb: Var) -> Var {
        let value = k::film_forward(self.value(x), self.value(gb));
        self.push(Op::Film, vec![x, gb], value)
    }

    pub fn add_bias_ch(&mut self, x: Var, v: Var) -> Var {
        let value = k::add_bias_ch_forward(self.value(x), self.value(v));
        self.push(Op::AddBiasCh, vec![x, v], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add: shape mismatch");
        let mut value = ta.clone();
        for (v, s) in value.data_mut().iter_mut().zip(tb.data().iter()) {
            *v = *v + *s;
        }
        self.push(Op::Add, vec![a, b], value)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = T::cast(c);
        let value = self.value(x).map(|v| v * cc);
        self.push(Op::Scale { c }, vec![x], value)
    }

    /// Rows `start..start+len` of a `[N, D]` tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let (n, d) = (t.shape()[0], t.shape()[1]);
        assert!(start + len <= n, "slice_rows out of range");
        let value = Tensor::from_vec(&[len, d], t.data()[start * d..(start + len) * d].to_vec());
        self.push(Op::SliceRows { start, len }, vec![x], value)
    }

    /// Mean squared error over all elements; returns a `[1]` scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.value(pred), self.value(target));
        assert_eq!(p.shape(), t.shape(), "mse: shape mismatch");
        let mut acc = T::zero();
        for (a, b) in p.data().iter().zip(t.data().iter()) {
            let d = *a - *b;
            acc = acc + d * d;
        }
        let value = Tensor::from_vec(&[1], vec![acc / T::cast_usize(p.numel())]);
        self.push(Op::Mse, vec![pred, target], value)
    }

    /// Mean absolute error over all elements; returns a `[1]` scalar node.
    pub fn l1(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.value(pred), self.value(target));
        assert_eq!(p.shape(), t.shape(), "l1: shape mismatch");
        let mut acc = T::zero();
        for (a, b) in p.data().iter().zip(t.data().iter()) {
            acc = acc + (*a - *b).abs();
        }
        let value = Tensor::from_vec(&[1], vec![acc / T::cast_usize(p.numel())]);
        self.push(Op::L1, vec![pred, target], value)
    }

    /// Triplet hinge loss over `n` index-paired positives and negatives:
    /// inputs are `[anchor, p_1.. p_n, n_1.. n_n]`, each `[1, D]` or `[D]`.
    pub fn triplet(&mut self, anchor: Var, pos: &[Var], neg: &[Var], margin: f64) -> Var {
        assert_eq!(pos.len(), neg.len(), "triplet: unpaired inputs");
        assert!(!pos.is_empty(), "triplet: needs n >= 1");
        let n = pos.len();
        let mut total = T::zero();
        let m = T::cast(margin);
        for i in 0..n {
            let dp = T::cast(self.value(anchor).l2_distance(self.value(pos[i])));
            let dn = T::cast(self.value(anchor).l2_distance(self.value(neg[i])));
            let term = dp - dn + m;
            if term > T::zero() {
                total = total + term;
            }
        }
        let mut inputs = vec![anchor];
        inputs.extend_from_slice(pos);
        inputs.extend_from_slice(neg);
        let value = Tensor::from_vec(&[1], vec![total]);
        self.push(Op::Triplet { margin, n }, inputs, value)
    }

    /// Reverse pass from a scalar loss node. Returns per-parameter gradients
    /// keyed by binding name.
    pub fn backward(&self, loss: Var) -> HashMap<String, Tensor<T>> {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(&[1], vec![T::one()]));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let ins = &node.inputs;
            let send = |grads: &mut Vec<Option<Tensor<T>>>, var: Var, g: Tensor<T>| {
                if !self.nodes[var.0].needs_grad {
                    return;
                }
                match &mut grads[var.0] {
                    Some(existing) => {
                        for (a, b) in existing.data_mut().iter_mut().zip(g.data().iter()) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Input | Op::Param => {
                    grads[idx] = Some(gout);
                }
                Op::Conv2d { stride, pad } => {
                    let (gx, gw, gb) = k::conv2d_backward(
                        self.value(ins[0]),
                        self.value(ins[1]),
                        &gout,
                        *stride,
                        *pad,
                    );
                    send(&mut grads, ins[0], gx);
                    send(&mut grads, ins[1], gw);
                    send(&mut grads, ins[2], gb);
                }
                Op::ConvT2d { stride, pad } => {
                    let (gx, gw, gb) = k::convt2d_backward(
                        self.value(ins[0]),
                        self.value(ins[1]),
                        &gout,
                        *stride,
                        *pad,
                    );
                    send(&mut grads, ins[0], gx);
                    send(&mut grads, ins[1], gw);
                    send(&mut grads, ins[2], gb);
                }
                Op::Linear => {
                    let (gx, gw, gb) =
                        k::linear_backward(self.value(ins[0]), self.value(ins[1]), &gout);
                    send(&mut grads, ins[0], gx);
                    send(&mut grads, ins[1], gw);
                    send(&mut grads, ins[2], gb);
                }
                Op::LeakyRelu { slope } => {
                    let gx = k::leaky_relu_backward(self.value(ins[0]), &gout, *slope);
                    send(&mut grads, ins[0], gx);
                }
                Op::UpsampleNearest { factor } => {
                    let gx =
                        k::upsample_nearest_backward(self.value(ins[0]).shape(), &gout, *factor);
                    send(&mut grads, ins[0], gx);
                }
                Op::GlobalAvgPool => {
                    let gx = k::global_avg_pool_backward(self.value(ins[0]).shape(), &gout);
                    send(&mut grads, ins[0], gx);
                }
                Op::ConcatCh => {
                    let (ga, gb) = k::concat_ch_backward(
                        self.value(ins[0]).shape(),
                        self.value(ins[1]).shape(),
                        &gout,
                    );
                    send(&mut grads, ins[0], ga);
                    send(&mut grads, ins[1], gb);
                }
                Op::Film => {
                    let (gx, ggb) = k::film_backward(self.value(ins[0]), self.value(ins[1]), &gout);
                    send(&mut grads, ins[0], gx);
                    send(&mut grads, ins[1], ggb);
                }
                Op::AddBiasCh => {
                    let gv = k::add_bias_ch_backward(self.value(ins[0]).shape(), &gout);
                    send(&mut grads, ins[0], gout.clone());
                    send(&mut grads, ins[1], gv);
                }
                Op::Add => {
                    send(&mut grads, ins[0], gout.clone());
                    send(&mut grads, ins[1], gout);
                }
                Op::Scale { c } => {
                    let cc = T::cast(*c);
                    send(&mut grads, ins[0], gout.map(|g| g * cc));
                }
                Op::SliceRows { start, len } => {
                    let full = self.value(ins[0]).shape();
                    let d = full[1];
                    let mut gx = Tensor::zeros(full);
                    gx.data_mut()[start * d..(start + len) * d].copy_from_slice(gout.data());
                    send(&mut grads, ins[0], gx);
                }
                Op::Mse => {
                    let g = gout.data()[0];
                    let (p, t) = (self.value(ins[0]), self.value(ins[1]));
                    let scale = g * T::cast(2.0) / T::cast_usize(p.numel());
                    let mut gp = Tensor::zeros(p.shape());
                    for ((d, a), b) in gp
                        .data_mut()
                        .iter_mut()
                        .zip(p.data().iter())
                        .zip(t.data().iter())
                    {
                        *d = scale * (*a - *b);
                    }
                    let gt = gp.map(|v| -v);
                    send(&mut grads, ins[0], gp);
                    send(&mut grads, ins[1], gt);
                }
                Op::L1 => {
                    let g = gout.data()[0];
                    let (p, t) = (self.value(ins[0]), self.value(ins[1]));
                    let scale = g / T::cast_usize(p.numel());
                    let mut gp = Tensor::zeros(p.shape());
                    for ((d, a), b) in gp
                        .data_mut()
                        .iter_mut()
                        .zip(p.data().iter())
                        .zip(t.data().iter())
                    {
                        let diff = *a - *b;
                        *d = if diff > T::zero() {
                            scale
                        } else if diff < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        };
                    }
                    let gt = gp.map(|v| -v);
                    send(&mut grads, ins[0], gp);
                    send(&mut grads, ins[1], gt);
                }
                Op::Triplet { margin, n } => {
                    let g = gout.data()[0];
                    let m = T::cast(*margin);
                    let anchor = self.value(ins[0]);
                    let mut ga = Tensor::zeros(anchor.shape());
                    for i in 0..*n {
                        let p = self.value(ins[1 + i]);
                        let nn = self.value(ins[1 + n + i]);
                        let dp = T::cast(anchor.l2_distance(p));
                        let dn = T::cast(anchor.l2_distance(nn));
                        if dp - dn + m <= T::zero() {
                            continue;
                        }
                        let mut gp = Tensor::zeros(p.shape());
                        let mut gn = Tensor::zeros(nn.shape());
                        if dp > T::zero() {
                            let inv = g / dp;
                            for (((gav, gpv), av), pv) in ga
                                .data_mut()
                                .iter_mut()
                                .zip(gp.data_mut().iter_mut())
                                .zip(anchor.data().iter())
                                .zip(p.data().iter())
                            {
                                let d = (*av - *pv) * inv;
                                *gav = *gav + d;
                                *gpv = -d;
                            }
                        }
                        if dn > T::zero() {
                            let inv = g / dn;
                            for (((gav, gnv), av), nv) in ga
                                .data_mut()
                                .iter_mut()
                                .zip(gn.data_mut().iter_mut())
                                .zip(anchor.data().iter())
                                .zip(nn.data().iter())
                            {
                                let d = (*av - *nv) * inv;
                                *gav = *gav - d;
                                *gnv = d;
                            }
                        }
                        send(&mut grads, ins[1 + i], gp);
                        send(&mut grads, ins[1 + n + i], gn);
                    }
                    send(&mut grads, ins[0], ga);
                }
            }
        }

        let mut out = HashMap::new();
        for (name, var) in &self.bindings {
            if let Some(g) = &grads[var.0] {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}
