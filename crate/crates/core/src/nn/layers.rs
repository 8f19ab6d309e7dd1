//! Layer building blocks: parameter containers plus tape-application helpers.

use rand::Rng;

use super::graph::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Leaky-rectifier slope used throughout the networks.
pub const LRELU_SLOPE: f64 = 0.2;

/// Parameter tree visitor; names are dot-joined paths such as
/// `e_cont.res1.c1.w`.
pub trait ParamGroup<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

/// He-uniform draw in `[-sqrt(6/fan_in), +sqrt(6/fan_in)]`, sampled at `f64`
/// so both precisions initialize identically.
fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(T::cast(rng.gen_range(-bound..=bound)));
    }
    Tensor::from_vec(shape, data)
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn init<R: Rng>(ci: usize, co: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Conv2d {
            w: he_uniform(&[co, ci, k, k], ci * k * k, rng),
            b: Tensor::zeros(&[co]),
            stride,
            pad,
        }
    }

    /// Zero-initialized variant, used for output layers that should start as
    /// the zero map.
    pub fn zeros(ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Tensor::zeros(&[co, ci, k, k]),
            b: Tensor::zeros(&[co]),
            stride,
            pad,
        }
    }

    pub fn apply(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Var {
        let w = tape.bind(&format!("{name}.w"), &self.w);
        let b = tape.bind(&format!("{name}.b"), &self.b);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

impl<T: Scalar> ParamGroup<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct ConvT2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvT2d<T> {
    pub fn init<R: Rng>(ci: usize, co: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        ConvT2d {
            w: he_uniform(&[ci, co, k, k], ci * k * k, rng),
            b: Tensor::zeros(&[co]),
            stride,
            pad,
        }
    }

    pub fn apply(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Var {
        let w = tape.bind(&format!("{name}.w"), &self.w);
        let b = tape.bind(&format!("{name}.b"), &self.b);
        tape.convt2d(x, w, b, self.stride, self.pad)
    }
}

impl<T: Scalar> ParamGroup<T> for ConvT2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: he_uniform(&[output, input], input, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn apply(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Var {
        let w = tape.bind(&format!("{name}.w"), &self.w);
        let b = tape.bind(&format!("{name}.b"), &self.b);
        tape.linear(x, w, b)
    }
}

impl<T: Scalar> ParamGroup<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Two 3×3 convs with a residual connection: `x + c2(lrelu(c1(x)))`.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub c1: Conv2d<T>,
    pub c2: Conv2d<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn init<R: Rng>(ch: usize, rng: &mut R) -> Self {
        ResBlock {
            c1: Conv2d::init(ch, ch, 3, 1, 1, rng),
            c2: Conv2d::init(ch, ch, 3, 1, 1, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Var {
        let h = self.c1.apply(tape, &format!("{name}.c1"), x);
        let h = tape.leaky_relu(h, LRELU_SLOPE);
        let h = self.c2.apply(tape, &format!("{name}.c2"), h);
        tape.add(x, h)
    }
}

impl<T: Scalar> ParamGroup<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.c1.visit(&format!("{prefix}.c1"), f);
        self.c2.visit(&format!("{prefix}.c2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.c1.visit_mut(&format!("{prefix}.c1"), f);
        self.c2.visit_mut(&format!("{prefix}.c2"), f);
    }
}

/// One modulation layer: conv, activation, then a feature-wise affine unit
/// whose per-channel scale/shift are projected from the degradation vector.
#[derive(Debug, Clone)]
pub struct FilmLayer<T> {
    pub conv: Conv2d<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> FilmLayer<T> {
    pub fn init<R: Rng>(ch: usize, deg_dim: usize, rng: &mut R) -> Self {
        FilmLayer {
            conv: Conv2d::init(ch, ch, 3, 1, 1, rng),
            proj: Linear::init(deg_dim, 2 * ch, rng),
        }
    }

    /// `x`: [N,C,H,W], `deg`: [N,deg_dim].
    pub fn apply(&self, tape: &mut Tape<T>, name: &str, x: Var, deg: Var) -> Var {
        let h = self.conv.apply(tape, &format!("{name}.conv"), x);
        let h = tape.leaky_relu(h, LRELU_SLOPE);
        let gb = self.proj.apply(tape, &format!("{name}.proj"), deg);
        tape.film(h, gb)
    }
}

impl<T: Scalar> ParamGroup<T> for FilmLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
        self.proj.visit_mut(&format!("{prefix}.proj"), f);
    }
}
