use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Init, Layer, NetworkConfig, Shape};
use super::{gemm, Layout, Scalar};
use crate::error::{Error, Result};
use crate::seed::{sample_rng, INIT_STREAM};

/// Samples per gradient chunk. Chunks may run concurrently; their sums
/// are always combined in chunk order, so gradients do not depend on the
/// thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Weights and biases of every layer, in layer order. Parameterless layers
/// hold empty tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Ok(ParameterSet {
            layers: config
                .parameter_shapes()?
                .into_iter()
                .map(|(w, b)| LayerParams {
                    weight: vec![T::zero(); w],
                    bias: vec![T::zero(); b],
                })
                .collect(),
        })
    }

    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let shapes = config.shapes()?;
        let mut params = Self::zeros(config)?;
        let mut rng = sample_rng(seed, INIT_STREAM, 0);
        for (k, (layer, p)) in config.layers.iter().zip(&mut params.layers).enumerate() {
            let fan_in = match layer {
                Layer::Conv { .. } => shapes[k].channels * 9,
                Layer::Dense { .. } => shapes[k].len(),
                _ => continue,
            };
            let Init::HeUniform = config.init;
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in &mut p.weight {
                *w = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every value, layer by layer, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: vec![T::zero(); l.weight.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.iter_mut().zip(other.iter()).for_each(|(a, &b)| *a += b);
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Input followed by the output of every layer.
    pub activations: Vec<Vec<T>>,
    /// For each pooling layer, the input index of every output's maximum.
    argmax: Vec<Vec<u32>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> [T; 2] {
        let out = self.activations.last().unwrap();
        [out[0], out[1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    shapes: Vec<Shape>,
    pub params: ParameterSet<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: NetworkConfig, params: ParameterSet<T>) -> Result<Self> {
        let shapes = config.shapes()?;
        let expected = ParameterSet::<T>::zeros(&config)?;
        if !params.same_shape(&expected) {
            return Err(Error::ShapeMismatch("parameters do not match the network config".into()));
        }
        Ok(Network { config, shapes, params })
    }

    pub fn initialized(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = ParameterSet::init(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    fn check_input(&self, image: &[T]) -> Result<()> {
        if image.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "image has {} pixels, the network expects {}×{}",
                image.len(),
                self.config.input_resolution,
                self.config.input_resolution
            )));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input image".into()));
        }
        Ok(())
    }

    pub fn trace(&self, image: &[T]) -> Result<Trace<T>> {
        self.check_input(image)?;
        let mut activations = Vec::with_capacity(self.config.layers.len() + 1);
        activations.push(image.to_vec());
        let mut argmax = Vec::new();
        for (k, layer) in self.config.layers.iter().enumerate() {
            let (s_in, s_out) = (self.shapes[k], self.shapes[k + 1]);
            let x = &activations[k];
            let p = &self.params.layers[k];
            let y = match *layer {
                Layer::Conv { .. } => conv_forward(x, &p.weight, &p.bias, s_in, s_out.channels),
                Layer::Dense { .. } => dense_forward(x, &p.weight, &p.bias),
                Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
                Layer::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
                Layer::MaxPool => {
                    let (y, idx) = pool_forward(x, s_in);
                    argmax.push(idx);
                    y
                }
            };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activation of layer {k} ({layer:?})")));
            }
            activations.push(y);
        }
        Ok(Trace { activations, argmax })
    }

    /// Outputs in `(0, 1)²`, one row per image.
    pub fn forward(&self, images: &[Vec<T>]) -> Result<Vec<[T; 2]>> {
        images.iter().map(|img| Ok(self.trace(img)?.output())).collect()
    }

    /// Adds the gradient of `½Σ(out − target)²·weight` for one sample to
    /// `grads`.
    fn accumulate(&self, trace: &Trace<T>, target: [T; 2], weight: T, grads: &mut ParameterSet<T>) {
        let out = trace.output();
        let mut g: Vec<T> = vec![(out[0] - target[0]) * weight, (out[1] - target[1]) * weight];
        let mut pool = trace.argmax.len();
        for k in (0..self.config.layers.len()).rev() {
            let (s_in, s_out) = (self.shapes[k], self.shapes[k + 1]);
            let x = &trace.activations[k];
            let y = &trace.activations[k + 1];
            let need_input_grad = k > 0;
            g = match self.config.layers[k] {
                Layer::Sigmoid => g.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
                Layer::Relu => g.iter().zip(y).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect(),
                Layer::MaxPool => {
                    pool -= 1;
                    let mut gi = vec![T::zero(); s_in.len()];
                    for (&gv, &i) in g.iter().zip(&trace.argmax[pool]) {
                        gi[i as usize] += gv;
                    }
                    gi
                }
                Layer::Dense { .. } => {
                    let p = &self.params.layers[k];
                    let gp = &mut grads.layers[k];
                    dense_backward(x, &p.weight, &g, &mut gp.weight, &mut gp.bias, need_input_grad)
                }
                Layer::Conv { .. } => {
                    let p = &self.params.layers[k];
                    let gp = &mut grads.layers[k];
                    conv_backward(x, &p.weight, &g, s_in, s_out.channels, &mut gp.weight, &mut gp.bias, need_input_grad)
                }
            };
        }
    }

    /// Mean-square loss over the batch and the gradient of that loss with
    /// respect to every parameter.
    pub fn backward(&self, images: &[Vec<T>], targets: &[[T; 2]]) -> Result<(T, ParameterSet<T>)> {
        if images.len() != targets.len() || images.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} images and {} targets",
                images.len(),
                targets.len()
            )));
        }
        let b = images.len();
        // d/dout of (1/2B)Σ(out − t)² is (out − t)/B.
        let weight = T::one() / T::from_f64(b as f64);
        let chunks: Vec<Result<(T, ParameterSet<T>)>> = images
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(imgs, tgts)| {
                let mut grads = ParameterSet::zeros(&self.config)?;
                let mut sq = T::zero();
                for (img, &t) in imgs.iter().zip(tgts) {
                    let trace = self.trace(img)?;
                    let out = trace.output();
                    sq += (out[0] - t[0]).powi(2) + (out[1] - t[1]).powi(2);
                    self.accumulate(&trace, t, weight, &mut grads);
                }
                Ok((sq, grads))
            })
            .collect();
        let mut total = T::zero();
        let mut grads: Option<ParameterSet<T>> = None;
        for c in chunks {
            let (sq, g) = c?;
            total += sq;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
        let grads = grads.unwrap();
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let loss = total / T::from_f64(2.0 * b as f64);
        Ok((loss, grads))
    }

    fn slot(&mut self, layer: usize, index: usize, bias: bool) -> &mut T {
        let p = &mut self.params.layers[layer];
        if bias {
            &mut p.bias[index]
        } else {
            &mut p.weight[index]
        }
    }

    /// Central-difference estimate of one parameter's gradient; used by the
    /// gradient checks.
    pub fn numerical_gradient(&self, images: &[Vec<T>], targets: &[[T; 2]], layer: usize, index: usize, bias: bool, h: T) -> Result<T> {
        let mut probe = self.clone();
        let orig = *probe.slot(layer, index, bias);
        *probe.slot(layer, index, bias) = orig + h;
        let up = loss_mse(&probe.forward(images)?, targets)?;
        *probe.slot(layer, index, bias) = orig - h;
        let down = loss_mse(&probe.forward(images)?, targets)?;
        Ok((up - down) / (h + h))
    }
}

/// Mean over the batch and both components of the squared difference.
pub fn loss_mse<T: Scalar>(outputs: &[[T; 2]], targets: &[[T; 2]]) -> Result<T> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs and {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let sum: T = outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| (o[0] - t[0]).powi(2) + (o[1] - t[1]).powi(2))
        .sum();
    Ok(sum / T::from_f64(2.0 * outputs.len() as f64))
}

/// Logistic function, kept strictly inside `(0, 1)`.
fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(T::one() - half_eps)
}

/// Row range `[lo, hi)` of outputs whose tap at `offset` (−1, 0, 1) stays
/// inside `[0, len)`.
fn tap_range(offset: isize, len: usize) -> (usize, usize) {
    match offset {
        -1 => (1, len),
        1 => (0, len - 1),
        _ => (0, len),
    }
}

/// Calls `f(tap row, output range, input range)` for every contiguous run
/// of in-bounds taps. Tap rows are `ci·9 + ky·3 + kx`, matching the weight
/// layout.
fn for_each_tap(s: Shape, mut f: impl FnMut(usize, std::ops::Range<usize>, std::ops::Range<usize>)) {
    let (h, wd) = (s.height, s.width);
    let plane = h * wd;
    for ci in 0..s.channels {
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = tap_range(dy, h);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = tap_range(dx, wd);
                let row = ci * 9 + ky * 3 + kx;
                for r in y0..y1 {
                    let src = ci * plane + (r as isize + dy) as usize * wd;
                    let lo = (src as isize + x0 as isize + dx) as usize;
                    f(row, r * wd + x0..r * wd + x1, lo..lo + (x1 - x0));
                }
            }
        }
    }
}

/// `(9·channels) × (height·width)` matrix of zero-padded 3×3 neighbourhoods.
fn im2col<T: Scalar>(x: &[T], s: Shape) -> Vec<T> {
    let plane = s.height * s.width;
    let mut col = vec![T::zero(); 9 * s.channels * plane];
    for_each_tap(s, |row, out, inp| col[row * plane..][out].copy_from_slice(&x[inp]));
    col
}

fn col2im<T: Scalar>(col: &[T], s: Shape) -> Vec<T> {
    let plane = s.height * s.width;
    let mut x = vec![T::zero(); s.len()];
    for_each_tap(s, |row, out, inp| {
        x[inp].iter_mut().zip(&col[row * plane..][out]).for_each(|(a, &v)| *a += v);
    });
    x
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], s: Shape, out_channels: usize) -> Vec<T> {
    let plane = s.height * s.width;
    let k = 9 * s.channels;
    let col = im2col(x, s);
    let mut y: Vec<T> = b.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect();
    gemm(
        w,
        Layout::row_major(out_channels, k),
        &col,
        Layout::row_major(k, plane),
        T::one(),
        &mut y,
        Layout::row_major(out_channels, plane),
    );
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &[T],
    s: Shape,
    out_channels: usize,
    gw: &mut [T],
    gb: &mut [T],
    need_input_grad: bool,
) -> Vec<T> {
    let plane = s.height * s.width;
    let k = 9 * s.channels;
    for (co, b) in gb.iter_mut().enumerate() {
        *b += g[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
    }
    let col = im2col(x, s);
    gemm(
        g,
        Layout::row_major(out_channels, plane),
        &col,
        Layout::transposed(plane, k),
        T::one(),
        gw,
        Layout::row_major(out_channels, k),
    );
    if !need_input_grad {
        return Vec::new();
    }
    let mut gcol = vec![T::zero(); k * plane];
    gemm(
        w,
        Layout::transposed(k, out_channels),
        g,
        Layout::row_major(out_channels, plane),
        T::zero(),
        &mut gcol,
        Layout::row_major(k, plane),
    );
    col2im(&gcol, s)
}

fn pool_forward<T: Scalar>(x: &[T], s: Shape) -> (Vec<T>, Vec<u32>) {
    let (h2, w2) = (s.height / 2, s.width / 2);
    let mut y = Vec::with_capacity(s.channels * h2 * w2);
    let mut idx = Vec::with_capacity(s.channels * h2 * w2);
    for c in 0..s.channels {
        let base = c * s.height * s.width;
        for r in 0..h2 {
            for col in 0..w2 {
                let mut best = base + 2 * r * s.width + 2 * col;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * r + dr) * s.width + 2 * col + dc;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (y, idx)
}

/// Dot product with eight independent partial sums, so the loop
/// vectorizes; the summation order is fixed.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&p, &q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += p[i] * q[i];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + dot(&w[o * n..(o + 1) * n], x))
        .collect()
}

fn dense_backward<T: Scalar>(x: &[T], w: &[T], g: &[T], gw: &mut [T], gb: &mut [T], need_input_grad: bool) -> Vec<T> {
    let n = x.len();
    let mut gx = if need_input_grad { vec![T::zero(); n] } else { Vec::new() };
    for (o, &go) in g.iter().enumerate() {
        gb[o] += go;
        if go == T::zero() {
            continue;
        }
        let row = &mut gw[o * n..(o + 1) * n];
        row.iter_mut().zip(x).for_each(|(a, &v)| *a += go * v);
        if need_input_grad {
            gx.iter_mut().zip(&w[o * n..(o + 1) * n]).for_each(|(a, &wv)| *a += go * wv);
        }
    }
    gx
}
