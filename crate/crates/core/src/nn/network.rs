//! Feed-forward networks over a small layer vocabulary with hand-written
//! reverse-mode gradients and a forward-mode tangent pass.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;
const TAPS: usize = KERNEL * KERNEL;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// 4×4 convolution, stride 2, zero padding 1.
    Conv { cin: usize, cout: usize },
    /// Fully connected over the flattened input.
    Dense { inputs: usize, outputs: usize },
    LeakyRelu,
    /// Inverted dropout; active whenever the network runs.
    Dropout { rate: f64 },
}

impl Layer {
    fn output_shape(&self, s: [usize; 3]) -> Result<[usize; 3]> {
        match *self {
            Layer::Conv { cin, cout } => {
                if s[0] != cin || s[1] < 2 || s[2] < 2 {
                    return Err(Error::shape(format!("{cin} channels, side >= 2"), format!("{s:?}")));
                }
                Ok([cout, (s[1] - 2) / 2 + 1, (s[2] - 2) / 2 + 1])
            }
            Layer::Dense { inputs, outputs } => {
                if s.iter().product::<usize>() != inputs {
                    return Err(Error::shape(inputs, s.iter().product::<usize>()));
                }
                Ok([outputs, 1, 1])
            }
            Layer::LeakyRelu => Ok(s),
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Invalid(format!("dropout rate {rate}")));
                }
                Ok(s)
            }
        }
    }

    fn param_shapes(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Layer::Conv { cin, cout } => Some((cout, cin * TAPS, cin * TAPS)),
            Layer::Dense { inputs, outputs } => Some((outputs, inputs, inputs)),
            _ => None,
        }
    }
}

/// Layer sizes of the shared conv trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub side: usize,
    pub widths: [usize; 4],
    pub hidden: usize,
    pub outputs: usize,
    pub dropout: f64,
}

impl BackboneSpec {
    pub fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut cin = self.in_channels;
        for &w in &self.widths {
            layers.push(Layer::Conv { cin, cout: w });
            layers.push(Layer::LeakyRelu);
            cin = w;
        }
        let spatial = self.side / 16;
        layers.push(Layer::Dense {
            inputs: cin * spatial * spatial,
            outputs: self.hidden,
        });
        layers.push(Layer::LeakyRelu);
        if self.dropout > 0.0 {
            layers.push(Layer::Dropout { rate: self.dropout });
        }
        layers.push(Layer::Dense {
            inputs: self.hidden,
            outputs: self.outputs,
        });
        layers
    }
}

/// Per-layer inputs recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    inputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Gradients aligned with a network's parameter tensors (weight, bias per layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.axpy(1.0, other);
    }

    pub fn axpy(&mut self, a: f64, other: &Gradients) {
        for (x, y) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(x, a, y);
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }

    /// Sums in slice order.
    pub fn sum<'a>(net: &Network, parts: impl IntoIterator<Item = &'a Gradients>) -> Gradients {
        let mut acc = Gradients::zeros_like(net);
        for g in parts {
            acc.add_assign(g);
        }
        acc
    }
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Backward {
    pub weights: Option<Gradients>,
    pub input: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    shapes: Vec<[usize; 3]>,
    params: Vec<Vec<f64>>,
    param_slot: Vec<Option<usize>>,
    seed: u64,
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.params == other.params
            && self.seed == other.seed
    }
}

impl Network {
    /// Builds a network with uniform weights of standard deviation 1/sqrt(fan_in)
    /// (bound sqrt(3/fan_in)) and zero biases.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, layers, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, slot) in net.layers.iter().zip(&net.param_slot) {
            if let (Some((_, _, fan_in)), Some(i)) = (layer.param_shapes(), slot) {
                let bound = (3.0 / fan_in as f64).sqrt();
                for w in net.params[*i].iter_mut() {
                    *w = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(input_shape: [usize; 3], layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut params = Vec::new();
        let mut param_slot = Vec::new();
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
            if let Some((rows, cols, _)) = layer.param_shapes() {
                param_slot.push(Some(params.len()));
                params.push(vec![0.0; rows * cols]);
                params.push(vec![0.0; rows]);
            } else {
                param_slot.push(None);
            }
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params,
            param_slot,
            seed,
            version: fresh_version(),
        })
    }

    pub fn backbone(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        Self::new([spec.in_channels, spec.side, spec.side], spec.layers(), seed)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn zero_params(&mut self) {
        self.params_mut().iter_mut().flatten().for_each(|v| *v = 0.0);
    }

    /// Multiplies the weights of the last conv or dense layer by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(p) = self.param_slot.iter().rev().flatten().next().copied() {
            self.params_mut()[p].iter_mut().for_each(|w| *w *= factor);
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let n: usize = self.input_shape.iter().product();
        if input.len() != n {
            return Err(Error::shape(format!("{:?}", self.input_shape), format!("{:?}", input.shape())));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, input: &Tensor, rng: &mut R, record: bool) -> Result<(Tensor, Option<Tape>)> {
        self.check_input(input)?;
        let mut x = input.data().to_vec();
        let mut inputs = Vec::new();
        let mut masks = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = self.shapes[i];
            let mut mask = None;
            let y = match *layer {
                Layer::Conv { cout, .. } => {
                    let p = self.param_slot[i].unwrap();
                    conv_forward(&x, shape, &self.params[p], Some(&self.params[p + 1]), cout)
                }
                Layer::Dense { outputs, .. } => {
                    let p = self.param_slot[i].unwrap();
                    dense_forward(&x, &self.params[p], Some(&self.params[p + 1]), outputs)
                }
                Layer::LeakyRelu => x.iter().map(|&v| leaky(v)).collect(),
                Layer::Dropout { rate } => {
                    let keep = 1.0 - rate;
                    let m: Vec<f64> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() >= rate { 1.0 / keep } else { 0.0 })
                        .collect();
                    let y = x.iter().zip(&m).map(|(a, b)| a * b).collect();
                    mask = Some(m);
                    y
                }
            };
            if record {
                inputs.push(std::mem::replace(&mut x, y));
                masks.push(mask);
            } else {
                x = y;
            }
        }
        let out = Tensor::new(self.shapes.last().unwrap().to_vec(), x)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        let tape = record.then(|| Tape {
            version: self.version,
            inputs,
            masks,
        });
        Ok((out, tape))
    }

    /// Forward pass recording a tape. Dropout layers draw a fresh mask from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, input: &Tensor, rng: &mut R) -> Result<(Tensor, Tape)> {
        let (out, tape) = self.run(input, rng, true)?;
        Ok((out, tape.unwrap()))
    }

    /// Forward pass without a tape.
    pub fn infer<R: Rng + ?Sized>(&self, input: &Tensor, rng: &mut R) -> Result<Tensor> {
        Ok(self.run(input, rng, false)?.0)
    }

    /// Directional derivative of the output along `tangent`, holding the
    /// activation pattern and dropout masks of `primal` fixed.
    pub fn forward_tangent(&self, primal: &Tape, tangent: &Tensor) -> Result<(Tensor, Tape)> {
        self.check_tape(primal)?;
        self.check_input(tangent)?;
        let mut x = tangent.data().to_vec();
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = self.shapes[i];
            let y = match *layer {
                Layer::Conv { cout, .. } => {
                    let p = self.param_slot[i].unwrap();
                    conv_forward(&x, shape, &self.params[p], None, cout)
                }
                Layer::Dense { outputs, .. } => {
                    let p = self.param_slot[i].unwrap();
                    dense_forward(&x, &self.params[p], None, outputs)
                }
                Layer::LeakyRelu => x
                    .iter()
                    .zip(&primal.inputs[i])
                    .map(|(t, &pre)| t * leaky_slope(pre))
                    .collect(),
                Layer::Dropout { .. } => {
                    let m = primal.masks[i].as_ref().expect("dropout mask");
                    x.iter().zip(m).map(|(a, b)| a * b).collect()
                }
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        let out = Tensor::new(self.shapes.last().unwrap().to_vec(), x)?;
        Ok((
            out,
            Tape {
                version: self.version,
                inputs,
                masks: primal.masks.clone(),
            },
        ))
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        Ok(())
    }

    /// Gradient of `upstream · output` with respect to the weights and/or the input.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor, weights: bool, input: bool) -> Result<Backward> {
        self.check_tape(tape)?;
        self.backward_impl(tape, tape, upstream, weights, input, true)
    }

    /// Weight gradient of `upstream · tangent_output` for a tangent pass
    /// recorded by [`Network::forward_tangent`] on `primal`.
    pub fn backward_tangent(&self, primal: &Tape, tangent: &Tape, upstream: &Tensor) -> Result<Gradients> {
        self.check_tape(primal)?;
        self.check_tape(tangent)?;
        Ok(self
            .backward_impl(tangent, primal, upstream, true, false, false)?
            .weights
            .unwrap())
    }

    fn backward_impl(
        &self,
        values: &Tape,
        pattern: &Tape,
        upstream: &Tensor,
        want_weights: bool,
        want_input: bool,
        with_bias: bool,
    ) -> Result<Backward> {
        if upstream.len() != self.output_len() {
            return Err(Error::shape(self.output_len(), upstream.len()));
        }
        let mut grads = want_weights.then(|| Gradients::zeros_like(self));
        let mut g = upstream.data().to_vec();
        // Layers before the first parametric one need no gradient unless the input is wanted.
        let first_param = self.param_slot.iter().position(Option::is_some).unwrap_or(0);
        for i in (0..self.layers.len()).rev() {
            let shape = self.shapes[i];
            let x = &values.inputs[i];
            let need_dx = want_input || i > first_param;
            g = match self.layers[i] {
                Layer::Conv { cout, .. } => {
                    let p = self.param_slot[i].unwrap();
                    let (dw, db, dx) = conv_backward(x, shape, &self.params[p], &g, cout, want_weights, need_dx);
                    if let Some(gr) = grads.as_mut() {
                        gr.tensors[p] = dw;
                        if with_bias {
                            gr.tensors[p + 1] = db;
                        }
                    }
                    dx
                }
                Layer::Dense { outputs, .. } => {
                    let p = self.param_slot[i].unwrap();
                    let (dw, db, dx) = dense_backward(x, &self.params[p], &g, outputs, want_weights, need_dx);
                    if let Some(gr) = grads.as_mut() {
                        gr.tensors[p] = dw;
                        if with_bias {
                            gr.tensors[p + 1] = db;
                        }
                    }
                    dx
                }
                Layer::LeakyRelu => g
                    .iter()
                    .zip(&pattern.inputs[i])
                    .map(|(d, &pre)| d * leaky_slope(pre))
                    .collect(),
                Layer::Dropout { .. } => {
                    let m = pattern.masks[i].as_ref().expect("dropout mask");
                    g.iter().zip(m).map(|(a, b)| a * b).collect()
                }
            };
            if !need_dx && i <= first_param {
                break;
            }
        }
        Ok(Backward {
            weights: grads,
            input: want_input.then_some(g),
        })
    }
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_slope(pre: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn conv_out(shape: [usize; 3]) -> (usize, usize) {
    ((shape[1] - 2) / 2 + 1, (shape[2] - 2) / 2 + 1)
}

/// Unfolds `input` (cin, h, w) into rows of `cin*16` taps over `oh*ow` positions.
fn im2col(input: &[f64], shape: [usize; 3]) -> Vec<f64> {
    let [cin, h, w] = shape;
    let (oh, ow) = conv_out(shape);
    let cols = oh * ow;
    let mut col = vec![0.0; cin * TAPS * cols];
    for ci in 0..cin {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ci * TAPS) + ky * KERNEL + kx) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a column gradient back onto the input layout, summing overlaps.
fn col2im(dcol: &[f64], shape: [usize; 3]) -> Vec<f64> {
    let [cin, h, w] = shape;
    let (oh, ow) = conv_out(shape);
    let cols = oh * ow;
    let mut out = vec![0.0; cin * h * w];
    for ci in 0..cin {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &dcol[((ci * TAPS) + ky * KERNEL + kx) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_forward(input: &[f64], shape: [usize; 3], weight: &[f64], bias: Option<&[f64]>, cout: usize) -> Vec<f64> {
    let (oh, ow) = conv_out(shape);
    let cols = oh * ow;
    let k = shape[0] * TAPS;
    let col = im2col(input, shape);
    let mut out = vec![0.0; cout * cols];
    for (o, row) in out.chunks_exact_mut(cols).enumerate() {
        if let Some(b) = bias {
            row.fill(b[o]);
        }
        let w = &weight[o * k..(o + 1) * k];
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                axpy(row, wj, &col[j * cols..(j + 1) * cols]);
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv_backward(
    input: &[f64],
    shape: [usize; 3],
    weight: &[f64],
    up: &[f64],
    cout: usize,
    want_weights: bool,
    want_input: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = conv_out(shape);
    let cols = oh * ow;
    let k = shape[0] * TAPS;
    let col = im2col(input, shape);
    let (mut dw, mut db) = (Vec::new(), Vec::new());
    if want_weights {
        dw = vec![0.0; cout * k];
        db = vec![0.0; cout];
        for o in 0..cout {
            let u = &up[o * cols..(o + 1) * cols];
            db[o] = u.iter().sum();
            for j in 0..k {
                dw[o * k + j] = dot(u, &col[j * cols..(j + 1) * cols]);
            }
        }
    }
    let mut dx = Vec::new();
    if want_input {
        let mut dcol = vec![0.0; k * cols];
        for o in 0..cout {
            let u = &up[o * cols..(o + 1) * cols];
            for j in 0..k {
                let wj = weight[o * k + j];
                if wj != 0.0 {
                    axpy(&mut dcol[j * cols..(j + 1) * cols], wj, u);
                }
            }
        }
        dx = col2im(&dcol, shape);
    }
    (dw, db, dx)
}

fn dense_forward(x: &[f64], weight: &[f64], bias: Option<&[f64]>, outputs: usize) -> Vec<f64> {
    let n = x.len();
    (0..outputs)
        .map(|o| bias.map_or(0.0, |b| b[o]) + dot(&weight[o * n..(o + 1) * n], x))
        .collect()
}

fn dense_backward(
    x: &[f64],
    weight: &[f64],
    up: &[f64],
    outputs: usize,
    want_weights: bool,
    want_input: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let (mut dw, mut db) = (Vec::new(), Vec::new());
    if want_weights {
        dw = vec![0.0; outputs * n];
        for o in 0..outputs {
            if up[o] != 0.0 {
                axpy(&mut dw[o * n..(o + 1) * n], up[o], x);
            }
        }
        db = up.to_vec();
    }
    let mut dx = Vec::new();
    if want_input {
        dx = vec![0.0; n];
        for o in 0..outputs {
            if up[o] != 0.0 {
                axpy(&mut dx, up[o], &weight[o * n..(o + 1) * n]);
            }
        }
    }
    (dw, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: [usize; 3], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_spec() -> BackboneSpec {
        BackboneSpec {
            in_channels: 5,
            side: 16,
            widths: [3, 4, 4, 5],
            hidden: 6,
            outputs: 2,
            dropout: 0.0,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeroed([5, 16, 16], small_spec().layers(), 0).unwrap();
        let out = net.infer(&random_tensor([5, 16, 16], 1), &mut rng(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_unit() {
        let mut net = Network::zeroed([1, 1, 1], vec![Layer::Dense { inputs: 1, outputs: 1 }], 0).unwrap();
        net.params_mut()[0][0] = 2.0;
        net.params_mut()[1][0] = 1.0;
        let out = net.infer(&Tensor::vector(vec![3.0]), &mut rng(0)).unwrap();
        assert_eq!(out.data(), &[7.0]);
        // Gradient wrt the weight is upstream * input.
        let (_, tape) = net.forward(&Tensor::vector(vec![3.0]), &mut rng(0)).unwrap();
        let b = net.backward(&tape, &Tensor::vector(vec![0.5]), true, true).unwrap();
        assert_eq!(b.weights.unwrap().tensors, vec![vec![1.5], vec![0.5]]);
        assert_eq!(b.input.unwrap(), vec![1.0]);
    }

    #[test]
    fn deterministic_init_and_forward() {
        let spec = BackboneSpec { dropout: 0.5, ..small_spec() };
        let a = Network::backbone(&spec, 42).unwrap();
        let b = Network::backbone(&spec, 42).unwrap();
        assert_eq!(a, b);
        let x = random_tensor([5, 16, 16], 3);
        let o1 = a.infer(&x, &mut rng(7)).unwrap();
        let o2 = a.infer(&x, &mut rng(7)).unwrap();
        assert_eq!(o1, o2);
        let o3 = a.infer(&x, &mut rng(8)).unwrap();
        assert_ne!(o1, o3);
    }

    #[test]
    fn zero_dropout_is_no_dropout() {
        let with = BackboneSpec { dropout: 0.0, ..small_spec() };
        let mut layers = with.layers();
        layers.insert(layers.len() - 1, Layer::Dropout { rate: 0.0 });
        let a = Network::backbone(&with, 5).unwrap();
        let b = Network::new([5, 16, 16], layers, 5).unwrap();
        let x = random_tensor([5, 16, 16], 4);
        assert_eq!(a.infer(&x, &mut rng(1)).unwrap(), b.infer(&x, &mut rng(2)).unwrap());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = Network::backbone(&small_spec(), 1).unwrap();
        let (_, tape) = net.forward(&random_tensor([5, 16, 16], 2), &mut rng(0)).unwrap();
        let b = net.backward(&tape, &Tensor::vector(vec![0.0, 0.0]), true, true).unwrap();
        assert!(b.weights.unwrap().is_zero());
        assert!(b.input.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut net = Network::backbone(&small_spec(), 1).unwrap();
        let (_, tape) = net.forward(&random_tensor([5, 16, 16], 2), &mut rng(0)).unwrap();
        net.params_mut()[0][0] += 0.1;
        assert!(matches!(
            net.backward(&tape, &Tensor::vector(vec![1.0, 0.0]), true, false),
            Err(Error::StaleTape)
        ));
    }

    #[test]
    fn shape_errors() {
        let net = Network::backbone(&small_spec(), 1).unwrap();
        assert!(net.infer(&Tensor::zeros(vec![4, 16, 16]), &mut rng(0)).is_err());
        assert!(Network::new([3, 8, 8], vec![Layer::Dense { inputs: 10, outputs: 1 }], 0).is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central differences of `u · f(x)` in each weight versus backward.
    #[test]
    fn backward_matches_finite_differences() {
        for (case, spec) in [
            small_spec(),
            BackboneSpec { in_channels: 2, side: 32, widths: [2, 3, 2, 2], hidden: 4, outputs: 3, dropout: 0.3 },
        ]
        .into_iter()
        .enumerate()
        {
            let net = Network::backbone(&spec, 10 + case as u64).unwrap();
            let x = random_tensor([spec.in_channels, spec.side, spec.side], 20 + case as u64);
            let up = Tensor::vector((0..spec.outputs).map(|i| 1.0 - 0.7 * i as f64).collect());
            let (_, tape) = net.forward(&x, &mut rng(3)).unwrap();
            let b = net.backward(&tape, &up, true, true).unwrap();
            let grads = b.weights.unwrap();
            let objective = |n: &Network, inp: &Tensor| -> f64 {
                let o = n.infer(inp, &mut rng(3)).unwrap();
                dot(o.data(), up.data())
            };
            let h = 1e-6;
            let mut r = rng(99);
            for _ in 0..30 {
                let t = r.gen_range(0..net.params().len());
                let j = r.gen_range(0..net.params()[t].len());
                let mut plus = net.clone();
                plus.params_mut()[t][j] += h;
                let mut minus = net.clone();
                minus.params_mut()[t][j] -= h;
                let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
                assert!(rel_err(fd, grads.tensors[t][j]) < 1e-4, "param {t}/{j}: {fd} vs {}", grads.tensors[t][j]);
            }
            let dx = b.input.unwrap();
            for _ in 0..20 {
                let j = r.gen_range(0..x.len());
                let mut xp = x.clone();
                xp.data_mut()[j] += h;
                let mut xm = x.clone();
                xm.data_mut()[j] -= h;
                let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
                assert!(rel_err(fd, dx[j]) < 1e-4, "input {j}: {fd} vs {}", dx[j]);
            }
        }
    }

    #[test]
    fn tangent_is_directional_derivative() {
        let net = Network::backbone(&small_spec(), 4).unwrap();
        let x = random_tensor([5, 16, 16], 5);
        let v = random_tensor([5, 16, 16], 6);
        let (_, tape) = net.forward(&x, &mut rng(0)).unwrap();
        let (t, _) = net.forward_tangent(&tape, &v).unwrap();
        let h = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        for j in 0..x.len() {
            xp.data_mut()[j] += h * v.data()[j];
            xm.data_mut()[j] -= h * v.data()[j];
        }
        let op = net.infer(&xp, &mut rng(0)).unwrap();
        let om = net.infer(&xm, &mut rng(0)).unwrap();
        for k in 0..2 {
            let fd = (op.data()[k] - om.data()[k]) / (2.0 * h);
            assert!(rel_err(fd, t.data()[k]) < 1e-5);
        }
    }

    #[test]
    fn tangent_weight_gradient_matches_differences() {
        // d/dw of (u · J_x f · v) with the activation pattern fixed.
        let net = Network::backbone(&small_spec(), 8).unwrap();
        let x = random_tensor([5, 16, 16], 9);
        let v = random_tensor([5, 16, 16], 10);
        let up = Tensor::vector(vec![0.8, -0.3]);
        let (_, tape) = net.forward(&x, &mut rng(0)).unwrap();
        let (_, ttape) = net.forward_tangent(&tape, &v).unwrap();
        let g = net.backward_tangent(&tape, &ttape, &up).unwrap();
        let directional = |n: &Network| -> f64 {
            let (_, tp) = n.forward(&x, &mut rng(0)).unwrap();
            let (t, _) = n.forward_tangent(&tp, &v).unwrap();
            dot(t.data(), up.data())
        };
        let h = 1e-6;
        let mut r = rng(1);
        for _ in 0..25 {
            let t = r.gen_range(0..net.params().len());
            let j = r.gen_range(0..net.params()[t].len());
            let mut plus = net.clone();
            plus.params_mut()[t][j] += h;
            let mut minus = net.clone();
            minus.params_mut()[t][j] -= h;
            let fd = (directional(&plus) - directional(&minus)) / (2.0 * h);
            assert!(rel_err(fd, g.tensors[t][j]) < 1e-4, "{t}/{j}: {fd} vs {}", g.tensors[t][j]);
        }
    }

    #[test]
    fn backbone_shape_chain() {
        let spec = BackboneSpec { in_channels: 12, side: 64, widths: [4, 8, 8, 8], hidden: 128, outputs: 8, dropout: 0.5 };
        let net = Network::backbone(&spec, 0).unwrap();
        let sides: Vec<usize> = net.shapes.iter().map(|s| s[1]).collect();
        assert_eq!(&sides[..9], &[64, 32, 32, 16, 16, 8, 8, 4, 4]);
        assert_eq!(net.output_len(), 8);
    }
}
