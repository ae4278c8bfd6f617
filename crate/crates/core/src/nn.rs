//! Fully connected attitude network.
//!
//! The network has two stages. A head maps the flattened elevation patches to
//! a small embedding. The current roll and pitch are appended to that
//! embedding, and a tail maps the result to the next roll and pitch. Hidden
//! layers use `tanh` and the output layer is linear. Parameters are f64.
//!
//! Batch buffers are row-major `(batch, features)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::error::{invalid, Error, FormatError, Result};

const MODEL_MAGIC: &str = "VMLP v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activated output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, FormatError> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(FormatError::MalformedHeader(format!("unknown activation {other:?}"))),
        }
    }
}

/// Dense layer `y = act(W x + b)`, `W` stored row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform(-s, s) weights and biases with `s = 1 / sqrt(inputs)`.
    pub fn random(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *w = rng.gen_range(-s..s);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    #[inline]
    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    /// Single-sample forward; `scale` multiplies the input.
    pub fn forward(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (j, o) in out.iter_mut().enumerate().take(self.outputs) {
            *o = self.activation.apply(scale * dot(self.row(j), x) + self.biases[j]);
        }
    }

    /// Single-sample backward. `dy` is dL/dy on entry. Gradients are added to
    /// `grad`, and dL/dx is written to `dx` when requested.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        scale: f64,
        grad: &mut LayerGrad,
        dx: Option<&mut [f64]>,
    ) {
        let delta: Vec<f64> = dy
            .iter()
            .zip(y)
            .map(|(d, y)| d * self.activation.derivative_from_output(*y))
            .collect();
        for (j, &d) in delta.iter().enumerate() {
            grad.biases[j] += d;
            axpy(scale * d, x, &mut grad.weights[j * self.inputs..(j + 1) * self.inputs]);
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (j, &d) in delta.iter().enumerate() {
                axpy(scale * d, self.row(j), dx);
            }
        }
    }

    fn forward_batch(&self, input: &[f64], batch: usize, scale: f64, out: &mut Vec<f64>) {
        let (n, m) = (self.inputs, self.outputs);
        out.clear();
        out.resize(batch * m, 0.0);
        let mut s = 0;
        while s + 4 <= batch {
            let xs = [
                &input[s * n..(s + 1) * n],
                &input[(s + 1) * n..(s + 2) * n],
                &input[(s + 2) * n..(s + 3) * n],
                &input[(s + 3) * n..(s + 4) * n],
            ];
            for j in 0..m {
                let d = dot4(self.row(j), xs);
                for k in 0..4 {
                    out[(s + k) * m + j] = self.activation.apply(scale * d[k] + self.biases[j]);
                }
            }
            s += 4;
        }
        for s in s..batch {
            let x = &input[s * n..(s + 1) * n];
            for j in 0..m {
                out[s * m + j] = self.activation.apply(scale * dot(self.row(j), x) + self.biases[j]);
            }
        }
    }

    /// Batched backward. `delta` holds dL/dy on entry and is overwritten with
    /// dL/dz.
    fn backward_batch(
        &self,
        input: &[f64],
        output: &[f64],
        delta: &mut [f64],
        batch: usize,
        scale: f64,
        grad: &mut LayerGrad,
        dx: Option<&mut Vec<f64>>,
    ) {
        let (n, m) = (self.inputs, self.outputs);
        for (d, y) in delta.iter_mut().zip(output) {
            *d *= self.activation.derivative_from_output(*y);
        }
        for s in 0..batch {
            for j in 0..m {
                grad.biases[j] += delta[s * m + j];
            }
        }
        // dW = scale * delta^T X, four output rows at a time.
        let mut j = 0;
        while j + 4 <= m {
            let (r0, rest) = grad.weights[j * n..(j + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            for s in 0..batch {
                let x = &input[s * n..(s + 1) * n];
                let d = [
                    scale * delta[s * m + j],
                    scale * delta[s * m + j + 1],
                    scale * delta[s * m + j + 2],
                    scale * delta[s * m + j + 3],
                ];
                for i in 0..n {
                    let xi = x[i];
                    r0[i] += d[0] * xi;
                    r1[i] += d[1] * xi;
                    r2[i] += d[2] * xi;
                    r3[i] += d[3] * xi;
                }
            }
            j += 4;
        }
        for j in j..m {
            let row = &mut grad.weights[j * n..(j + 1) * n];
            for s in 0..batch {
                axpy(scale * delta[s * m + j], &input[s * n..(s + 1) * n], row);
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(batch * n, 0.0);
            for s in 0..batch {
                let out = &mut dx[s * n..(s + 1) * n];
                for j in 0..m {
                    axpy(scale * delta[s * m + j], self.row(j), out);
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four dot products sharing the left operand. Each result is bitwise equal
/// to `dot(w, xs[k])`.
#[inline]
fn dot4(w: &[f64], xs: [&[f64]; 4]) -> [f64; 4] {
    let n = w.len();
    let full = n - n % 4;
    let mut acc = [[0.0f64; 4]; 4];
    let mut i = 0;
    while i < full {
        for (k, x) in xs.iter().enumerate() {
            acc[k][0] += w[i] * x[i];
            acc[k][1] += w[i + 1] * x[i + 1];
            acc[k][2] += w[i + 2] * x[i + 2];
            acc[k][3] += w[i + 3] * x[i + 3];
        }
        i += 4;
    }
    let mut out = [0.0; 4];
    for (k, x) in xs.iter().enumerate() {
        let mut tail = 0.0;
        for i in full..n {
            tail += w[i] * x[i];
        }
        out[k] = (acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3]) + tail;
    }
    out
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Layer widths of the two stages. The tail input is the head output plus
/// the appended attitude values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            head: vec![8000, 64, 32, 8],
            tail: vec![10, 8, 2],
        }
    }
}

impl Architecture {
    /// Number of values appended between head and tail.
    pub const EXTRA: usize = 2;
    pub const OUTPUT: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if self.head.len() < 2 || self.tail.len() < 2 {
            return Err(invalid("layers", "head and tail need at least one layer each"));
        }
        if self.head.iter().chain(&self.tail).any(|&n| n == 0) {
            return Err(invalid("layers", "layer sizes must be positive"));
        }
        if self.tail[0] != self.head[self.head.len() - 1] + Self::EXTRA {
            return Err(Error::Shape {
                what: "tail input",
                expected: self.head[self.head.len() - 1] + Self::EXTRA,
                got: self.tail[0],
            });
        }
        if self.tail[self.tail.len() - 1] != Self::OUTPUT {
            return Err(Error::Shape {
                what: "output layer",
                expected: Self::OUTPUT,
                got: self.tail[self.tail.len() - 1],
            });
        }
        Ok(())
    }

    fn activations(&self) -> (Vec<Activation>, Vec<Activation>) {
        let head = vec![Activation::Tanh; self.head.len() - 1];
        let mut tail = vec![Activation::Tanh; self.tail.len() - 1];
        *tail.last_mut().expect("tail has a layer") = Activation::Linear;
        (head, tail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub head: Vec<Layer>,
    pub tail: Vec<Layer>,
    /// Multiplies the head input before the first layer.
    pub input_scale: f64,
    pub rng_seed: u64,
}

impl MlpModel {
    pub fn zeros(arch: &Architecture) -> Self {
        let (ha, ta) = arch.activations();
        let build = |sizes: &[usize], acts: &[Activation]| {
            sizes
                .windows(2)
                .zip(acts)
                .map(|(w, &a)| Layer::zeros(w[0], w[1], a))
                .collect()
        };
        Self {
            head: build(&arch.head, &ha),
            tail: build(&arch.tail, &ta),
            input_scale: 1.0,
            rng_seed: 0,
        }
    }

    /// Seeded fan-in uniform initialization.
    pub fn new_random(arch: &Architecture, seed: u64) -> Self {
        let (ha, ta) = arch.activations();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut build = |sizes: &[usize], acts: &[Activation]| -> Vec<Layer> {
            sizes
                .windows(2)
                .zip(acts)
                .map(|(w, &a)| Layer::random(w[0], w[1], a, &mut rng))
                .collect()
        };
        let head = build(&arch.head, &ha);
        let tail = build(&arch.tail, &ta);
        Self {
            head,
            tail,
            input_scale: 1.0,
            rng_seed: seed,
        }
    }

    pub fn with_input_scale(mut self, scale: f64) -> Self {
        self.input_scale = scale;
        self
    }

    pub fn architecture(&self) -> Architecture {
        let sizes = |layers: &[Layer]| {
            let mut v = vec![layers[0].inputs];
            v.extend(layers.iter().map(|l| l.outputs));
            v
        };
        Architecture {
            head: sizes(&self.head),
            tail: sizes(&self.tail),
        }
    }

    pub fn head_input_len(&self) -> usize {
        self.head[0].inputs
    }

    pub fn extra_len(&self) -> usize {
        self.tail[0].inputs - self.head.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.head.iter().chain(self.tail.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.head.iter_mut().chain(self.tail.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_shapes(&self, head_input: usize, extra: usize) -> Result<()> {
        if head_input != self.head_input_len() {
            return Err(Error::Shape {
                what: "head input",
                expected: self.head_input_len(),
                got: head_input,
            });
        }
        if extra != self.extra_len() {
            return Err(Error::Shape {
                what: "extra input",
                expected: self.extra_len(),
                got: extra,
            });
        }
        Ok(())
    }

    /// Predicts `(roll, pitch)` at the next step.
    pub fn forward(&self, head_input: &[f64], extra: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(head_input.len(), extra.len())?;
        let mut a = head_input.to_vec();
        let mut scale = self.input_scale;
        for layer in &self.head {
            let mut next = vec![0.0; layer.outputs];
            layer.forward(&a, scale, &mut next);
            a = next;
            scale = 1.0;
        }
        a.extend_from_slice(extra);
        for layer in &self.tail {
            let mut next = vec![0.0; layer.outputs];
            layer.forward(&a, 1.0, &mut next);
            a = next;
        }
        Ok(a)
    }

    /// Batched loss and gradients; adds into `grads` and returns the mean
    /// loss. Buffers are `(batch, features)` row-major.
    pub(crate) fn accumulate_batch(
        &self,
        head_input: &[f64],
        extra: &[f64],
        target: &[f64],
        batch: usize,
        h: &LossWeights,
        grads: Option<&mut Gradients>,
        ws: &mut Workspace,
    ) -> f64 {
        let e = self.extra_len();
        ws.head_acts.resize(self.head.len(), Vec::new());
        ws.tail_acts.resize(self.tail.len(), Vec::new());

        let mut scale = self.input_scale;
        for (l, layer) in self.head.iter().enumerate() {
            let (before, after) = ws.head_acts.split_at_mut(l);
            let input = if l == 0 { head_input } else { &before[l - 1][..] };
            layer.forward_batch(input, batch, scale, &mut after[0]);
            scale = 1.0;
        }
        let emb = self.head.last().expect("head").outputs;
        let tail_in_len = emb + e;
        ws.tail_input.clear();
        ws.tail_input.reserve(batch * tail_in_len);
        let head_out = ws.head_acts.last().expect("head");
        for s in 0..batch {
            ws.tail_input.extend_from_slice(&head_out[s * emb..(s + 1) * emb]);
            ws.tail_input.extend_from_slice(&extra[s * e..(s + 1) * e]);
        }
        for (l, layer) in self.tail.iter().enumerate() {
            let (before, after) = ws.tail_acts.split_at_mut(l);
            let input = if l == 0 { &ws.tail_input[..] } else { &before[l - 1][..] };
            layer.forward_batch(input, batch, 1.0, &mut after[0]);
        }

        let out = ws.tail_acts.last().expect("tail");
        let mut loss = 0.0;
        ws.delta.clear();
        for s in 0..batch {
            let r = [out[2 * s] - target[2 * s], out[2 * s + 1] - target[2 * s + 1]];
            loss += h.quadratic(r);
            let g = h.apply(r);
            ws.delta.push(2.0 * g[0] / batch as f64);
            ws.delta.push(2.0 * g[1] / batch as f64);
        }
        let loss = loss / batch as f64;
        let Some(grads) = grads else {
            return loss;
        };

        for l in (0..self.tail.len()).rev() {
            let input = if l == 0 { &ws.tail_input[..] } else { &ws.tail_acts[l - 1][..] };
            self.tail[l].backward_batch(
                input,
                &ws.tail_acts[l],
                &mut ws.delta,
                batch,
                1.0,
                &mut grads.tail[l],
                Some(&mut ws.dx),
            );
            std::mem::swap(&mut ws.delta, &mut ws.dx);
        }
        // Keep only the embedding part of dL/d(tail input).
        let mut d_emb = Vec::with_capacity(batch * emb);
        for s in 0..batch {
            d_emb.extend_from_slice(&ws.delta[s * tail_in_len..s * tail_in_len + emb]);
        }
        ws.delta = d_emb;
        for l in (0..self.head.len()).rev() {
            let input = if l == 0 { head_input } else { &ws.head_acts[l - 1][..] };
            let (scale, dx) = if l == 0 {
                (self.input_scale, None)
            } else {
                (1.0, Some(&mut ws.dx))
            };
            self.head[l].backward_batch(
                input,
                &ws.head_acts[l],
                &mut ws.delta,
                batch,
                scale,
                &mut grads.head[l],
                dx,
            );
            if l > 0 {
                std::mem::swap(&mut ws.delta, &mut ws.dx);
            }
        }
        loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.architecture();
        let join = |v: &[usize]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        let acts = self
            .layers()
            .map(|l| l.activation.name())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = format!(
            "{MODEL_MAGIC}\nhead={} tail={} activations={} seed={} input_scale={} params={}\n",
            join(&arch.head),
            join(&arch.tail),
            acts,
            self.rng_seed,
            self.input_scale,
            self.param_count()
        )
        .into_bytes();
        out.reserve(self.param_count() * 8);
        for layer in self.layers() {
            for &w in layer.weights.iter().chain(&layer.biases) {
                codec::push_f64(&mut out, w);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = codec::read_magic(bytes, "VMLP", MODEL_MAGIC)?;
        let (header, payload) = codec::take_line(rest)?;
        let mut tokens = header.split(' ');
        let sizes = |t: Option<&str>, key: &str| -> Result<Vec<usize>, FormatError> {
            let list: String = codec::parse_keyed(t, key)?;
            list.split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| FormatError::MalformedHeader(format!("bad {key} size {s:?}")))
                })
                .collect()
        };
        let head = sizes(tokens.next(), "head")?;
        let tail = sizes(tokens.next(), "tail")?;
        let acts: String = codec::parse_keyed(tokens.next(), "activations")?;
        let acts = acts
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Activation>, _>>()?;
        let seed: u64 = codec::parse_keyed(tokens.next(), "seed")?;
        let input_scale: f64 = codec::parse_keyed(tokens.next(), "input_scale")?;
        let declared: usize = codec::parse_keyed(tokens.next(), "params")?;

        let arch = Architecture { head, tail };
        arch.validate()
            .map_err(|e| FormatError::SizeMismatch(format!("size table: {e}")))?;
        let layer_count = arch.head.len() + arch.tail.len() - 2;
        if acts.len() != layer_count {
            return Err(FormatError::SizeMismatch(format!(
                "{} activations for {layer_count} layers",
                acts.len()
            ))
            .into());
        }
        let mut model = Self::zeros(&arch);
        for (layer, act) in model.layers_mut().zip(acts) {
            layer.activation = act;
        }
        if model.param_count() != declared {
            return Err(FormatError::SizeMismatch(format!(
                "size table implies {} parameters, header declares {declared}",
                model.param_count()
            ))
            .into());
        }
        codec::ensure_len(payload, declared * 8)?;
        let mut k = 0;
        for layer in model.layers_mut() {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = codec::f64_at(payload, k);
                k += 1;
            }
        }
        model.rng_seed = seed;
        model.input_scale = input_scale;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reusable buffers for batched passes.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    head_acts: Vec<Vec<f64>>,
    tail_acts: Vec<Vec<f64>>,
    tail_input: Vec<f64>,
    delta: Vec<f64>,
    dx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: Vec<LayerGrad>,
    pub tail: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        let z = |l: &Layer| LayerGrad {
            weights: vec![0.0; l.weights.len()],
            biases: vec![0.0; l.biases.len()],
        };
        Self {
            head: model.head.iter().map(z).collect(),
            tail: model.tail.iter().map(z).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        for g in self.head.iter_mut().chain(self.tail.iter_mut()) {
            g.weights.fill(v);
            g.biases.fill(v);
        }
    }

    /// All gradient values in file order (per layer: weights, then biases).
    pub fn flatten(&self) -> Vec<f64> {
        self.head
            .iter()
            .chain(&self.tail)
            .flat_map(|g| g.weights.iter().chain(&g.biases).copied())
            .collect()
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        self.head.iter().chain(self.tail.iter())
    }
}

/// Symmetric positive definite 2x2 weighting of the squared residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    h: [[f64; 2]; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::identity()
    }
}

impl LossWeights {
    pub fn new(h: [[f64; 2]; 2]) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("H", "entries must be finite"));
        }
        if (h[0][1] - h[1][0]).abs() > 1e-12 {
            return Err(invalid("H", "must be symmetric"));
        }
        // Both eigenvalues positive iff trace > 0 and det > 0.
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(h[0][0] + h[1][1] > 0.0 && det > 0.0) {
            return Err(invalid("H", "must be positive definite"));
        }
        Ok(Self { h })
    }

    pub fn identity() -> Self {
        Self {
            h: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.h
    }

    #[inline]
    fn apply(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.h[0][0] * r[0] + self.h[0][1] * r[1],
            self.h[1][0] * r[0] + self.h[1][1] * r[1],
        ]
    }

    #[inline]
    fn quadratic(&self, r: [f64; 2]) -> f64 {
        let hr = self.apply(r);
        r[0] * hr[0] + r[1] * hr[1]
    }
}

/// `(pred - target)^T H (pred - target)`.
pub fn loss_h(pred: &[f64], target: &[f64], h: &LossWeights) -> Result<f64> {
    if pred.len() != 2 || target.len() != 2 {
        return Err(Error::Shape {
            what: "loss operands",
            expected: 2,
            got: pred.len().max(target.len()),
        });
    }
    Ok(h.quadratic([pred[0] - target[0], pred[1] - target[1]]))
}

/// One supervised example, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub head_input: &'a [f64],
    pub extra: &'a [f64],
    pub target: &'a [f64],
}

/// Mean-loss gradients over `batch` by backpropagation.
pub fn gradients(model: &MlpModel, batch: &[Sample<'_>], h: &LossWeights) -> Result<Gradients> {
    loss_and_gradients(model, batch, h).map(|(_, g)| g)
}

pub fn loss_and_gradients(
    model: &MlpModel,
    batch: &[Sample<'_>],
    h: &LossWeights,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(invalid("batch", "must not be empty"));
    }
    let mut head = Vec::with_capacity(batch.len() * model.head_input_len());
    let mut extra = Vec::new();
    let mut target = Vec::new();
    for s in batch {
        model.check_shapes(s.head_input.len(), s.extra.len())?;
        if s.target.len() != Architecture::OUTPUT {
            return Err(Error::Shape {
                what: "target",
                expected: Architecture::OUTPUT,
                got: s.target.len(),
            });
        }
        head.extend_from_slice(s.head_input);
        extra.extend_from_slice(s.extra);
        target.extend_from_slice(s.target);
    }
    let mut grads = Gradients::zeros_like(model);
    let mut ws = Workspace::default();
    let loss = model.accumulate_batch(
        &head,
        &extra,
        &target,
        batch.len(),
        h,
        Some(&mut grads),
        &mut ws,
    );
    Ok((loss, grads))
}

/// Indexed supervised examples. Keeps the trainer independent of how frames
/// are stored.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes example `index` into the provided buffers.
    fn fill(&self, index: usize, head: &mut [f64], extra: &mut [f64], target: &mut [f64]) -> Result<()>;
}

/// Examples held as flat f64 buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InMemorySamples {
    pub head_len: usize,
    pub head: Vec<f64>,
    pub extra: Vec<f64>,
    pub target: Vec<f64>,
}

impl InMemorySamples {
    pub fn new(head_len: usize) -> Self {
        Self {
            head_len,
            ..Self::default()
        }
    }

    pub fn push(&mut self, head: &[f64], extra: &[f64], target: &[f64]) -> Result<()> {
        if head.len() != self.head_len {
            return Err(Error::Shape {
                what: "head input",
                expected: self.head_len,
                got: head.len(),
            });
        }
        if extra.len() != Architecture::EXTRA || target.len() != Architecture::OUTPUT {
            return Err(Error::Shape {
                what: "extra/target",
                expected: 2,
                got: extra.len().max(target.len()),
            });
        }
        self.head.extend_from_slice(head);
        self.extra.extend_from_slice(extra);
        self.target.extend_from_slice(target);
        Ok(())
    }
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.target.len() / 2
    }

    fn fill(&self, i: usize, head: &mut [f64], extra: &mut [f64], target: &mut [f64]) -> Result<()> {
        head.copy_from_slice(&self.head[i * self.head_len..(i + 1) * self.head_len]);
        extra.copy_from_slice(&self.extra[2 * i..2 * i + 2]);
        target.copy_from_slice(&self.target[2 * i..2 * i + 2]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 0 gives plain SGD.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean losses. Index 0 is measured before the first update; entry `e` for
/// `e >= 1` is the running mean over epoch `e` (train) and the loss after it
/// (validation). Validation entries are NaN when no validation data is given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

struct BatchBuffers {
    head: Vec<f64>,
    extra: Vec<f64>,
    target: Vec<f64>,
}

impl BatchBuffers {
    fn new(cap: usize, head_len: usize) -> Self {
        Self {
            head: vec![0.0; cap * head_len],
            extra: vec![0.0; cap * 2],
            target: vec![0.0; cap * 2],
        }
    }

    fn load(&mut self, src: &dyn SampleSource, indices: &[usize], head_len: usize) -> Result<()> {
        for (k, &i) in indices.iter().enumerate() {
            src.fill(
                i,
                &mut self.head[k * head_len..(k + 1) * head_len],
                &mut self.extra[2 * k..2 * k + 2],
                &mut self.target[2 * k..2 * k + 2],
            )?;
        }
        Ok(())
    }
}

/// Mean loss of `model` over every example in `src`.
pub fn evaluate_loss(model: &MlpModel, src: &dyn SampleSource, h: &LossWeights) -> Result<f64> {
    if src.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let head_len = model.head_input_len();
    let chunk = 64;
    let mut buf = BatchBuffers::new(chunk, head_len);
    let mut ws = Workspace::default();
    let indices: Vec<usize> = (0..src.len()).collect();
    let mut total = 0.0;
    for idx in indices.chunks(chunk) {
        buf.load(src, idx, head_len)?;
        let b = idx.len();
        let mean = model.accumulate_batch(
            &buf.head[..b * head_len],
            &buf.extra[..2 * b],
            &buf.target[..2 * b],
            b,
            h,
            None,
            &mut ws,
        );
        total += mean * b as f64;
    }
    Ok(total / src.len() as f64)
}

/// Mini-batch SGD with momentum over a seeded shuffle.
pub fn train(
    mut model: MlpModel,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    config: &TrainConfig,
    h: &LossWeights,
) -> Result<(MlpModel, LossCurve)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let head_len = model.head_input_len();
    let val_loss = |m: &MlpModel| -> Result<f64> {
        if val.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate_loss(m, val, h)
        }
    };
    let mut curve = LossCurve {
        train: vec![evaluate_loss(&model, train, h)?],
        val: vec![val_loss(&model)?],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut buf = BatchBuffers::new(config.batch_size, head_len);
    let mut ws = Workspace::default();
    let mut grads = Gradients::zeros_like(&model);
    let mut velocity = Gradients::zeros_like(&model);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let b = idx.len();
            buf.load(train, idx, head_len)?;
            grads.fill(0.0);
            let loss = model.accumulate_batch(
                &buf.head[..b * head_len],
                &buf.extra[..2 * b],
                &buf.target[..2 * b],
                b,
                h,
                Some(&mut grads),
                &mut ws,
            );
            sum += loss * b as f64;
            let (mu, lr) = (config.momentum, config.learning_rate);
            let layers = model.head.iter_mut().chain(model.tail.iter_mut());
            let vels = velocity.head.iter_mut().chain(velocity.tail.iter_mut());
            for ((layer, vel), g) in layers.zip(vels).zip(grads.layers()) {
                let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                let v = vel.weights.iter_mut().chain(vel.biases.iter_mut());
                let gs = g.weights.iter().chain(&g.biases);
                for ((p, v), g) in params.zip(v).zip(gs) {
                    *v = mu * *v - lr * g;
                    *p += *v;
                }
            }
        }
        if !model.is_finite() {
            return Err(invalid("learning_rate", "training diverged to non-finite parameters"));
        }
        curve.train.push(sum / train.len() as f64);
        curve.val.push(val_loss(&model)?);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            head: vec![12, 6, 4],
            tail: vec![6, 5, 2],
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let model = MlpModel::zeros(&small_arch());
        let out = model.forward(&[0.7; 12], &[0.1, -0.2]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn bias_only_network_by_hand() {
        // head 3 -> 1 (tanh), tail 3 -> 2 (linear), zero weights except tail.
        let arch = Architecture { head: vec![3, 1], tail: vec![3, 2] };
        let mut m = MlpModel::zeros(&arch);
        m.head[0].biases = vec![0.5];
        m.tail[0].weights = vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        m.tail[0].biases = vec![0.1, -0.3];
        let out = m.forward(&[0.0; 3], &[0.0, 0.0]).unwrap();
        let e = 0.5f64.tanh();
        assert!((out[0] - (e + 0.1)).abs() < 1e-15);
        assert!((out[1] - (2.0 * e - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let model = MlpModel::zeros(&Architecture::default());
        assert!(matches!(
            model.forward(&vec![0.0; 7999], &[0.0, 0.0]),
            Err(Error::Shape { what: "head input", expected: 8000, got: 7999 })
        ));
        assert!(model.forward(&vec![0.0; 8000], &[0.0]).is_err());
        let bad = Architecture { head: vec![8, 4], tail: vec![5, 2] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_values() {
        let id = LossWeights::identity();
        assert_eq!(loss_h(&[0.3, -0.1], &[0.3, -0.1], &id).unwrap(), 0.0);
        assert_eq!(loss_h(&[1.0, 2.0], &[0.0, 0.0], &id).unwrap(), 5.0);
        let d = LossWeights::new([[2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(loss_h(&[1.0, 2.0], &[0.0, 0.0], &d).unwrap(), 6.0);
        assert!(LossWeights::new([[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(LossWeights::new([[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(LossWeights::new([[-1.0, 0.0], [0.0, -1.0]]).is_err());
    }

    #[test]
    fn scalar_linear_layer_gradient() {
        let (w, a, y) = (0.7, 1.3, -0.4);
        let layer = Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![w],
            biases: vec![0.0],
            activation: Activation::Linear,
        };
        let mut out = [0.0];
        layer.forward(&[a], 1.0, &mut out);
        let dy = [2.0 * (out[0] - y)];
        let mut g = LayerGrad { weights: vec![0.0], biases: vec![0.0] };
        layer.backward(&[a], &out, &dy, 1.0, &mut g, None);
        assert!((g.weights[0] - 2.0 * a * (w * a - y)).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let model = MlpModel::new_random(&small_arch(), 3);
        let x = [0.3; 12];
        let extra = [0.1, 0.2];
        let target = model.forward(&x, &extra).unwrap();
        let g = gradients(
            &model,
            &[Sample { head_input: &x, extra: &extra, target: &target }],
            &LossWeights::identity(),
        )
        .unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batched_and_single_paths_agree() {
        let model = MlpModel::new_random(&small_arch(), 9).with_input_scale(2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let extra = [0.05, -0.1];
        let target = [0.2, 0.1];
        let h = LossWeights::identity();
        for x in &xs {
            let y = model.forward(x, &extra).unwrap();
            let mut ws = Workspace::default();
            let batch_loss = model.accumulate_batch(x, &extra, &target, 1, &h, None, &mut ws);
            assert!((batch_loss - loss_h(&y, &target, &h).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn model_file_round_trip_and_errors() {
        let model = MlpModel::new_random(&small_arch(), 21).with_input_scale(3.25);
        let bytes = model.to_bytes();
        let back = MlpModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        let x = [0.25; 12];
        assert_eq!(back.forward(&x, &[0.1, 0.2]).unwrap(), model.forward(&x, &[0.1, 0.2]).unwrap());

        let text = String::from_utf8_lossy(&bytes[..80]).to_string();
        assert!(text.starts_with("VMLP v1\nhead=12,6,4 tail=6,5,2 activations=tanh,tanh,tanh,linear seed=21"));

        let edited = {
            let header_end = bytes.iter().skip(8).position(|&b| b == b'\n').unwrap() + 9;
            let header = std::str::from_utf8(&bytes[..header_end]).unwrap().replace("head=12,6,4", "head=12,7,4");
            let mut v = header.into_bytes();
            v.extend_from_slice(&bytes[header_end..]);
            v
        };
        assert!(matches!(
            MlpModel::from_bytes(&edited),
            Err(Error::Format(FormatError::SizeMismatch(_)))
        ));
        assert!(matches!(
            MlpModel::from_bytes(&bytes[..bytes.len() - 8]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"XMLP");
        assert!(matches!(
            MlpModel::from_bytes(&wrong),
            Err(Error::Format(FormatError::MagicMismatch { .. }))
        ));
    }

    fn random_batch(arch: &Architecture, n: usize, seed: u64) -> InMemorySamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = InMemorySamples::new(arch.head[0]);
        for _ in 0..n {
            let x: Vec<f64> = (0..arch.head[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let t = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            s.push(&x, &e, &t).unwrap();
        }
        s
    }

    fn samples(s: &InMemorySamples) -> Vec<Sample<'_>> {
        (0..s.len())
            .map(|i| Sample {
                head_input: &s.head[i * s.head_len..(i + 1) * s.head_len],
                extra: &s.extra[2 * i..2 * i + 2],
                target: &s.target[2 * i..2 * i + 2],
            })
            .collect()
    }

    // Mean loss computed only through the single-sample forward path.
    fn reference_loss(model: &MlpModel, batch: &[Sample<'_>], h: &LossWeights) -> f64 {
        batch
            .iter()
            .map(|s| loss_h(&model.forward(s.head_input, s.extra).unwrap(), s.target, h).unwrap())
            .sum::<f64>()
            / batch.len() as f64
    }

    fn param_mut(m: &mut MlpModel, l: usize, k: usize) -> &mut f64 {
        let layer = m.layers_mut().nth(l).unwrap();
        let nw = layer.weights.len();
        if k < nw {
            &mut layer.weights[k]
        } else {
            &mut layer.biases[k - nw]
        }
    }

    fn finite_difference(model: &MlpModel, batch: &[Sample<'_>], h: &LossWeights) -> Vec<f64> {
        let eps = 1e-5;
        let counts: Vec<usize> = model.layers().map(Layer::param_count).collect();
        let mut m = model.clone();
        let mut out = Vec::new();
        for (l, &count) in counts.iter().enumerate() {
            for k in 0..count {
                let orig = *param_mut(&mut m, l, k);
                *param_mut(&mut m, l, k) = orig + eps;
                let up = reference_loss(&m, batch, h);
                *param_mut(&mut m, l, k) = orig - eps;
                let down = reference_loss(&m, batch, h);
                *param_mut(&mut m, l, k) = orig;
                out.push((up - down) / (2.0 * eps));
            }
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = small_arch();
        let model = MlpModel::new_random(&arch, 5).with_input_scale(1.7);
        let data = random_batch(&arch, 6, 11);
        let batch = samples(&data);
        let h = LossWeights::new([[1.5, 0.3], [0.3, 0.8]]).unwrap();
        let (loss, g) = loss_and_gradients(&model, &batch, &h).unwrap();
        assert!((loss - reference_loss(&model, &batch, &h)).abs() < 1e-12);
        let analytic = g.flatten();
        let numeric = finite_difference(&model, &batch, &h);
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn scaling_h_scales_gradients() {
        let arch = small_arch();
        let model = MlpModel::new_random(&arch, 8);
        let data = random_batch(&arch, 5, 2);
        let batch = samples(&data);
        let h = LossWeights::new([[1.0, 0.2], [0.2, 2.0]]).unwrap();
        let lambda = 3.5;
        let hm = h.matrix();
        let hl = LossWeights::new([
            [lambda * hm[0][0], lambda * hm[0][1]],
            [lambda * hm[1][0], lambda * hm[1][1]],
        ])
        .unwrap();
        let g = gradients(&model, &batch, &h).unwrap().flatten();
        let gl = gradients(&model, &batch, &hl).unwrap().flatten();
        for (a, b) in g.iter().zip(&gl) {
            assert!((b - lambda * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn identical_zero_target_frames_start_at_zero_loss() {
        let arch = small_arch();
        let mut model = MlpModel::new_random(&arch, 4);
        let last = model.tail.last_mut().unwrap();
        last.weights.fill(0.0);
        last.biases.fill(0.0);
        let mut data = InMemorySamples::new(12);
        for _ in 0..10 {
            data.push(&[0.4; 12], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        }
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let (_, curve) = train(model, &data, &data, &cfg, &LossWeights::identity()).unwrap();
        assert_eq!(curve.train[0], 0.0);
        assert_eq!(curve.train.len(), 3);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let arch = small_arch();
        let teacher = MlpModel::new_random(&arch, 77);
        let mut data = random_batch(&arch, 200, 3);
        for i in 0..data.len() {
            let y = teacher
                .forward(&data.head[i * 12..(i + 1) * 12], &data.extra[2 * i..2 * i + 2])
                .unwrap();
            data.target[2 * i..2 * i + 2].copy_from_slice(&y);
        }
        let cfg = TrainConfig { epochs: 20, batch_size: 16, learning_rate: 0.02, ..TrainConfig::default() };
        let h = LossWeights::identity();
        let start = MlpModel::new_random(&arch, 1);
        let (a, curve) = train(start.clone(), &data, &data, &cfg, &h).unwrap();
        assert!(curve.train.last().unwrap() < &curve.train[0]);
        assert!(curve.val.last().unwrap() < &curve.val[0]);
        let (b, _) = train(start, &data, &data, &cfg, &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_empty_and_bad_config() {
        let model = MlpModel::zeros(&small_arch());
        let empty = InMemorySamples::new(12);
        assert!(matches!(
            train(model.clone(), &empty, &empty, &TrainConfig::default(), &LossWeights::identity()),
            Err(Error::EmptyDataset)
        ));
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(model, &empty, &empty, &cfg, &LossWeights::identity()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn loss_is_nonnegative(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 0.1f64..3.0, o in -0.09f64..0.09) {
            let h = LossWeights::new([[d, o], [o, 0.1]]).unwrap();
            let l = loss_h(&[a, b], &[0.0, 0.0], &h).unwrap();
            proptest::prop_assert!(l >= 0.0);
            if a != 0.0 || b != 0.0 {
                proptest::prop_assert!(l > 0.0);
            }
        }
    }
}
