//! The learned dynamics function: a plain fully connected network with tanh
//! hidden activations and an identity output layer, plus exact reverse-mode
//! gradients for its weights, biases, and input.
//!
//! All arithmetic is `f64`. Forward is pure: identical parameters and input
//! give bit-identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Parameters of the dynamics network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Cached activations from [`MlpParams::forward`], sufficient for
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Vec<f64>,
    /// Post-activation output of every layer (tanh applied on hidden layers).
    activations: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

/// Gradients mirroring [`MlpParams`] shapes, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_input: Vec<f64>,
}

impl MlpParams {
    /// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))`, zero
    /// biases. Deterministic for a given seed.
    pub fn init(layer_widths: &[usize], seed: u64) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::invalid(
                "layer_widths needs at least an input and an output width",
            ));
        }
        if let Some(&w) = layer_widths.iter().find(|&&w| w == 0) {
            return Err(Error::invalid(format!("zero-width layer (width {w})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_widths.len() - 1);
        for pair in layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        Ok(MlpParams { layers })
    }

    /// Assemble from explicit per-layer weights/biases (checkpoint loading).
    pub fn from_parts(
        widths: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Checkpoint("widths must chain >= 2 entries".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Checkpoint("zero-width layer".into()));
        }
        let n_layers = widths.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::Checkpoint(format!(
                "expected {n_layers} weight/bias entries, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (k, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (in_dim, out_dim) = (widths[k], widths[k + 1]);
            if w.len() != in_dim * out_dim {
                return Err(Error::Checkpoint(format!(
                    "layer {k}: expected {}x{}={} weights, got {}",
                    out_dim,
                    in_dim,
                    in_dim * out_dim,
                    w.len()
                )));
            }
            if b.len() != out_dim {
                return Err(Error::Checkpoint(format!(
                    "layer {k}: expected {out_dim} biases, got {}",
                    b.len()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("layer {k}: non-finite value")));
            }
            layers.push(Layer {
                weight: w,
                bias: b,
                in_dim,
                out_dim,
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        w.push(self.layers[0].in_dim);
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn layer_weights(&self, k: usize) -> &[f64] {
        &self.layers[k].weight
    }

    pub fn layer_biases(&self, k: usize) -> &[f64] {
        &self.layers[k].bias
    }

    pub fn layer_weights_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.layers[k].weight
    }

    pub fn layer_biases_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.layers[k].bias
    }

    /// Upper bound on `|output_i|` given that hidden activations are in
    /// [-1, 1]: `max_i (sum_j |W_L[i][j]| + |b_i|)`. For a single-layer net
    /// the bound additionally scales with the input, so callers pass the
    /// input magnitude bound.
    pub fn output_bound(&self, input_bound: f64) -> f64 {
        let last = self.layers.last().expect("non-empty");
        let act_bound = if self.layers.len() == 1 {
            input_bound
        } else {
            1.0
        };
        (0..last.out_dim)
            .map(|i| {
                let row = &last.weight[i * last.in_dim..(i + 1) * last.in_dim];
                row.iter().map(|w| w.abs()).sum::<f64>() * act_bound + last.bias[i].abs()
            })
            .fold(0.0, f64::max)
    }

    /// Forward pass recording the activation tape.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp forward input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n);
        let mut cur = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, cur);
            if k + 1 < n {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(z);
            cur = activations.last().expect("just pushed");
        }
        let y = activations.last().expect("at least one layer").clone();
        Ok((
            y,
            MlpTape {
                input: x.to_vec(),
                activations,
            },
        ))
    }

    /// Forward pass without a tape, writing into `out` using caller scratch.
    /// This is the solver hot path.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64], scratch: &mut MlpScratch) {
        debug_assert_eq!(x.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        let n = self.layers.len();
        let MlpScratch { a, b } = scratch;

        let first = &self.layers[0];
        a.resize(first.out_dim, 0.0);
        affine_into(first, x, a);
        if n > 1 {
            for v in a.iter_mut() {
                *v = v.tanh();
            }
        }
        let mut src_is_a = true;
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            let (src, dst) = if src_is_a { (&*a, &mut *b) } else { (&*b, &mut *a) };
            dst.resize(layer.out_dim, 0.0);
            affine_into(layer, src, dst);
            if k + 1 < n {
                for v in dst.iter_mut() {
                    *v = v.tanh();
                }
            }
            src_is_a = !src_is_a;
        }
        out.copy_from_slice(if src_is_a { a } else { b });
    }

    /// Exact gradients of a scalar loss w.r.t. every weight, bias, and the
    /// input, given `dLoss/dy` and the tape from the matching forward call.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64]) -> Result<GradBundle> {
        let mut grads = GradBundle::zeros_like(self);
        let d_input = self.backward_accumulate(tape, d_out, &mut grads)?;
        grads.d_input = d_input;
        Ok(grads)
    }

    /// Like [`MlpParams::backward`] but accumulates parameter gradients into
    /// an existing bundle (no allocation of a fresh one) and returns the
    /// input gradient. This is the reverse-accumulation hot path.
    pub fn backward_accumulate(
        &self,
        tape: &MlpTape,
        d_out: &[f64],
        grads: &mut GradBundle,
    ) -> Result<Vec<f64>> {
        let n = self.layers.len();
        if tape.activations.len() != n || tape.input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp backward tape",
                expected: n,
                got: tape.activations.len(),
            });
        }
        if d_out.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "mlp backward upstream",
                expected: self.output_dim(),
                got: d_out.len(),
            });
        }
        // d_z: gradient w.r.t. the current layer's pre-activation.
        let mut d_z = d_out.to_vec();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let layer_input: &[f64] = if k == 0 {
                &tape.input
            } else {
                &tape.activations[k - 1]
            };
            // Output layer is identity; hidden layers fold tanh' = 1 - a^2
            // into d_z when propagating INTO them (handled below).
            let dw = &mut grads.d_weights[k];
            for i in 0..layer.out_dim {
                let g = d_z[i];
                grads.d_biases[k][i] += g;
                let row = &mut dw[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (r, &a) in row.iter_mut().zip(layer_input) {
                    *r += g * a;
                }
            }
            // Propagate to the layer input: W^T d_z, then through tanh if the
            // previous layer is hidden.
            let mut d_in = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let g = d_z[i];
                let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (d, &w) in d_in.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
            if k == 0 {
                return Ok(d_in);
            }
            let prev_act = &tape.activations[k - 1];
            for (d, &a) in d_in.iter_mut().zip(prev_act) {
                *d *= 1.0 - a * a;
            }
            d_z = d_in;
        }
        unreachable!("layer 0 returns")
    }
}

/// Reusable buffers for [`MlpParams::eval_into`].
#[derive(Debug, Default, Clone)]
pub struct MlpScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layer.out_dim];
    affine_into(layer, x, &mut out);
    out
}

fn affine_into(layer: &Layer, x: &[f64], out: &mut [f64]) {
    for i in 0..layer.out_dim {
        let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
        let mut acc = layer.bias[i];
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        out[i] = acc;
    }
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradBundle {
            d_weights: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.weight.len()])
                .collect(),
            d_biases: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
            d_input: vec![0.0; params.input_dim()],
        }
    }

    /// Accumulate only parameter gradients from `other` (batch reduction;
    /// per-window input gradients are not meaningfully summable).
    pub fn add_assign_params(&mut self, other: &GradBundle) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Accumulate parameter and input gradients from `other`.
    pub fn add_assign(&mut self, other: &GradBundle) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.d_input.iter_mut().zip(&other.d_input) {
            *x += y;
        }
    }

    /// Scale parameter gradients in place (input gradient included).
    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            for v in w.iter_mut() {
                *v *= s;
            }
        }
        for b in &mut self.d_biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
        for v in &mut self.d_input {
            *v *= s;
        }
    }

    /// Global L2 norm over parameter gradients (weights and biases only).
    pub fn param_global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for w in &self.d_weights {
            for &v in w {
                acc += v * v;
            }
        }
        for b in &self.d_biases {
            for &v in b {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    /// Clip parameter gradients to a global norm; returns the pre-clip norm.
    pub fn clip_param_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.param_global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for w in &mut self.d_weights {
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
            for b in &mut self.d_biases {
                for v in b.iter_mut() {
                    *v *= s;
                }
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_input.iter().all(|x| x.is_finite())
    }
}
