//! Forward inference, reverse-mode gradients and Adam updates over a flat
//! `f64` parameter vector.
//!
//! All loops run in a fixed order so that, given the same seed and inputs,
//! every output is bit-identical across runs.

use crate::data::Spectrogram;
use crate::rng::Rng;

use super::arch::{ArchDescriptor, LayerSpec, PlannedLayer, TensorShape};
use super::NnError;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Raw class scores; softmax is applied inside the loss only.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Vec<f64>,
}

/// Architecture plus flat parameters and Adam state.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub arch: ArchDescriptor,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

/// Build a model with He-normal fan-in initialization (biases zero) from a
/// seeded generator; identical `(arch, seed)` gives bit-identical parameters.
pub fn build_model(arch: &ArchDescriptor, seed: u64) -> Result<ModelState, NnError> {
    let plan = arch.plan()?;
    let total = plan.last().map_or(0, |l| l.b_off + l.b_len);
    let mut params = vec![0.0; total];
    let mut rng = Rng::seed_from(seed);
    for layer in &plan {
        let fan_in = match layer.spec {
            LayerSpec::Conv3x3 { .. } => match layer.in_shape {
                TensorShape::Map(c, _, _) => 9 * c,
                TensorShape::Flat(_) => unreachable!("conv on flat input is rejected by plan"),
            },
            LayerSpec::Dense { .. } | LayerSpec::Output { .. } => layer.in_shape.len(),
            LayerSpec::MaxPool2x2 => continue,
        };
        let std = (2.0 / fan_in as f64).sqrt();
        for w in &mut params[layer.w_off..layer.w_off + layer.w_len] {
            *w = std * rng.next_normal();
        }
        // Biases stay zero.
    }
    Ok(ModelState {
        arch: arch.clone(),
        params,
        adam_m: vec![0.0; total],
        adam_v: vec![0.0; total],
        step_count: 0,
    })
}

impl ModelState {
    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    /// Independent copy of the current parameters.
    pub fn params_snapshot(&self) -> Vec<f64> {
        self.params.clone()
    }

    /// Load a parameter vector; Adam state is left untouched.
    pub fn params_load(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ParamLength {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }
}

fn check_input(model: &ModelState, input: &Spectrogram) -> Result<(), NnError> {
    let (h, w, c) = model.arch.input_shape;
    if c != 1 || input.freq_bins != h || input.time_frames != w {
        return Err(NnError::ShapeMismatch {
            expected: format!("{h}x{w}x{c}"),
            actual: format!("{}x{}x1", input.freq_bins, input.time_frames),
        });
    }
    Ok(())
}

/// Per-layer activations from a forward pass (post-ReLU where applicable).
struct Trace {
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

fn forward_trace(model: &ModelState, plan: &[PlannedLayer], input: &Spectrogram) -> Trace {
    let x: Vec<f64> = input.values.iter().map(|&v| f64::from(v)).collect();
    let mut outputs = Vec::with_capacity(plan.len());
    let mut current = &x;
    for layer in plan {
        let out = match layer.spec {
            LayerSpec::Conv3x3 { .. } => conv_forward(model, layer, current),
            LayerSpec::MaxPool2x2 => pool_forward(layer, current),
            LayerSpec::Dense { .. } => affine_forward(model, layer, current, true),
            LayerSpec::Output { .. } => affine_forward(model, layer, current, false),
        };
        outputs.push(out);
        current = outputs.last().expect("just pushed");
    }
    Trace { input: x, outputs }
}

/// Deterministic forward inference: a pure function of (params, input).
pub fn forward(model: &ModelState, input: &Spectrogram) -> Result<Logits, NnError> {
    check_input(model, input)?;
    let plan = model.arch.plan()?;
    let trace = forward_trace(model, &plan, input);
    Ok(Logits {
        values: trace.outputs.last().expect("plan is non-empty").clone(),
    })
}

/// Exact reverse-mode gradient of `logits · grad_logits` with respect to the
/// flat parameter vector. Accumulation order is fixed.
pub fn backward(
    model: &ModelState,
    input: &Spectrogram,
    grad_logits: &[f64],
) -> Result<Vec<f64>, NnError> {
    check_input(model, input)?;
    let plan = model.arch.plan()?;
    let classes = model.classes();
    if grad_logits.len() != classes {
        return Err(NnError::ShapeMismatch {
            expected: format!("{classes} logit gradients"),
            actual: format!("{}", grad_logits.len()),
        });
    }
    let trace = forward_trace(model, &plan, input);
    let mut grad_params = vec![0.0; model.params.len()];
    let mut grad_out = grad_logits.to_vec();
    for (idx, layer) in plan.iter().enumerate().rev() {
        let layer_in: &[f64] = if idx == 0 {
            &trace.input
        } else {
            &trace.outputs[idx - 1]
        };
        let layer_out = &trace.outputs[idx];
        grad_out = match layer.spec {
            LayerSpec::Conv3x3 { .. } => {
                relu_backward_inplace(&mut grad_out, layer_out);
                conv_backward(model, layer, layer_in, &grad_out, &mut grad_params)
            }
            LayerSpec::MaxPool2x2 => pool_backward(layer, layer_in, &grad_out),
            LayerSpec::Dense { .. } => {
                relu_backward_inplace(&mut grad_out, layer_out);
                affine_backward(model, layer, layer_in, &grad_out, &mut grad_params)
            }
            LayerSpec::Output { .. } => {
                affine_backward(model, layer, layer_in, &grad_out, &mut grad_params)
            }
        };
    }
    Ok(grad_params)
}

/// Softmax cross-entropy with max-subtraction stabilization.
///
/// Returns `(-log softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn softmax_cross_entropy(logits: &Logits, label: usize) -> Result<(f64, Vec<f64>), NnError> {
    let n = logits.values.len();
    if label >= n {
        return Err(NnError::LabelOutOfRange { label, classes: n });
    }
    let max = logits
        .values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = logits.values.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let loss = sum.ln() - (logits.values[label] - max);
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// One Adam update with bias correction (β1=0.9, β2=0.999, ε=1e-8).
#[allow(clippy::needless_range_loop)] // four parallel vectors share the index
pub fn adam_step(model: &mut ModelState, grad: &[f64], lr: f64) -> Result<(), NnError> {
    if grad.len() != model.params.len() {
        return Err(NnError::ParamLength {
            expected: model.params.len(),
            actual: grad.len(),
        });
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient { index: pos });
    }
    model.step_count += 1;
    let t = model.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..grad.len() {
        let g = grad[i];
        model.adam_m[i] = ADAM_BETA1 * model.adam_m[i] + (1.0 - ADAM_BETA1) * g;
        model.adam_v[i] = ADAM_BETA2 * model.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = model.adam_m[i] / bc1;
        let v_hat = model.adam_v[i] / bc2;
        model.params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

fn relu_backward_inplace(grad: &mut [f64], post_activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(post_activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn conv_forward(model: &ModelState, layer: &PlannedLayer, input: &[f64]) -> Vec<f64> {
    let TensorShape::Map(ci, h, w) = layer.in_shape else {
        unreachable!()
    };
    let TensorShape::Map(co, _, _) = layer.out_shape else {
        unreachable!()
    };
    let weights = &model.params[layer.w_off..layer.w_off + layer.w_len];
    let biases = &model.params[layer.b_off..layer.b_off + layer.b_len];
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let mut acc = biases[o];
                for i in 0..ci {
                    let in_base = i * h * w;
                    let w_base = (o * ci + i) * 9;
                    for ky in 0..3usize {
                        let yy = y + ky;
                        if yy < 1 || yy > h {
                            continue;
                        }
                        let yy = yy - 1;
                        for kx in 0..3usize {
                            let xx = x + kx;
                            if xx < 1 || xx > w {
                                continue;
                            }
                            let xx = xx - 1;
                            acc += weights[w_base + ky * 3 + kx] * input[in_base + yy * w + xx];
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc.max(0.0); // ReLU
            }
        }
    }
    out
}

fn conv_backward(
    model: &ModelState,
    layer: &PlannedLayer,
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Vec<f64> {
    let TensorShape::Map(ci, h, w) = layer.in_shape else {
        unreachable!()
    };
    let TensorShape::Map(co, _, _) = layer.out_shape else {
        unreachable!()
    };
    let weights = &model.params[layer.w_off..layer.w_off + layer.w_len];
    let mut grad_in = vec![0.0; ci * h * w];
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let g = grad_out[(o * h + y) * w + x];
                if g == 0.0 {
                    continue;
                }
                grad_params[layer.b_off + o] += g;
                for i in 0..ci {
                    let in_base = i * h * w;
                    let w_base = (o * ci + i) * 9;
                    for ky in 0..3usize {
                        let yy = y + ky;
                        if yy < 1 || yy > h {
                            continue;
                        }
                        let yy = yy - 1;
                        for kx in 0..3usize {
                            let xx = x + kx;
                            if xx < 1 || xx > w {
                                continue;
                            }
                            let xx = xx - 1;
                            grad_params[layer.w_off + w_base + ky * 3 + kx] +=
                                g * input[in_base + yy * w + xx];
                            grad_in[in_base + yy * w + xx] += g * weights[w_base + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn pool_forward(layer: &PlannedLayer, input: &[f64]) -> Vec<f64> {
    let TensorShape::Map(c, hi, wi) = layer.in_shape else {
        unreachable!()
    };
    let TensorShape::Map(_, ho, wo) = layer.out_shape else {
        unreachable!()
    };
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = input[(ch * hi + 2 * y + dy) * wi + 2 * x + dx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * ho + y) * wo + x] = best;
            }
        }
    }
    out
}

fn pool_backward(layer: &PlannedLayer, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let TensorShape::Map(c, hi, wi) = layer.in_shape else {
        unreachable!()
    };
    let TensorShape::Map(_, ho, wo) = layer.out_shape else {
        unreachable!()
    };
    let mut grad_in = vec![0.0; c * hi * wi];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                // Route to the first maximum in scan order (fixed tie-break).
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (ch * hi + 2 * y + dy) * wi + 2 * x + dx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                grad_in[best_idx] += grad_out[(ch * ho + y) * wo + x];
            }
        }
    }
    grad_in
}

fn affine_forward(model: &ModelState, layer: &PlannedLayer, input: &[f64], relu: bool) -> Vec<f64> {
    let fan_in = layer.in_shape.len();
    let fan_out = layer.out_shape.len();
    let weights = &model.params[layer.w_off..layer.w_off + layer.w_len];
    let biases = &model.params[layer.b_off..layer.b_off + layer.b_len];
    let mut out = vec![0.0; fan_out];
    for j in 0..fan_out {
        let mut acc = biases[j];
        let row = &weights[j * fan_in..(j + 1) * fan_in];
        for (wv, xv) in row.iter().zip(input) {
            acc += wv * xv;
        }
        out[j] = if relu { acc.max(0.0) } else { acc };
    }
    out
}

fn affine_backward(
    model: &ModelState,
    layer: &PlannedLayer,
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Vec<f64> {
    let fan_in = layer.in_shape.len();
    let fan_out = layer.out_shape.len();
    let weights = &model.params[layer.w_off..layer.w_off + layer.w_len];
    let mut grad_in = vec![0.0; fan_in];
    for j in 0..fan_out {
        let g = grad_out[j];
        grad_params[layer.b_off + j] += g;
        if g == 0.0 {
            continue;
        }
        let w_row = &weights[j * fan_in..(j + 1) * fan_in];
        let gw_row = &mut grad_params[layer.w_off + j * fan_in..layer.w_off + (j + 1) * fan_in];
        for i in 0..fan_in {
            gw_row[i] += g * input[i];
            grad_in[i] += g * w_row[i];
        }
    }
    grad_in
}
