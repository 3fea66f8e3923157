//! Fully connected ReLU network with a linear scalar head, trained with MSE.
//!
//! Parameters live in one flat vector. The layout is layer-major: for each
//! layer the weight matrix (row-major, `out x in`, row `j` holds the weights
//! feeding output unit `j`) followed by its bias vector.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{check_len, Error, Result};
use crate::numerics::RngStream;

/// Hidden widths used for traffic prediction.
pub const TRAFFIC_HIDDEN: [usize; 2] = [128, 128];

/// Flat parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Layer widths, input first, output last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    dims: Vec<usize>,
}

impl MlpShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "an MLP needs at least two positive layer widths".into(),
            ));
        }
        Ok(Self { dims })
    }

    /// `[p, 128, 128, 1]`
    pub fn traffic(window: usize) -> Result<Self> {
        Self::new(vec![window, TRAFFIC_HIDDEN[0], TRAFFIC_HIDDEN[1], 1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of the weight block and bias block of layer `l` (0-based).
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.dims[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (start, start + self.dims[l] * self.dims[l + 1])
    }
}

/// Mini-batch of standardized windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `n x width`.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub width: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, width: usize) -> Result<Self> {
        if targets.is_empty() || width == 0 {
            return Err(Error::InvalidArgument(
                "a batch needs at least one row".into(),
            ));
        }
        check_len(targets.len() * width, inputs.len())?;
        Ok(Self {
            inputs,
            targets,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    shape: MlpShape,
    params: ParamVector,
}

/// `[p, 128, 128, 1]` model with Glorot-uniform weights and zero biases.
pub fn init_params(window: usize, rng: &mut RngStream) -> Result<MlpModel> {
    Ok(MlpModel::glorot(MlpShape::traffic(window)?, rng))
}

impl MlpModel {
    pub fn zeros(shape: MlpShape) -> Self {
        let params = ParamVector::zeros(shape.param_count());
        Self { shape, params }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    /// Draws proceed layer by layer in flat-parameter order.
    pub fn glorot(shape: MlpShape, rng: &mut RngStream) -> Self {
        let mut model = Self::zeros(shape);
        for l in 0..model.shape.num_layers() {
            let (fan_in, fan_out) = (model.shape.dims[l], model.shape.dims[l + 1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for w in model.weights_mut(l) {
                *w = rng.next_range(-limit, limit);
            }
        }
        model
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b) = self.shape.layer_offsets(l);
        &self.params[w..b]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.shape.layer_offsets(l);
        &mut self.params[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.shape.layer_offsets(l);
        &self.params[b..b + self.shape.dims[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.shape.layer_offsets(l);
        let out = self.shape.dims[l + 1];
        &mut self.params[b..b + out]
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn unflatten(shape: MlpShape, params: ParamVector) -> Result<Self> {
        check_len(shape.param_count(), params.dim())?;
        Ok(Self { shape, params })
    }

    /// Predictions for row-major `n x p` inputs. Only single-output
    /// networks are supported.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        forward_with(&self.shape, &self.params, inputs)
    }

    pub fn backward(&self, batch: &Batch) -> Result<ParamVector> {
        Ok(loss_and_gradient(&self.shape, &self.params, batch)?.1)
    }
}

fn check_inputs(shape: &MlpShape, params: &[f64], inputs: &[f64]) -> Result<usize> {
    check_len(shape.param_count(), params.len())?;
    if shape.output_width() != 1 {
        return Err(Error::InvalidArgument(
            "only scalar-output networks are supported".into(),
        ));
    }
    let width = shape.input_width();
    if !inputs.len().is_multiple_of(width) {
        return Err(Error::LengthMismatch {
            expected: (inputs.len() / width + 1) * width,
            found: inputs.len(),
        });
    }
    Ok(inputs.len() / width)
}

/// Affine layer `out[r][j] = b[j] + sum_i w[j][i] * x[r][i]`.
fn affine(x: &[f64], rows: usize, fan_in: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let fan_out = b.len();
    let mut out = vec![0.0; rows * fan_out];
    for r in 0..rows {
        let xr = &x[r * fan_in..(r + 1) * fan_in];
        let or = &mut out[r * fan_out..(r + 1) * fan_out];
        for (j, o) in or.iter_mut().enumerate() {
            let wj = &w[j * fan_in..(j + 1) * fan_in];
            let mut acc = b[j];
            for (wi, xi) in wj.iter().zip(xr) {
                acc += wi * xi;
            }
            *o = acc;
        }
    }
    out
}

/// Returns the activation of every layer, input included. Hidden layers are
/// post-ReLU, the last entry is the linear output.
fn activations(shape: &MlpShape, params: &[f64], inputs: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let layers = shape.num_layers();
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(inputs.to_vec());
    for l in 0..layers {
        let (wo, bo) = shape.layer_offsets(l);
        let (fan_in, fan_out) = (shape.dims[l], shape.dims[l + 1]);
        let mut z = affine(
            &acts[l],
            rows,
            fan_in,
            &params[wo..bo],
            &params[bo..bo + fan_out],
        );
        if l + 1 < layers {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        acts.push(z);
    }
    acts
}

pub fn forward_with(shape: &MlpShape, params: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
    let rows = check_inputs(shape, params, inputs)?;
    Ok(activations(shape, params, inputs, rows)
        .pop()
        .unwrap_or_default())
}

/// Mean squared error, no ½ factor.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(target.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse of empty vectors".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Batch MSE and its exact gradient with respect to every parameter.
///
/// The ReLU derivative is taken as 0 at 0.
pub fn loss_and_gradient(
    shape: &MlpShape,
    params: &[f64],
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    if batch.width != shape.input_width() {
        return Err(Error::LengthMismatch {
            expected: shape.input_width(),
            found: batch.width,
        });
    }
    let rows = check_inputs(shape, params, &batch.inputs)?;
    let acts = activations(shape, params, &batch.inputs, rows);
    let pred = &acts[acts.len() - 1];
    let loss = mse_loss(pred, &batch.targets)?;

    let scale = 2.0 / rows as f64;
    let mut delta: Vec<f64> = pred
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| scale * (p - t))
        .collect();
    let mut grad = ParamVector::zeros(params.len());

    for l in (0..shape.num_layers()).rev() {
        let (wo, bo) = shape.layer_offsets(l);
        let (fan_in, fan_out) = (shape.dims[l], shape.dims[l + 1]);
        let a_prev = &acts[l];
        {
            let (gw, gb) = grad[wo..bo + fan_out].split_at_mut(bo - wo);
            for r in 0..rows {
                let dr = &delta[r * fan_out..(r + 1) * fan_out];
                let ar = &a_prev[r * fan_in..(r + 1) * fan_in];
                for (j, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(ar) {
                        *g += d * a;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &params[wo..bo];
        let mut prev = vec![0.0; rows * fan_in];
        for r in 0..rows {
            let dr = &delta[r * fan_out..(r + 1) * fan_out];
            let pr = &mut prev[r * fan_in..(r + 1) * fan_in];
            for (j, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, wji) in pr.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                    *p += d * wji;
                }
            }
            // a_prev > 0 exactly when its pre-activation was > 0.
            for (p, a) in pr.iter_mut().zip(&a_prev[r * fan_in..(r + 1) * fan_in]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok((loss, grad))
}

/// `params - lr * grad`
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_len(params.len(), grad.len())?;
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}
