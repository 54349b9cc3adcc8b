//! One-hidden-layer perceptron encoder with L2-normalized output, its exact
//! reverse-mode gradient, an Adam optimizer with decoupled weight decay and
//! linear warmup, and the exponential-moving-average momentum twin.
//!
//! Parameters are stored flat as `[w1 | b1 | w2 | b2]` with `w1` of shape
//! `hidden x d_in` and `w2` of shape `d_out x hidden`, both row-major, so the
//! optimizer and the moving average can treat them as one slice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::math::{dot, FeatureMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Pass-through, for tests that need a linear encoder.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self { d_in: 64, hidden: 128, d_out: 32 }
    }
}

impl EncoderShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.d_in + self.hidden + self.d_out * self.hidden + self.d_out
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.d_in;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.d_out * self.hidden;
        [w1, b1, w2, b2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    pub activation: Activation,
    pub values: Vec<f64>,
}

/// Same layout as [`EncoderParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub shape: EncoderShape,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(shape: EncoderShape) -> Self {
        Self { shape, values: vec![0.0; shape.param_count()] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

struct Layers<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

struct LayersMut<'a> {
    w1: &'a mut [f64],
    b1: &'a mut [f64],
    w2: &'a mut [f64],
    b2: &'a mut [f64],
}

fn split_mut(shape: EncoderShape, values: &mut [f64]) -> LayersMut<'_> {
    let [_, b1, w2, b2] = shape.offsets();
    let (w1s, rest) = values.split_at_mut(b1);
    let (b1s, rest) = rest.split_at_mut(w2 - b1);
    let (w2s, b2s) = rest.split_at_mut(b2 - w2);
    LayersMut { w1: w1s, b1: b1s, w2: w2s, b2: b2s }
}

/// Intermediate activations of one forward pass.
struct Trace {
    hidden: Matrix,
    norms: Vec<f64>,
    output: Matrix,
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: EncoderShape, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; shape.param_count()];
        let layers = split_mut(shape, &mut values);
        let lim1 = (6.0 / (shape.d_in + shape.hidden) as f64).sqrt();
        for w in layers.w1.iter_mut() {
            *w = rng.random_range(-lim1..=lim1);
        }
        let lim2 = (6.0 / (shape.hidden + shape.d_out) as f64).sqrt();
        for w in layers.w2.iter_mut() {
            *w = rng.random_range(-lim2..=lim2);
        }
        Self { shape, activation, values }
    }

    pub fn from_values(shape: EncoderShape, activation: Activation, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(IceError::ShapeMismatch(format!(
                "{} parameters for shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Self { shape, activation, values })
    }

    fn layers(&self) -> Layers<'_> {
        let [_, b1, w2, b2] = self.shape.offsets();
        Layers {
            w1: &self.values[..b1],
            b1: &self.values[b1..w2],
            w2: &self.values[w2..b2],
            b2: &self.values[b2..],
        }
    }

    pub fn layers_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let l = split_mut(self.shape, &mut self.values);
        (l.w1, l.b1, l.w2, l.b2)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, batch: &FeatureMatrix) -> Result<()> {
        if batch.cols() != self.shape.d_in {
            return Err(IceError::DimensionMismatch { expected: self.shape.d_in, found: batch.cols() });
        }
        if !batch.is_finite() {
            return Err(IceError::NonFiniteInput("encoder input"));
        }
        Ok(())
    }

    fn trace(&self, batch: &FeatureMatrix) -> Result<Trace> {
        self.check_input(batch)?;
        let EncoderShape { d_in, hidden, d_out } = self.shape;
        let l = self.layers();
        let n = batch.rows();
        let mut hid = Matrix::zeros(n, hidden);
        let mut z2 = vec![0.0; d_out];
        let mut out = Matrix::zeros(n, d_out);
        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let x = batch.row(r);
            let h = hid.row_mut(r);
            for (j, hj) in h.iter_mut().enumerate() {
                let z = dot(&l.w1[j * d_in..(j + 1) * d_in], x) + l.b1[j];
                *hj = self.activation.apply(z);
            }
            let h = hid.row(r);
            for (k, zk) in z2.iter_mut().enumerate() {
                *zk = dot(&l.w2[k * hidden..(k + 1) * hidden], h) + l.b2[k];
            }
            let nrm = dot(&z2, &z2).sqrt();
            if nrm == 0.0 || !nrm.is_finite() {
                return Err(IceError::DegenerateVector);
            }
            let y = out.row_mut(r);
            for (yk, zk) in y.iter_mut().zip(&z2) {
                *yk = zk / nrm;
            }
            norms.push(nrm);
        }
        Ok(Trace { hidden: hid, norms, output: out })
    }
}

/// Encodes each row of `batch` into a unit-norm embedding.
pub fn forward(params: &EncoderParams, batch: &FeatureMatrix) -> Result<FeatureMatrix> {
    Ok(params.trace(batch)?.output)
}

/// Gradient of a scalar loss w.r.t. all parameters, given the loss gradient
/// w.r.t. the normalized outputs.
pub fn backward(
    params: &EncoderParams,
    batch: &FeatureMatrix,
    output_gradient: &FeatureMatrix,
) -> Result<Gradients> {
    let EncoderShape { d_in, hidden, d_out } = params.shape;
    if output_gradient.rows() != batch.rows() || output_gradient.cols() != d_out {
        return Err(IceError::ShapeMismatch(format!(
            "output gradient {}x{}, expected {}x{}",
            output_gradient.rows(),
            output_gradient.cols(),
            batch.rows(),
            d_out
        )));
    }
    let trace = params.trace(batch)?;
    let l = params.layers();
    let mut grads = Gradients::zeros(params.shape);
    let g = split_mut(params.shape, &mut grads.values);

    let mut g_pre = vec![0.0; d_out];
    let mut g_hid = vec![0.0; hidden];
    for r in 0..batch.rows() {
        let y = trace.output.row(r);
        let up = output_gradient.row(r);
        // d(z/|z|)/dz = (I - y y^T) / |z|
        let proj = dot(y, up);
        let inv = 1.0 / trace.norms[r];
        for k in 0..d_out {
            g_pre[k] = (up[k] - y[k] * proj) * inv;
        }
        let h = trace.hidden.row(r);
        g_hid.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..d_out {
            let gk = g_pre[k];
            if gk == 0.0 {
                continue;
            }
            g.b2[k] += gk;
            let w2k = &l.w2[k * hidden..(k + 1) * hidden];
            let gw2k = &mut g.w2[k * hidden..(k + 1) * hidden];
            for j in 0..hidden {
                gw2k[j] += gk * h[j];
                g_hid[j] += gk * w2k[j];
            }
        }
        let x = batch.row(r);
        for j in 0..hidden {
            let gz = g_hid[j] * params.activation.derivative_from_output(h[j]);
            if gz == 0.0 {
                continue;
            }
            g.b1[j] += gz;
            let gw1j = &mut g.w1[j * d_in..(j + 1) * d_in];
            for (gw, xi) in gw1j.iter_mut().zip(x) {
                *gw += gz * xi;
            }
        }
    }
    Ok(grads)
}

/// Online encoder trained by gradient descent plus its moving-average twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub online: EncoderParams,
    pub momentum: EncoderParams,
    alpha: f64,
}

impl EncoderPair {
    /// The momentum encoder starts as an exact copy of the online one.
    pub fn new(online: EncoderParams, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { momentum: online.clone(), online, alpha })
    }

    pub fn from_parts(online: EncoderParams, momentum: EncoderParams, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if online.shape != momentum.shape {
            return Err(IceError::ShapeMismatch("online and momentum shapes differ".into()));
        }
        Ok(Self { online, momentum, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `theta_m <- alpha * theta_m + (1 - alpha) * theta_o`
    pub fn ema_update(&mut self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.online.shape != self.momentum.shape {
            return Err(IceError::ShapeMismatch("online and momentum shapes differ".into()));
        }
        let a = self.alpha;
        for (m, o) in self.momentum.values.iter_mut().zip(&self.online.values) {
            *m = a * *m + (1.0 - a) * o;
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(IceError::InvalidMomentum(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 3.5e-4,
            warmup_epochs: 10,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Linear ramp over the warmup epochs, constant afterwards.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            return self.base_lr;
        }
        self.base_lr * ((epoch + 1) as f64 / self.warmup_epochs as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, shape: EncoderShape) -> Self {
        let n = shape.param_count();
        Self { config, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step: 0 }
    }

    /// One Adam step with decoupled weight decay at the learning rate for `epoch`.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &Gradients, epoch: usize) -> Result<()> {
        if grads.values.len() != params.values.len() || self.first_moment.len() != params.values.len() {
            return Err(IceError::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(IceError::NonFiniteGradient);
        }
        let c = self.config;
        let lr = c.effective_lr(epoch);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(&grads.values)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *p);
        }
        Ok(())
    }
}
