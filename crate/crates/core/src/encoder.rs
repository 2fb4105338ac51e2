//! Small rectifier MLP with hand-derived reverse-mode gradients, SGD with
//! momentum and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

/// Weights and biases of a fully connected network.
///
/// `weights[i]` maps layer `i` to layer `i + 1` and has shape
/// `layer_dims[i + 1] × layer_dims[i]`. Hidden layers use a rectifier, the
/// output layer is linear. A network with a single entry in `layer_dims` has
/// no layers and is the identity map.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims must be non-empty and positive, got {layer_dims:?}"
            )));
        }
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Weights ~ N(0, 2/fan_in), biases zero.
    pub fn init(layer_dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(layer_dims)?;
        for w in &mut p.weights {
            let std = (2.0 / w.cols() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = std * rng.gaussian();
            }
        }
        Ok(p)
    }

    pub fn from_layers(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight blocks and {} bias blocks",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *dims.last().unwrap() || b.len() != w.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} with bias {} after width {}",
                    w.shape(),
                    b.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.rows());
        }
        Ok(Self {
            layer_dims: dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.blocks().map(<[f64]>::len).sum()
    }

    /// Parameter blocks in storage order: weight 0, bias 0, weight 1, ...
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_dims == other.layer_dims
    }

    fn check_same_shape(&self, other: &MlpParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter sets {:?} and {:?}",
                self.layer_dims, other.layer_dims
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().flatten().all(|v| v.is_finite())
    }

    /// Euclidean distance between two parameter sets of the same shape.
    pub fn distance(&self, other: &MlpParams) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .blocks()
            .flatten()
            .zip(other.blocks().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Per-layer inputs and pre-activations saved by [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    batch: usize,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

pub fn forward(params: &MlpParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    let n = params.num_layers();
    let mut inputs = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    let mut act = batch.clone();
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = act.matmul_t(w)?;
        z.add_row_vector(b)?;
        inputs.push(act);
        act = z.clone();
        if i + 1 < n {
            act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        pre_activations.push(z);
    }
    Ok((
        act,
        ForwardCache {
            inputs,
            pre_activations,
            batch: batch.rows(),
        },
    ))
}

/// Forward pass without keeping the cache.
pub fn predict(params: &MlpParams, batch: &Matrix) -> Result<Matrix> {
    forward(params, batch).map(|(out, _)| out)
}

/// Gradients of a scalar loss with respect to every weight and bias, given
/// the gradient with respect to the network output.
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_output: &Matrix) -> Result<MlpParams> {
    backward_with_input(params, cache, grad_output).map(|(g, _)| g)
}

/// Like [`backward`], also returning the gradient with respect to the input batch.
pub fn backward_with_input(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_output: &Matrix,
) -> Result<(MlpParams, Matrix)> {
    if grad_output.shape() != (cache.batch, params.output_dim())
        || cache.inputs.len() != params.num_layers()
    {
        return Err(Error::Shape(format!(
            "output gradient {:?} for batch {} and output width {}",
            grad_output.shape(),
            cache.batch,
            params.output_dim()
        )));
    }
    let mut grads = MlpParams::zeros(&params.layer_dims)?;
    let mut delta = grad_output.clone();
    for i in (0..params.num_layers()).rev() {
        grads.weights[i] = delta.t_matmul(&cache.inputs[i])?;
        grads.biases[i] = delta.column_sums();
        let mut upstream = delta.matmul(&params.weights[i])?;
        if i > 0 {
            let z = &cache.pre_activations[i - 1];
            for (g, &zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        delta = upstream;
    }
    Ok((grads, delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub momentum: f64,
}

/// Weight decay is strong for a network this small: it is what makes a
/// trainer drop input directions its objective never uses.
impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.03,
            total_steps: 1,
            weight_decay: 1.6e-2,
            momentum: 0.9,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// `base_lr · ½(1 + cos(π·step/total_steps))`
pub fn cosine_lr(step: usize, cfg: &SgdConfig) -> Result<f64> {
    if cfg.total_steps == 0 || step > cfg.total_steps {
        return Err(Error::Config(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    let t = step as f64 / cfg.total_steps as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// One SGD update with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    lr: f64,
    cfg: &SgdConfig,
    velocity: &mut MlpParams,
) -> Result<()> {
    params.check_same_shape(grads)?;
    params.check_same_shape(velocity)?;
    if !grads.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    for ((p, g), v) in params
        .blocks_mut()
        .zip(grads.blocks())
        .zip(velocity.blocks_mut())
    {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *pi);
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// SGD state for one parameter set; numbers its steps so failures can be
/// reported with a position.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: MlpParams,
    step: usize,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, params: &MlpParams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity: MlpParams::zeros(params.layer_dims())?,
            step: 0,
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.step.min(self.cfg.total_steps), &self.cfg)
    }

    /// Applies one step at the scheduled learning rate and advances the schedule.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<f64> {
        let lr = self.current_lr()?;
        sgd_step(params, grads, lr, &self.cfg, &mut self.velocity).map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { step: self.step },
            e => e,
        })?;
        self.step += 1;
        Ok(lr)
    }
}

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement `|a − fd| / max(1e-8, |a| + |fd|)` between
/// an analytic gradient and central differences of `f` around `x`.
pub fn finite_difference_error(
    x: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    h: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Compares the gradient returned by `loss` against central differences over
/// every parameter and returns the largest relative error.
pub fn gradient_check(
    params: &MlpParams,
    loss: impl Fn(&MlpParams) -> Result<(f64, MlpParams)>,
) -> Result<f64> {
    let (_, analytic) = loss(params)?;
    params.check_same_shape(&analytic)?;
    let x = params.to_flat();
    let mut scratch = params.clone();
    let mut failure = None;
    let err = finite_difference_error(
        &x,
        &analytic.to_flat(),
        |p| {
            scratch.set_flat(p).expect("flat length");
            match loss(&scratch) {
                Ok((l, _)) => l,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        FD_STEP,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}
