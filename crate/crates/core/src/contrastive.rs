//! Momentum-contrast self-supervised training.
//!
//! Each example is augmented into a query view and a key view. The query view
//! goes through the trained encoder, the key view through a slowly moving
//! copy of it, and the InfoNCE loss asks every query to pick out its own key
//! against a FIFO queue of keys from earlier batches. Negatives come from that
//! queue only, never from the current batch.

use serde::{Deserialize, Serialize};

use crate::encoder::{self, MlpParams, Sgd, SgdConfig};
use crate::error::{Error, Result};
use crate::numeric::{
    dot, l2_normalize_rows, l2_normalize_rows_backward, norm, softmax_nll_in_place, Matrix, RngStream,
};
use crate::trace::TracePoint;

const STREAM_INIT: u64 = 0x55_0001;
const STREAM_SHUFFLE: u64 = 0x55_0002;
const STREAM_AUGMENT: u64 = 0x55_0003;

/// Tolerance on row norms for inputs that must be unit vectors.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Vector-space augmentations producing two stochastic views of one example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Standard deviation of additive per-coordinate Gaussian noise.
    pub gaussian_sigma: f64,
    /// Fraction of coordinates zeroed in each view.
    pub mask_fraction: f64,
    /// Each view is scaled by `1 + scale_jitter·u`, `u ~ U(−1, 1)`.
    pub scale_jitter: f64,
}

impl AugmentPolicy {
    pub fn new(gaussian_sigma: f64, mask_fraction: f64, scale_jitter: f64) -> Result<Self> {
        let p = Self {
            gaussian_sigma,
            mask_fraction,
            scale_jitter,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            gaussian_sigma,
            mask_fraction,
            scale_jitter,
        } = *self;
        if !(gaussian_sigma >= 0.0 && scale_jitter >= 0.0)
            || !gaussian_sigma.is_finite()
            || !scale_jitter.is_finite()
        {
            return Err(Error::Config(
                "augmentation noise and jitter must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&mask_fraction) {
            return Err(Error::Config(format!(
                "mask_fraction must lie in [0, 1), got {mask_fraction}"
            )));
        }
        if gaussian_sigma == 0.0 && mask_fraction == 0.0 && scale_jitter == 0.0 {
            return Err(Error::Config(
                "augmentation policy is the identity; both views would be equal".into(),
            ));
        }
        Ok(())
    }

    /// Same policy with the noise level multiplied by `factor`.
    pub fn with_sigma_scaled(&self, factor: f64) -> Self {
        Self {
            gaussian_sigma: self.gaussian_sigma * factor,
            ..*self
        }
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.1,
            mask_fraction: 0.2,
            scale_jitter: 0.1,
        }
    }
}

/// Applies one view's worth of already-drawn randomness.
fn apply_view(x: &[f64], sigma: f64, noise: &[f64], masked: &[usize], jitter: f64, u: f64) -> Vec<f64> {
    let scale = 1.0 + jitter * u;
    let mut v: Vec<f64> = x
        .iter()
        .zip(noise)
        .map(|(xi, ni)| xi + sigma * ni)
        .collect();
    for &i in masked {
        v[i] = 0.0;
    }
    v.iter_mut().for_each(|vi| *vi *= scale);
    v
}

fn draw_view(x: &[f64], policy: &AugmentPolicy, rng: &mut RngStream) -> Vec<f64> {
    let d = x.len();
    let noise: Vec<f64> = if policy.gaussian_sigma > 0.0 {
        (0..d).map(|_| rng.gaussian()).collect()
    } else {
        vec![0.0; d]
    };
    let n_mask = (policy.mask_fraction * d as f64).floor() as usize;
    let masked = rng.choose(d, n_mask).expect("mask count never exceeds width");
    let u = rng.uniform_range(-1.0, 1.0);
    apply_view(x, policy.gaussian_sigma, &noise, &masked, policy.scale_jitter, u)
}

/// Two independent stochastic views `(x_q, x_k)` of `x`.
pub fn augment_pair(x: &[f64], policy: &AugmentPolicy, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let q = draw_view(x, policy, rng);
    let k = draw_view(x, policy, rng);
    (q, k)
}

fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { row, norm: n });
        }
    }
    Ok(())
}

/// InfoNCE loss of unit-norm queries against their positive keys and a set of
/// negative keys, with the exact gradient with respect to the queries.
///
/// Per row the logits are `[q·k⁺, q·k̃₁, …, q·k̃_K] / τ` and the loss is the
/// negative log-softmax of the first entry, averaged over the batch. Keys and
/// negatives are constants.
pub fn info_nce(q: &Matrix, k_pos: &Matrix, negatives: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    if q.shape() != k_pos.shape() || negatives.cols() != q.cols() {
        return Err(Error::Shape(format!(
            "queries {:?}, keys {:?}, negatives {:?}",
            q.shape(),
            k_pos.shape(),
            negatives.shape()
        )));
    }
    if negatives.rows() == 0 {
        return Err(Error::InsufficientData("no negative keys available".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    check_unit_rows(q)?;
    check_unit_rows(k_pos)?;

    let b = q.rows();
    let neg_logits = q.matmul_t(negatives)?;
    let mut grad = Matrix::zeros(b, q.cols());
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(negatives.rows() + 1);
    let coef = 1.0 / (tau * b as f64);
    for i in 0..b {
        logits.clear();
        let pos = dot(q.row(i), k_pos.row(i)) / tau;
        logits.push(pos);
        logits.extend(neg_logits.row(i).iter().map(|s| s / tau));
        total += softmax_nll_in_place(&mut logits, 0);
        // d loss_i / d q_i = ((p₀ − 1)·k⁺ + Σ pⱼ k̃ⱼ) / τ
        let g = grad.row_mut(i);
        for (gv, kv) in g.iter_mut().zip(k_pos.row(i)) {
            *gv = coef * (logits[0] - 1.0) * kv;
        }
        for (j, &p) in logits[1..].iter().enumerate() {
            crate::numeric::axpy(coef * p, negatives.row(j), g);
        }
    }
    Ok((total / b as f64, grad))
}

/// `θ_k ← m·θ_k + (1 − m)·θ_q` for every parameter.
pub fn ema_update(theta_k: &mut MlpParams, theta_q: &MlpParams, ema_momentum: f64) -> Result<()> {
    if !theta_k.same_shape(theta_q) {
        return Err(Error::Shape(format!(
            "key encoder {:?} vs query encoder {:?}",
            theta_k.layer_dims(),
            theta_q.layer_dims()
        )));
    }
    if !(0.0..=1.0).contains(&ema_momentum) {
        return Err(Error::Config(format!(
            "ema momentum must lie in [0, 1], got {ema_momentum}"
        )));
    }
    let keep = 1.0 - ema_momentum;
    for (k, q) in theta_k.blocks_mut().zip(theta_q.blocks()) {
        for (kv, qv) in k.iter_mut().zip(q) {
            *kv = ema_momentum * *kv + keep * qv;
        }
    }
    Ok(())
}

/// Query and key encoders plus the negative-key queue.
#[derive(Clone, Debug)]
pub struct MocoState {
    theta_q: MlpParams,
    theta_k: MlpParams,
    queue: Matrix,
    cursor: usize,
    filled: usize,
    tau: f64,
    ema_momentum: f64,
}

impl MocoState {
    /// Starts with the key encoder equal to the query encoder and an empty queue.
    pub fn new(theta_q: MlpParams, queue_size: usize, tau: f64, ema_momentum: f64) -> Result<Self> {
        if queue_size == 0 {
            return Err(Error::Config("queue size must be at least 1".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        if !(0.0..=1.0).contains(&ema_momentum) {
            return Err(Error::Config(format!(
                "ema momentum must lie in [0, 1], got {ema_momentum}"
            )));
        }
        let d = theta_q.output_dim();
        Ok(Self {
            theta_k: theta_q.clone(),
            theta_q,
            queue: Matrix::zeros(queue_size, d),
            cursor: 0,
            filled: 0,
            tau,
            ema_momentum,
        })
    }

    pub fn theta_q(&self) -> &MlpParams {
        &self.theta_q
    }

    pub fn theta_k(&self) -> &MlpParams {
        &self.theta_k
    }

    pub fn capacity(&self) -> usize {
        self.queue.rows()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn ema_momentum(&self) -> f64 {
        self.ema_momentum
    }

    /// The queue rows that hold keys. Slots are filled from the front, so
    /// these are always the first `filled` rows.
    pub fn negatives(&self) -> Matrix {
        let idx: Vec<usize> = (0..self.filled).collect();
        self.queue.select_rows(&idx)
    }

    /// Writes `keys` at the cursor, overwriting the oldest entries once full.
    pub fn enqueue(&mut self, keys: &Matrix) -> Result<()> {
        let cap = self.capacity();
        if keys.rows() > cap {
            return Err(Error::QueueOverflow {
                batch: keys.rows(),
                capacity: cap,
            });
        }
        if keys.cols() != self.queue.cols() {
            return Err(Error::Shape(format!(
                "keys of width {} for a queue of width {}",
                keys.cols(),
                self.queue.cols()
            )));
        }
        check_unit_rows(keys)?;
        for r in keys.iter_rows() {
            self.queue.row_mut(self.cursor).copy_from_slice(r);
            self.cursor = (self.cursor + 1) % cap;
        }
        self.filled = (self.filled + keys.rows()).min(cap);
        Ok(())
    }

    fn momentum_update(&mut self) -> Result<()> {
        ema_update(&mut self.theta_k, &self.theta_q, self.ema_momentum)
    }

    pub fn into_query_encoder(self) -> MlpParams {
        self.theta_q
    }
}

/// Self-supervised training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub batch_size: usize,
    pub queue_size: usize,
    pub tau: f64,
    pub ema_momentum: f64,
    pub epochs: usize,
    /// Learning-rate schedule; `total_steps` is filled in by the trainer.
    pub sgd: SgdConfig,
    /// `gaussian_sigma` is in units of the training data's overall standard deviation.
    pub policy: AugmentPolicy,
    pub hidden_dims: Vec<usize>,
    pub emb_dim: usize,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            queue_size: 256,
            tau: 0.07,
            ema_momentum: 0.5,
            epochs: 30,
            sgd: SgdConfig::default(),
            policy: AugmentPolicy::default(),
            hidden_dims: vec![128, 128],
            emb_dim: 128,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.queue_size == 0 {
            return Err(Error::Config("queue_size must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config("ema_momentum must lie in [0, 1]".into()));
        }
        if self.emb_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.policy.validate()?;
        SgdConfig {
            total_steps: 1,
            ..self.sgd
        }
        .validate()
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.emb_dim);
        dims
    }
}

#[derive(Clone, Debug)]
pub struct SslOutcome {
    /// The trained query encoder.
    pub encoder: MlpParams,
    pub trace: Vec<TracePoint>,
}

fn global_std(data: &Matrix) -> f64 {
    let v = data.as_slice();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Trains a query encoder on unlabeled rows of `data`.
///
/// Each epoch visits a fresh permutation in full batches; a trailing partial
/// batch is dropped. The very first batch only seeds the empty queue, since
/// there are no negatives to contrast against yet.
pub fn train_ssl(data: &Matrix, cfg: &SslConfig) -> Result<SslOutcome> {
    cfg.validate()?;
    let n = data.rows();
    if n < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{n} examples for a batch size of {}",
            cfg.batch_size
        )));
    }
    if cfg.batch_size > cfg.queue_size {
        return Err(Error::QueueOverflow {
            batch: cfg.batch_size,
            capacity: cfg.queue_size,
        });
    }
    let mut init_rng = RngStream::new(cfg.seed, STREAM_INIT);
    let theta_q = MlpParams::init(&cfg.layer_dims(data.cols()), &mut init_rng)?;
    if cfg.epochs == 0 {
        return Ok(SslOutcome {
            encoder: theta_q,
            trace: Vec::new(),
        });
    }

    let mut state = MocoState::new(theta_q, cfg.queue_size, cfg.tau, cfg.ema_momentum)?;
    let spread = global_std(data);
    let policy = cfg
        .policy
        .with_sigma_scaled(if spread > 0.0 { spread } else { 1.0 });
    let batches = n / cfg.batch_size;
    let sgd_cfg = SgdConfig {
        total_steps: cfg.epochs * batches,
        ..cfg.sgd
    };
    let mut sgd = Sgd::new(sgd_cfg, state.theta_q())?;
    let mut shuffle_rng = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut aug_rng = RngStream::new(cfg.seed, STREAM_AUGMENT);
    let mut trace = Vec::with_capacity(sgd_cfg.total_steps);
    let d = data.cols();

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffle_rng.permutation(n);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let mut xq = Vec::with_capacity(chunk.len() * d);
            let mut xk = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                let (a, b) = augment_pair(data.row(i), &policy, &mut aug_rng);
                xq.extend(a);
                xk.extend(b);
            }
            let xq = Matrix::from_vec(chunk.len(), d, xq)?;
            let xk = Matrix::from_vec(chunk.len(), d, xk)?;

            let keys = l2_normalize_rows(&encoder::predict(state.theta_k(), &xk)?);
            if state.filled() == 0 {
                state.enqueue(&keys)?;
                continue;
            }
            let (raw_q, cache) = encoder::forward(state.theta_q(), &xq)?;
            let q = l2_normalize_rows(&raw_q);
            let (loss, grad_q) = info_nce(&q, &keys, &state.negatives(), state.tau())?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            let grad_raw = l2_normalize_rows_backward(&raw_q, &grad_q)?;
            let grads = encoder::backward(state.theta_q(), &cache, &grad_raw)?;
            let lr = sgd.step(&mut state.theta_q, &grads)?;
            state.momentum_update()?;
            state.enqueue(&keys)?;
            trace.push(TracePoint { step, epoch, lr, loss });
            step += 1;
        }
    }
    Ok(SslOutcome {
        encoder: state.into_query_encoder(),
        trace,
    })
}
