//! Supervised baseline: cross-entropy training on labeled base classes, with
//! the classifier logits reused as the feature embedding.

use serde::{Deserialize, Serialize};

use crate::encoder::{self, MlpParams, Sgd, SgdConfig};
use crate::error::{Error, Result};
use crate::numeric::{softmax_nll_in_place, Matrix, RngStream};
use crate::trace::TracePoint;

const STREAM_INIT: u64 = 0x5u64 << 32 | 1;
const STREAM_SHUFFLE: u64 = 0x5u64 << 32 | 2;

/// Mean negative log-softmax of the true class, with its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows of logits", labels.len())));
    }
    if b == 0 {
        return Err(Error::EmptyReduction);
    }
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Shape(format!("label {y} out of range for {c} classes")));
        }
        let row = grad.row_mut(i);
        total += softmax_nll_in_place(row, y);
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g /= b as f64);
    }
    Ok((total / b as f64, grad))
}

/// Backbone plus a linear classification head over base classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SupModel {
    pub backbone: MlpParams,
    /// Single linear layer `emb_dim → num_classes`.
    pub head: MlpParams,
}

impl SupModel {
    pub fn new(backbone: MlpParams, head: MlpParams) -> Result<Self> {
        if head.num_layers() != 1 || head.input_dim() != backbone.output_dim() {
            return Err(Error::Shape(format!(
                "head {:?} does not fit backbone output width {}",
                head.layer_dims(),
                backbone.output_dim()
            )));
        }
        Ok(Self { backbone, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn logits(&self, data: &Matrix) -> Result<Matrix> {
        let emb = encoder::predict(&self.backbone, data)?;
        encoder::predict(&self.head, &emb)
    }

    /// Mean cross-entropy of the model on a batch and its gradients for
    /// backbone and head.
    pub fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, MlpParams, MlpParams)> {
        let (emb, bcache) = encoder::forward(&self.backbone, x)?;
        let (logits, hcache) = encoder::forward(&self.head, &emb)?;
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        let (head_grads, demb) = encoder::backward_with_input(&self.head, &hcache, &dlogits)?;
        let backbone_grads = encoder::backward(&self.backbone, &bcache, &demb)?;
        Ok((loss, backbone_grads, head_grads))
    }
}

/// Which layer of a supervised model serves as the embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayer {
    #[default]
    Logits,
    Penultimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `total_steps` is filled in by the trainer.
    pub sgd: SgdConfig,
    pub hidden_dims: Vec<usize>,
    pub emb_dim: usize,
    pub seed: u64,
}

impl Default for SupConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 20,
            sgd: SgdConfig::default(),
            hidden_dims: vec![128, 128],
            emb_dim: 128,
            seed: 0,
        }
    }
}

impl SupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.emb_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        SgdConfig {
            total_steps: 1,
            ..self.sgd
        }
        .validate()
    }
}

#[derive(Clone, Debug)]
pub struct SupOutcome {
    pub model: SupModel,
    /// Sorted original label of each output class.
    pub classes: Vec<u32>,
    pub trace: Vec<TracePoint>,
}

/// Dense class indices for arbitrary label values, in sorted label order.
pub fn index_labels(labels: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let idx = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    (classes, idx)
}

/// Mini-batch SGD on cross-entropy through head and backbone.
///
/// Batches cover a fresh permutation each epoch; the final partial batch is
/// kept so every example is seen.
pub fn train_supervised(data: &Matrix, labels: &[u32], cfg: &SupConfig) -> Result<SupOutcome> {
    cfg.validate()?;
    if labels.len() != data.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} examples",
            labels.len(),
            data.rows()
        )));
    }
    let (classes, y) = index_labels(labels);
    if classes.len() < 2 {
        return Err(Error::DegenerateSupervision);
    }
    let mut dims = vec![data.cols()];
    dims.extend(&cfg.hidden_dims);
    dims.push(cfg.emb_dim);
    let mut init_rng = RngStream::new(cfg.seed, STREAM_INIT);
    let backbone = MlpParams::init(&dims, &mut init_rng)?;
    let head = MlpParams::init(&[cfg.emb_dim, classes.len()], &mut init_rng)?;
    let mut model = SupModel::new(backbone, head)?;
    if cfg.epochs == 0 {
        return Ok(SupOutcome {
            model,
            classes,
            trace: Vec::new(),
        });
    }

    let n = data.rows();
    let batches = n.div_ceil(cfg.batch_size);
    let sgd_cfg = SgdConfig {
        total_steps: cfg.epochs * batches,
        ..cfg.sgd
    };
    let mut backbone_sgd = Sgd::new(sgd_cfg, &model.backbone)?;
    let mut head_sgd = Sgd::new(sgd_cfg, &model.head)?;
    let mut shuffle_rng = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut trace = Vec::with_capacity(sgd_cfg.total_steps);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffle_rng.permutation(n);
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, gb, gh) = model.loss_and_grads(&x, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            let lr = backbone_sgd.step(&mut model.backbone, &gb)?;
            head_sgd.step(&mut model.head, &gh)?;
            trace.push(TracePoint { step, epoch, lr, loss });
            step += 1;
        }
    }
    Ok(SupOutcome {
        model,
        classes,
        trace,
    })
}

/// Features from a supervised model: the pre-softmax logits by default, or the
/// backbone output.
pub fn extract_logit_features(model: &SupModel, data: &Matrix, layer: FeatureLayer) -> Result<Matrix> {
    match layer {
        FeatureLayer::Logits => model.logits(data),
        FeatureLayer::Penultimate => encoder::predict(&model.backbone, data),
    }
}

/// Features from a self-supervised encoder: its final-layer output.
pub fn extract_ssl_features(params: &MlpParams, data: &Matrix) -> Result<Matrix> {
    encoder::predict(params, data)
}

/// Fraction of rows whose argmax logit is the true class.
pub fn training_accuracy(model: &SupModel, data: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = model.logits(data)?;
    let correct = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| crate::eval::argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}
