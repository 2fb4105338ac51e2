//! Flat `key = value` run configuration.
//!
//! Every trainer and evaluation default is addressable by a dotted key
//! (`ssl.tau`, `eval.shots`, ...). Blank lines and `#` comments are ignored,
//! unknown keys are rejected, and later assignments override earlier ones.

use std::path::Path;

use crate::contrastive::SslConfig;
use crate::error::{Error, Result};
use crate::eval::{EpisodeSpec, ProbeConfig};
use crate::protocol::{Budget, SynthConfig};
use crate::supervised::{FeatureLayer, SupConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub ssl: SslConfig,
    pub sup: SupConfig,
    pub feature_layer: FeatureLayer,
    pub budget: Option<Budget>,
    pub episodes: EpisodeSpec,
    pub probe: ProbeConfig,
    pub normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            ssl: SslConfig::default(),
            sup: SupConfig::default(),
            feature_layer: FeatureLayer::Logits,
            budget: None,
            episodes: EpisodeSpec::default(),
            probe: ProbeConfig::default(),
            normalize: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join_dims(d: &[usize]) -> String {
    d.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_assignment(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` string.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,

            "synth.base_classes" => self.synth.base_classes = parse(key, v)?,
            "synth.val_classes" => self.synth.val_classes = parse(key, v)?,
            "synth.novel_classes" => self.synth.novel_classes = parse(key, v)?,
            "synth.per_class" => self.synth.per_class = parse(key, v)?,
            "synth.ambient_dim" => self.synth.ambient_dim = parse(key, v)?,
            "synth.base_subspace_dim" => self.synth.base_subspace_dim = parse(key, v)?,
            "synth.novel_subspace_dim" => self.synth.novel_subspace_dim = parse(key, v)?,
            "synth.spread" => self.synth.spread = parse(key, v)?,
            "synth.sigma_c" => self.synth.sigma_c = parse(key, v)?,
            "synth.sigma_n" => self.synth.sigma_n = parse(key, v)?,

            "ssl.batch_size" => self.ssl.batch_size = parse(key, v)?,
            "ssl.queue_size" => self.ssl.queue_size = parse(key, v)?,
            "ssl.tau" => self.ssl.tau = parse(key, v)?,
            "ssl.ema_momentum" => self.ssl.ema_momentum = parse(key, v)?,
            "ssl.epochs" => self.ssl.epochs = parse(key, v)?,
            "ssl.lr" => self.ssl.sgd.base_lr = parse(key, v)?,
            "ssl.weight_decay" => self.ssl.sgd.weight_decay = parse(key, v)?,
            "ssl.momentum" => self.ssl.sgd.momentum = parse(key, v)?,
            "ssl.aug_sigma" => self.ssl.policy.gaussian_sigma = parse(key, v)?,
            "ssl.aug_mask" => self.ssl.policy.mask_fraction = parse(key, v)?,
            "ssl.aug_jitter" => self.ssl.policy.scale_jitter = parse(key, v)?,
            "ssl.hidden_dims" => self.ssl.hidden_dims = parse_dims(key, v)?,
            "ssl.emb_dim" => self.ssl.emb_dim = parse(key, v)?,

            "sup.batch_size" => self.sup.batch_size = parse(key, v)?,
            "sup.epochs" => self.sup.epochs = parse(key, v)?,
            "sup.lr" => self.sup.sgd.base_lr = parse(key, v)?,
            "sup.weight_decay" => self.sup.sgd.weight_decay = parse(key, v)?,
            "sup.momentum" => self.sup.sgd.momentum = parse(key, v)?,
            "sup.hidden_dims" => self.sup.hidden_dims = parse_dims(key, v)?,
            "sup.emb_dim" => self.sup.emb_dim = parse(key, v)?,
            "sup.feature_layer" => {
                self.feature_layer = match v {
                    "logits" => FeatureLayer::Logits,
                    "penultimate" => FeatureLayer::Penultimate,
                    _ => return Err(Error::Config(format!("{key}: expected logits or penultimate"))),
                }
            }

            "setting.budget" => self.budget = Some(v.parse()?),

            "eval.ways" => self.episodes.ways = parse(key, v)?,
            "eval.shots" => self.episodes.shots = parse(key, v)?,
            "eval.queries" => self.episodes.queries = parse(key, v)?,
            "eval.episodes" => self.episodes.episodes = parse(key, v)?,
            "eval.l2_lambda" => self.probe.l2_lambda = parse(key, v)?,
            "eval.max_iters" => self.probe.max_iters = parse(key, v)?,
            "eval.step_size" => self.probe.step_size = parse(key, v)?,
            "eval.grad_tolerance" => self.probe.grad_tolerance = parse(key, v)?,
            "eval.normalize" => self.normalize = parse_bool(key, v)?,

            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Propagates the run seed into every component that draws randomness.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.ssl.seed = seed;
        self.sup.seed = seed;
        self.episodes.master_seed = seed;
        self
    }

    pub fn resolved(&self) -> Self {
        self.clone().with_seed(self.seed)
    }

    /// Every key with its resolved value, in a stable order. Feeding the
    /// output back through [`RunConfig::apply_text`] reproduces the config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        let ssl = &self.ssl;
        let sup = &self.sup;
        let e = &self.episodes;
        let p = &self.probe;
        let mut v: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("synth.base_classes", s.base_classes.to_string()),
            ("synth.val_classes", s.val_classes.to_string()),
            ("synth.novel_classes", s.novel_classes.to_string()),
            ("synth.per_class", s.per_class.to_string()),
            ("synth.ambient_dim", s.ambient_dim.to_string()),
            ("synth.base_subspace_dim", s.base_subspace_dim.to_string()),
            ("synth.novel_subspace_dim", s.novel_subspace_dim.to_string()),
            ("synth.spread", s.spread.to_string()),
            ("synth.sigma_c", s.sigma_c.to_string()),
            ("synth.sigma_n", s.sigma_n.to_string()),
            ("ssl.batch_size", ssl.batch_size.to_string()),
            ("ssl.queue_size", ssl.queue_size.to_string()),
            ("ssl.tau", ssl.tau.to_string()),
            ("ssl.ema_momentum", ssl.ema_momentum.to_string()),
            ("ssl.epochs", ssl.epochs.to_string()),
            ("ssl.lr", ssl.sgd.base_lr.to_string()),
            ("ssl.weight_decay", ssl.sgd.weight_decay.to_string()),
            ("ssl.momentum", ssl.sgd.momentum.to_string()),
            ("ssl.aug_sigma", ssl.policy.gaussian_sigma.to_string()),
            ("ssl.aug_mask", ssl.policy.mask_fraction.to_string()),
            ("ssl.aug_jitter", ssl.policy.scale_jitter.to_string()),
            ("ssl.hidden_dims", join_dims(&ssl.hidden_dims)),
            ("ssl.emb_dim", ssl.emb_dim.to_string()),
            ("sup.batch_size", sup.batch_size.to_string()),
            ("sup.epochs", sup.epochs.to_string()),
            ("sup.lr", sup.sgd.base_lr.to_string()),
            ("sup.weight_decay", sup.sgd.weight_decay.to_string()),
            ("sup.momentum", sup.sgd.momentum.to_string()),
            ("sup.hidden_dims", join_dims(&sup.hidden_dims)),
            ("sup.emb_dim", sup.emb_dim.to_string()),
            (
                "sup.feature_layer",
                match self.feature_layer {
                    FeatureLayer::Logits => "logits".into(),
                    FeatureLayer::Penultimate => "penultimate".into(),
                },
            ),
        ];
        if let Some(b) = self.budget {
            v.push(("setting.budget", b.to_string()));
        }
        v.extend([
            ("eval.ways", e.ways.to_string()),
            ("eval.shots", e.shots.to_string()),
            ("eval.queries", e.queries.to_string()),
            ("eval.episodes", e.episodes.to_string()),
            ("eval.l2_lambda", p.l2_lambda.to_string()),
            ("eval.max_iters", p.max_iters.to_string()),
            ("eval.step_size", p.step_size.to_string()),
            ("eval.grad_tolerance", p.grad_tolerance.to_string()),
            ("eval.normalize", self.normalize.to_string()),
        ]);
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
