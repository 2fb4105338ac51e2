//! Datasets, the four training settings, the synthetic generator and
//! class-balanced subsampling.
//!
//! | setting  | base examples     | novel examples             |
//! |----------|-------------------|----------------------------|
//! | FSL      | labeled           | none                       |
//! | TFSL     | labeled           | budgeted, unlabeled        |
//! | UBC-FSL  | unlabeled         | none                       |
//! | UBC-TFSL | unlabeled         | budgeted, unlabeled        |
//!
//! Validation examples never enter a training view.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_features, read_meta, save_dataset, write_features, FEATURE_MAGIC, FEATURE_VERSION};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

const STREAM_SYNTH: u64 = 0xD47A_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Val,
    Novel,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Val => "val",
            Split::Novel => "novel",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Split::Base),
            "val" => Ok(Split::Val),
            "novel" => Ok(Split::Novel),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// Feature rows with class labels and split tags. No class id appears under
/// two split tags, so base and novel classes are disjoint by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    features: Matrix,
    labels: Vec<u32>,
    split: Vec<Split>,
}

impl DatasetTable {
    pub fn new(features: Matrix, labels: Vec<u32>, split: Vec<Split>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || split.len() != n {
            return Err(Error::Format(format!(
                "{n} feature rows, {} labels, {} split tags",
                labels.len(),
                split.len()
            )));
        }
        let mut owner: BTreeMap<u32, Split> = BTreeMap::new();
        for (&l, &s) in labels.iter().zip(&split) {
            match owner.insert(l, s) {
                Some(prev) if prev != s => {
                    return Err(Error::Format(format!(
                        "class {l} appears under both {prev} and {s}"
                    )))
                }
                _ => {}
            }
        }
        if !features.is_finite() {
            return Err(Error::Format("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Same labels and splits with different features (e.g. embeddings).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(Error::Format(format!(
                "{} feature rows for a table of {}",
                features.rows(),
                self.len()
            )));
        }
        Self::new(features, self.labels.clone(), self.split.clone())
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Example indices of every class in `split`, keyed by class id.
    pub fn class_index(&self, split: Split) -> BTreeMap<u32, Vec<usize>> {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            if self.split[i] == split {
                m.entry(self.labels[i]).or_default().push(i);
            }
        }
        m
    }

    /// Example indices of every class, keyed by class id.
    pub fn all_classes(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            m.entry(l).or_default().push(i);
        }
        m
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.split.iter().filter(|&&x| x == s).count();
        (count(Split::Base), count(Split::Val), count(Split::Novel))
    }

    /// Rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: idx.iter().map(|&i| self.split[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingKind {
    Fsl,
    Tfsl,
    UbcFsl,
    UbcTfsl,
}

impl SettingKind {
    pub fn uses_labels(self) -> bool {
        matches!(self, SettingKind::Fsl | SettingKind::Tfsl)
    }

    pub fn uses_novel(self) -> bool {
        matches!(self, SettingKind::Tfsl | SettingKind::UbcTfsl)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SettingKind::Fsl => "fsl",
            SettingKind::Tfsl => "tfsl",
            SettingKind::UbcFsl => "ubc-fsl",
            SettingKind::UbcTfsl => "ubc-tfsl",
        }
    }
}

impl FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fsl" => Ok(SettingKind::Fsl),
            "tfsl" => Ok(SettingKind::Tfsl),
            "ubc-fsl" => Ok(SettingKind::UbcFsl),
            "ubc-tfsl" => Ok(SettingKind::UbcTfsl),
            _ => Err(Error::Config(format!(
                "unknown setting {s:?}; expected fsl, tfsl, ubc-fsl or ubc-tfsl"
            ))),
        }
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How many unlabeled examples of each novel class a transductive setting sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Budget {
    PerClass(usize),
    All,
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Budget::All);
        }
        s.parse()
            .map(Budget::PerClass)
            .map_err(|_| Error::Config(format!("budget must be a count or \"all\", got {s:?}")))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::PerClass(n) => write!(f, "{n}"),
            Budget::All => f.write_str("all"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SettingSpec {
    pub kind: SettingKind,
    pub novel_unlabeled_budget: Budget,
}

impl SettingSpec {
    /// TFSL defaults to 100 unlabeled examples per novel class, UBC-TFSL to all of them.
    pub fn new(kind: SettingKind) -> Self {
        let novel_unlabeled_budget = match kind {
            SettingKind::Tfsl => Budget::PerClass(100),
            _ => Budget::All,
        };
        Self {
            kind,
            novel_unlabeled_budget,
        }
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.novel_unlabeled_budget = budget;
        self
    }
}

/// Rows of a table that a trainer may see. The first `labeled_len` indices
/// come with labels; the rest are unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingView {
    pub indices: Vec<usize>,
    pub labeled_len: usize,
}

impl TrainingView {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labels_present(&self) -> bool {
        self.labeled_len > 0
    }

    pub fn labeled(&self) -> &[usize] {
        &self.indices[..self.labeled_len]
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.indices[self.labeled_len..]
    }

    /// Feature rows of the whole view, labeled part first.
    pub fn features(&self, table: &DatasetTable) -> Matrix {
        table.features().select_rows(&self.indices)
    }
}

/// Selects the training rows of a setting. Only budgeted novel selection
/// draws from `rng`.
pub fn build_setting(table: &DatasetTable, spec: SettingSpec, rng: &mut RngStream) -> Result<TrainingView> {
    let base = table.indices_of(Split::Base);
    let mut indices = base.clone();
    if spec.kind.uses_novel() {
        match spec.novel_unlabeled_budget {
            Budget::All => indices.extend(table.indices_of(Split::Novel)),
            Budget::PerClass(k) => {
                let mut chosen = Vec::new();
                for (class, members) in table.class_index(Split::Novel) {
                    if members.len() < k {
                        return Err(Error::InsufficientData(format!(
                            "novel class {class} has {} examples, budget asks for {k}",
                            members.len()
                        )));
                    }
                    chosen.extend(rng.choose_from(&members, k)?);
                }
                chosen.sort_unstable();
                indices.extend(chosen);
            }
        }
    }
    let labeled_len = if spec.kind.uses_labels() { base.len() } else { 0 };
    Ok(TrainingView {
        indices,
        labeled_len,
    })
}

/// Shape of a synthetic benchmark whose novel classes vary along directions
/// the base classes never use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub base_classes: usize,
    pub val_classes: usize,
    pub novel_classes: usize,
    pub per_class: usize,
    pub ambient_dim: usize,
    pub base_subspace_dim: usize,
    pub novel_subspace_dim: usize,
    /// Scale of the class means.
    pub spread: f64,
    /// Within-class noise inside the class's own subspace.
    pub sigma_c: f64,
    /// Isotropic noise over all coordinates.
    pub sigma_n: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_classes: 64,
            val_classes: 16,
            novel_classes: 20,
            per_class: 50,
            ambient_dim: 64,
            base_subspace_dim: 24,
            novel_subspace_dim: 24,
            spread: 3.0,
            sigma_c: 0.5,
            sigma_n: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_subspace_dim + self.novel_subspace_dim > self.ambient_dim {
            return Err(Error::Config(format!(
                "subspaces of {} + {} dims do not fit in {} ambient dims",
                self.base_subspace_dim, self.novel_subspace_dim, self.ambient_dim
            )));
        }
        if self.per_class < 2 {
            return Err(Error::Config("per_class must be at least 2".into()));
        }
        if self.base_subspace_dim == 0 || self.novel_subspace_dim == 0 {
            return Err(Error::Config("subspace dims must be positive".into()));
        }
        for (name, v) in [("spread", self.spread), ("sigma_c", self.sigma_c), ("sigma_n", self.sigma_n)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Gaussian clusters: base and validation class means live in the first
/// `base_subspace_dim` coordinates, novel class means in the next
/// `novel_subspace_dim`. Each example is its class mean plus `sigma_c` noise
/// inside the class subspace plus `sigma_n` noise everywhere.
///
/// Class ids run base, then validation, then novel; rows are grouped by class.
pub fn synth_generate(cfg: &SynthConfig) -> Result<DatasetTable> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, STREAM_SYNTH);
    let groups = [
        (Split::Base, cfg.base_classes, 0..cfg.base_subspace_dim),
        (Split::Val, cfg.val_classes, 0..cfg.base_subspace_dim),
        (
            Split::Novel,
            cfg.novel_classes,
            cfg.base_subspace_dim..cfg.base_subspace_dim + cfg.novel_subspace_dim,
        ),
    ];
    let total = (cfg.base_classes + cfg.val_classes + cfg.novel_classes) * cfg.per_class;
    let d = cfg.ambient_dim;
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    let mut split = Vec::with_capacity(total);
    let mut class_id = 0u32;
    for (tag, count, dims) in groups {
        for _ in 0..count {
            let mut mean = vec![0.0; d];
            for j in dims.clone() {
                mean[j] = cfg.spread * rng.gaussian();
            }
            for _ in 0..cfg.per_class {
                let mut x = mean.clone();
                for j in dims.clone() {
                    x[j] += cfg.sigma_c * rng.gaussian();
                }
                for v in x.iter_mut() {
                    *v += cfg.sigma_n * rng.gaussian();
                }
                data.extend(x);
                labels.push(class_id);
                split.push(tag);
            }
            class_id += 1;
        }
    }
    DatasetTable::new(Matrix::from_vec(total, d, data)?, labels, split)
}

/// Keeps `⌊fraction·n_c⌋` examples of every class, drawn without replacement.
/// Surviving rows keep their original relative order.
pub fn subsample(table: &DatasetTable, fraction: f64, rng: &mut RngStream) -> Result<DatasetTable> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut keep = Vec::new();
    for (class, members) in table.all_classes() {
        let k = (fraction * members.len() as f64).floor() as usize;
        if k == 0 {
            return Err(Error::InsufficientData(format!(
                "fraction {fraction} keeps no examples of class {class} ({} examples)",
                members.len()
            )));
        }
        keep.extend(rng.choose_from(&members, k)?);
    }
    keep.sort_unstable();
    Ok(table.select(&keep))
}
