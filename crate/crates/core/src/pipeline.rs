//! Setting → trainer → features, the chain shared by the CLI, the Python
//! bindings and the benchmark tests.

use crate::checkpoint::{Checkpoint, Model};
use crate::config::RunConfig;
use crate::contrastive::{train_ssl, SslConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fuse_features, EpisodeSpec, EvalReport};
use crate::numeric::{Matrix, RngStream};
use crate::protocol::{build_setting, DatasetTable, SettingKind, SettingSpec, TrainingView};
use crate::supervised::{extract_logit_features, extract_ssl_features, train_supervised, FeatureLayer, SupConfig};
use crate::trace::TracePoint;

const STREAM_SETTING: u64 = 0x5E77_0001;

pub const TFSL_REJECTED: &str = "no TFSL training algorithm ships with this lab; \
     transductive methods with labeled base classes are out of scope. \
     Use fsl, ubc-fsl or ubc-tfsl";

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub trace: Vec<TracePoint>,
}

/// Builds the training view of a setting; budgeted selection uses `cfg.seed`.
pub fn setting_view(table: &DatasetTable, kind: SettingKind, cfg: &RunConfig) -> Result<TrainingView> {
    let mut spec = SettingSpec::new(kind);
    if let Some(b) = cfg.budget {
        spec = spec.with_budget(b);
    }
    build_setting(table, spec, &mut RngStream::new(cfg.seed, STREAM_SETTING))
}

/// Trains the model a setting calls for. Supervised settings read labels of
/// the labeled part only; unlabeled settings never touch the label column.
pub fn train_setting(table: &DatasetTable, kind: SettingKind, cfg: &RunConfig) -> Result<Trained> {
    if kind == SettingKind::Tfsl {
        return Err(Error::Config(TFSL_REJECTED.into()));
    }
    let view = setting_view(table, kind, cfg)?;
    if view.labels_present() {
        let x = table.features().select_rows(view.labeled());
        let y: Vec<u32> = view.labeled().iter().map(|&i| table.labels()[i]).collect();
        train_sup_features(&x, &y, &cfg.sup)
    } else {
        train_ssl_features(&view.features(table), &cfg.ssl)
    }
}

pub fn train_sup_features(x: &Matrix, y: &[u32], cfg: &SupConfig) -> Result<Trained> {
    let out = train_supervised(x, y, cfg)?;
    Ok(Trained {
        model: Model::Sup(out.model),
        trace: out.trace,
    })
}

pub fn train_ssl_features(x: &Matrix, cfg: &SslConfig) -> Result<Trained> {
    let out = train_ssl(x, cfg)?;
    Ok(Trained {
        model: Model::Ssl(out.encoder),
        trace: out.trace,
    })
}

pub fn embed(model: &Model, features: &Matrix, layer: FeatureLayer) -> Result<Matrix> {
    if features.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} input features, data has {}",
            model.input_dim(),
            features.cols()
        )));
    }
    match model {
        Model::Ssl(p) => extract_ssl_features(p, features),
        Model::Sup(m) => extract_logit_features(m, features, layer),
    }
}

/// Checkpoint carrying the full resolved config as metadata.
pub fn checkpoint(trained: &Trained, kind: SettingKind, cfg: &RunConfig) -> Checkpoint {
    let mut meta = vec![("setting".to_string(), kind.as_str().to_string())];
    meta.extend(cfg.to_pairs());
    Checkpoint {
        model: trained.model.clone(),
        meta,
    }
}

/// Features of one benchmark seed, row-aligned with the table.
#[derive(Clone, Debug)]
pub struct SeedFeatures {
    pub fsl: Matrix,
    pub ubc_fsl: Matrix,
    pub ubc_tfsl: Matrix,
    pub combined: Matrix,
}

impl SeedFeatures {
    pub fn named(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("fsl", &self.fsl),
            ("ubc-fsl", &self.ubc_fsl),
            ("ubc-tfsl", &self.ubc_tfsl),
            ("combined", &self.combined),
        ]
    }
}

/// Generates the synthetic table for `cfg.seed` and trains all three settings.
/// Combined fuses the FSL and UBC-TFSL features.
pub fn benchmark_features(cfg: &RunConfig) -> Result<(DatasetTable, SeedFeatures)> {
    let cfg = cfg.resolved();
    let table = crate::protocol::synth_generate(&cfg.synth)?;
    let mut feats = Vec::new();
    for kind in [SettingKind::Fsl, SettingKind::UbcFsl, SettingKind::UbcTfsl] {
        let t = train_setting(&table, kind, &cfg)?;
        feats.push(embed(&t.model, table.features(), cfg.feature_layer)?);
    }
    let ubc_tfsl = feats.pop().unwrap();
    let ubc_fsl = feats.pop().unwrap();
    let fsl = feats.pop().unwrap();
    let combined = fuse_features(&fsl, &ubc_tfsl)?;
    Ok((
        table,
        SeedFeatures {
            fsl,
            ubc_fsl,
            ubc_tfsl,
            combined,
        },
    ))
}

/// Evaluates `features` at every shot count, sharing all other episode settings.
pub fn shot_curve(
    features: &Matrix,
    table: &DatasetTable,
    base: &EpisodeSpec,
    shots: &[usize],
    cfg: &RunConfig,
) -> Result<Vec<EvalReport>> {
    shots
        .iter()
        .map(|&m| {
            let spec = EpisodeSpec { shots: m, ..*base };
            evaluate(features, table, &spec, &cfg.probe, cfg.normalize)
        })
        .collect()
}
