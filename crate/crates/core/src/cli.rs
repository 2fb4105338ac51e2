//! `fslab` command line.
//!
//! A dataset is addressed by a path prefix: `PREFIX.meta.csv` holds the
//! `id,label,split` table and `PREFIX.fslf` the feature matrix.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, fuse_features, EvalReport};
use crate::pipeline;
use crate::protocol::{load_dataset, read_features, read_meta, save_dataset, write_features};
use crate::protocol::{synth_generate, DatasetTable, SettingKind};
use crate::supervised::FeatureLayer;
use crate::trace::write_trace_csv;

#[derive(Parser, Debug)]
#[command(name = "fslab", version, about = "Few-shot learning lab on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` override, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for a in &self.set {
            cfg.apply_assignment(a)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic base/val/novel dataset
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output prefix
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model under a data setting
    Train {
        /// Dataset prefix
        #[arg(long)]
        data: PathBuf,
        /// fsl, tfsl, ubc-fsl or ubc-tfsl
        #[arg(long)]
        setting: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model checkpoint path
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features of every dataset row with a trained model
    Embed {
        #[arg(long)]
        model: PathBuf,
        /// Dataset prefix
        #[arg(long)]
        data: PathBuf,
        /// logits or penultimate; supervised models only
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate two normalized feature files and renormalize
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Episodic linear-probe evaluation of a feature file
    Eval {
        #[command(flatten)]
        ep: EvalArgs,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Evaluate the same features at several shot counts
    Curve {
        #[command(flatten)]
        ep: EvalArgs,
        /// Comma-separated shot counts
        #[arg(long, value_delimiter = ',', required = true)]
        shots_list: Vec<usize>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    /// Metadata CSV row-aligned with the features
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// JSON report path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    fn load(&self, shots: Option<usize>) -> Result<RunConfig> {
        let mut cfg = self.cfg.load()?.resolved();
        let e = &mut cfg.episodes;
        e.ways = self.ways.unwrap_or(e.ways);
        e.queries = self.queries.unwrap_or(e.queries);
        e.episodes = self.episodes.unwrap_or(e.episodes);
        e.shots = shots.unwrap_or(e.shots);
        e.validate()?;
        Ok(cfg)
    }

    fn table(&self) -> Result<(DatasetTable, crate::numeric::Matrix)> {
        let features = read_features(&self.features)?;
        let (labels, split) = read_meta(&self.meta)?;
        if labels.len() != features.rows() {
            return Err(Error::Format(format!(
                "row-count mismatch: {} metadata rows, {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let table = DatasetTable::new(features.clone(), labels, split)?;
        Ok((table, features))
    }
}

pub fn meta_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".meta.csv")
}

pub fn features_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".fslf")
}

/// `path` with `suffix` appended to its final component.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_config_echo(path: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(path, cfg.to_text()).map_err(Error::at(path))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: std::collections::BTreeMap<String, String>,
    summary: String,
    #[serde(flatten)]
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct CurveFile<'a> {
    config: std::collections::BTreeMap<String, String>,
    reports: Vec<ReportFile<'a>>,
}

fn report_file<'a>(cfg: &RunConfig, report: &'a EvalReport) -> ReportFile<'a> {
    ReportFile {
        config: cfg.to_pairs().into_iter().collect(),
        summary: report.summary(),
        report,
    }
}

fn run_eval(ep: &EvalArgs, shots_list: &[usize]) -> Result<Vec<EvalReport>> {
    let (table, features) = ep.table()?;
    let mut reports = Vec::new();
    for &m in shots_list {
        let cfg = ep.load(Some(m))?;
        let mut r = evaluate(&features, &table, &cfg.episodes, &cfg.probe, cfg.normalize)?;
        r.feature_file = Some(ep.features.display().to_string());
        reports.push(r);
    }
    Ok(reports)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out: prefix } => {
            let cfg = cfg.load()?.resolved();
            let table = synth_generate(&cfg.synth)?;
            save_dataset(&table, &meta_path(&prefix), &features_path(&prefix))?;
            write_config_echo(&with_suffix(&prefix, ".config.txt"), &cfg)?;
            let (b, v, n) = table.split_counts();
            writeln!(out, "wrote {} rows (base {b}, val {v}, novel {n})", table.len())?;
        }
        Command::Train {
            data,
            setting,
            cfg,
            out: model_path,
        } => {
            let kind: SettingKind = setting.parse()?;
            let cfg = cfg.load()?.resolved();
            if kind == SettingKind::Tfsl {
                return Err(Error::Config(pipeline::TFSL_REJECTED.into()));
            }
            let table = load_dataset(&meta_path(&data), &features_path(&data))?;
            let trained = pipeline::train_setting(&table, kind, &cfg)?;
            checkpoint::save(&model_path, &pipeline::checkpoint(&trained, kind, &cfg))?;
            write_trace_csv(&with_suffix(&model_path, ".loss.csv"), &trained.trace)?;
            write_config_echo(&with_suffix(&model_path, ".config.txt"), &cfg)?;
            let last = trained.trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
            writeln!(
                out,
                "trained {} model ({}) in {} steps, final loss {last:.4}",
                trained.model.kind(),
                kind.as_str(),
                trained.trace.len()
            )?;
        }
        Command::Embed {
            model,
            data,
            layer,
            out: feat_path,
        } => {
            let ck = checkpoint::load(&model)?;
            let layer = match layer.as_deref().or(ck.meta_value("sup.feature_layer")) {
                None | Some("logits") => FeatureLayer::Logits,
                Some("penultimate") => FeatureLayer::Penultimate,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "unknown feature layer {other:?}, expected logits or penultimate"
                    )))
                }
            };
            let features = read_features(&features_path(&data))?;
            let emb = pipeline::embed(&ck.model, &features, layer)?;
            write_features(&feat_path, &emb)?;
            writeln!(out, "wrote {} x {} features", emb.rows(), emb.cols())?;
        }
        Command::Fuse { a, b, out: path } => {
            let fused = fuse_features(&read_features(&a)?, &read_features(&b)?)?;
            write_features(&path, &fused)?;
            writeln!(out, "wrote {} x {} features", fused.rows(), fused.cols())?;
        }
        Command::Eval { ep, shots } => {
            let cfg = ep.load(shots)?;
            let reports = run_eval(&ep, &[cfg.episodes.shots])?;
            let r = &reports[0];
            if let Some(p) = &ep.out {
                std::fs::write(p, serde_json::to_string_pretty(&report_file(&cfg, r))?).map_err(Error::at(p))?;
            }
            writeln!(
                out,
                "{}-way {}-shot over {} episodes: {}",
                r.ways,
                r.shots,
                r.episodes,
                r.summary()
            )?;
        }
        Command::Curve { ep, shots_list } => {
            let cfg = ep.load(None)?;
            let reports = run_eval(&ep, &shots_list)?;
            if let Some(p) = &ep.out {
                let file = CurveFile {
                    config: cfg.to_pairs().into_iter().collect(),
                    reports: reports
                        .iter()
                        .zip(&shots_list)
                        .map(|(r, &m)| {
                            let mut c = cfg.clone();
                            c.episodes.shots = m;
                            report_file(&c, r)
                        })
                        .collect(),
                };
                std::fs::write(p, serde_json::to_string_pretty(&file)?).map_err(Error::at(p))?;
            }
            for r in &reports {
                writeln!(out, "{}-way {}-shot: {}", r.ways, r.shots, r.summary())?;
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
