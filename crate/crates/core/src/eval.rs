//! Episodic evaluation of frozen features.
//!
//! Every episode draws `ways` novel classes, `shots` support and `queries`
//! query examples per class, fits a multinomial logistic-regression probe on
//! the support features and scores it on the queries. Episode `e` depends only
//! on `(master_seed, e)`, so episodes can run in any order or in parallel.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, l2_normalize_rows, softmax_nll_in_place, Matrix, RngStream};
use crate::protocol::{DatasetTable, Split};

const EPISODE_STREAM: u64 = 0xE915_0DE0 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes: usize,
    pub master_seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 1,
            queries: 15,
            episodes: 1000,
            master_seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::Config("ways must be at least 2".into()));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// One N-way task. Labels are episode-local, `0..ways`, in the order the
/// classes were drawn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<u32>,
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

/// Novel-class membership of a table, the population episodes draw from.
#[derive(Clone, Debug)]
pub struct NovelPool {
    classes: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl NovelPool {
    pub fn from_table(table: &DatasetTable) -> Self {
        Self::from_class_index(table.class_index(Split::Novel))
    }

    pub fn from_class_index(index: BTreeMap<u32, Vec<usize>>) -> Self {
        let (classes, members) = index.into_iter().unzip();
        Self { classes, members }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn check(&self, spec: &EpisodeSpec) -> Result<()> {
        spec.validate()?;
        if self.classes.len() < spec.ways {
            return Err(Error::InsufficientData(format!(
                "{} novel classes for a {}-way episode",
                self.classes.len(),
                spec.ways
            )));
        }
        let need = spec.shots + spec.queries;
        if let Some((c, m)) = self
            .classes
            .iter()
            .zip(&self.members)
            .find(|(_, m)| m.len() < need)
        {
            return Err(Error::InsufficientData(format!(
                "novel class {c} has {} examples, an episode needs {need}",
                m.len()
            )));
        }
        Ok(())
    }
}

pub fn sample_episode(pool: &NovelPool, spec: &EpisodeSpec, episode_index: usize) -> Result<Episode> {
    pool.check(spec)?;
    let mut rng = RngStream::new(spec.master_seed, EPISODE_STREAM | episode_index as u64);
    let picked = rng.choose(pool.classes.len(), spec.ways)?;
    let mut ep = Episode {
        classes: Vec::with_capacity(spec.ways),
        support: Vec::with_capacity(spec.ways * spec.shots),
        support_labels: Vec::with_capacity(spec.ways * spec.shots),
        query: Vec::with_capacity(spec.ways * spec.queries),
        query_labels: Vec::with_capacity(spec.ways * spec.queries),
    };
    for (local, &c) in picked.iter().enumerate() {
        ep.classes.push(pool.classes[c]);
        let drawn = rng.choose_from(&pool.members[c], spec.shots + spec.queries)?;
        let (s, q) = drawn.split_at(spec.shots);
        ep.support.extend_from_slice(s);
        ep.support_labels.extend(std::iter::repeat_n(local, s.len()));
        ep.query.extend_from_slice(q);
        ep.query_labels.extend(std::iter::repeat_n(local, q.len()));
    }
    Ok(ep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            max_iters: 500,
            step_size: 1.0,
            grad_tolerance: 1e-6,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Config("l2_lambda must be non-negative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !(self.grad_tolerance > 0.0) {
            return Err(Error::Config("step_size and grad_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Linear classifier `argmax(W·x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    /// Objective after initialization and after every accepted step.
    pub loss_trace: Vec<f64>,
}

impl Probe {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(classes, dim),
            biases: vec![0.0; classes],
            loss_trace: Vec::new(),
        }
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_t(&self.weights)?;
        z.add_row_vector(&self.biases)?;
        Ok(z)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.iter_rows().map(argmax).collect())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy plus `(λ/2)‖W‖²` (biases unpenalized), with gradients
/// `(∂W, ∂b)`.
pub fn probe_objective(
    weights: &Matrix,
    biases: &[f64],
    x: &Matrix,
    labels: &[usize],
    l2_lambda: f64,
) -> Result<(f64, Matrix, Vec<f64>)> {
    let mut probs = x.matmul_t(weights)?;
    probs.add_row_vector(biases)?;
    let data_loss = softmax_loss_in_place(&mut probs, labels)?;
    let (gw, gb) = objective_grad(&probs, weights, x, l2_lambda)?;
    Ok((data_loss + regularizer(weights, l2_lambda), gw, gb))
}

fn regularizer(weights: &Matrix, l2_lambda: f64) -> f64 {
    0.5 * l2_lambda * weights.as_slice().iter().map(|w| w * w).sum::<f64>()
}

/// Turns logits into `softmax − onehot` scaled by `1/n` and returns the mean
/// cross-entropy.
fn softmax_loss_in_place(logits: &mut Matrix, labels: &[usize]) -> Result<f64> {
    let n = logits.rows();
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Shape(format!("label {y} out of range for {classes} classes")));
        }
        let row = logits.row_mut(i);
        total += softmax_nll_in_place(row, y);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(total / n as f64)
}

fn objective_grad(residual: &Matrix, weights: &Matrix, x: &Matrix, l2_lambda: f64) -> Result<(Matrix, Vec<f64>)> {
    let mut gw = residual.t_matmul(x)?;
    for (g, w) in gw.as_mut_slice().iter_mut().zip(weights.as_slice()) {
        *g += l2_lambda * w;
    }
    Ok((gw, residual.column_sums()))
}

/// Full-batch gradient descent on the regularized multinomial logistic loss
/// from a zero start. A step that would raise the objective is retried at
/// half the size, so the recorded objective never increases.
pub fn fit_probe(x: &Matrix, labels: &[usize], cfg: &ProbeConfig) -> Result<Probe> {
    cfg.validate()?;
    if x.rows() != labels.len() || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "{} support rows with {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; classes];
    labels.iter().for_each(|&l| present[l] = true);
    if classes < 2 || present.contains(&false) {
        return Err(Error::InsufficientData(
            "support set must contain every class label and at least two classes".into(),
        ));
    }
    let lambda = cfg.l2_lambda;
    let mut probe = Probe::zeros(classes, x.cols());
    let mut residual = probe.logits(x)?;
    let mut loss = softmax_loss_in_place(&mut residual, labels)?;
    probe.loss_trace.push(loss);
    let mut step = cfg.step_size;

    for _ in 0..cfg.max_iters {
        let (gw, gb) = objective_grad(&residual, &probe.weights, x, lambda)?;
        let gmax = gw
            .as_slice()
            .iter()
            .chain(&gb)
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < cfg.grad_tolerance {
            break;
        }
        let accepted = loop {
            let mut w = probe.weights.clone();
            for (wi, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *wi -= step * g;
            }
            let b: Vec<f64> = probe.biases.iter().zip(&gb).map(|(bi, g)| bi - step * g).collect();
            let mut r = x.matmul_t(&w)?;
            r.add_row_vector(&b)?;
            let l = softmax_loss_in_place(&mut r, labels)? + regularizer(&w, lambda);
            if !l.is_finite() {
                return Err(Error::Diverged { step: probe.loss_trace.len() });
            }
            if l <= loss {
                break Some((w, b, r, l));
            }
            step *= 0.5;
            if step < 1e-14 * cfg.step_size {
                break None;
            }
        };
        let Some((w, b, r, l)) = accepted else { break };
        probe.weights = w;
        probe.biases = b;
        residual = r;
        loss = l;
        probe.loss_trace.push(loss);
    }
    Ok(probe)
}

/// Fraction of query rows whose predicted class equals the label.
pub fn predict_and_score(probe: &Probe, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::EmptyQuery);
    }
    if labels.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} queries", labels.len(), x.rows())));
    }
    let pred = probe.predict(x)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Normalizes each input row, concatenates the pair and normalizes again.
pub fn fuse_features(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    if u.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "cannot fuse {} rows with {} rows",
            u.rows(),
            v.rows()
        )));
    }
    Ok(l2_normalize_rows(&l2_normalize_rows(u).hstack(&l2_normalize_rows(v))?))
}

/// Mean and 95% normal-approximation half-width `1.96·s/√n`, `s` with the
/// `n − 1` denominator. Identical values (or a single one) have zero half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if values.iter().all(|&v| v == values[0]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes: usize,
    pub seed: u64,
    pub mean_acc: f64,
    pub ci95: f64,
    pub per_episode_acc: Vec<f64>,
    pub feature_file: Option<String>,
    pub feature_fingerprint: String,
    pub normalized: bool,
    pub probe_config: ProbeConfig,
}

impl EvalReport {
    /// Percent accuracy and half-width, e.g. `77.63±0.52`.
    pub fn summary(&self) -> String {
        format_acc(self.mean_acc, self.ci95)
    }
}

pub fn format_acc(mean: f64, ci95: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * ci95)
}

/// FNV-1a over the shape and the bit patterns of a feature matrix.
pub fn fingerprint(m: &Matrix) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&(m.rows() as u64).to_le_bytes());
    eat(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        eat(&v.to_le_bytes());
    }
    format!("{h:016x}")
}

fn run_episode(
    features: &Matrix,
    pool: &NovelPool,
    spec: &EpisodeSpec,
    cfg: &ProbeConfig,
    index: usize,
) -> Result<f64> {
    let ep = sample_episode(pool, spec, index)?;
    let probe = fit_probe(&features.select_rows(&ep.support), &ep.support_labels, cfg)?;
    predict_and_score(&probe, &features.select_rows(&ep.query), &ep.query_labels)
}

/// Runs `spec.episodes` episodes over the novel split of `table` using
/// `features` (row-aligned with the table) and aggregates the accuracies.
pub fn evaluate(
    features: &Matrix,
    table: &DatasetTable,
    spec: &EpisodeSpec,
    cfg: &ProbeConfig,
    normalize: bool,
) -> Result<EvalReport> {
    if features.rows() != table.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} metadata rows",
            features.rows(),
            table.len()
        )));
    }
    cfg.validate()?;
    let pool = NovelPool::from_table(table);
    pool.check(spec)?;
    let normalized;
    let feats = if normalize {
        normalized = l2_normalize_rows(features);
        &normalized
    } else {
        features
    };
    let accs = (0..spec.episodes)
        .into_par_iter()
        .map(|e| {
            run_episode(feats, &pool, spec, cfg, e).map_err(|source| Error::Episode {
                index: e,
                source: Box::new(source),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean_acc, ci95) = mean_ci95(&accs);
    Ok(EvalReport {
        ways: spec.ways,
        shots: spec.shots,
        queries: spec.queries,
        episodes: spec.episodes,
        seed: spec.master_seed,
        mean_acc,
        ci95,
        per_episode_acc: accs,
        feature_file: None,
        feature_fingerprint: fingerprint(features),
        normalized: normalize,
        probe_config: *cfg,
    })
}

/// Decision values `W·x + b` for one row, used where a single score is needed.
pub fn decision_values(probe: &Probe, x: &[f64]) -> Vec<f64> {
    probe
        .weights
        .iter_rows()
        .zip(&probe.biases)
        .map(|(w, b)| dot(w, x) + b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::finite_difference_error;

    fn pool(classes: usize, per_class: usize) -> NovelPool {
        let mut idx = BTreeMap::new();
        for c in 0..classes {
            idx.insert(100 + c as u32, (c * per_class..(c + 1) * per_class).collect());
        }
        NovelPool::from_class_index(idx)
    }

    #[test]
    fn episode_shapes() {
        let p = pool(20, 50);
        let spec = EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: 15,
            ..EpisodeSpec::default()
        };
        let ep = sample_episode(&p, &spec, 3).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 75);
        assert_eq!(ep, sample_episode(&p, &spec, 3).unwrap());
        assert_ne!(ep, sample_episode(&p, &spec, 4).unwrap());

        let spec = EpisodeSpec {
            ways: 2,
            shots: 1,
            queries: 0,
            ..spec
        };
        let ep = sample_episode(&p, &spec, 0).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (2, 0));
    }

    #[test]
    fn episode_errors() {
        let spec = EpisodeSpec::default();
        assert!(sample_episode(&pool(4, 50), &spec, 0).is_err());
        assert!(sample_episode(&pool(6, 10), &spec, 0).is_err());
        let spec = EpisodeSpec { ways: 1, ..spec };
        assert!(sample_episode(&pool(6, 50), &spec, 0).is_err());
    }

    #[test]
    fn symmetric_pair_probe() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let probe = fit_probe(&x, &[0, 1], &ProbeConfig::default()).unwrap();
        assert_eq!(probe.predict(&x).unwrap(), vec![0, 1]);
        let at_zero = decision_values(&probe, &[0.0]);
        assert!((at_zero[0] - at_zero[1]).abs() < 1e-12);
    }

    #[test]
    fn heavy_regularization_flattens_probe() {
        let mut rng = RngStream::new(3, 3);
        let x = Matrix::from_vec(10, 4, (0..40).map(|_| rng.gaussian()).collect()).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let cfg = ProbeConfig {
            l2_lambda: 1e6,
            ..ProbeConfig::default()
        };
        let probe = fit_probe(&x, &labels, &cfg).unwrap();
        let wmax = probe.weights.as_slice().iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(wmax < 1e-2, "max weight {wmax}");
    }

    fn blobs(ways: usize, shots: usize, dim: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = RngStream::new(seed, 0);
        let centers: Vec<Vec<f64>> = (0..ways).map(|_| (0..dim).map(|_| rng.gaussian()).collect()).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, mu) in centers.iter().enumerate() {
            for _ in 0..shots {
                rows.push(mu.iter().map(|m| m + 0.5 * rng.gaussian()).collect());
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn probe_reaches_long_run_optimum() {
        let (x, y) = blobs(5, 5, 8, 41);
        let cfg = ProbeConfig {
            l2_lambda: 0.1,
            max_iters: 2000,
            step_size: 1.0,
            grad_tolerance: 1e-9,
        };
        let fast = fit_probe(&x, &y, &cfg).unwrap();
        let oracle = fit_probe(
            &x,
            &y,
            &ProbeConfig {
                max_iters: 20_000,
                step_size: 0.1,
                ..cfg
            },
        )
        .unwrap();
        let (a, b) = (fast.final_loss().unwrap(), oracle.final_loss().unwrap());
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        assert!(fast.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(a <= fast.loss_trace[0]);
    }

    #[test]
    fn probe_objective_gradient_check() {
        let (x, y) = blobs(4, 3, 5, 42);
        let mut rng = RngStream::new(5, 0);
        let w = Matrix::from_vec(4, 5, (0..20).map(|_| rng.gaussian()).collect()).unwrap();
        let b: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
        let (_, gw, gb) = probe_objective(&w, &b, &x, &y, 0.3).unwrap();
        let mut flat = w.as_slice().to_vec();
        flat.extend(&b);
        let mut analytic = gw.as_slice().to_vec();
        analytic.extend(&gb);
        let err = finite_difference_error(
            &flat,
            &analytic,
            |p| {
                let w = Matrix::from_vec(4, 5, p[..20].to_vec()).unwrap();
                probe_objective(&w, &p[20..], &x, &y, 0.3).unwrap().0
            },
            1e-5,
        );
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn scoring_rules() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let perfect = Probe {
            weights: Matrix::identity(2),
            biases: vec![0.0; 2],
            loss_trace: vec![],
        };
        assert_eq!(predict_and_score(&perfect, &x, &[0, 1]).unwrap(), 1.0);
        let zero = Probe::zeros(3, 2);
        assert_eq!(zero.predict(&x).unwrap(), vec![0, 0]);
        let err = predict_and_score(&zero, &Matrix::zeros(0, 2), &[]).unwrap_err();
        assert_eq!(err.to_string(), "empty query set");
    }

    #[test]
    fn fusion_arithmetic() {
        let u = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![0.0, 5.0]]).unwrap();
        let f = fuse_features(&u, &v).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [0.6 * s, 0.8 * s, 0.0, s];
        for (a, b) in f.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((crate::numeric::norm(f.row(0)) - 1.0).abs() < 1e-12);
        assert!((crate::numeric::norm(&f.row(0)[..2]) - s).abs() < 1e-12);
        assert!(fuse_features(&u, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn confidence_interval_arithmetic() {
        let (m, ci) = mean_ci95(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m, 0.5);
        let s = (1.0f64 / 3.0).sqrt();
        assert!((ci - 1.96 * s / 2.0).abs() < 1e-12);
        assert!((ci - 0.56580).abs() < 1e-5);
        assert_eq!(mean_ci95(&[0.7; 10]).1, 0.0);
        assert_eq!(format_acc(0.776, 0.005), "77.60±0.50");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn episodes_respect_invariants(
                seed in any::<u64>(),
                index in 0usize..10_000,
                ways in 2usize..8,
                shots in 1usize..6,
                queries in 0usize..8,
            ) {
                let p = pool(10, 15);
                let spec = EpisodeSpec { ways, shots, queries, episodes: 1, master_seed: seed };
                let ep = sample_episode(&p, &spec, index).unwrap();
                check_episode(&ep, &spec)?;
            }

            #[test]
            fn probe_predictions_ignore_common_weight_shift(
                seed in 0u64..1000,
                shift in prop::collection::vec(-5.0f64..5.0, 6),
            ) {
                let (x, y) = blobs(3, 4, 6, seed);
                let probe = fit_probe(&x, &y, &ProbeConfig { max_iters: 50, ..ProbeConfig::default() }).unwrap();
                let mut shifted = probe.clone();
                for r in 0..3 {
                    for (w, s) in shifted.weights.row_mut(r).iter_mut().zip(&shift) {
                        *w += s;
                    }
                }
                let q = Matrix::from_vec(5, 6, (0..30).map(|i| ((i * 7 % 11) as f64) - 5.0).collect()).unwrap();
                let a = probe.logits(&q).unwrap();
                let b = shifted.logits(&q).unwrap();
                for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
                    let (ia, ib) = (argmax(ra), argmax(rb));
                    // Ties can only move if two logits are within rounding of each other.
                    prop_assert!(ia == ib || (ra[ia] - ra[ib]).abs() < 1e-9);
                }
            }
        }
    }

    pub(crate) fn check_episode(ep: &Episode, spec: &EpisodeSpec) -> std::result::Result<(), proptest::test_runner::TestCaseError> {
        use proptest::prop_assert_eq;
        prop_assert_eq!(ep.classes.len(), spec.ways);
        let mut cls = ep.classes.clone();
        cls.sort_unstable();
        cls.dedup();
        prop_assert_eq!(cls.len(), spec.ways);
        prop_assert_eq!(ep.support.len(), spec.ways * spec.shots);
        prop_assert_eq!(ep.query.len(), spec.ways * spec.queries);
        let mut all: Vec<usize> = ep.support.iter().chain(&ep.query).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), ep.support.len() + ep.query.len());
        for c in 0..spec.ways {
            prop_assert_eq!(ep.support_labels.iter().filter(|&&l| l == c).count(), spec.shots);
            prop_assert_eq!(ep.query_labels.iter().filter(|&&l| l == c).count(), spec.queries);
        }
        Ok(())
    }
}
