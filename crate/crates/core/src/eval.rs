//! Confusion matrices, rates, error bars and the cross-validation harness.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::anomaly::{
    calibrate_and_detect, fit_gmm, fit_iforest, CovarianceType, GmmOptions, NoveltyScorer,
};
use crate::data::{split, Label, LabeledDataset};
use crate::kernels::{probs_for, ChisiniMean, GramMatrix, KernelFamily, KernelSpec, PairTables};
use crate::prob::{ProbConfig, ProbVector};
use crate::svm::{train_csvc, train_ocsvm, SolverOptions, SvmModel};
use crate::util::{fnv1a64, format_g17, rng_from_seed};
use crate::{Error, Result};

/// Rows are actual classes, columns predicted, positive class first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub positive_class: Label,
}

impl ConfusionMatrix {
    pub fn empty(positive_class: Label) -> Self {
        ConfusionMatrix {
            tp: 0,
            fn_: 0,
            fp: 0,
            tn: 0,
            positive_class,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn actual_positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn actual_negatives(&self) -> usize {
        self.fp + self.tn
    }

    /// The same counts read with the other class as positive.
    pub fn swap_positive(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fn_: self.fp,
            fp: self.fn_,
            tn: self.tp,
            positive_class: self.positive_class.other(),
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        debug_assert_eq!(self.positive_class, other.positive_class);
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }

    /// 2×2 CSV with a header row and column of class names.
    pub fn to_csv(&self) -> String {
        let p = self.positive_class;
        let n = p.other();
        format!(
            "actual\\predicted,{p},{n}\n{p},{},{}\n{n},{},{}\n",
            self.tp, self.fn_, self.fp, self.tn
        )
    }
}

pub fn confusion(
    actual: &[Label],
    predicted: &[Label],
    positive_class: Label,
) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::empty(positive_class);
    for (&a, &p) in actual.iter().zip(predicted) {
        match (a == positive_class, p == positive_class) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Accuracy, sensitivity and specificity. A rate whose denominator is zero
/// is reported as 1.0 and logged.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let rate = |num: usize, den: usize, name: &str| {
        if den == 0 {
            log::warn!("{name} undefined (no actual {name} cases); reported as 1.0");
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        sensitivity: rate(cm.tp, cm.actual_positives(), "sensitivity"),
        specificity: rate(cm.tn, cm.actual_negatives(), "specificity"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBars {
    pub mean: f64,
    /// Bessel-corrected standard deviation over √m.
    pub stderr: f64,
    /// `mean ± 1.96·stderr`.
    pub ci95: (f64, f64),
}

pub fn error_bars(values: &[f64]) -> Result<ErrorBars> {
    let m = values.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "error bars need at least 2 values, got {m}"
        )));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    let stderr = var.sqrt() / (m as f64).sqrt();
    Ok(ErrorBars {
        mean,
        stderr,
        ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
    })
}

/// Stratified k-fold test sets (indices into `labels`). Each class is
/// shuffled and dealt round-robin, continuing where the previous class
/// stopped, so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} samples, too few for {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut in_test = vec![false; n];
    for &i in test {
        in_test[i] = true;
    }
    (0..n).filter(|&i| !in_test[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Candidate σ values are these multiples of the training fold's median
    /// pairwise distance. Empty keeps each spec's own σ.
    pub sigma_multipliers: Vec<f64>,
    pub c: f64,
    pub tol: f64,
    pub seed_base: u64,
    pub prob: ProbConfig,
    pub positive_class: Label,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            outer_folds: 10,
            inner_folds: 3,
            sigma_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            c: crate::svm::DEFAULT_C,
            tol: crate::svm::DEFAULT_TOL,
            seed_base: 0,
            prob: ProbConfig::default(),
            positive_class: Label::Gesture,
        }
    }
}

/// Shuffle seed for a spec: specs sharing a Chisini mean share a seed.
pub fn spec_seed(seed_base: u64, spec: &KernelSpec) -> u64 {
    seed_base ^ fnv1a64(spec.mean.tag().as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: String,
    pub seed: u64,
    pub positive_class: Label,
    pub folds: Vec<FoldResult>,
    pub accuracy: ErrorBars,
    pub sensitivity: ErrorBars,
    pub specificity: ErrorBars,
    /// Predictions of all outer folds pooled.
    pub confusion: ConfusionMatrix,
}

pub const FOLD_CSV_HEADER: &str = "spec,fold,sigma,accuracy,sensitivity,specificity";
pub const SUMMARY_CSV_HEADER: &str =
    "spec,seed,folds,mean_accuracy,stderr_accuracy,ci95_low,ci95_high";

/// Per-fold rows for plotting.
pub fn render_fold_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{FOLD_CSV_HEADER}\n");
    for r in reports {
        for f in &r.folds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.spec,
                f.fold,
                format_g17(f.sigma),
                format_g17(f.metrics.accuracy),
                format_g17(f.metrics.sensitivity),
                format_g17(f.metrics.specificity)
            ));
        }
    }
    out
}

pub fn render_summary_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.spec,
            r.seed,
            r.folds.len(),
            format_g17(r.accuracy.mean),
            format_g17(r.accuracy.stderr),
            format_g17(r.accuracy.ci95.0),
            format_g17(r.accuracy.ci95.1)
        ));
    }
    out
}

fn signs(labels: &[Label], idx: &[usize], positive: Label) -> Vec<f64> {
    idx.iter()
        .map(|&i| if labels[i] == positive { 1.0 } else { -1.0 })
        .collect()
}

fn block_gram(tables: &PairTables, spec: &KernelSpec, idx: &[usize]) -> Result<GramMatrix> {
    let rows = tables.block(spec, idx, idx)?;
    GramMatrix::from_rows(idx.len(), rows.concat(), Some(*spec), idx.to_vec())
}

fn predict_labels(model: &SvmModel, rows: &[Vec<f64>], positive: Label) -> Result<Vec<Label>> {
    rows.iter()
        .map(|r| {
            let p = crate::svm::predict(model, r)?;
            Ok(if p.class > 0 {
                positive
            } else {
                positive.other()
            })
        })
        .collect()
}

/// Trains on `train` and scores `test`, both indices into the tables.
fn fit_and_score(
    tables: &PairTables,
    spec: &KernelSpec,
    labels: &[Label],
    train: &[usize],
    test: &[usize],
    cfg: &CvConfig,
) -> Result<ConfusionMatrix> {
    let gram = block_gram(tables, spec, train)?;
    let y = signs(labels, train, cfg.positive_class);
    let model = train_csvc(&gram, &y, cfg.c, &SolverOptions::with_tol(cfg.tol))?;
    let rows = tables.block(spec, test, train)?;
    let predicted = predict_labels(&model, &rows, cfg.positive_class)?;
    let actual: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
    confusion(&actual, &predicted, cfg.positive_class)
}

fn tune_sigma(
    tables: &PairTables,
    spec: &KernelSpec,
    labels: &[Label],
    train: &[usize],
    seed: u64,
    cfg: &CvConfig,
) -> Result<f64> {
    if cfg.sigma_multipliers.is_empty() {
        return Ok(spec.sigma);
    }
    let base = match tables.median_distance(train) {
        Some(m) if m > 0.0 => m,
        _ => {
            return Err(Error::numeric(
                "training fold has zero median distance; cannot scale sigma",
            ))
        }
    };
    let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
    let inner = match stratified_folds(&train_labels, cfg.inner_folds, seed) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("inner folds unavailable ({e}); using the median distance as sigma");
            return Ok(base);
        }
    };
    let mut best = (f64::NEG_INFINITY, base);
    for &mult in &cfg.sigma_multipliers {
        let candidate = spec.with_sigma(base * mult);
        let mut correct = 0usize;
        for fold in &inner {
            let inner_train: Vec<usize> = complement(train.len(), fold)
                .iter()
                .map(|&k| train[k])
                .collect();
            let inner_test: Vec<usize> = fold.iter().map(|&k| train[k]).collect();
            let cm = fit_and_score(tables, &candidate, labels, &inner_train, &inner_test, cfg)?;
            correct += cm.tp + cm.tn;
        }
        let acc = correct as f64 / train.len() as f64;
        if acc > best.0 {
            best = (acc, base * mult);
        }
    }
    Ok(best.1)
}

fn evaluate_spec(
    tables: &PairTables,
    spec: &KernelSpec,
    labels: &[Label],
    cfg: &CvConfig,
) -> Result<EvalReport> {
    let seed = spec_seed(cfg.seed_base, spec);
    let outer = stratified_folds(labels, cfg.outer_folds, seed)?;
    let mut folds = Vec::with_capacity(outer.len());
    let mut pooled = ConfusionMatrix::empty(cfg.positive_class);
    for (f, test) in outer.iter().enumerate() {
        let train = complement(labels.len(), test);
        let inner_seed = seed.rotate_left(17) ^ f as u64;
        let sigma = tune_sigma(tables, spec, labels, &train, inner_seed, cfg)?;
        let tuned = spec.with_sigma(sigma);
        let cm = fit_and_score(tables, &tuned, labels, &train, test, cfg)?;
        pooled.add(&cm);
        folds.push(FoldResult {
            fold: f,
            sigma,
            n_train: train.len(),
            n_test: test.len(),
            metrics: metrics(&cm)?,
            confusion: cm,
        });
    }
    let collect =
        |g: fn(&Metrics) -> f64| -> Vec<f64> { folds.iter().map(|f| g(&f.metrics)).collect() };
    Ok(EvalReport {
        spec: spec.tag(),
        seed,
        positive_class: cfg.positive_class,
        accuracy: error_bars(&collect(|m| m.accuracy))?,
        sensitivity: error_bars(&collect(|m| m.sensitivity))?,
        specificity: error_bars(&collect(|m| m.specificity))?,
        folds,
        confusion: pooled,
    })
}

type TableKey = (KernelFamily, ChisiniMean, u64);

fn table_key(spec: &KernelSpec) -> TableKey {
    let mean = if spec.uses_divergence() {
        spec.mean
    } else {
        ChisiniMean::Am
    };
    let eps = if spec.uses_divergence() {
        spec.epsilon.to_bits()
    } else {
        0
    };
    (spec.family, mean, eps)
}

/// Nested stratified cross-validation of C-SVC with each kernel spec. The
/// outer loop estimates accuracy; the inner loop picks σ. Distance and
/// divergence tables are built once per (family, mean, ε) and sliced per
/// fold. Reports come back in `specs` order.
pub fn nested_cv(
    dataset: &LabeledDataset,
    specs: &[KernelSpec],
    cfg: &CvConfig,
) -> Result<Vec<EvalReport>> {
    if specs.is_empty() {
        return Err(Error::invalid("no kernel specs to evaluate"));
    }
    if cfg.outer_folds < 2 {
        return Err(Error::invalid("need at least 2 outer folds"));
    }
    for s in specs {
        s.validate()?;
    }
    let labels = dataset.labels()?;
    let samples = &dataset.samples;

    let mut tables: BTreeMap<String, PairTables> = BTreeMap::new();
    for spec in specs {
        let key = table_key(spec);
        let name = format!("{key:?}");
        if tables.contains_key(&name) {
            continue;
        }
        let probs = if spec.uses_divergence() {
            probs_for(samples, &cfg.prob, spec.epsilon)?
        } else {
            vec![ProbVector::from_weights(&[1.0], 0.0)?; samples.len()]
        };
        tables.insert(name, PairTables::build(samples, &probs, key.0, key.1)?);
    }

    let run = |spec: &KernelSpec| {
        let t = &tables[&format!("{:?}", table_key(spec))];
        evaluate_spec(t, spec, &labels, cfg)
    };
    #[cfg(feature = "parallel")]
    let reports = specs.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let reports = specs.iter().map(run).collect();
    reports
}

// ---------------------------------------------------------------------------
// One-class detectors

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NoveltyMethod {
    OneClassSvm {
        spec: KernelSpec,
        nu: f64,
    },
    IsolationForest {
        trees: usize,
        psi: usize,
    },
    Gmm {
        k: usize,
        reg: f64,
        max_iter: usize,
        covariance: CovarianceType,
    },
}

impl NoveltyMethod {
    pub fn tag(&self) -> String {
        match self {
            NoveltyMethod::OneClassSvm { spec, .. } => format!("ocsvm:{}", spec.tag()),
            NoveltyMethod::IsolationForest { .. } => "iforest".into(),
            NoveltyMethod::Gmm { .. } => "gmm".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyConfig {
    /// Share of each class kept for training (only its positives are used).
    pub train_fraction: f64,
    /// Share of the held-out part used to calibrate scores; the rest is
    /// evaluated.
    pub calibration_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
    pub positive_class: Label,
    pub prob: ProbConfig,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        NoveltyConfig {
            train_fraction: 0.7,
            calibration_fraction: 0.5,
            threshold: crate::anomaly::DEFAULT_THRESHOLD,
            seed: 0,
            positive_class: Label::Gesture,
            prob: ProbConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub method: String,
    pub seed: u64,
    pub positive_class: Label,
    pub threshold: f64,
    pub n_train: usize,
    pub n_calibration: usize,
    pub n_eval: usize,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

/// Trains a detector on the positive class of a stratified training split,
/// calibrates it on part of the held-out data and scores the rest.
/// `features[i]` is the feature vector of `dataset.samples[i]`; the
/// one-class SVM uses the samples through its kernel instead.
pub fn novelty_eval(
    dataset: &LabeledDataset,
    features: &[Vec<f64>],
    method: &NoveltyMethod,
    cfg: &NoveltyConfig,
) -> Result<NoveltyReport> {
    if features.len() != dataset.len() {
        return Err(Error::invalid("one feature row per sample required"));
    }
    let with_pos: Vec<(usize, crate::data::FusedSample)> =
        dataset.samples.iter().cloned().enumerate().collect();
    // track row indices through the splits via the sample position
    let indexed = LabeledDataset::new(
        with_pos
            .iter()
            .map(|(i, s)| crate::data::FusedSample {
                id: *i,
                ..s.clone()
            })
            .collect(),
        dataset.provenance.clone(),
    );
    let (train, held) = split(&indexed, cfg.train_fraction, cfg.seed)?;
    let (calib, eval) = split(&held, cfg.calibration_fraction, cfg.seed.wrapping_add(1))?;
    let positive = cfg.positive_class;
    let train_pos: Vec<usize> = train
        .samples
        .iter()
        .filter(|s| s.label == Some(positive))
        .map(|s| s.id)
        .collect();
    let rows =
        |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| features[i].clone()).collect() };
    let calib_idx: Vec<usize> = calib.samples.iter().map(|s| s.id).collect();
    let eval_idx: Vec<usize> = eval.samples.iter().map(|s| s.id).collect();
    let calib_pos: Vec<bool> = calib
        .samples
        .iter()
        .map(|s| s.label == Some(positive))
        .collect();
    let actual: Vec<Label> = eval.labels()?;

    let positive_flags: Vec<bool> = match method {
        NoveltyMethod::OneClassSvm { spec, nu } => {
            let train_samples: Vec<_> = train_pos
                .iter()
                .map(|&i| dataset.samples[i].clone())
                .collect();
            let eval_samples: Vec<_> = eval_idx
                .iter()
                .map(|&i| dataset.samples[i].clone())
                .collect();
            let gram = crate::kernels::gram(spec, &train_samples, &cfg.prob)?;
            let model = train_ocsvm(&gram, *nu, &SolverOptions::default())?;
            let cross =
                crate::kernels::cross_kernel(spec, &eval_samples, &train_samples, &cfg.prob)?;
            cross
                .iter()
                .map(|r| Ok(crate::svm::predict(&model, r)?.class > 0))
                .collect::<Result<_>>()?
        }
        NoveltyMethod::IsolationForest { trees, psi } => {
            let model = fit_iforest(&rows(&train_pos), *trees, *psi, cfg.seed)?;
            detect_all(
                model,
                &rows(&calib_idx),
                &calib_pos,
                &rows(&eval_idx),
                cfg.threshold,
            )?
        }
        NoveltyMethod::Gmm {
            k,
            reg,
            max_iter,
            covariance,
        } => {
            let opts = GmmOptions {
                k: *k,
                reg: *reg,
                max_iter: *max_iter,
                seed: cfg.seed,
                covariance: *covariance,
            };
            let model = fit_gmm(&rows(&train_pos), &opts)?;
            detect_all(
                model,
                &rows(&calib_idx),
                &calib_pos,
                &rows(&eval_idx),
                cfg.threshold,
            )?
        }
    };
    let predicted: Vec<Label> = positive_flags
        .iter()
        .map(|&p| if p { positive } else { positive.other() })
        .collect();
    let cm = confusion(&actual, &predicted, positive)?;
    Ok(NoveltyReport {
        method: method.tag(),
        seed: cfg.seed,
        positive_class: positive,
        threshold: cfg.threshold,
        n_train: train_pos.len(),
        n_calibration: calib_idx.len(),
        n_eval: eval_idx.len(),
        metrics: metrics(&cm)?,
        confusion: cm,
    })
}

fn detect_all<M: NoveltyScorer>(
    model: M,
    calib: &[Vec<f64>],
    calib_positive: &[bool],
    eval: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<bool>> {
    let det = calibrate_and_detect(model, calib, calib_positive, threshold)?;
    eval.iter().map(|x| Ok(det.detect(x)?.positive)).collect()
}
