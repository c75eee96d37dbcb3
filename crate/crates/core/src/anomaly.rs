//! One-class novelty detectors: isolation forest, Gaussian mixtures and
//! isotonic calibration of their raw scores.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::util::{format_g17, rng_from_seed, SeededRng};
use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.5772156649;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;
pub const DEFAULT_COMPONENTS: usize = 5;
pub const DEFAULT_REG: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// EM stops once the mean per-sample log-likelihood moves less than this.
pub const LL_TOL: f64 = 1e-8;

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let first = data.first().ok_or_else(|| Error::invalid("no samples"))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::invalid("samples have no features"));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!(
                "sample {i} has {} features, expected {d}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample {i} has a non-finite feature"
            )));
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Isolation forest

/// Harmonic number, exact up to 10 and asymptotic above.
pub fn harmonic(i: usize) -> f64 {
    if i <= 10 {
        (1..=i).map(|k| 1.0 / k as f64).sum()
    } else {
        (i as f64).ln() + EULER_GAMMA
    }
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` nodes: `2H(n−1) − 2(n−1)/n`, with `c(0) = c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    2.0 * harmonic(n - 1) - 2.0 * m / n as f64
}

/// `2^(−E[h]/c(ψ))`.
pub fn score_from_path_length(mean_path: f64, psi: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(psi))
}

/// `⌈log₂ ψ⌉`.
pub fn height_limit(psi: usize) -> usize {
    if psi <= 1 {
        0
    } else {
        (usize::BITS - (psi - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum IsolationNode {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] < value` go left.
        value: f64,
        left: Box<IsolationNode>,
        right: Box<IsolationNode>,
    },
}

impl IsolationNode {
    pub fn depth(&self) -> usize {
        match self {
            IsolationNode::Leaf { .. } => 0,
            IsolationNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Path length of `x`, with the leaf-size adjustment `c(size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                IsolationNode::Leaf { size } => return depth + average_path_length(*size),
                IsolationNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationNode>,
    pub psi: usize,
    pub n_trees: usize,
    pub height_limit: usize,
    pub seed: u64,
    pub n_features: usize,
}

fn grow(
    data: &[Vec<f64>],
    idx: &mut [usize],
    depth: usize,
    limit: usize,
    rng: &mut SeededRng,
) -> IsolationNode {
    if depth >= limit || idx.len() <= 1 {
        return IsolationNode::Leaf { size: idx.len() };
    }
    let d = data[idx[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..d)
        .filter_map(|f| {
            let (lo, hi) = idx
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(data[i][f]), hi.max(data[i][f]))
                });
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return IsolationNode::Leaf { size: idx.len() };
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let mut value = rng.random_range(lo..hi);
    while value <= lo {
        // both sides must be non-empty
        value = rng.random_range(lo..hi);
    }
    let mut cut = 0;
    for k in 0..idx.len() {
        if data[idx[k]][feature] < value {
            idx.swap(k, cut);
            cut += 1;
        }
    }
    let (l, r) = idx.split_at_mut(cut);
    IsolationNode::Split {
        feature,
        value,
        left: Box::new(grow(data, l, depth + 1, limit, rng)),
        right: Box::new(grow(data, r, depth + 1, limit, rng)),
    }
}

/// Fits `t` isolation trees on ψ-subsamples. Tree `i` uses seed `seed ^ i`,
/// so the forest does not depend on scheduling. ψ above `n` is clamped to
/// `n` with a warning.
pub fn fit_iforest(
    data: &[Vec<f64>],
    t: usize,
    psi: usize,
    seed: u64,
) -> Result<IsolationForestModel> {
    let d = check_rows(data)?;
    if t == 0 {
        return Err(Error::invalid("need at least one tree"));
    }
    if psi < 2 {
        return Err(Error::invalid(format!(
            "subsample size must be >= 2, got {psi}"
        )));
    }
    if data.len() < 2 {
        return Err(Error::invalid("isolation forest needs at least 2 samples"));
    }
    let psi = if psi > data.len() {
        log::warn!(
            "subsample size {psi} exceeds {} samples; clamped",
            data.len()
        );
        data.len()
    } else {
        psi
    };
    let limit = height_limit(psi);
    let build = |i: usize| {
        let mut rng = rng_from_seed(seed ^ i as u64);
        let mut idx = sample_indices(&mut rng, data.len(), psi).into_vec();
        grow(data, &mut idx, 0, limit, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let trees = (0..t).into_par_iter().map(build).collect();
    #[cfg(not(feature = "parallel"))]
    let trees = (0..t).map(build).collect();
    Ok(IsolationForestModel {
        trees,
        psi,
        n_trees: t,
        height_limit: limit,
        seed,
        n_features: d,
    })
}

impl IsolationForestModel {
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Anomaly score in (0, 1]; larger is more anomalous.
pub fn iforest_score(model: &IsolationForestModel, x: &[f64]) -> f64 {
    score_from_path_length(model.mean_path_length(x), model.psi)
}

// ---------------------------------------------------------------------------
// Gaussian mixture

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    /// Variance floor; full covariances get their eigenvalues clipped here.
    pub reg: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub covariance: CovarianceType,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            k: DEFAULT_COMPONENTS,
            reg: DEFAULT_REG,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            covariance: CovarianceType::Diagonal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal variances, or a row-major d×d matrix for full covariance.
    pub covariance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub covariance_type: CovarianceType,
    pub components: Vec<GmmComponent>,
    pub reg: f64,
    pub n_features: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmReport {
    pub iterations: usize,
    pub converged: bool,
    /// Mean per-sample log-likelihood before each M-step and after the last.
    pub log_likelihood: Vec<f64>,
}

/// Per-component log-density evaluator with the expensive parts cached.
enum Density {
    Diagonal {
        mean: Vec<f64>,
        var: Vec<f64>,
        log_norm: f64,
    },
    Full {
        mean: Vec<f64>,
        chol: nalgebra::DMatrix<f64>,
        log_norm: f64,
    },
}

impl Density {
    fn new(c: &GmmComponent, kind: CovarianceType) -> Result<Density> {
        let d = c.mean.len();
        let base = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        match kind {
            CovarianceType::Diagonal => {
                let log_det: f64 = c.covariance.iter().map(|v| v.ln()).sum();
                Ok(Density::Diagonal {
                    mean: c.mean.clone(),
                    var: c.covariance.clone(),
                    log_norm: base - 0.5 * log_det,
                })
            }
            CovarianceType::Full => {
                let m = nalgebra::DMatrix::from_row_slice(d, d, &c.covariance);
                let chol = m
                    .cholesky()
                    .ok_or_else(|| Error::numeric("covariance is not positive definite"))?;
                let l = chol.l();
                let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok(Density::Full {
                    mean: c.mean.clone(),
                    chol: l,
                    log_norm: base - 0.5 * log_det,
                })
            }
        }
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        match self {
            Density::Diagonal {
                mean,
                var,
                log_norm,
            } => {
                let q: f64 = x
                    .iter()
                    .zip(mean)
                    .zip(var)
                    .map(|((x, m), v)| (x - m) * (x - m) / v)
                    .sum();
                log_norm - 0.5 * q
            }
            Density::Full {
                mean,
                chol,
                log_norm,
            } => {
                let diff = nalgebra::DVector::from_iterator(
                    x.len(),
                    x.iter().zip(mean).map(|(x, m)| x - m),
                );
                let z = chol
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor has a positive diagonal");
                log_norm - 0.5 * z.norm_squared()
            }
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    fn densities(&self) -> Result<Vec<Density>> {
        self.components
            .iter()
            .map(|c| Density::new(c, self.covariance_type))
            .collect()
    }

    fn joint(&self, dens: &[Density], x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(dens)
            .map(|(c, d)| c.weight.ln() + d.log_pdf(x))
            .collect()
    }

    /// `log p(x)` under the mixture.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let dens = self.densities()?;
        Ok(log_sum_exp(&self.joint(&dens, x)))
    }

    pub fn score_samples(&self, data: &[Vec<f64>]) -> Result<Vec<f64>> {
        let dens = self.densities()?;
        Ok(data
            .iter()
            .map(|x| log_sum_exp(&self.joint(&dens, x)))
            .collect())
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dens = self.densities()?;
        let joint = self.joint(&dens, x);
        let norm = log_sum_exp(&joint);
        Ok(joint.iter().map(|j| (j - norm).exp()).collect())
    }
}

/// k-means++ seeding: first centre uniform, then proportional to the squared
/// distance to the nearest chosen centre.
fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centres = vec![data[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = data
        .iter()
        .map(|x| crate::util::squared_distance(x, &centres[0]))
        .collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min(crate::util::squared_distance(x, &c));
        }
        centres.push(c);
    }
    centres
}

fn m_step(
    data: &[Vec<f64>],
    resp: &[Vec<f64>],
    kind: CovarianceType,
    reg: f64,
    previous: &[GmmComponent],
) -> Vec<GmmComponent> {
    let n = data.len();
    let d = data[0].len();
    let k = previous.len();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk <= 0.0 {
            // empty component: keep its shape, drop its weight
            out.push(GmmComponent {
                weight: 0.0,
                ..previous[j].clone()
            });
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for f in 0..d {
                mean[f] += r[j] * x[f];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let covariance = match kind {
            CovarianceType::Diagonal => {
                let mut var = vec![0.0; d];
                for (x, r) in data.iter().zip(resp) {
                    for f in 0..d {
                        let e = x[f] - mean[f];
                        var[f] += r[j] * e * e;
                    }
                }
                var.iter().map(|v| (v / nk).max(reg)).collect()
            }
            CovarianceType::Full => {
                let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
                for (x, r) in data.iter().zip(resp) {
                    let e = nalgebra::DVector::from_iterator(
                        d,
                        x.iter().zip(&mean).map(|(x, m)| x - m),
                    );
                    cov += r[j] * &e * e.transpose();
                }
                cov /= nk;
                // the constrained maximiser over {Σ ⪰ reg·I} clips the spectrum
                let eig = nalgebra::SymmetricEigen::new(cov);
                let clipped = eig.eigenvalues.map(|v| v.max(reg));
                let full = &eig.eigenvectors
                    * nalgebra::DMatrix::from_diagonal(&clipped)
                    * eig.eigenvectors.transpose();
                let mut flat = Vec::with_capacity(d * d);
                for r in 0..d {
                    for c in 0..d {
                        flat.push(0.5 * (full[(r, c)] + full[(c, r)]));
                    }
                }
                flat
            }
        };
        out.push(GmmComponent {
            weight: nk / n as f64,
            mean,
            covariance,
        });
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    out.iter_mut().for_each(|c| c.weight /= total);
    out
}

pub fn fit_gmm(data: &[Vec<f64>], opts: &GmmOptions) -> Result<GmmModel> {
    fit_gmm_with_report(data, opts).map(|(m, _)| m)
}

/// EM for a Gaussian mixture, seeded with k-means++.
pub fn fit_gmm_with_report(data: &[Vec<f64>], opts: &GmmOptions) -> Result<(GmmModel, GmmReport)> {
    let d = check_rows(data)?;
    let n = data.len();
    if opts.k == 0 {
        return Err(Error::invalid("GMM needs K >= 1"));
    }
    if n < opts.k {
        return Err(Error::invalid(format!(
            "{n} samples cannot support {} components",
            opts.k
        )));
    }
    if !(opts.reg > 0.0 && opts.reg.is_finite()) {
        return Err(Error::invalid(format!(
            "covariance floor must be > 0, got {}",
            opts.reg
        )));
    }
    let mut rng = rng_from_seed(opts.seed);
    let centres = kmeans_pp(data, opts.k, &mut rng);

    // start from the global spread around each centre
    let mut global = vec![0.0; d];
    let mut mean = vec![0.0; d];
    for x in data {
        for f in 0..d {
            mean[f] += x[f] / n as f64;
        }
    }
    for x in data {
        for f in 0..d {
            global[f] += (x[f] - mean[f]).powi(2) / n as f64;
        }
    }
    let initial_cov = |kind: CovarianceType| -> Vec<f64> {
        match kind {
            CovarianceType::Diagonal => global.iter().map(|v| v.max(opts.reg)).collect(),
            CovarianceType::Full => {
                let mut m = vec![0.0; d * d];
                for f in 0..d {
                    m[f * d + f] = global[f].max(opts.reg);
                }
                m
            }
        }
    };
    let mut model = GmmModel {
        covariance_type: opts.covariance,
        components: centres
            .into_iter()
            .map(|c| GmmComponent {
                weight: 1.0 / opts.k as f64,
                mean: c,
                covariance: initial_cov(opts.covariance),
            })
            .collect(),
        reg: opts.reg,
        n_features: d,
    };

    let mut report = GmmReport::default();
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..opts.max_iter {
        let dens = model.densities()?;
        let mut ll = 0.0;
        let resp: Vec<Vec<f64>> = data
            .iter()
            .map(|x| {
                let joint = model.joint(&dens, x);
                let norm = log_sum_exp(&joint);
                ll += norm;
                joint.iter().map(|j| (j - norm).exp()).collect()
            })
            .collect();
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::numeric("GMM log-likelihood is not finite"));
        }
        report.log_likelihood.push(ll);
        if (ll - previous).abs() < LL_TOL {
            report.converged = true;
            break;
        }
        previous = ll;
        model.components = m_step(data, &resp, opts.covariance, opts.reg, &model.components);
        report.iterations += 1;
    }
    if !report.converged {
        let last: f64 = model.score_samples(data)?.iter().sum::<f64>() / n as f64;
        report.log_likelihood.push(last);
        log::warn!("GMM EM hit max_iter = {} before converging", opts.max_iter);
    }
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Isotonic regression

/// Non-decreasing step function of a raw score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicMap {
    /// Value at the nearest breakpoint; a score exactly halfway between two
    /// takes the upper one. Ends extend flat. Clamped to [0, 1].
    pub fn predict(&self, score: f64) -> f64 {
        let b = &self.breakpoints;
        let k = b.partition_point(|&x| x <= score);
        let idx = if k == 0 {
            0
        } else if k == b.len() || score - b[k - 1] < b[k] - score {
            k - 1
        } else {
            k
        };
        self.values[idx].clamp(0.0, 1.0)
    }
}

/// Weighted pool-adjacent-violators fit. Equal scores are pooled first, so
/// the map has one step per distinct score.
pub fn pava(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<IsotonicMap> {
    if scores.is_empty() {
        return Err(Error::invalid("isotonic fit of no points"));
    }
    if targets.len() != scores.len() || weights.len() != scores.len() {
        return Err(Error::invalid(
            "scores, targets and weights differ in length",
        ));
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite score or target"));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("weights must be positive and finite"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // (score, weighted sum, weight) per distinct score
    let mut ties: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &order {
        match ties.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += weights[i] * targets[i];
                last.2 += weights[i];
            }
            _ => ties.push((scores[i], weights[i] * targets[i], weights[i])),
        }
    }

    // blocks: (first tie index, weighted sum, weight)
    let mut blocks: Vec<(usize, f64, f64)> = Vec::with_capacity(ties.len());
    for (t, &(_, s, w)) in ties.iter().enumerate() {
        blocks.push((t, s, w));
        while blocks.len() > 1 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.1 / a.2 <= b.1 / b.2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks present");
            last.1 += b.1;
            last.2 += b.2;
        }
    }
    let mut values = vec![0.0; ties.len()];
    for (k, &(start, s, w)) in blocks.iter().enumerate() {
        let end = blocks.get(k + 1).map_or(ties.len(), |b| b.0);
        values[start..end].fill(s / w);
    }
    Ok(IsotonicMap {
        breakpoints: ties.iter().map(|t| t.0).collect(),
        values,
    })
}

// ---------------------------------------------------------------------------
// Calibrated detectors

/// Raw score where larger means "more like the training class".
pub trait NoveltyScorer {
    fn raw_score(&self, x: &[f64]) -> Result<f64>;
}

impl NoveltyScorer for GmmModel {
    fn raw_score(&self, x: &[f64]) -> Result<f64> {
        self.log_likelihood(x)
    }
}

impl NoveltyScorer for IsolationForestModel {
    /// Negated anomaly score.
    fn raw_score(&self, x: &[f64]) -> Result<f64> {
        Ok(-iforest_score(self, x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDetector<M> {
    pub model: M,
    pub map: IsotonicMap,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub raw_score: f64,
    pub probability: f64,
    pub positive: bool,
}

impl<M: NoveltyScorer> CalibratedDetector<M> {
    pub fn detect(&self, x: &[f64]) -> Result<Detection> {
        let raw_score = self.model.raw_score(x)?;
        let probability = self.map.predict(raw_score);
        Ok(Detection {
            raw_score,
            probability,
            positive: probability >= self.threshold,
        })
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        CalibratedDetector { threshold, ..self }
    }
}

/// Fits an isotonic map from the model's raw scores on a labeled
/// calibration set to P(positive). A point is positive iff its calibrated
/// probability is at least `threshold`.
pub fn calibrate_and_detect<M: NoveltyScorer>(
    model: M,
    calib: &[Vec<f64>],
    calib_positive: &[bool],
    threshold: f64,
) -> Result<CalibratedDetector<M>> {
    if calib.len() != calib_positive.len() {
        return Err(Error::invalid(
            "calibration data and labels differ in length",
        ));
    }
    if !calib_positive.iter().any(|&p| p) || calib_positive.iter().all(|&p| p) {
        return Err(Error::invalid("calibration set must contain both labels"));
    }
    if threshold.is_nan() {
        return Err(Error::invalid("threshold is NaN"));
    }
    let scores = calib
        .iter()
        .map(|x| model.raw_score(x))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = calib_positive
        .iter()
        .map(|&p| f64::from(u8::from(p)))
        .collect();
    let map = pava(&scores, &targets, &vec![1.0; scores.len()])?;
    Ok(CalibratedDetector {
        model,
        map,
        threshold,
    })
}

pub const SCORE_DUMP_HEADER: &str = "id,raw_score,probability,label";

/// Score dump rows `id,raw_score,probability,label` (label is the 0/1 code).
pub fn render_score_dump(rows: &[(usize, Detection, Option<u8>)]) -> String {
    let mut out = String::from(SCORE_DUMP_HEADER);
    out.push('\n');
    for (id, det, label) in rows {
        out.push_str(&format!(
            "{id},{},{},{}\n",
            format_g17(det.raw_score),
            format_g17(det.probability),
            label.map(|l| l.to_string()).unwrap_or_default()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_cloud(n: usize, d: usize, centre: &[f64], sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|f| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        centre[f] + sd * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn path_length_constants() {
        assert_eq!(average_path_length(0), 0.0);
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        assert!((average_path_length(3) - (2.0 * 1.5 - 4.0 / 3.0)).abs() < 1e-15);
        assert!((harmonic(11) - (11f64.ln() + EULER_GAMMA)).abs() < 1e-15);
        assert_eq!(score_from_path_length(average_path_length(256), 256), 0.5);
        assert_eq!(score_from_path_length(0.0, 256), 1.0);
        assert_eq!(height_limit(256), 8);
        assert_eq!(height_limit(257), 9);
        assert_eq!(height_limit(2), 1);
        assert_eq!(height_limit(3), 2);
    }

    #[test]
    fn identical_points_make_single_leaves() {
        let data = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let m = fit_iforest(&data, 10, 2, 3).unwrap();
        assert!(m
            .trees
            .iter()
            .all(|t| *t == IsolationNode::Leaf { size: 2 }));
    }

    #[test]
    fn psi_is_clamped() {
        let data = gaussian_cloud(20, 2, &[0.0, 0.0], 1.0, 1);
        let m = fit_iforest(&data, 5, 256, 1).unwrap();
        assert_eq!(m.psi, 20);
        assert_eq!(m.height_limit, 5);
        assert!(fit_iforest(&data, 5, 1, 1).is_err());
        assert!(fit_iforest(&[], 5, 2, 1).is_err());
    }

    fn check_tree(node: &IsolationNode, data: &[Vec<f64>]) {
        if let IsolationNode::Split {
            feature,
            value,
            left,
            right,
        } = node
        {
            let (lo, hi) = data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x[*feature]), hi.max(x[*feature]))
                });
            assert!(lo < *value && *value <= hi);
            let (l, r): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
                data.iter().cloned().partition(|x| x[*feature] < *value);
            check_tree(left, &l);
            check_tree(right, &r);
        }
    }

    #[test]
    fn forest_invariants_and_determinism() {
        let data = gaussian_cloud(300, 3, &[0.0; 3], 1.0, 2);
        let a = fit_iforest(&data, 20, 64, 9).unwrap();
        let b = fit_iforest(&data, 20, 64, 9).unwrap();
        assert_eq!(a, b);
        for t in &a.trees {
            assert!(t.depth() <= a.height_limit);
        }
        // a full-size tree sees every point, so splits must lie in the data range
        let full = fit_iforest(&data, 5, 300, 4).unwrap();
        for t in &full.trees {
            check_tree(t, &data);
        }
        for x in &data {
            let s = iforest_score(&a, x);
            assert!(s > 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn planted_outliers_rank_first() {
        let mut data = gaussian_cloud(500, 2, &[0.0, 0.0], 1.0, 11);
        for k in 0..5 {
            let a = k as f64 * std::f64::consts::TAU / 5.0;
            data.push(vec![10.0 * a.cos(), 10.0 * a.sin()]);
        }
        let m = fit_iforest(&data, DEFAULT_TREES, DEFAULT_PSI, 5).unwrap();
        let mut ranked: Vec<(f64, usize)> = data
            .iter()
            .enumerate()
            .map(|(i, x)| (iforest_score(&m, x), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top: Vec<usize> = ranked[..5].iter().map(|r| r.1).collect();
        assert!(top.iter().all(|&i| i >= 500), "{top:?}");
    }

    #[test]
    fn gmm_single_component_closed_form() {
        let data = gaussian_cloud(200, 3, &[1.0, -2.0, 0.5], 0.7, 3);
        let opts = GmmOptions {
            k: 1,
            ..Default::default()
        };
        let m = fit_gmm(&data, &opts).unwrap();
        let c = &m.components[0];
        for f in 0..3 {
            let mean = data.iter().map(|x| x[f]).sum::<f64>() / 200.0;
            let var = data.iter().map(|x| (x[f] - mean).powi(2)).sum::<f64>() / 200.0;
            assert!((c.mean[f] - mean).abs() < 1e-9);
            assert!((c.covariance[f] - var).abs() < 1e-9);
        }
        assert_eq!(c.weight, 1.0);
    }

    #[test]
    fn gmm_recovers_separated_clusters() {
        let mut data = gaussian_cloud(400, 2, &[0.0, 0.0], 1.0, 6);
        data.extend(gaussian_cloud(400, 2, &[20.0, 20.0], 1.0, 7));
        let opts = GmmOptions {
            k: 2,
            seed: 1,
            ..Default::default()
        };
        let (m, rep) = fit_gmm_with_report(&data, &opts).unwrap();
        assert!(rep.converged);
        let mut means: Vec<&Vec<f64>> = m.components.iter().map(|c| &c.mean).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (m, t) in means.iter().zip([[0.0, 0.0], [20.0, 20.0]]) {
            assert!(
                (m[0] - t[0]).abs() < 0.1 && (m[1] - t[1]).abs() < 0.1,
                "{m:?}"
            );
        }
        let w: f64 = m.components.iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        for x in data.iter().step_by(37) {
            let r: f64 = m.responsibilities(x).unwrap().iter().sum();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn em_is_monotone_for_both_covariance_types() {
        for (seed, kind) in [(1, CovarianceType::Diagonal), (2, CovarianceType::Full)] {
            let mut data = gaussian_cloud(150, 3, &[0.0; 3], 1.0, seed);
            data.extend(gaussian_cloud(100, 3, &[3.0, 0.0, -2.0], 0.5, seed + 10));
            let opts = GmmOptions {
                k: 3,
                seed,
                covariance: kind,
                ..Default::default()
            };
            let (m, rep) = fit_gmm_with_report(&data, &opts).unwrap();
            for w in rep.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{kind:?}: {} -> {}", w[0], w[1]);
            }
            for c in &m.components {
                match kind {
                    CovarianceType::Diagonal => {
                        assert!(c.covariance.iter().all(|&v| v >= opts.reg))
                    }
                    CovarianceType::Full => {
                        let mat = nalgebra::DMatrix::from_row_slice(3, 3, &c.covariance);
                        let min = mat.symmetric_eigenvalues().min();
                        assert!(min >= opts.reg * (1.0 - 1e-9));
                    }
                }
            }
        }
    }

    #[test]
    fn gmm_argument_errors() {
        let data = gaussian_cloud(3, 2, &[0.0, 0.0], 1.0, 1);
        assert!(fit_gmm(
            &data,
            &GmmOptions {
                k: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_gmm(
            &data,
            &GmmOptions {
                k: 4,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_gmm(
            &data,
            &GmmOptions {
                k: 1,
                reg: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn pava_examples() {
        let m = pava(&[1.0, 2.0, 3.0], &[0.0, 0.5, 1.0], &[1.0; 3]).unwrap();
        assert_eq!(m.values, [0.0, 0.5, 1.0]);
        let m = pava(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0], &[1.0; 3]).unwrap();
        assert_eq!(m.values, [0.5, 0.5, 1.0]);
        let m = pava(&[3.0, 1.0, 2.0], &[0.3; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(m.values.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(pava(&[], &[], &[]).is_err());
    }

    #[test]
    fn pava_pools_ties_and_weights() {
        let m = pava(&[1.0, 1.0, 2.0], &[1.0, 0.0, 0.0], &[3.0, 1.0, 4.0]).unwrap();
        assert_eq!(m.breakpoints, [1.0, 2.0]);
        // tie block mean 0.75 > 0, pooled with the next: (3 + 0 + 0) / 8
        assert_eq!(m.values, [0.375, 0.375]);
    }

    #[test]
    fn isotonic_map_is_a_nearest_breakpoint_step() {
        let m = IsotonicMap {
            breakpoints: vec![0.0, 1.0, 2.0],
            values: vec![0.1, 0.4, 0.9],
        };
        assert_eq!(m.predict(-5.0), 0.1);
        assert_eq!(m.predict(0.0), 0.1);
        assert_eq!(m.predict(0.49), 0.1);
        assert_eq!(m.predict(0.5), 0.4);
        assert_eq!(m.predict(1.0), 0.4);
        assert_eq!(m.predict(1.4), 0.4);
        assert_eq!(m.predict(1.6), 0.9);
        assert_eq!(m.predict(7.0), 0.9);
        let wild = IsotonicMap {
            breakpoints: vec![0.0],
            values: vec![1.5],
        };
        assert_eq!(wild.predict(3.0), 1.0);
    }

    #[test]
    fn calibrated_gmm_detector() {
        let pos = gaussian_cloud(200, 2, &[0.0, 0.0], 1.0, 21);
        let neg = gaussian_cloud(100, 2, &[15.0, 0.0], 1.0, 22);
        let gmm = fit_gmm(
            &pos,
            &GmmOptions {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let calib: Vec<Vec<f64>> = pos[..50].iter().chain(&neg[..50]).cloned().collect();
        let labels: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let det = calibrate_and_detect(gmm, &calib, &labels, DEFAULT_THRESHOLD).unwrap();
        for x in &pos[50..] {
            assert!(det.detect(x).unwrap().positive);
        }
        for x in &neg[50..] {
            assert!(!det.detect(x).unwrap().positive);
        }
        let everything = det.clone().with_threshold(0.0);
        assert!(neg.iter().all(|x| everything.detect(x).unwrap().positive));
        let strict = det.clone().with_threshold(1.0);
        let d = strict.detect(&pos[60]).unwrap();
        assert_eq!(d.probability, 1.0);
        assert!(d.positive);
        assert!(calibrate_and_detect(det.model.clone(), &calib[..50], &labels[..50], 0.5).is_err());
    }

    #[test]
    fn score_dump_format() {
        let det = Detection {
            raw_score: -1.5,
            probability: 1.0,
            positive: true,
        };
        let text = render_score_dump(&[(4, det, Some(1)), (5, det, None)]);
        assert_eq!(
            text,
            "id,raw_score,probability,label\n4,-1.5,1,1\n5,-1.5,1,\n"
        );
    }
}
