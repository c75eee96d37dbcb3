//! Chisini-mean Jensen-Shannon divergences and the kernels built on them.
//!
//! For two distributions `P`, `Q` over the same states and a Chisini mean
//! `M` (arithmetic, geometric or harmonic) applied state-wise,
//!
//! ```text
//! CJSD(P‖Q)   = ½ [ Σ pᵢ ln(pᵢ/Mᵢ) + Σ qᵢ ln(qᵢ/Mᵢ) ]
//! M-CJSD(P‖Q) = √CJSD(P‖Q)
//! ```
//!
//! With `D` either divergence and `r = ‖xᵢ − xⱼ‖² / 2σ²`, the kernel forms are
//! `D·e^(−r)` (amplified), `e^(−D·r)` (scaled) and `D·e^(−D·r)` (amplified-scaled).
//! Two families × three means × three forms gives the 18 divergence kernels;
//! the plain RBF `e^(−r)` is carried three times under the AM/GM/HM tags so
//! that it is evaluated on the same randomised datasets, for 21 in total.

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FusedSample;
use crate::prob::{to_prob, ProbConfig, ProbVector};
use crate::util::{median, squared_distance};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChisiniMean {
    Am,
    Gm,
    Hm,
}

impl ChisiniMean {
    pub const ALL: [ChisiniMean; 3] = [ChisiniMean::Am, ChisiniMean::Gm, ChisiniMean::Hm];

    pub fn tag(self) -> &'static str {
        match self {
            ChisiniMean::Am => "am",
            ChisiniMean::Gm => "gm",
            ChisiniMean::Hm => "hm",
        }
    }
}

/// Arithmetic, geometric or harmonic mean of two non-negative numbers.
/// The harmonic mean of two zeros is taken as its limit, 0.
pub fn chisini_mean(p: f64, q: f64, kind: ChisiniMean) -> f64 {
    if p == q {
        return p;
    }
    match kind {
        ChisiniMean::Am => 0.5 * (p + q),
        ChisiniMean::Gm => (p * q).sqrt(),
        ChisiniMean::Hm => {
            let s = p + q;
            if s == 0.0 {
                0.0
            } else {
                2.0 * p * q / s
            }
        }
    }
}

pub fn cjsd(p: &ProbVector, q: &ProbVector, kind: ChisiniMean) -> Result<f64> {
    cjsd_slices(p.probs(), q.probs(), kind)
}

/// CJSD on raw slices; the state-wise terms are paired so that swapping the
/// arguments gives a bit-identical result.
pub fn cjsd_slices(p: &[f64], q: &[f64], kind: ChisiniMean) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "distributions have {} and {} states",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = chisini_mean(pi, qi, kind);
        let term = |x: f64| -> Result<f64> {
            if x == 0.0 {
                Ok(0.0)
            } else if m == 0.0 {
                Err(Error::numeric(
                    "unsmoothed zero state: midpoint vanishes where a probability is positive",
                ))
            } else {
                Ok(x * (x / m).ln())
            }
        };
        total += term(pi)? + term(qi)?;
    }
    Ok(0.5 * total)
}

pub fn mcjsd(p: &ProbVector, q: &ProbVector, kind: ChisiniMean) -> Result<f64> {
    // rounding can leave the AM divergence of near-identical inputs at -1e-17
    Ok(cjsd(p, q, kind)?.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelFamily {
    Cjsd,
    Mcjsd,
    Rbf,
}

impl KernelFamily {
    pub fn tag(self) -> &'static str {
        match self {
            KernelFamily::Cjsd => "cjsd",
            KernelFamily::Mcjsd => "mcjsd",
            KernelFamily::Rbf => "rbf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelForm {
    Amplified,
    Scaled,
    AmplifiedScaled,
    Plain,
}

impl KernelForm {
    pub const DIVERGENCE_FORMS: [KernelForm; 3] = [
        KernelForm::Amplified,
        KernelForm::Scaled,
        KernelForm::AmplifiedScaled,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            KernelForm::Amplified => "amplified",
            KernelForm::Scaled => "scaled",
            KernelForm::AmplifiedScaled => "amplified_scaled",
            KernelForm::Plain => "plain",
        }
    }

    /// Kernel value from a divergence and the scaled squared distance `r`.
    pub fn apply(self, divergence: f64, r: f64) -> f64 {
        match self {
            KernelForm::Amplified => divergence * (-r).exp(),
            KernelForm::Scaled => (-divergence * r).exp(),
            KernelForm::AmplifiedScaled => divergence * (-divergence * r).exp(),
            KernelForm::Plain => (-r).exp(),
        }
    }

    /// Whether `K(x, x)` is 1 (as opposed to 0).
    pub fn unit_diagonal(self) -> bool {
        matches!(self, KernelForm::Scaled | KernelForm::Plain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// For RBF only a randomisation tag.
    pub mean: ChisiniMean,
    pub form: KernelForm,
    pub sigma: f64,
    pub epsilon: f64,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        mean: ChisiniMean,
        form: KernelForm,
        sigma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let spec = KernelSpec {
            family,
            mean,
            form,
            sigma,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        let rbf = self.family == KernelFamily::Rbf;
        let plain = self.form == KernelForm::Plain;
        if rbf != plain {
            return Err(Error::invalid(format!(
                "form {} does not apply to family {}",
                self.form.tag(),
                self.family.tag()
            )));
        }
        Ok(())
    }

    /// `family:mean:form`, e.g. `mcjsd:am:amplified`.
    pub fn tag(&self) -> String {
        format!(
            "{}:{}:{}",
            self.family.tag(),
            self.mean.tag(),
            self.form.tag()
        )
    }

    pub fn with_sigma(&self, sigma: f64) -> KernelSpec {
        KernelSpec { sigma, ..*self }
    }

    pub fn uses_divergence(&self) -> bool {
        self.family != KernelFamily::Rbf
    }

    /// The divergence this kernel weights distances by (0 for RBF).
    pub fn divergence(&self, p: &ProbVector, q: &ProbVector) -> Result<f64> {
        match self.family {
            KernelFamily::Cjsd => cjsd(p, q, self.mean),
            KernelFamily::Mcjsd => mcjsd(p, q, self.mean),
            KernelFamily::Rbf => Ok(0.0),
        }
    }

    /// Kernel value given a precomputed divergence and squared distance.
    pub fn evaluate(&self, divergence: f64, squared_distance: f64) -> f64 {
        let r = squared_distance / (2.0 * self.sigma * self.sigma);
        self.form.apply(divergence, r)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Parsed `family:mean:form` tag without σ / ε.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelTag {
    pub family: KernelFamily,
    pub mean: ChisiniMean,
    pub form: KernelForm,
}

impl KernelTag {
    pub fn with_params(self, sigma: f64, epsilon: f64) -> Result<KernelSpec> {
        KernelSpec::new(self.family, self.mean, self.form, sigma, epsilon)
    }
}

impl FromStr for KernelTag {
    type Err = Error;

    /// Accepts `family:mean:form`; for RBF the form may be omitted and the
    /// mean defaults to `am` (`rbf`, `rbf:gm`).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<String> = s
            .split(':')
            .map(|p| p.trim().to_ascii_lowercase())
            .collect();
        let bad = || Error::invalid(format!("unrecognised kernel '{s}'"));
        let family = match parts[0].as_str() {
            "cjsd" => KernelFamily::Cjsd,
            "mcjsd" | "m-cjsd" => KernelFamily::Mcjsd,
            "rbf" => KernelFamily::Rbf,
            _ => return Err(bad()),
        };
        let mean = match parts.get(1).map(String::as_str) {
            Some("am") => ChisiniMean::Am,
            Some("gm") => ChisiniMean::Gm,
            Some("hm") => ChisiniMean::Hm,
            None if family == KernelFamily::Rbf => ChisiniMean::Am,
            _ => return Err(bad()),
        };
        let form = match parts.get(2).map(String::as_str) {
            Some("amplified") => KernelForm::Amplified,
            Some("scaled") => KernelForm::Scaled,
            Some("amplified_scaled") | Some("amplified-scaled") => KernelForm::AmplifiedScaled,
            Some("plain") => KernelForm::Plain,
            None if family == KernelFamily::Rbf => KernelForm::Plain,
            _ => return Err(bad()),
        };
        if parts.len() > 3 {
            return Err(bad());
        }
        let tag = KernelTag { family, mean, form };
        // reuse the family/form compatibility check
        tag.with_params(1.0, 0.0)?;
        Ok(tag)
    }
}

/// All 21 kernel versions: CJSD/M-CJSD × AM/GM/HM × three forms, then RBF
/// under the three mean tags.
pub fn enumerate_kernels(sigma: f64, epsilon: f64) -> Result<Vec<KernelSpec>> {
    let mut specs = Vec::with_capacity(21);
    for family in [KernelFamily::Cjsd, KernelFamily::Mcjsd] {
        for mean in ChisiniMean::ALL {
            for form in KernelForm::DIVERGENCE_FORMS {
                specs.push(KernelSpec::new(family, mean, form, sigma, epsilon)?);
            }
        }
    }
    for mean in ChisiniMean::ALL {
        specs.push(KernelSpec::new(
            KernelFamily::Rbf,
            mean,
            KernelForm::Plain,
            sigma,
            epsilon,
        )?);
    }
    Ok(specs)
}

/// Kernel between two samples whose distributions are `p` and `q`.
pub fn kernel_value(
    spec: &KernelSpec,
    x_i: &FusedSample,
    x_j: &FusedSample,
    p: &ProbVector,
    q: &ProbVector,
) -> Result<f64> {
    spec.validate()?;
    let d = spec.divergence(p, q)?;
    Ok(spec.evaluate(d, squared_distance(&x_i.channels, &x_j.channels)))
}

/// Symmetric n×n kernel matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    pub spec: Option<KernelSpec>,
    pub sample_ids: Vec<usize>,
}

impl GramMatrix {
    /// Wraps a row-major matrix, checking shape, finiteness and exact symmetry.
    pub fn from_rows(
        n: usize,
        values: Vec<f64>,
        spec: Option<KernelSpec>,
        sample_ids: Vec<usize>,
    ) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "gram of order {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if sample_ids.len() != n {
            return Err(Error::invalid("sample id count does not match gram order"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("gram matrix has non-finite entries"));
        }
        for i in 0..n {
            for j in 0..i {
                if values[i * n + j] != values[j * n + i] {
                    return Err(Error::invalid(format!("gram not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GramMatrix {
            n,
            values,
            spec,
            sample_ids,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `lambda` to the diagonal.
    pub fn with_jitter(mut self, lambda: f64) -> Self {
        for i in 0..self.n {
            self.values[i * self.n + i] += lambda;
        }
        self
    }

    /// Principal submatrix on `indices` (in that order).
    pub fn submatrix(&self, indices: &[usize]) -> GramMatrix {
        let m = indices.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                values.push(self.get(i, j));
            }
        }
        GramMatrix {
            n: m,
            values,
            spec: self.spec,
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
        }
    }
}

/// Pairwise squared distances and divergences over one sample set. Both are
/// independent of σ, so one table serves every σ and every kernel form of a
/// (family, mean) pair.
#[derive(Clone, Debug)]
pub struct PairTables {
    n: usize,
    sq_dist: Vec<f64>,
    /// Present only for divergence families.
    divergence: Option<Vec<f64>>,
    family: KernelFamily,
    mean: ChisiniMean,
    sample_ids: Vec<usize>,
}

impl PairTables {
    pub fn build(
        samples: &[FusedSample],
        probs: &[ProbVector],
        family: KernelFamily,
        mean: ChisiniMean,
    ) -> Result<Self> {
        let n = samples.len();
        if probs.len() != n {
            return Err(Error::invalid("one probability vector per sample required"));
        }
        let probe = KernelSpec {
            family,
            mean,
            form: if family == KernelFamily::Rbf {
                KernelForm::Plain
            } else {
                KernelForm::Amplified
            },
            sigma: 1.0,
            epsilon: 0.0,
        };
        let sq_dist = upper_triangle(n, |i, j| {
            Ok(squared_distance(&samples[i].channels, &samples[j].channels))
        })?;
        let divergence = if probe.uses_divergence() {
            Some(upper_triangle(n, |i, j| {
                probe.divergence(&probs[i], &probs[j])
            })?)
        } else {
            None
        };
        Ok(PairTables {
            n,
            sq_dist,
            divergence,
            family,
            mean,
            sample_ids: samples.iter().map(|s| s.id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, spec: &KernelSpec) -> Result<()> {
        spec.validate()?;
        if spec.family != self.family || (spec.uses_divergence() && spec.mean != self.mean) {
            return Err(Error::invalid(format!(
                "tables built for {}:{} cannot serve {}",
                self.family.tag(),
                self.mean.tag(),
                spec.tag()
            )));
        }
        Ok(())
    }

    fn value(&self, spec: &KernelSpec, i: usize, j: usize) -> f64 {
        let k = i * self.n + j;
        let d = self.divergence.as_ref().map_or(0.0, |d| d[k]);
        spec.evaluate(d, self.sq_dist[k])
    }

    /// Full Gram matrix for `spec`.
    pub fn gram(&self, spec: &KernelSpec) -> Result<GramMatrix> {
        self.check(spec)?;
        let values = (0..self.n * self.n)
            .map(|k| self.value(spec, k / self.n, k % self.n))
            .collect();
        GramMatrix::from_rows(self.n, values, Some(*spec), self.sample_ids.clone())
    }

    /// Kernel values between `rows` and `cols` (both indices into the table).
    pub fn block(
        &self,
        spec: &KernelSpec,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        self.check(spec)?;
        Ok(rows
            .iter()
            .map(|&i| cols.iter().map(|&j| self.value(spec, i, j)).collect())
            .collect())
    }

    /// Median pairwise Euclidean distance among `indices`.
    pub fn median_distance(&self, indices: &[usize]) -> Option<f64> {
        let mut d = Vec::with_capacity(indices.len() * indices.len().saturating_sub(1) / 2);
        for (a, &i) in indices.iter().enumerate() {
            for &j in &indices[a + 1..] {
                d.push(self.sq_dist[i * self.n + j].sqrt());
            }
        }
        median(&d)
    }
}

/// Fills a symmetric n×n matrix from the upper triangle. Every entry is
/// computed independently, so the result does not depend on thread count.
fn upper_triangle<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let row = |i: usize| -> Result<Vec<f64>> { (i..n).map(|j| f(i, j)).collect() };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(row).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect::<Result<_>>()?;

    let mut out = vec![0.0; n * n];
    for (i, r) in rows.iter().enumerate() {
        for (off, &v) in r.iter().enumerate() {
            let j = i + off;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// Probability vectors for every sample. The kernel's ε replaces the one in
/// `prob_config`.
pub fn probs_for(
    samples: &[FusedSample],
    prob_config: &ProbConfig,
    epsilon: f64,
) -> Result<Vec<ProbVector>> {
    let cfg = ProbConfig {
        epsilon,
        ..*prob_config
    };
    samples.iter().map(|s| to_prob(s, &cfg)).collect()
}

/// Gram matrix of `spec` over `samples`.
pub fn gram(
    spec: &KernelSpec,
    samples: &[FusedSample],
    prob_config: &ProbConfig,
) -> Result<GramMatrix> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot build a gram matrix of no samples"));
    }
    spec.validate()?;
    let probs = if spec.uses_divergence() {
        probs_for(samples, prob_config, spec.epsilon)?
    } else {
        // RBF ignores distributions; skip the work
        let uniform = ProbVector::from_weights(&[1.0], 0.0)?;
        vec![uniform; samples.len()]
    };
    PairTables::build(samples, &probs, spec.family, spec.mean)?.gram(spec)
}

/// Kernel rows between `queries` and `train`: `out[q][t] = K(query q, train t)`.
pub fn cross_kernel(
    spec: &KernelSpec,
    queries: &[FusedSample],
    train: &[FusedSample],
    prob_config: &ProbConfig,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let (qp, tp) = if spec.uses_divergence() {
        (
            probs_for(queries, prob_config, spec.epsilon)?,
            probs_for(train, prob_config, spec.epsilon)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    queries
        .iter()
        .enumerate()
        .map(|(a, q)| {
            train
                .iter()
                .enumerate()
                .map(|(b, t)| {
                    let d = if spec.uses_divergence() {
                        spec.divergence(&qp[a], &tp[b])?
                    } else {
                        0.0
                    };
                    Ok(spec.evaluate(d, squared_distance(&q.channels, &t.channels)))
                })
                .collect()
        })
        .collect()
}

/// Median pairwise Euclidean distance, the default σ. Large sets are
/// subsampled at an even stride (at most 1000 samples) to bound the cost.
pub fn median_heuristic_sigma(samples: &[FusedSample]) -> Result<f64> {
    const CAP: usize = 1000;
    let stride = samples.len().div_ceil(CAP).max(1);
    let picked: Vec<&FusedSample> = samples.iter().step_by(stride).collect();
    let mut d = Vec::new();
    for (a, x) in picked.iter().enumerate() {
        for y in &picked[a + 1..] {
            d.push(squared_distance(&x.channels, &y.channels).sqrt());
        }
    }
    match median(&d) {
        Some(m) if m > 0.0 => Ok(m),
        _ => Err(Error::invalid(
            "median heuristic needs at least two distinct samples",
        )),
    }
}
