//! SMO solvers on precomputed Gram matrices.
//!
//! Both problems are cast as
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  yᵀα = const,  0 ≤ αᵢ ≤ u
//! ```
//!
//! * C-SVC: `Q = yᵢyⱼKᵢⱼ`, `p = −1`, `u = C`, `α₀ = 0`.
//! * ν one-class: `Q = K`, `p = 0`, `y = 1`, `u = 1/(νn)`, `Σα = 1`.
//!
//! Working pairs are the maximal violating pair; the solver stops once the
//! gap between the two is below `tol`. Non-PSD matrices (the amplified
//! kernel forms have a zero diagonal) are accepted: a non-positive pair
//! curvature is replaced by a tiny positive one, which sends the step to the
//! box boundary. The solution is then a stationary point rather than a
//! certified optimum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kernels::{GramMatrix, KernelSpec};
use crate::util::format_g17;
use crate::{Error, Result};

const TAU: f64 = 1e-12;

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_C: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    /// Iteration cap; `None` means `max(10⁶, 100·n)`.
    pub max_iter: Option<usize>,
    /// Keep the dual objective after every step in [`TrainReport`].
    pub record_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: None,
            record_objective: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SvmKind {
    CSvc { c: f64 },
    OneClass { nu: f64 },
}

/// A trained model. The decision value for a query with kernel row `k`
/// (kernel values against every training sample) is
/// `Σₛ alphas[s] · k[support_ids[s]] + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kind: SvmKind,
    pub spec: Option<KernelSpec>,
    /// Indices into the training set.
    pub support_ids: Vec<usize>,
    /// `αᵢyᵢ` for C-SVC, `αᵢ` for one-class.
    pub alphas: Vec<f64>,
    /// `b` for C-SVC, `−ρ` for one-class.
    pub bias: f64,
    pub n_train: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal-violating-pair gap.
    pub gap: f64,
    /// Dual objective (maximisation form) after each step, starting with the
    /// initial point. Empty unless requested.
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// +1 or −1; an exact zero decision maps to +1.
    pub class: i8,
    pub decision: f64,
}

impl SvmModel {
    pub fn decision_value(&self, kernel_row: &[f64]) -> Result<f64> {
        if kernel_row.len() != self.n_train {
            return Err(Error::invalid(format!(
                "kernel row has {} entries, model was trained on {}",
                kernel_row.len(),
                self.n_train
            )));
        }
        let sum: f64 = self
            .support_ids
            .iter()
            .zip(&self.alphas)
            .map(|(&i, &a)| a * kernel_row[i])
            .sum();
        Ok(sum + self.bias)
    }

    /// Full-length coefficient vector (zeros for non-support samples).
    pub fn dense_alphas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_train];
        for (&i, &a) in self.support_ids.iter().zip(&self.alphas) {
            out[i] = a;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn predict(model: &SvmModel, kernel_row: &[f64]) -> Result<Prediction> {
    let decision = model.decision_value(kernel_row)?;
    Ok(Prediction {
        class: if decision >= 0.0 { 1 } else { -1 },
        decision,
    })
}

fn check_gram(gram: &GramMatrix) -> Result<()> {
    if gram.order() == 0 {
        return Err(Error::invalid("empty gram matrix"));
    }
    if gram.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("gram matrix has non-finite entries"));
    }
    Ok(())
}

pub fn train_csvc(
    gram: &GramMatrix,
    labels: &[f64],
    c: f64,
    opts: &SolverOptions,
) -> Result<SvmModel> {
    train_csvc_with_report(gram, labels, c, opts).map(|(m, _)| m)
}

pub fn train_csvc_with_report(
    gram: &GramMatrix,
    labels: &[f64],
    c: f64,
    opts: &SolverOptions,
) -> Result<(SvmModel, TrainReport)> {
    check_gram(gram)?;
    let n = gram.order();
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for a gram of order {n}",
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::invalid(
            "C-SVC needs both classes in the training labels",
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be > 0, got {c}")));
    }

    // Solve in the orientation where the first label is +1 and negate the
    // result otherwise, so that y -> -y gives exactly negated decisions.
    let flip = labels[0] < 0.0;
    let y: Vec<f64> = labels.iter().map(|&v| if flip { -v } else { v }).collect();
    let mut solver = Smo::new(gram, y, vec![-1.0; n], vec![0.0; n], c, opts);
    let report = solver.run();
    let rho = solver.rho();
    let coef: Vec<f64> = solver
        .alpha
        .iter()
        .zip(&solver.y)
        .map(|(a, y)| a * y)
        .collect();
    let sign = if flip { -1.0 } else { 1.0 };
    let (support_ids, alphas) = sparse(&coef, sign);
    Ok((
        SvmModel {
            kind: SvmKind::CSvc { c },
            spec: gram.spec,
            support_ids,
            alphas,
            bias: sign * -rho,
            n_train: n,
        },
        report,
    ))
}

pub fn train_ocsvm(gram: &GramMatrix, nu: f64, opts: &SolverOptions) -> Result<SvmModel> {
    train_ocsvm_with_report(gram, nu, opts).map(|(m, _)| m)
}

pub fn train_ocsvm_with_report(
    gram: &GramMatrix,
    nu: f64,
    opts: &SolverOptions,
) -> Result<(SvmModel, TrainReport)> {
    check_gram(gram)?;
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid(format!("nu must lie in (0, 1], got {nu}")));
    }
    let n = gram.order();
    let upper = 1.0 / (nu * n as f64);
    // fill whole bounds first: floor(νn) at the bound, the remainder next
    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        *a = upper.min(left);
        left -= *a;
    }
    let mut solver = Smo::new(gram, vec![1.0; n], vec![0.0; n], alpha, upper, opts);
    let report = solver.run();
    let rho = solver.rho();
    let (support_ids, alphas) = sparse(&solver.alpha, 1.0);
    Ok((
        SvmModel {
            kind: SvmKind::OneClass { nu },
            spec: gram.spec,
            support_ids,
            alphas,
            bias: -rho,
            n_train: n,
        },
        report,
    ))
}

fn sparse(coef: &[f64], sign: f64) -> (Vec<usize>, Vec<f64>) {
    coef.iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(i, a)| (i, sign * a))
        .unzip()
}

struct Smo<'a> {
    gram: &'a GramMatrix,
    y: Vec<f64>,
    p: Vec<f64>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    upper: f64,
    tol: f64,
    max_iter: usize,
    record: bool,
}

impl<'a> Smo<'a> {
    fn new(
        gram: &'a GramMatrix,
        y: Vec<f64>,
        p: Vec<f64>,
        alpha: Vec<f64>,
        upper: f64,
        opts: &SolverOptions,
    ) -> Self {
        let n = gram.order();
        let mut smo = Smo {
            gram,
            y,
            p: p.clone(),
            alpha,
            grad: p,
            upper,
            tol: opts.tol,
            max_iter: opts.max_iter.unwrap_or((100 * n).max(1_000_000)),
            record: opts.record_objective,
        };
        for j in 0..n {
            if smo.alpha[j] != 0.0 {
                let aj = smo.alpha[j];
                for i in 0..n {
                    smo.grad[i] += smo.q(i, j) * aj;
                }
            }
        }
        smo
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.gram.get(i, j)
    }

    fn at_upper(&self, i: usize) -> bool {
        self.alpha[i] >= self.upper
    }

    fn at_lower(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0
    }

    /// Dual objective in maximisation form, `−(½αᵀQα + pᵀα)`.
    fn objective(&self) -> f64 {
        // ½αᵀQα + pᵀα = ½ αᵀ(G + p)
        -0.5 * self
            .alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
    }

    /// Maximal violating pair and its gap.
    fn select(&self) -> (Option<usize>, Option<usize>, f64) {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut best_i, mut best_j) = (None, None);
        for t in 0..self.alpha.len() {
            let v = -self.y[t] * self.grad[t];
            let up = if self.y[t] > 0.0 {
                !self.at_upper(t)
            } else {
                !self.at_lower(t)
            };
            let low = if self.y[t] > 0.0 {
                !self.at_lower(t)
            } else {
                !self.at_upper(t)
            };
            if up && v > gmax {
                gmax = v;
                best_i = Some(t);
            }
            if low && v < gmin {
                gmin = v;
                best_j = Some(t);
            }
        }
        (best_i, best_j, gmax - gmin)
    }

    fn run(&mut self) -> TrainReport {
        let mut report = TrainReport::default();
        if self.record {
            report.objective_trace.push(self.objective());
        }
        loop {
            let (i, j, gap) = self.select();
            report.gap = gap;
            let (Some(i), Some(j)) = (i, j) else {
                report.converged = true;
                break;
            };
            if gap < self.tol {
                report.converged = true;
                break;
            }
            if report.iterations >= self.max_iter {
                log::warn!("SMO stopped at the iteration cap with gap {gap:.3e}");
                break;
            }
            self.step(i, j);
            report.iterations += 1;
            if self.record {
                report.objective_trace.push(self.objective());
            }
        }
        report
    }

    /// Two-variable update on (i, j) with clipping to the box.
    fn step(&mut self, i: usize, j: usize) {
        let c = self.upper;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (qii, qjj, qij) = (self.q(i, i), self.q(j, j), self.q(i, j));
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.alpha.len() {
            self.grad[t] += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }

    /// Offset ρ: mean of `yᵢGᵢ` over free variables, or the midpoint of the
    /// feasible interval when none is free.
    fn rho(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let (mut free, mut sum) = (0usize, 0.0);
        for i in 0..self.alpha.len() {
            let yg = self.y[i] * self.grad[i];
            if self.at_upper(i) {
                if self.y[i] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(i) {
                if self.y[i] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}

/// Dual objective `Σαᵢ − ½ΣΣ αᵢαⱼyᵢyⱼKᵢⱼ` of a C-SVC model on its training Gram.
pub fn csvc_dual_objective(gram: &GramMatrix, model: &SvmModel) -> f64 {
    // with coefficients cᵢ = αᵢyᵢ: Σ|cᵢ| − ½ cᵀKc
    let coef = model.dense_alphas();
    let n = gram.order();
    let mut quad = 0.0;
    for i in 0..n {
        if coef[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += coef[i] * coef[j] * gram.get(i, j);
        }
    }
    coef.iter().map(|c| c.abs()).sum::<f64>() - 0.5 * quad
}

/// Per-sample KKT residuals of a C-SVC model on its training data: how far
/// each `yᵢf(xᵢ)` is from the side of 1 its multiplier requires.
pub fn kkt_residuals(gram: &GramMatrix, labels: &[f64], model: &SvmModel) -> Result<Vec<f64>> {
    let SvmKind::CSvc { c } = model.kind else {
        return Err(Error::invalid("KKT residuals are defined for C-SVC models"));
    };
    let coef = model.dense_alphas();
    (0..gram.order())
        .map(|i| {
            let margin = labels[i] * model.decision_value(gram.row(i))?;
            let a = coef[i].abs();
            Ok(if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            })
        })
        .collect()
}

/// Precomputed-kernel text: one line per sample,
/// `<label> 0:<serial> 1:<K(i,1)> … n:<K(i,n)>`, serials from 1, values with
/// 17 significant digits.
pub fn render_precomputed(gram: &GramMatrix, labels: &[f64]) -> Result<String> {
    let n = gram.order();
    if n == 0 {
        return Err(Error::invalid("nothing to export: empty gram matrix"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for a gram of order {n}",
            labels.len()
        )));
    }
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        out.push_str(&format_g17(*label));
        out.push_str(&format!(" 0:{}", i + 1));
        for j in 0..n {
            out.push_str(&format!(" {}:{}", j + 1, format_g17(gram.get(i, j))));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_precomputed(text: &str) -> Result<(GramMatrix, Vec<f64>)> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = rows.len();
    if n == 0 {
        return Err(Error::Format("no rows in precomputed kernel file".into()));
    }
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * n);
    for (r, line) in rows.iter().enumerate() {
        let row = r + 1;
        let bad = |reason: String| Error::MalformedRow { row, reason };
        let mut tokens = line.split_whitespace();
        let label: f64 = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing label".into()))?;
        labels.push(label);
        for (expect, tok) in tokens.enumerate() {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| bad(format!("token '{tok}' is not index:value")))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad index '{idx}'")))?;
            if idx != expect {
                return Err(bad(format!("expected index {expect}, found {idx}")));
            }
            let val: f64 = val.parse().map_err(|_| bad(format!("bad value '{val}'")))?;
            if idx == 0 {
                if val != row as f64 {
                    return Err(bad(format!("serial {val} does not match row {row}")));
                }
            } else {
                values.push(val);
            }
        }
        if values.len() != row * n {
            return Err(bad(format!("expected {n} kernel values")));
        }
    }
    let gram = GramMatrix::from_rows(n, values, None, (0..n).collect())?;
    Ok((gram, labels))
}

/// Writes the precomputed-kernel file. Nothing is written on error.
pub fn export_precomputed(gram: &GramMatrix, labels: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let text = render_precomputed(gram, labels)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
