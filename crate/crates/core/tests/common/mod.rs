//! Reference implementations used to check the library. They share no code
//! with it beyond plain data types.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random distribution on `n` states with every entry at least `floor`.
pub fn random_distribution(rng: &mut impl Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| -rng.random::<f64>().max(1e-300).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|v| floor + v / total).collect();
    let z: f64 = p.iter().sum();
    p.iter().map(|v| v / z).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Jensen-Shannon divergence through entropies: `H(M) − (H(P) + H(Q))/2`.
pub fn jsd_entropy_form(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    entropy(&m) - 0.5 * (entropy(p) + entropy(q))
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Symmetrised KL over four, which the geometric-midpoint divergence
/// reduces to.
pub fn half_jeffreys(p: &[f64], q: &[f64]) -> f64 {
    (kl(p, q) + kl(q, p)) / 4.0
}

/// Solution of the C-SVC dual by cyclic pairwise coordinate descent.
pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

impl QpSolution {
    pub fn decision(&self, y: &[f64], kernel_row: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(y)
            .zip(kernel_row)
            .map(|((a, y), k)| a * y * k)
            .sum::<f64>()
            + self.bias
    }
}

/// `max Σα − ½ΣΣ αᵢαⱼyᵢyⱼKᵢⱼ` over `0 ≤ α ≤ C`, `Σαᵢyᵢ = 0`. Sweeps every
/// pair (i, j) in a fixed order and solves each two-variable problem exactly
/// along the direction that keeps the equality constraint, until a whole
/// sweep changes nothing. The gradient is recomputed from scratch.
pub fn cyclic_cd_csvc(k: &[Vec<f64>], y: &[f64], c: f64) -> QpSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    for _sweep in 0..200_000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                // move α_i += y_i t, α_j -= y_j t keeps Σαy fixed
                let grad: Vec<f64> = (0..n)
                    .map(|a| 1.0 - (0..n).map(|b| q(a, b) * alpha[b]).sum::<f64>())
                    .collect();
                let slope = y[i] * grad[i] - y[j] * grad[j];
                let curv = k[i][i] + k[j][j] - 2.0 * k[i][j];
                let mut t = if curv > 1e-15 {
                    slope / curv
                } else if slope > 0.0 {
                    f64::INFINITY
                } else if slope < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                };
                // box limits on t from both coordinates
                let limits = |a: f64, s: f64| -> (f64, f64) {
                    if s > 0.0 {
                        (-a, c - a)
                    } else {
                        (a - c, a)
                    }
                };
                let (lo_i, hi_i) = limits(alpha[i], y[i]);
                let (lo_j, hi_j) = limits(alpha[j], -y[j]);
                let lo = lo_i.max(lo_j);
                let hi = hi_i.min(hi_j);
                t = t.clamp(lo, hi);
                if t != 0.0 {
                    alpha[i] = (alpha[i] + y[i] * t).clamp(0.0, c);
                    alpha[j] = (alpha[j] - y[j] * t).clamp(0.0, c);
                    moved = moved.max(t.abs());
                }
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    let g: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * y[j] * k[i][j]).sum())
        .collect();
    let margin = 1e-9 * c;
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > margin && alpha[i] < c - margin)
        .collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - g[i]).sum::<f64>() / free.len() as f64
    } else {
        let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let at_zero = alpha[i] <= margin;
            // y_i (g_i + b) ≥ 1 at zero, ≤ 1 at C
            let edge = y[i] - g[i];
            if at_zero == (y[i] > 0.0) {
                lower = lower.max(edge);
            } else {
                upper = upper.min(edge);
            }
        }
        0.5 * (lower + upper)
    };
    let objective = alpha.iter().sum::<f64>()
        - 0.5
            * (0..n)
                .map(|i| (0..n).map(|j| alpha[i] * alpha[j] * q(i, j)).sum::<f64>())
                .sum::<f64>();
    QpSolution {
        alpha,
        bias,
        objective,
    }
}

/// Weighted isotonic least squares by exhaustive search over contiguous
/// block partitions of the (already sorted) points. Only for n ≤ ~16.
pub fn brute_force_isotonic(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = targets.len();
    assert!((1..=16).contains(&n));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        // bit b set: a block boundary after element b
        let mut fit = vec![0.0; n];
        let mut start = 0;
        let mut means = Vec::new();
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let w: f64 = weights[start..end].iter().sum();
                let s: f64 = (start..end).map(|i| weights[i] * targets[i]).sum();
                let m = s / w;
                fit[start..end].fill(m);
                means.push(m);
                start = end;
            }
        }
        if means.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let sse: f64 = (0..n)
            .map(|i| weights[i] * (targets[i] - fit[i]).powi(2))
            .sum();
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, fit));
        }
    }
    best.expect("a single block is always feasible").1
}

/// Row-major RBF Gram of `points` with bandwidth `gamma`.
pub fn rbf_rows(points: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (-gamma * d).exp()
                })
                .collect()
        })
        .collect()
}
