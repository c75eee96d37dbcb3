//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use fusegram::anomaly::{
    average_path_length, fit_gmm, fit_gmm_with_report, fit_iforest, iforest_score, pava,
    score_from_path_length, CovarianceType, GmmOptions, DEFAULT_COMPONENTS, DEFAULT_MAX_ITER,
    DEFAULT_PSI, DEFAULT_REG, DEFAULT_TREES,
};
use fusegram::codec::{decode_padded, encode_channels, N_PIXELS};
use fusegram::data::{synthesize, SynthSpec};
use fusegram::eval::{
    nested_cv, novelty_eval, render_fold_csv, render_summary_csv, CvConfig, NoveltyConfig,
    NoveltyMethod,
};
use fusegram::features::{
    gist, pca_fit, pca_select_k, resize_nearest, GistDescriptor, GistParams, GrayImage,
    DESCRIPTOR_LEN, RESIZED_SIDE,
};
use fusegram::kernels::{
    cjsd_slices, enumerate_kernels, median_heuristic_sigma, ChisiniMean, GramMatrix, KernelFamily,
};
use fusegram::prob::{ProbVector, DEFAULT_EPSILON};
use fusegram::svm::{csvc_dual_objective, predict, train_csvc, SolverOptions};
use fusegram::N_CHANNELS;

use common::{
    brute_force_isotonic, cyclic_cd_csvc, half_jeffreys, jsd_entropy_form, rbf_rows, rng,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gauss(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn smoothed_pair(r: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let p = common::random_distribution(r, N_CHANNELS, 0.0);
    let q = common::random_distribution(r, N_CHANNELS, 0.0);
    (
        ProbVector::from_weights(&p, DEFAULT_EPSILON)
            .unwrap()
            .probs()
            .to_vec(),
        ProbVector::from_weights(&q, DEFAULT_EPSILON)
            .unwrap()
            .probs()
            .to_vec(),
    )
}

fn kernel_count() -> Outcome {
    let specs = enumerate_kernels(1.0, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let divergence = specs.iter().filter(|s| s.uses_divergence()).count();
    let rbf = specs
        .iter()
        .filter(|s| s.family == KernelFamily::Rbf)
        .count();
    let mut tags: Vec<String> = specs.iter().map(|s| s.tag()).collect();
    tags.sort();
    tags.dedup();
    ensure(
        specs.len() == 21 && divergence == 18 && rbf == 3 && tags.len() == 21,
        || {
            format!(
                "{} specs ({divergence} divergence, {rbf} rbf, {} distinct)",
                specs.len(),
                tags.len()
            )
        },
    )?;
    Ok("21 specs = 18 divergence + 3 rbf, all tags distinct".into())
}

fn divergence_oracles() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut r = rng(2);
    let (mut worst_am, mut worst_gm) = (0.0f64, 0.0f64);
    for k in 0..1000 {
        let (p, q) = smoothed_pair(&mut r);
        let am = cjsd_slices(&p, &q, ChisiniMean::Am).unwrap();
        let gm = cjsd_slices(&p, &q, ChisiniMean::Gm).unwrap();
        let hm = cjsd_slices(&p, &q, ChisiniMean::Hm).unwrap();
        worst_am = worst_am.max((am - jsd_entropy_form(&p, &q)).abs());
        worst_gm = worst_gm.max((gm - half_jeffreys(&p, &q)).abs());
        ensure(0.0 <= am && am <= gm && gm <= hm, || {
            format!("pair {k}: order {am} {gm} {hm}")
        })?;
    }
    ensure(worst_am <= TOL && worst_gm <= TOL, || {
        format!("max error AM {worst_am:e}, GM {worst_gm:e} > {TOL:e}")
    })?;
    Ok(format!(
        "1000 pairs; max |AM - JSD| {worst_am:.1e}, |GM - KL/4| {worst_gm:.1e}; AM <= GM <= HM"
    ))
}

fn triangle_inequality() -> Outcome {
    const SLACK: f64 = 1e-12;
    let mut r = rng(3);
    let d = |a: &[f64], b: &[f64]| cjsd_slices(a, b, ChisiniMean::Am).unwrap().max(0.0).sqrt();
    let mut tightest = f64::INFINITY;
    for k in 0..10_000 {
        let (p, q) = smoothed_pair(&mut r);
        let (s, _) = smoothed_pair(&mut r);
        // one third of triples have a near-duplicate vertex, where the bound is tight
        let s = if k % 3 == 0 {
            let mix: Vec<f64> = p
                .iter()
                .zip(&s)
                .map(|(a, b)| 0.999 * a + 0.001 * b)
                .collect();
            mix
        } else {
            s
        };
        for (a, b, c) in [(&p, &q, &s), (&q, &s, &p), (&s, &p, &q)] {
            let gap = d(a, b) + d(b, c) - d(a, c);
            tightest = tightest.min(gap);
            ensure(gap >= -SLACK, || format!("triple {k}: violation {gap:e}"))?;
        }
    }
    Ok(format!(
        "10^4 triples x 3 orderings; smallest slack {tightest:.2e}"
    ))
}

fn codec_round_trip() -> Outcome {
    let mut r = rng(4);
    let mut worst_ratio = 0.0f64;
    for k in 0..10_000 {
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let offset = r.random_range(-2.0..2.0) * scale;
        let ch: [f64; N_CHANNELS] =
            std::array::from_fn(|_| offset + scale * r.random_range(-1.0..1.0));
        let img = encode_channels(&ch).map_err(|e| e.to_string())?;
        let back = decode_padded(&img).map_err(|e| e.to_string())?;
        let lo = ch.iter().copied().fold(0.0, f64::min);
        let hi = ch.iter().copied().fold(0.0, f64::max);
        let bound = (hi - lo) / 510.0;
        for i in 0..N_PIXELS {
            let truth = if i < N_CHANNELS { ch[i] } else { 0.0 };
            let err = (back[i] - truth).abs();
            worst_ratio = worst_ratio.max(err / bound);
            ensure(err <= bound, || {
                format!("sample {k} pixel {i}: error {err:e} > {bound:e}")
            })?;
        }
    }
    for c in [0.0, 1.0, -3.5, 1e6, 7e-9] {
        let ch = [c; N_CHANNELS];
        let back = decode_padded(&encode_channels(&ch).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(
            back[..N_CHANNELS].iter().all(|&v| v == c)
                && back[N_CHANNELS..].iter().all(|&v| v == 0.0),
            || format!("constant {c} not recovered exactly: {back:?}"),
        )?;
    }
    Ok(format!(
        "10^4 samples; worst error / bound = {worst_ratio:.4}; constants exact"
    ))
}

fn smo_against_oracle() -> Outcome {
    const OBJ_TOL: f64 = 1e-6;
    const SOLVER_TOL: f64 = 1e-9;
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for problem in 0..200 {
        let n = r.random_range(2..=8usize);
        let dim = r.random_range(1..=4usize);
        let pts: Vec<Vec<f64>> = (0..n + 5)
            .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut y: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        y[0] = 1.0;
        y[n - 1] = -1.0;
        let gamma = [0.1, 1.0, 5.0][problem % 3];
        let c = [0.1, 1.0, 10.0, 100.0][problem % 4];
        let all = rbf_rows(&pts, gamma);
        let train: Vec<Vec<f64>> = all[..n].iter().map(|row| row[..n].to_vec()).collect();
        let gram = GramMatrix::from_rows(n, train.concat(), None, (0..n).collect())
            .map_err(|e| e.to_string())?;
        let model = train_csvc(&gram, &y, c, &SolverOptions::with_tol(SOLVER_TOL))
            .map_err(|e| e.to_string())?;
        let oracle = cyclic_cd_csvc(&train, &y, c);
        let gap = (csvc_dual_objective(&gram, &model) - oracle.objective).abs();
        worst = worst.max(gap);
        ensure(gap <= OBJ_TOL, || {
            format!("problem {problem}: objective gap {gap:e}")
        })?;
        for row in &all {
            let k = &row[..n];
            let ours = predict(&model, k).map_err(|e| e.to_string())?.class;
            let theirs = if oracle.decision(&y, k) >= 0.0 { 1 } else { -1 };
            ensure(ours == theirs, || {
                format!("problem {problem}: prediction {ours} vs oracle {theirs}")
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "200 problems, max objective gap {worst:.1e}, {checked} predictions identical"
    ))
}

fn isolation_forest() -> Outcome {
    ensure(average_path_length(2) == 1.0, || {
        format!("c(2) = {}", average_path_length(2))
    })?;
    let half = score_from_path_length(average_path_length(DEFAULT_PSI), DEFAULT_PSI);
    ensure(half == 0.5, || format!("score at E[h] = c(psi) is {half}"))?;
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut r = rng(600 + seed);
        let mut data: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..2).map(|_| gauss(&mut r)).collect())
            .collect();
        for _ in 0..5 {
            let a = r.random_range(0.0..std::f64::consts::TAU);
            data.push(vec![10.0 * a.cos(), 10.0 * a.sin()]);
        }
        let m = fit_iforest(&data, DEFAULT_TREES, DEFAULT_PSI, seed).map_err(|e| e.to_string())?;
        let mut order: Vec<(f64, usize)> = data
            .iter()
            .enumerate()
            .map(|(i, x)| (iforest_score(&m, x), i))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        if order[..5].iter().all(|&(_, i)| i >= 500) {
            hits += 1;
        }
    }
    ensure(hits >= 9, || {
        format!("outliers ranked top-5 in {hits}/10 seeds")
    })?;
    Ok(format!(
        "c(2) = 1, s = 0.5 at c(psi), outliers top-5 in {hits}/10 seeds"
    ))
}

fn isotonic_oracle() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for inst in 0..500 {
        let n = r.random_range(1..=10usize);
        let ties = inst % 2 == 1;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if ties {
                    r.random_range(0..4) as f64
                } else {
                    r.random_range(-5.0..5.0)
                }
            })
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
        let map = pava(&scores, &targets, &weights).map_err(|e| e.to_string())?;
        ensure(map.values.windows(2).all(|w| w[0] <= w[1]), || {
            format!("instance {inst}: decreasing fit")
        })?;

        // the oracle sees one pooled point per distinct score
        let mut distinct: Vec<f64> = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let pooled: Vec<(f64, f64)> = distinct
            .iter()
            .map(|&s| {
                let idx: Vec<usize> = (0..n).filter(|&i| scores[i] == s).collect();
                let w: f64 = idx.iter().map(|&i| weights[i]).sum();
                (
                    idx.iter().map(|&i| weights[i] * targets[i]).sum::<f64>() / w,
                    w,
                )
            })
            .collect();
        let (t, w): (Vec<f64>, Vec<f64>) = pooled.into_iter().unzip();
        let fit = brute_force_isotonic(&t, &w);
        for (s, f) in distinct.iter().zip(&fit) {
            let err = (map.predict(*s) - f).abs();
            worst = worst.max(err);
            ensure(err <= TOL, || format!("instance {inst}: error {err:e}"))?;
        }
    }
    Ok(format!(
        "500 instances, max deviation from brute force {worst:.1e}"
    ))
}

fn gmm_em() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut worst_drop = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng(800 + seed);
        let centres = [
            [0.0, 0.0, 0.0, 0.0],
            [4.0, 0.0, -2.0, 1.0],
            [0.0, 5.0, 1.0, -3.0],
        ];
        let data: Vec<Vec<f64>> = (0..150)
            .map(|i| {
                let c = &centres[i % 3];
                c.iter()
                    .map(|m| m + gauss(&mut r) * (1.0 + (i % 2) as f64))
                    .collect()
            })
            .collect();
        let k = 1 + (seed as usize % 5);
        let opts = GmmOptions {
            k,
            seed,
            ..Default::default()
        };
        let (_, rep) = fit_gmm_with_report(&data, &opts).map_err(|e| e.to_string())?;
        for w in rep.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
            ensure(w[1] >= w[0] - SLACK, || {
                format!("seed {seed}: LL fell {} -> {}", w[0], w[1])
            })?;
        }
    }
    let mut r = rng(900);
    let data: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            (0..5)
                .map(|f| f as f64 + (1.0 + f as f64) * gauss(&mut r))
                .collect()
        })
        .collect();
    let m = fit_gmm(
        &data,
        &GmmOptions {
            k: 1,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let c = &m.components[0];
    for f in 0..5 {
        let mean = data.iter().map(|x| x[f]).sum::<f64>() / 300.0;
        let var = data.iter().map(|x| (x[f] - mean).powi(2)).sum::<f64>() / 300.0;
        ensure(
            (c.mean[f] - mean).abs() <= 1e-9
                && (c.covariance[f] - var.max(DEFAULT_REG)).abs() <= 1e-9,
            || {
                format!(
                    "K=1 feature {f}: ({}, {}) vs ({mean}, {var})",
                    c.mean[f], c.covariance[f]
                )
            },
        )?;
    }
    Ok(format!(
        "100 runs monotone (largest drop {worst_drop:.1e}); K=1 closed form within 1e-9"
    ))
}

fn gist_checks() -> Outcome {
    const ZERO_TOL: f64 = 1e-9;
    const ROT_TOL: f64 = 1e-6;
    let p = GistParams::default();
    let tiny = GrayImage::new(4, 4, (0..16).map(|k| (k * 16) as f64).collect())
        .map_err(|e| e.to_string())?;
    let big = resize_nearest(&tiny, RESIZED_SIDE).map_err(|e| e.to_string())?;
    for im in [&tiny, &big] {
        let d = gist(im, &p).map_err(|e| e.to_string())?;
        ensure(
            d.values.len() == DESCRIPTOR_LEN && DESCRIPTOR_LEN == 512,
            || format!("length {}", d.values.len()),
        )?;
    }
    let flat = GrayImage::new(64, 64, vec![173.0; 64 * 64]).map_err(|e| e.to_string())?;
    let d = gist(&flat, &p).map_err(|e| e.to_string())?;
    let peak = d.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ensure(peak <= ZERO_TOL, || {
        format!("constant image gives {peak:e}")
    })?;

    let n = 64;
    let grating = GrayImage::new(
        n,
        n,
        (0..n * n)
            .map(|k| {
                let (r, c) = ((k / n) as f64, (k % n) as f64);
                128.0 + 100.0 * (std::f64::consts::TAU * (3.0 * r + 5.0 * c) / n as f64 + 0.4).cos()
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let a = gist(&grating, &p).map_err(|e| e.to_string())?.values;
    let b = gist(&grating.rotate90(), &p)
        .map_err(|e| e.to_string())?
        .values;
    let g = p.grid;
    let mut worst = 0.0f64;
    for s in 0..p.scales {
        for o in 0..p.orientations {
            for br in 0..g {
                for bc in 0..g {
                    // a quarter turn is half of the π span covered by the orientations
                    let src = a[GistDescriptor::index(&p, s, o, bc, g - 1 - br)];
                    let dst = b[GistDescriptor::index(
                        &p,
                        s,
                        (o + p.orientations / 2) % p.orientations,
                        br,
                        bc,
                    )];
                    worst = worst.max((src - dst).abs());
                }
            }
        }
    }
    ensure(worst <= ROT_TOL, || format!("rotation mismatch {worst:e}"))?;
    Ok(format!(
        "512 values; constant image max {peak:.1e}; quarter-turn permutation error {worst:.1e}"
    ))
}

fn pca_checks() -> Outcome {
    let mut r = rng(10);
    let data: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..6).map(|_| gauss(&mut r)).collect())
        .collect();
    let m = pca_fit(&data).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for x in &data {
        let back = m
            .inverse_transform(&m.transform(x, m.rank).unwrap())
            .unwrap();
        worst = worst.max(
            back.iter()
                .zip(x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    ensure(worst <= 1e-9, || format!("reconstruction error {worst:e}"))?;
    let cum = m.cumulative_ratios();
    ensure(
        cum.windows(2).all(|w| w[1] >= w[0]) && (cum.last().unwrap() - 1.0).abs() <= 1e-9,
        || format!("cumulative ratios {cum:?}"),
    )?;

    let line: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![i as f64, 3.0 - 0.5 * i as f64, 2.0 * i as f64])
        .collect();
    let k_line = pca_select_k(&pca_fit(&line).unwrap(), 0.99).unwrap();
    ensure(k_line == 1, || format!("line data selects k = {k_line}"))?;

    // ±a_i e_i in 30 dimensions: ten directions at 7.6% and twenty at 1.2%
    let d = 30;
    let mut anchor = Vec::new();
    for i in 0..d {
        let share: f64 = if i < 10 { 0.076 } else { 0.012 };
        for sign in [1.0, -1.0] {
            let mut x = vec![0.0; d];
            x[i] = sign * share.sqrt();
            anchor.push(x);
        }
    }
    let am = pca_fit(&anchor).unwrap();
    let k = pca_select_k(&am, 0.76).unwrap();
    let at10 = am.cumulative_ratios()[9];
    ensure(k == 10, || {
        format!("select_k(0.76) = {k}, cumulative at 10 = {at10}")
    })?;
    Ok(format!("reconstruction {worst:.1e}; line k = 1; anchor select_k(0.76) = 10 (cumulative {at10:.12})"))
}

fn end_to_end() -> Outcome {
    const MIN_ACCURACY: f64 = 0.95;
    const MIN_SENSITIVITY: f64 = 0.99;
    let ds = synthesize(&SynthSpec::separated(300, 10.0, 1.0, 7)).map_err(|e| e.to_string())?;
    let sigma = median_heuristic_sigma(&ds.samples).map_err(|e| e.to_string())?;
    let specs = enumerate_kernels(sigma, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let cfg = CvConfig {
        seed_base: 7,
        ..Default::default()
    };
    let reports = nested_cv(&ds, &specs, &cfg).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for rep in &reports {
        let shape_ok = rep.folds.len() == 10 && rep.accuracy.stderr.is_finite();
        if rep.accuracy.mean < MIN_ACCURACY || !shape_ok {
            failures.push(format!("{} {:.4}", rep.spec, rep.accuracy.mean));
        }
        lines.push(format!(
            "{} {:.3}±{:.3}",
            rep.spec, rep.accuracy.mean, rep.accuracy.stderr
        ));
    }
    let worst = reports.iter().map(|r| r.accuracy.mean).fold(1.0, f64::min);

    let features = ds.channel_rows();
    let ncfg = NoveltyConfig {
        seed: 7,
        ..Default::default()
    };
    let methods = [
        NoveltyMethod::IsolationForest {
            trees: DEFAULT_TREES,
            psi: DEFAULT_PSI,
        },
        NoveltyMethod::Gmm {
            k: DEFAULT_COMPONENTS,
            reg: DEFAULT_REG,
            max_iter: DEFAULT_MAX_ITER,
            covariance: CovarianceType::Diagonal,
        },
    ];
    let mut novelty = Vec::new();
    for m in &methods {
        let rep = novelty_eval(&ds, &features, m, &ncfg).map_err(|e| e.to_string())?;
        let c = rep.confusion;
        novelty.push(format!(
            "{} sens {:.4} spec {:.4} (tp {} fn {} fp {} tn {})",
            rep.method, rep.metrics.sensitivity, rep.metrics.specificity, c.tp, c.fn_, c.fp, c.tn
        ));
        if rep.metrics.sensitivity < MIN_SENSITIVITY {
            failures.push(format!(
                "{} sensitivity {:.4}",
                rep.method, rep.metrics.sensitivity
            ));
        }
    }
    println!("    kernels: {}", lines.join(", "));
    println!("    novelty: {}", novelty.join("; "));
    ensure(failures.is_empty(), || {
        format!("below target: {}", failures.join(", "))
    })?;
    Ok(format!(
        "21 kernels, min mean accuracy {worst:.3}; {}",
        novelty.join("; ")
    ))
}

fn determinism() -> Outcome {
    let ds = synthesize(&SynthSpec::separated(40, 6.0, 1.0, 12)).map_err(|e| e.to_string())?;
    let specs = enumerate_kernels(1.0, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let picked = [specs[0], specs[10], specs[14], specs[20]];
    let cfg = CvConfig {
        outer_folds: 5,
        seed_base: 99,
        ..Default::default()
    };
    let render = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            let reports = nested_cv(&ds, &picked, &cfg).map_err(|e| e.to_string())?;
            let novelty = novelty_eval(
                &ds,
                &ds.channel_rows(),
                &NoveltyMethod::IsolationForest { trees: 50, psi: 32 },
                &NoveltyConfig {
                    seed: 5,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            Ok(format!(
                "{}\n{}\n{}\n{}",
                serde_json::to_string_pretty(&reports).unwrap(),
                render_fold_csv(&reports),
                render_summary_csv(&reports),
                serde_json::to_string_pretty(&novelty).unwrap()
            ))
        })
    };
    let a = render(1)?;
    let b = render(1)?;
    let c = render(4)?;
    ensure(a == b && a == c, || "reports differ between runs".into())?;
    Ok(format!(
        "3 runs (1, 1, 4 workers) byte-identical, {} bytes",
        a.len()
    ))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "kernel enumeration",
            budget: Duration::from_secs(1),
            run: kernel_count,
        },
        Criterion {
            name: "divergence oracles",
            budget: Duration::from_secs(5),
            run: divergence_oracles,
        },
        Criterion {
            name: "metric property",
            budget: Duration::from_secs(10),
            run: triangle_inequality,
        },
        Criterion {
            name: "codec round-trip",
            budget: Duration::from_secs(5),
            run: codec_round_trip,
        },
        Criterion {
            name: "SMO correctness",
            budget: Duration::from_secs(30),
            run: smo_against_oracle,
        },
        Criterion {
            name: "isolation forest",
            budget: Duration::from_secs(30),
            run: isolation_forest,
        },
        Criterion {
            name: "PAVA",
            budget: Duration::from_secs(10),
            run: isotonic_oracle,
        },
        Criterion {
            name: "GMM",
            budget: Duration::from_secs(30),
            run: gmm_em,
        },
        Criterion {
            name: "GIST",
            budget: Duration::from_secs(30),
            run: gist_checks,
        },
        Criterion {
            name: "PCA",
            budget: Duration::from_secs(5),
            run: pca_checks,
        },
        Criterion {
            name: "end-to-end synthetic",
            budget: Duration::from_secs(600),
            run: end_to_end,
        },
        Criterion {
            name: "determinism",
            budget: Duration::from_secs(60),
            run: determinism,
        },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<22} {} [{:.2}s / {}s] {}",
            i + 1,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failed,
        failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
