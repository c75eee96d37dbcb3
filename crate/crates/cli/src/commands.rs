//! One function per subcommand.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::info;
use serde::{Deserialize, Serialize};

use fusegram::anomaly::{
    calibrate_and_detect, fit_gmm, fit_iforest, render_score_dump, CalibratedDetector, Detection,
    GmmModel, GmmOptions, IsolationForestModel,
};
use fusegram::codec::{
    decode, encode, parse_manifest, read_sie, render_manifest, write_sie, ManifestEntry,
};
use fusegram::data::{
    split, synthesize, write_csv, FusedSample, Label, LabeledDataset, Provenance as DataProvenance,
};
use fusegram::eval::{
    nested_cv, novelty_eval, render_fold_csv, render_summary_csv, CvConfig, NoveltyConfig,
    NoveltyMethod,
};
use fusegram::features::{
    gist_batch, pca_fit, pca_select_k, render_descriptor_csv, resize_nearest, GistParams,
    GrayImage, PcaModel, RESIZED_SIDE,
};
use fusegram::kernels::{
    cross_kernel, enumerate_kernels, gram, median_heuristic_sigma, KernelSpec,
};
use fusegram::prob::ProbConfig;
use fusegram::svm::{
    predict, render_precomputed, train_csvc, train_ocsvm, SolverOptions, SvmModel,
};
use fusegram::util::format_g17;

use crate::artifact::{
    digest, emit, parse_dataset, read_source, strip_comments, to_json, Envelope, Provenance,
};
use crate::config::{FeaturePath, KernelChoice, ModelKind, RawConfig, Settings, UsageError};

const MANIFEST_FILE: &str = "manifest.csv";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(vec![msg.into()]))
}

/// Loaded dataset plus the provenance of where it came from.
struct Input {
    dataset: LabeledDataset,
    bytes: Option<Vec<u8>>,
}

fn load_input(s: &Settings) -> anyhow::Result<Input> {
    if s.input == "synth" {
        return Ok(Input {
            dataset: synthesize(&s.synth)?,
            bytes: None,
        });
    }
    let bytes = read_source(&s.input)?;
    let source = if s.input == "-" {
        "<stdin>"
    } else {
        s.input.as_str()
    };
    let dataset = parse_dataset(&bytes, source)?;
    info!("loaded {} samples from {source}", dataset.len());
    Ok(Input {
        dataset,
        bytes: Some(bytes),
    })
}

fn provenance(command: &str, raw: &RawConfig, s: &Settings, input: Option<&Input>) -> Provenance {
    let p = Provenance::new(command, raw, s.seed);
    match input.and_then(|i| i.bytes.as_deref()) {
        Some(b) => p.with_input("data", b),
        None => p,
    }
}

fn dataset_csv(dataset: &LabeledDataset) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    write_csv(dataset, &mut buf, true)?;
    Ok(String::from_utf8(buf)?)
}

fn single_kernel(s: &Settings, samples: &[FusedSample]) -> anyhow::Result<KernelSpec> {
    let tag = match s.kernel {
        KernelChoice::One(t) => t,
        KernelChoice::All => return Err(usage("this command needs a single kernel, not 'all'")),
    };
    let sigma = match s.sigma {
        Some(x) => x,
        None => median_heuristic_sigma(samples)?,
    };
    Ok(tag.with_params(sigma, s.prob.epsilon)?)
}

pub fn synth(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    let ds = synthesize(&s.synth)?;
    let p = provenance("synth", raw, s, None);
    emit(&s.out, &(p.csv_comments() + &dataset_csv(&ds)?))
}

pub fn encode_dir(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    if s.out.as_os_str().is_empty() {
        return Err(usage("encode needs --out <dir>"));
    }
    let input = load_input(s)?;
    std::fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    let mut entries = Vec::with_capacity(input.dataset.len());
    for sample in &input.dataset.samples {
        let image = encode(sample)?;
        let file = format!("sample_{:06}.sie", sample.id);
        write_sie(&image, s.out.join(&file))?;
        entries.push(ManifestEntry {
            id: sample.id,
            file,
            label: sample.label,
            pose: sample.pose,
        });
    }
    let p = provenance("encode", raw, s, Some(&input));
    emit(
        &s.out.join(MANIFEST_FILE),
        &(p.csv_comments() + &render_manifest(&entries)),
    )?;
    info!("wrote {} images to {}", entries.len(), s.out.display());
    Ok(())
}

pub fn decode_dir(raw: &RawConfig, s: &Settings, dir: &Path) -> anyhow::Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| fusegram::Error::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    let entries = parse_manifest(&strip_comments(&text))?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let decoded = decode(&read_sie(dir.join(&e.file))?)?;
        samples.push(FusedSample {
            id: e.id,
            label: e.label,
            pose: e.pose,
            ..decoded
        });
    }
    let ds = LabeledDataset::new(
        samples,
        DataProvenance {
            source: dir.display().to_string(),
            seed: None,
        },
    );
    let p = Provenance::new("decode", raw, s.seed).with_input("manifest", text.as_bytes());
    emit(&s.out, &(p.csv_comments() + &dataset_csv(&ds)?))
}

/// How raw samples become detector features. Stored with trained detectors
/// so that `detect` repeats it exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub path: String,
    pub gist: GistParams,
    pub pca: Option<(PcaModel, usize)>,
}

impl FeaturePipeline {
    fn base_rows(&self, samples: &[FusedSample]) -> anyhow::Result<Vec<Vec<f64>>> {
        let side = match self.path.as_str() {
            "signal" => return Ok(samples.iter().map(|x| x.channels.to_vec()).collect()),
            "gist-raw" => None,
            "gist-resized" => Some(RESIZED_SIDE),
            other => {
                return Err(anyhow!(fusegram::Error::Format(format!(
                    "unknown feature path '{other}'"
                ))))
            }
        };
        let images = samples
            .iter()
            .map(|x| {
                let g = GrayImage::from_encoded(&encode(x)?);
                match side {
                    Some(n) => resize_nearest(&g, n),
                    None => Ok(g),
                }
            })
            .collect::<fusegram::Result<Vec<_>>>()?;
        Ok(gist_batch(&images, &self.gist)?
            .into_iter()
            .map(|d| d.values)
            .collect())
    }

    pub fn apply(&self, samples: &[FusedSample]) -> anyhow::Result<Vec<Vec<f64>>> {
        let rows = self.base_rows(samples)?;
        match &self.pca {
            None => Ok(rows),
            Some((model, k)) => Ok(rows
                .iter()
                .map(|r| model.transform(r, *k))
                .collect::<fusegram::Result<_>>()?),
        }
    }

    /// Builds the pipeline, fitting PCA on `samples` when asked. The fit
    /// ignores labels.
    fn fit(s: &Settings, samples: &[FusedSample]) -> anyhow::Result<(Self, Vec<Vec<f64>>)> {
        let path = match s.features {
            FeaturePath::Signal => "signal",
            FeaturePath::GistRaw => "gist-raw",
            FeaturePath::GistResized => "gist-resized",
        };
        let mut pipe = FeaturePipeline {
            path: path.into(),
            gist: s.gist,
            pca: None,
        };
        let rows = pipe.base_rows(samples)?;
        let Some(variance) = s.pca_variance else {
            return Ok((pipe, rows));
        };
        let model = pca_fit(&rows)?;
        let k = pca_select_k(&model, variance)?;
        info!(
            "pca keeps {k} of {} components for {variance} of the variance",
            model.rank
        );
        let projected = rows
            .iter()
            .map(|r| model.transform(r, k))
            .collect::<fusegram::Result<_>>()?;
        pipe.pca = Some((model, k));
        Ok((pipe, projected))
    }
}

pub fn gist_cmd(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    let input = load_input(s)?;
    let (_, rows) = FeaturePipeline::fit(s, &input.dataset.samples)?;
    let table: Vec<(usize, &[f64])> = input
        .dataset
        .samples
        .iter()
        .zip(&rows)
        .map(|(x, r)| (x.id, r.as_slice()))
        .collect();
    let p = provenance("gist", raw, s, Some(&input));
    emit(&s.out, &(p.csv_comments() + &render_descriptor_csv(&table)))
}

#[derive(Serialize)]
struct PcaSummary {
    n_samples: usize,
    n_features: usize,
    rank: usize,
    explained_variance: Vec<f64>,
    ratios: Vec<f64>,
    cumulative: Vec<f64>,
    variance_target: Option<f64>,
    k: Option<usize>,
}

fn parse_descriptor_csv(text: &str, source: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let body = strip_comments(text);
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| fusegram::Error::Format(format!("{source}: empty")))?;
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(fusegram::Error::ColumnCount {
                    row: i + 2,
                    expected: width,
                    found: cells.len(),
                }
                .into());
            }
            cells[1..]
                .iter()
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|_| {
                        anyhow!(fusegram::Error::MalformedRow {
                            row: i + 2,
                            reason: format!("'{c}' is not a number")
                        })
                    })
                })
                .collect()
        })
        .collect()
}

pub fn pca_cmd(raw: &RawConfig, s: &Settings, path: &str) -> anyhow::Result<()> {
    let bytes = read_source(path)?;
    let rows = parse_descriptor_csv(&String::from_utf8_lossy(&bytes), path)?;
    let model = pca_fit(&rows)?;
    let k = s
        .pca_variance
        .map(|v| pca_select_k(&model, v))
        .transpose()?;
    let summary = PcaSummary {
        n_samples: rows.len(),
        n_features: rows.first().map_or(0, Vec::len),
        rank: model.rank,
        cumulative: model.cumulative_ratios(),
        explained_variance: model.explained_variance.clone(),
        ratios: model.ratios.clone(),
        variance_target: s.pca_variance,
        k,
    };
    let p = Provenance::new("pca", raw, s.seed).with_input("features", &bytes);
    emit(&s.out, &to_json(&p, &summary)?)
}

#[derive(Serialize)]
struct GramArtifact<'a> {
    spec: KernelSpec,
    ids: Vec<usize>,
    labels: Vec<Option<Label>>,
    gram: &'a fusegram::kernels::GramMatrix,
}

fn signed_labels(ds: &LabeledDataset, positive: Label) -> anyhow::Result<Vec<f64>> {
    Ok(ds
        .labels()?
        .iter()
        .map(|&l| if l == positive { 1.0 } else { -1.0 })
        .collect())
}

pub fn gram_cmd(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    let input = load_input(s)?;
    let samples = &input.dataset.samples;
    let spec = single_kernel(s, samples)?;
    let g = gram(&spec, samples, &s.prob)?;
    let art = GramArtifact {
        spec,
        ids: samples.iter().map(|x| x.id).collect(),
        labels: samples.iter().map(|x| x.label).collect(),
        gram: &g,
    };
    emit(
        &s.out,
        &to_json(&provenance("gram", raw, s, Some(&input)), &art)?,
    )
}

/// LIBSVM precomputed-kernel text; provenance goes to a JSON sidecar because
/// the format has no comment syntax.
pub fn export_gram(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    if s.out.as_os_str().is_empty() {
        return Err(usage("export-gram needs --out <file>"));
    }
    let input = load_input(s)?;
    let spec = single_kernel(s, &input.dataset.samples)?;
    let g = gram(&spec, &input.dataset.samples, &s.prob)?;
    let y = signed_labels(&input.dataset, s.positive)?;
    emit(&s.out, &render_precomputed(&g, &y)?)?;
    let mut sidecar = s.out.clone().into_os_string();
    sidecar.push(".provenance.json");
    emit(
        Path::new(&sidecar),
        &to_json(&provenance("export-gram", raw, s, Some(&input)), &spec)?,
    )
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelArtifact {
    Csvc {
        spec: KernelSpec,
        prob: ProbConfig,
        positive: Label,
        train: Vec<FusedSample>,
        svm: SvmModel,
    },
    Ocsvm {
        spec: KernelSpec,
        prob: ProbConfig,
        positive: Label,
        train: Vec<FusedSample>,
        svm: SvmModel,
    },
    Iforest {
        positive: Label,
        features: FeaturePipeline,
        detector: CalibratedDetector<IsolationForestModel>,
    },
    Gmm {
        positive: Label,
        features: FeaturePipeline,
        detector: CalibratedDetector<GmmModel>,
    },
}

fn gmm_options(s: &Settings) -> GmmOptions {
    GmmOptions {
        k: s.gmm_k,
        reg: s.gmm_reg,
        max_iter: s.gmm_max_iter,
        seed: s.seed,
        covariance: s.covariance,
    }
}

pub fn train(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    if s.out.as_os_str().is_empty() {
        return Err(usage("train needs --out <model.json>"));
    }
    let input = load_input(s)?;
    let ds = &input.dataset;
    let opts = SolverOptions::with_tol(s.tol);
    let artifact = match s.model {
        ModelKind::Csvc => {
            let spec = single_kernel(s, &ds.samples)?;
            let y = signed_labels(ds, s.positive)?;
            let mut svm = train_csvc(&gram(&spec, &ds.samples, &s.prob)?, &y, s.c, &opts)?;
            svm.spec = Some(spec);
            info!(
                "c-svc: {} support vectors of {}",
                svm.support_ids.len(),
                ds.len()
            );
            ModelArtifact::Csvc {
                spec,
                prob: s.prob,
                positive: s.positive,
                train: ds.samples.clone(),
                svm,
            }
        }
        ModelKind::Ocsvm => {
            let pos = ds.filter_label(s.positive);
            let spec = single_kernel(s, &pos.samples)?;
            let mut svm = train_ocsvm(&gram(&spec, &pos.samples, &s.prob)?, s.nu, &opts)?;
            svm.spec = Some(spec);
            ModelArtifact::Ocsvm {
                spec,
                prob: s.prob,
                positive: s.positive,
                train: pos.samples,
                svm,
            }
        }
        ModelKind::Iforest | ModelKind::Gmm => {
            let (features, rows) = FeaturePipeline::fit(s, &ds.samples)?;
            let row_of: HashMap<usize, usize> = ds
                .samples
                .iter()
                .enumerate()
                .map(|(i, x)| (x.id, i))
                .collect();
            let (fit_part, calib_part) = split(ds, s.train_fraction, s.seed)?;
            let fit_rows: Vec<Vec<f64>> = fit_part
                .samples
                .iter()
                .filter(|x| x.label == Some(s.positive))
                .map(|x| rows[row_of[&x.id]].clone())
                .collect();
            let calib_rows: Vec<Vec<f64>> = calib_part
                .samples
                .iter()
                .map(|x| rows[row_of[&x.id]].clone())
                .collect();
            let calib_pos: Vec<bool> = calib_part
                .samples
                .iter()
                .map(|x| x.label == Some(s.positive))
                .collect();
            info!(
                "fitting on {} positives, calibrating on {}",
                fit_rows.len(),
                calib_rows.len()
            );
            if s.model == ModelKind::Iforest {
                let m = fit_iforest(&fit_rows, s.trees, s.psi, s.seed)?;
                let detector = calibrate_and_detect(m, &calib_rows, &calib_pos, s.threshold)?;
                ModelArtifact::Iforest {
                    positive: s.positive,
                    features,
                    detector,
                }
            } else {
                let m = fit_gmm(&fit_rows, &gmm_options(s))?;
                let detector = calibrate_and_detect(m, &calib_rows, &calib_pos, s.threshold)?;
                ModelArtifact::Gmm {
                    positive: s.positive,
                    features,
                    detector,
                }
            }
        }
    };
    emit(
        &s.out,
        &to_json(&provenance("train", raw, s, Some(&input)), &artifact)?,
    )
}

fn svm_predictions(
    spec: &KernelSpec,
    prob: &ProbConfig,
    train: &[FusedSample],
    svm: &SvmModel,
    queries: &[FusedSample],
    positive: Label,
) -> anyhow::Result<String> {
    let rows = cross_kernel(spec, queries, train, prob)?;
    let mut out = String::from("id,decision,predicted,label\n");
    for (x, row) in queries.iter().zip(&rows) {
        let p = predict(svm, row)?;
        let predicted = if p.class > 0 {
            positive
        } else {
            positive.other()
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            x.id,
            format_g17(p.decision),
            predicted.code(),
            x.label.map(|l| l.code().to_string()).unwrap_or_default()
        );
    }
    Ok(out)
}

fn score_dump<M: fusegram::anomaly::NoveltyScorer>(
    features: &FeaturePipeline,
    detector: &CalibratedDetector<M>,
    queries: &[FusedSample],
) -> anyhow::Result<String> {
    let rows = features.apply(queries)?;
    let dump: Vec<(usize, Detection, Option<u8>)> = queries
        .iter()
        .zip(&rows)
        .map(|(x, r)| Ok((x.id, detector.detect(r)?, x.label.map(Label::code))))
        .collect::<fusegram::Result<_>>()?;
    Ok(render_score_dump(&dump))
}

pub fn detect(raw: &RawConfig, s: &Settings, model_path: &Path) -> anyhow::Result<()> {
    let model_bytes = std::fs::read(model_path).map_err(|e| fusegram::Error::Io {
        path: model_path.to_path_buf(),
        source: e,
    })?;
    let envelope: Envelope<ModelArtifact> = serde_json::from_slice(&model_bytes)
        .map_err(|e| fusegram::Error::Format(format!("{}: {e}", model_path.display())))?;
    let input = load_input(s)?;
    let q = &input.dataset.samples;
    let body = match &envelope.result {
        ModelArtifact::Csvc {
            spec,
            prob,
            positive,
            train,
            svm,
        }
        | ModelArtifact::Ocsvm {
            spec,
            prob,
            positive,
            train,
            svm,
        } => svm_predictions(spec, prob, train, svm, q, *positive)?,
        ModelArtifact::Iforest {
            features, detector, ..
        } => score_dump(features, detector, q)?,
        ModelArtifact::Gmm {
            features, detector, ..
        } => score_dump(features, detector, q)?,
    };
    let mut p = provenance("detect", raw, s, Some(&input));
    p.inputs.insert("model".into(), digest(&model_bytes));
    emit(&s.out, &(p.csv_comments() + &body))
}

pub fn eval(raw: &RawConfig, s: &Settings) -> anyhow::Result<()> {
    let input = load_input(s)?;
    let ds = &input.dataset;
    let dir = if s.out.as_os_str().is_empty() {
        PathBuf::from("report")
    } else {
        s.out.clone()
    };
    let mut p = provenance("eval", raw, s, Some(&input));
    match s.model {
        ModelKind::Csvc => {
            let sigma = match s.sigma {
                Some(x) => x,
                None => median_heuristic_sigma(&ds.samples)?,
            };
            let specs = match s.kernel {
                KernelChoice::All => enumerate_kernels(sigma, s.prob.epsilon)?,
                KernelChoice::One(t) => vec![t.with_params(sigma, s.prob.epsilon)?],
            };
            let cfg = CvConfig {
                outer_folds: s.outer_folds,
                inner_folds: s.inner_folds,
                sigma_multipliers: s.grid.clone(),
                c: s.c,
                tol: s.tol,
                seed_base: s.seed,
                prob: s.prob,
                positive_class: s.positive,
            };
            let reports = nested_cv(ds, &specs, &cfg)?;
            for r in &reports {
                p.seeds.insert(format!("spec.{}", r.spec), r.seed);
                println!(
                    "{:<28} accuracy {:.4} ± {:.4}  sensitivity {:.4}  specificity {:.4}",
                    r.spec,
                    r.accuracy.mean,
                    r.accuracy.stderr,
                    r.sensitivity.mean,
                    r.specificity.mean
                );
            }
            emit(&dir.join("report.json"), &to_json(&p, &reports)?)?;
            emit(
                &dir.join("folds.csv"),
                &(p.csv_comments() + &render_fold_csv(&reports)),
            )?;
            emit(
                &dir.join("summary.csv"),
                &(p.csv_comments() + &render_summary_csv(&reports)),
            )?;
        }
        model => {
            let method = match model {
                ModelKind::Ocsvm => NoveltyMethod::OneClassSvm {
                    spec: single_kernel(s, &ds.samples)?,
                    nu: s.nu,
                },
                ModelKind::Iforest => NoveltyMethod::IsolationForest {
                    trees: s.trees,
                    psi: s.psi,
                },
                _ => NoveltyMethod::Gmm {
                    k: s.gmm_k,
                    reg: s.gmm_reg,
                    max_iter: s.gmm_max_iter,
                    covariance: s.covariance,
                },
            };
            let (_, rows) = FeaturePipeline::fit(s, &ds.samples)?;
            let cfg = NoveltyConfig {
                train_fraction: s.train_fraction,
                calibration_fraction: s.calibration_fraction,
                threshold: s.threshold,
                seed: s.seed,
                positive_class: s.positive,
                prob: s.prob,
            };
            let report = novelty_eval(ds, &rows, &method, &cfg)?;
            println!(
                "{:<12} accuracy {:.4}  sensitivity {:.4}  specificity {:.4}  (train {}, calibration {}, eval {})",
                report.method,
                report.metrics.accuracy,
                report.metrics.sensitivity,
                report.metrics.specificity,
                report.n_train,
                report.n_calibration,
                report.n_eval
            );
            emit(&dir.join("report.json"), &to_json(&p, &report)?)?;
            emit(
                &dir.join("confusion.csv"),
                &(p.csv_comments() + &report.confusion.to_csv()),
            )?;
        }
    }
    info!("report written to {}", dir.display());
    Ok(())
}
