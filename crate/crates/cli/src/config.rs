//! Pipeline configuration: a flat `key = value` text file, overridable from
//! the command line, validated all at once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use fusegram::anomaly::{
    CovarianceType, DEFAULT_COMPONENTS, DEFAULT_MAX_ITER, DEFAULT_PSI, DEFAULT_REG, DEFAULT_TREES,
};
use fusegram::data::{Label, SynthSpec};
use fusegram::features::GistParams;
use fusegram::kernels::KernelTag;
use fusegram::prob::{ProbConfig, ProbMode, DEFAULT_EPSILON};
use fusegram::svm::{DEFAULT_C, DEFAULT_TOL};
use fusegram::util::fnv1a64;

/// Keys that steer where and how fast a run happens but never what it
/// computes. They are left out of the hash and of embedded configs.
const PLUMBING: &[&str] = &["out", "workers"];

/// Prefix of config lines embedded in CSV artifacts.
pub const CSV_CONFIG_PREFIX: &str = "# config: ";

fn defaults() -> BTreeMap<String, String> {
    let pairs: &[(&str, String)] = &[
        ("input", "-".into()),
        ("out", String::new()),
        ("seed", "0".into()),
        ("workers", "0".into()),
        ("synth.n_per_class", "100".into()),
        ("synth.separation", "10".into()),
        ("synth.noise", "1".into()),
        ("features", "signal".into()),
        ("gist.prefilter", "false".into()),
        ("pca.variance", "0".into()),
        ("prob.mode", "normalize".into()),
        ("prob.bandwidth", "1".into()),
        ("prob.epsilon", DEFAULT_EPSILON.to_string()),
        ("kernel", "mcjsd:am:amplified".into()),
        ("kernel.sigma", "auto".into()),
        ("kernel.grid", "0.25,0.5,1,2,4".into()),
        ("model", "csvc".into()),
        ("svm.c", DEFAULT_C.to_string()),
        ("svm.nu", "0.1".into()),
        ("svm.tol", DEFAULT_TOL.to_string()),
        ("iforest.trees", DEFAULT_TREES.to_string()),
        ("iforest.psi", DEFAULT_PSI.to_string()),
        ("gmm.k", DEFAULT_COMPONENTS.to_string()),
        ("gmm.reg", DEFAULT_REG.to_string()),
        ("gmm.max_iter", DEFAULT_MAX_ITER.to_string()),
        ("gmm.covariance", "diagonal".into()),
        ("threshold", "0.5".into()),
        ("cv.outer", "10".into()),
        ("cv.inner", "3".into()),
        ("split.train", "0.7".into()),
        ("split.calibration", "0.5".into()),
        ("positive", "gesture".into()),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Raw key/value configuration, defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig { values: defaults() }
    }
}

impl RawConfig {
    /// Reads a config file, or the config embedded in a JSON or CSV
    /// artifact written by an earlier run.
    pub fn load(path: &Path) -> anyhow::Result<RawConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RawConfig::default();
        let pairs = if text.trim_start().starts_with('{') {
            embedded_json(&text)
                .with_context(|| format!("{}: no embedded config", path.display()))?
        } else if text.lines().any(|l| l.starts_with(CSV_CONFIG_PREFIX)) {
            parse_pairs(
                text.lines()
                    .filter_map(|l| l.strip_prefix(CSV_CONFIG_PREFIX))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .as_str(),
            )?
        } else {
            parse_pairs(&text)?
        };
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match cfg.values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => unknown.push(k),
            }
        }
        if !unknown.is_empty() {
            return Err(anyhow!(UsageError(
                unknown
                    .iter()
                    .map(|k| format!("unknown config key '{k}'"))
                    .collect()
            )));
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides; unknown keys are reported together.
    pub fn apply<I, S>(&mut self, overrides: I) -> Result<(), UsageError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut errors = Vec::new();
        for item in overrides {
            let item = item.as_ref();
            match item.split_once('=') {
                Some((k, v)) if self.values.contains_key(k.trim()) => {
                    self.values
                        .insert(k.trim().to_string(), v.trim().to_string());
                }
                Some((k, _)) => errors.push(format!("unknown config key '{}'", k.trim())),
                None => errors.push(format!("override '{item}' is not key=value")),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(UsageError(errors))
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        assert!(self.values.contains_key(key), "unknown key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    /// The keys that determine results, sorted.
    pub fn embedded(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| !PLUMBING.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// `key = value` lines of [`RawConfig::embedded`].
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.embedded() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }

    /// Resolves every value, collecting all problems before failing.
    pub fn resolve(&self) -> Result<Settings, UsageError> {
        let mut v = Validator {
            raw: self,
            errors: Vec::new(),
        };
        let seed = v.parse::<u64>("seed");
        let features = v.choice(
            "features",
            &[
                ("signal", FeaturePath::Signal),
                ("gist-raw", FeaturePath::GistRaw),
                ("gist-resized", FeaturePath::GistResized),
            ],
        );
        let prob_mode = v.choice("prob.mode", &[("normalize", false), ("kde", true)]);
        let bandwidth = v.positive("prob.bandwidth");
        let epsilon = v.parse::<f64>("prob.epsilon");
        if epsilon.is_some_and(|e| !(0.0..1.0).contains(&e)) {
            v.fail("prob.epsilon", "must lie in [0, 1)");
        }
        let kernel = match self.get("kernel") {
            "all" => Some(KernelChoice::All),
            s => match KernelTag::from_str(s) {
                Ok(t) => Some(KernelChoice::One(t)),
                Err(e) => {
                    v.fail("kernel", &e.to_string());
                    None
                }
            },
        };
        let sigma = match self.get("kernel.sigma") {
            "auto" => Some(None),
            _ => v.positive("kernel.sigma").map(Some),
        };
        let grid_text = self.get("kernel.grid");
        let grid: Vec<f64> = if grid_text.trim().is_empty() {
            Vec::new()
        } else {
            grid_text
                .split(',')
                .filter_map(|s| match s.trim().parse::<f64>() {
                    Ok(x) if x > 0.0 && x.is_finite() => Some(x),
                    _ => {
                        v.fail(
                            "kernel.grid",
                            &format!("'{}' is not a positive number", s.trim()),
                        );
                        None
                    }
                })
                .collect()
        };
        let model = v.choice(
            "model",
            &[
                ("csvc", ModelKind::Csvc),
                ("ocsvm", ModelKind::Ocsvm),
                ("iforest", ModelKind::Iforest),
                ("gmm", ModelKind::Gmm),
            ],
        );
        let c = v.positive("svm.c");
        let nu = v.parse::<f64>("svm.nu");
        if nu.is_some_and(|n| !(n > 0.0 && n <= 1.0)) {
            v.fail("svm.nu", "must lie in (0, 1]");
        }
        let tol = v.positive("svm.tol");
        let trees = v.count("iforest.trees", 1);
        let psi = v.count("iforest.psi", 2);
        let gmm_k = v.count("gmm.k", 1);
        let gmm_reg = v.positive("gmm.reg");
        let gmm_iter = v.count("gmm.max_iter", 1);
        let covariance = v.choice(
            "gmm.covariance",
            &[
                ("diagonal", CovarianceType::Diagonal),
                ("full", CovarianceType::Full),
            ],
        );
        let threshold = v.unit("threshold", true);
        let outer = v.count("cv.outer", 2);
        let inner = v.count("cv.inner", 2);
        let train_fraction = v.unit("split.train", false);
        let calibration_fraction = v.unit("split.calibration", false);
        let pca = v.parse::<f64>("pca.variance");
        if pca.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            v.fail("pca.variance", "must lie in [0, 1] (0 disables)");
        }
        let prefilter = v.parse::<bool>("gist.prefilter");
        let positive = match self.get("positive").parse::<Label>() {
            Ok(l) => Some(l),
            Err(_) => {
                v.fail("positive", "expected gesture or no-gesture");
                None
            }
        };
        let n_per_class = v.count("synth.n_per_class", 1);
        let separation = v.parse::<f64>("synth.separation");
        let noise = v.parse::<f64>("synth.noise");
        if noise.is_some_and(|n| !(n >= 0.0 && n.is_finite())) {
            v.fail("synth.noise", "must be finite and non-negative");
        }
        let workers = v.parse::<usize>("workers");
        let input = self.get("input").to_string();
        if input != "-" && input != "synth" && !Path::new(&input).exists() {
            v.fail("input", &format!("'{input}' does not exist"));
        }
        if features.is_some_and(|f| f != FeaturePath::Signal)
            && matches!(model, Some(ModelKind::Csvc | ModelKind::Ocsvm))
        {
            v.fail(
                "features",
                "image features only feed iforest and gmm; SVM kernels act on the signal",
            );
        }
        if !v.errors.is_empty() {
            return Err(UsageError(v.errors));
        }

        let seed = seed.unwrap();
        let mode = if prob_mode.unwrap() {
            ProbMode::KdeSmoothed {
                bandwidth: bandwidth.unwrap(),
            }
        } else {
            ProbMode::Normalize
        };
        Ok(Settings {
            input,
            out: PathBuf::from(self.get("out")),
            seed,
            workers: workers.unwrap(),
            synth: SynthSpec::separated(
                n_per_class.unwrap(),
                separation.unwrap(),
                noise.unwrap(),
                seed,
            ),
            features: features.unwrap(),
            gist: GistParams {
                prefilter: prefilter.unwrap(),
                ..GistParams::default()
            },
            pca_variance: pca.filter(|&p| p > 0.0),
            prob: ProbConfig {
                mode,
                epsilon: epsilon.unwrap(),
            },
            kernel: kernel.unwrap(),
            sigma: sigma.unwrap(),
            grid,
            model: model.unwrap(),
            c: c.unwrap(),
            nu: nu.unwrap(),
            tol: tol.unwrap(),
            trees: trees.unwrap(),
            psi: psi.unwrap(),
            gmm_k: gmm_k.unwrap(),
            gmm_reg: gmm_reg.unwrap(),
            gmm_max_iter: gmm_iter.unwrap(),
            covariance: covariance.unwrap(),
            threshold: threshold.unwrap(),
            outer_folds: outer.unwrap(),
            inner_folds: inner.unwrap(),
            train_fraction: train_fraction.unwrap(),
            calibration_fraction: calibration_fraction.unwrap(),
            positive: positive.unwrap(),
        })
    }
}

fn parse_pairs(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => errors.push(format!("line {}: expected key = value", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(anyhow!(UsageError(errors)))
    }
}

fn embedded_json(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    let map = doc
        .pointer("/provenance/config")
        .and_then(|c| c.as_object())
        .ok_or_else(|| anyhow!("missing provenance.config"))?;
    Ok(map
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string()))
        .collect())
}

struct Validator<'a> {
    raw: &'a RawConfig,
    errors: Vec<String>,
}

impl Validator<'_> {
    fn fail(&mut self, key: &str, why: &str) {
        self.errors
            .push(format!("{key} = '{}': {why}", self.raw.get(key)));
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Option<T> {
        match self.raw.get(key).trim().parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.fail(key, &format!("not a valid {}", std::any::type_name::<T>()));
                None
            }
        }
    }

    fn positive(&mut self, key: &str) -> Option<f64> {
        let x = self.parse::<f64>(key)?;
        if x > 0.0 && x.is_finite() {
            Some(x)
        } else {
            self.fail(key, "must be positive and finite");
            None
        }
    }

    fn count(&mut self, key: &str, min: usize) -> Option<usize> {
        let x = self.parse::<usize>(key)?;
        if x >= min {
            Some(x)
        } else {
            self.fail(key, &format!("must be at least {min}"));
            None
        }
    }

    /// A value in the open unit interval, or the closed one if `closed`.
    fn unit(&mut self, key: &str, closed: bool) -> Option<f64> {
        let x = self.parse::<f64>(key)?;
        let ok = if closed {
            (0.0..=1.0).contains(&x)
        } else {
            x > 0.0 && x < 1.0
        };
        if ok {
            Some(x)
        } else {
            self.fail(
                key,
                if closed {
                    "must lie in [0, 1]"
                } else {
                    "must lie in (0, 1)"
                },
            );
            None
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let value = self.raw.get(key).trim().to_ascii_lowercase();
        match options.iter().find(|(name, _)| *name == value) {
            Some((_, t)) => Some(*t),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.fail(key, &format!("expected one of {}", names.join(", ")));
                None
            }
        }
    }
}

/// Every configuration problem found, one per line.
#[derive(Debug)]
pub struct UsageError(pub Vec<String>);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "invalid configuration ({} problem{}):",
            self.0.len(),
            if self.0.len() == 1 { "" } else { "s" }
        )?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeaturePath {
    Signal,
    /// GIST of the 4×4 encoded image.
    GistRaw,
    /// GIST of the encoded image resized to 256×256.
    GistResized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    All,
    One(KernelTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Csvc,
    Ocsvm,
    Iforest,
    Gmm,
}

/// Typed, validated configuration.
#[derive(Clone, Debug)]
pub struct Settings {
    pub input: String,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub synth: SynthSpec,
    pub features: FeaturePath,
    pub gist: GistParams,
    pub pca_variance: Option<f64>,
    pub prob: ProbConfig,
    pub kernel: KernelChoice,
    pub sigma: Option<f64>,
    pub grid: Vec<f64>,
    pub model: ModelKind,
    pub c: f64,
    pub nu: f64,
    pub tol: f64,
    pub trees: usize,
    pub psi: usize,
    pub gmm_k: usize,
    pub gmm_reg: f64,
    pub gmm_max_iter: usize,
    pub covariance: CovarianceType,
    pub threshold: f64,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub train_fraction: f64,
    pub calibration_fraction: f64,
    pub positive: Label,
}
