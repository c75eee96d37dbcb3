//! Sensor record ingest, channel fusion, stratified splitting and synthetic
//! datasets.
//!
//! Records carry 16 columns: EMG 1–8, accelerometer 9–11, gyroscope 12–14,
//! the armband's own pose code (15) and the binary gesture label (16). Only
//! the first 14 columns are fused into the feature vector; the pose code is
//! kept as metadata so that a load/save cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::util::{format_g17, rng_from_seed};
use crate::{Error, Result, N_CHANNELS};

/// Columns per raw record.
pub const N_COLUMNS: usize = 16;

pub const CSV_HEADER: &str = "emg1,emg2,emg3,emg4,emg5,emg6,emg7,emg8,\
accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z,pose,label";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    NoGesture = 0,
    Gesture = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NoGesture, Label::Gesture];

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::NoGesture),
            1 => Some(Label::Gesture),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn other(self) -> Label {
        match self {
            Label::NoGesture => Label::Gesture,
            Label::Gesture => Label::NoGesture,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::NoGesture => "no-gesture",
            Label::Gesture => "gesture",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "no-gesture" | "nogesture" | "no_gesture" => Ok(Label::NoGesture),
            "1" | "gesture" => Ok(Label::Gesture),
            other => Err(Error::invalid(format!("unknown label '{other}'"))),
        }
    }
}

/// One raw 16-column row.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorRecord {
    pub emg: [f64; 8],
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    pub myo_pose: i64,
    pub label: Label,
}

impl SensorRecord {
    /// Parses one row; `row` is the 1-based line number used in error messages.
    pub fn parse(line: &str, row: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != N_COLUMNS {
            return Err(Error::ColumnCount {
                row,
                expected: N_COLUMNS,
                found: fields.len(),
            });
        }
        let mut values = [0.0; N_CHANNELS];
        for (k, (slot, text)) in values.iter_mut().zip(&fields).enumerate() {
            *slot = text.parse::<f64>().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("column {} is not a number: '{text}'", k + 1),
            })?;
            if !slot.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("column {} is not finite", k + 1),
                });
            }
        }
        let myo_pose = parse_integral(fields[14]).ok_or_else(|| Error::MalformedRow {
            row,
            reason: format!("pose column is not an integer: '{}'", fields[14]),
        })?;
        let label = parse_integral(fields[15])
            .and_then(|v| u8::try_from(v).ok())
            .and_then(Label::from_code)
            .ok_or_else(|| Error::NonBinaryLabel {
                row,
                value: fields[15].to_string(),
            })?;

        let mut emg = [0.0; 8];
        let mut accel = [0.0; 3];
        let mut gyro = [0.0; 3];
        emg.copy_from_slice(&values[0..8]);
        accel.copy_from_slice(&values[8..11]);
        gyro.copy_from_slice(&values[11..14]);
        Ok(SensorRecord {
            emg,
            accel,
            gyro,
            myo_pose,
            label,
        })
    }

    /// Fuses EMG ‖ accel ‖ gyro into a 14-channel sample.
    pub fn fuse(&self, id: usize) -> FusedSample {
        let mut channels = [0.0; N_CHANNELS];
        channels[0..8].copy_from_slice(&self.emg);
        channels[8..11].copy_from_slice(&self.accel);
        channels[11..14].copy_from_slice(&self.gyro);
        FusedSample {
            id,
            channels,
            label: Some(self.label),
            pose: self.myo_pose,
        }
    }
}

fn parse_integral(text: &str) -> Option<i64> {
    if let Ok(v) = text.parse::<i64>() {
        return Some(v);
    }
    let v = text.parse::<f64>().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
}

/// A fused 14-channel observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedSample {
    pub id: usize,
    pub channels: [f64; N_CHANNELS],
    pub label: Option<Label>,
    /// Armband pose code; metadata only, never used as a feature.
    #[serde(default)]
    pub pose: i64,
}

impl FusedSample {
    pub fn new(id: usize, channels: [f64; N_CHANNELS], label: Option<Label>) -> Self {
        FusedSample {
            id,
            channels,
            label,
            pose: 0,
        }
    }

    pub fn from_slice(id: usize, values: &[f64], label: Option<Label>) -> Result<Self> {
        let channels: [f64; N_CHANNELS] = values.try_into().map_err(|_| {
            Error::invalid(format!(
                "expected {N_CHANNELS} channels, got {}",
                values.len()
            ))
        })?;
        Ok(FusedSample::new(id, channels, label))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<FusedSample>,
    /// Counts indexed by [`Label::index`].
    pub class_counts: [usize; 2],
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(samples: Vec<FusedSample>, provenance: Provenance) -> Self {
        let mut class_counts = [0; 2];
        for label in samples.iter().filter_map(|s| s.label) {
            class_counts[label.index()] += 1;
        }
        LabeledDataset {
            samples,
            class_counts,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts[label.index()]
    }

    /// Labels of every sample; fails if any sample is unlabeled.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::invalid(format!("sample {} has no label", s.id)))
            })
            .collect()
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        LabeledDataset::new(samples, self.provenance.clone())
    }

    /// Samples carrying `label`.
    pub fn filter_label(&self, label: Label) -> LabeledDataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| s.label == Some(label))
            .cloned()
            .collect();
        LabeledDataset::new(samples, self.provenance.clone())
    }

    pub fn channel_rows(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.channels.to_vec()).collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(
        BufReader::new(file),
        has_header,
        &path.display().to_string(),
    )
}

/// Reads records from any buffered source. `has_header` skips the first line.
pub fn read_csv(reader: impl BufRead, has_header: bool, source: &str) -> Result<LabeledDataset> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if has_header && idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let record = SensorRecord::parse(&line, row)?;
        samples.push(record.fuse(samples.len()));
    }
    Ok(LabeledDataset::new(
        samples,
        Provenance {
            source: source.to_string(),
            seed: None,
        },
    ))
}

pub fn write_csv(dataset: &LabeledDataset, mut out: impl Write, header: bool) -> Result<()> {
    let io_err = |e| Error::io("<csv output>", e);
    if header {
        writeln!(out, "{CSV_HEADER}").map_err(io_err)?;
    }
    for sample in &dataset.samples {
        let label = sample
            .label
            .ok_or_else(|| Error::invalid(format!("sample {} has no label", sample.id)))?;
        let mut line = String::with_capacity(N_COLUMNS * 20);
        for v in &sample.channels {
            line.push_str(&format_g17(*v));
            line.push(',');
        }
        line.push_str(&format!("{},{}", sample.pose, label.code()));
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn save_csv(dataset: &LabeledDataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, BufWriter::new(file), header)
}

/// Stratified train/test split.
///
/// Per class, `floor(train_fraction · n_c)` samples go to train (clamped so
/// both sides keep at least one sample of every class). Which samples are
/// chosen depends only on `seed`. Both halves keep the input order.
pub fn split(
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let labels = dataset.labels()?;
    let mut rng = rng_from_seed(seed);
    let mut in_train = vec![false; dataset.len()];
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {} sample(s); stratified split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_train = stratified_count(members.len(), train_fraction);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| in_train[i]);
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

fn stratified_count(n: usize, fraction: f64) -> usize {
    // the small offset keeps products such as 0.29 * 100 from flooring to 28
    let raw = (fraction * n as f64 + 1e-9).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Parameters for a two-class Gaussian dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: usize,
    /// Class centres indexed by [`Label::index`].
    pub class_means: [[f64; N_CHANNELS]; 2],
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Two clusters whose centres are `separation · noise_std` apart.
    ///
    /// The no-gesture centre is a flat resting level; the gesture centre adds
    /// a burst on a few EMG channels and one accelerometer axis, so the two
    /// classes differ in channel *profile* and not only in overall level.
    pub fn separated(n_per_class: usize, separation: f64, noise_std: f64, seed: u64) -> Self {
        let rest = [1.0; N_CHANNELS];
        let mut burst = [0.0; N_CHANNELS];
        for (k, w) in [(0, 1.0), (2, 1.0), (4, 1.0), (9, 1.0)] {
            burst[k] = w;
        }
        let norm = burst.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut gesture = rest;
        for (g, b) in gesture.iter_mut().zip(&burst) {
            *g += separation * noise_std * b / norm;
        }
        SynthSpec {
            n_per_class,
            class_means: [rest, gesture],
            noise_std,
            seed,
        }
    }
}

/// Gaussian clusters around the class means. Class 0 samples come first; ids
/// run from 0 contiguously.
pub fn synthesize(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_std must be finite and non-negative, got {}",
            spec.noise_std
        )));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut samples = Vec::with_capacity(2 * spec.n_per_class);
    for label in Label::ALL {
        let mean = &spec.class_means[label.index()];
        for _ in 0..spec.n_per_class {
            let mut channels = [0.0; N_CHANNELS];
            for (c, m) in channels.iter_mut().zip(mean) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c = m + spec.noise_std * z;
            }
            samples.push(FusedSample::new(samples.len(), channels, Some(label)));
        }
    }
    Ok(LabeledDataset::new(
        samples,
        Provenance {
            source: "synthetic".into(),
            seed: Some(spec.seed),
        },
    ))
}
