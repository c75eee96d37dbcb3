//! Multi-sensor gesture data pipeline.
//!
//! The crate covers the whole path from raw 16-column sensor records to
//! evaluated detectors:
//!
//! * [`data`]: CSV ingest, channel fusion (8 EMG + 3 accel + 3 gyro), stratified
//!   splits and seeded synthetic datasets.
//! * [`codec`]: invertible signal-to-image encoding (zero pad to 16, scale to
//!   0..=255, 4×4 grid) with the `.sie` container and PGM export.
//! * [`prob`]: per-sample probability vectors and kernel density estimation.
//! * [`kernels`]: Chisini-mean Jensen-Shannon divergences, their metric
//!   square roots, the amplified / scaled kernel forms and Gram assembly.
//! * [`svm`]: SMO solvers for C-SVC and ν one-class SVM on precomputed kernels.
//! * [`anomaly`]: isolation forest, diagonal GMM and isotonic calibration.
//! * [`features`]: GIST descriptors and PCA.
//! * [`eval`]: confusion matrices, metrics, nested cross-validation.

pub mod anomaly;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod kernels;
pub mod prob;
pub mod svm;
pub mod util;

pub use error::{Error, Result};

/// Number of fused channels per sample (8 EMG, 3 accelerometer, 3 gyroscope).
pub const N_CHANNELS: usize = 14;
