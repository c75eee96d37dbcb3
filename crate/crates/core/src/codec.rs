//! Invertible signal-to-image encoding.
//!
//! A 14-channel sample is zero padded to 16 values, min-max scaled to
//! `0..=255` over all 16 entries (pads included, so 0 is always inside the
//! range) and laid out as a 4×4 row-major grid. The extrema travel with the
//! pixels, either in the binary `.sie` container or in a JSON sidecar next
//! to a PGM file, which makes the mapping invertible up to half a
//! quantisation step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FusedSample, Label};
use crate::{Error, Result, N_CHANNELS};

pub const SIDE: usize = 4;
pub const N_PIXELS: usize = SIDE * SIDE;
pub const PAD_COUNT: usize = N_PIXELS - N_CHANNELS;

const SIE_MAGIC: &[u8; 4] = b"SIE1";
/// Magic, three u16 fields, two f64 fields, 16 pixels.
pub const SIE_LEN: usize = 4 + 3 * 2 + 2 * 8 + N_PIXELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    /// Row-major 4×4 intensities.
    pub pixels: [u8; N_PIXELS],
    pub scale_min: f64,
    pub scale_max: f64,
    pub pad_count: usize,
}

impl EncodedImage {
    /// Half a quantisation step; the worst-case reconstruction error.
    pub fn half_step(&self) -> f64 {
        (self.scale_max - self.scale_min) / 510.0
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * SIDE + col]
    }

    /// Pixels widened to `f64`, row-major.
    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.pad_count != PAD_COUNT {
            return Err(Error::Format(format!(
                "pad_count must be {PAD_COUNT}, found {}",
                self.pad_count
            )));
        }
        if !(self.scale_min.is_finite() && self.scale_max.is_finite())
            || self.scale_min > self.scale_max
        {
            return Err(Error::Format(format!(
                "invalid scale range [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

/// Encodes one sample.
pub fn encode(sample: &FusedSample) -> Result<EncodedImage> {
    encode_channels(&sample.channels)
}

pub fn encode_channels(channels: &[f64; N_CHANNELS]) -> Result<EncodedImage> {
    if let Some(k) = channels.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("channel {k} is not finite")));
    }
    let mut padded = [0.0; N_PIXELS];
    padded[..N_CHANNELS].copy_from_slice(channels);

    let min = padded.iter().copied().fold(f64::INFINITY, f64::min);
    let max = padded.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pixels = [0u8; N_PIXELS];
    if max > min {
        let range = max - min;
        for (p, v) in pixels.iter_mut().zip(&padded) {
            // f64::round rounds half away from zero
            let q = (255.0 * (v - min) / range).round();
            *p = q.clamp(0.0, 255.0) as u8;
        }
    }
    Ok(EncodedImage {
        pixels,
        scale_min: min,
        scale_max: max,
        pad_count: PAD_COUNT,
    })
}

/// Reconstructs all 16 padded values, pads included.
pub fn decode_padded(image: &EncodedImage) -> Result<[f64; N_PIXELS]> {
    image.validate()?;
    let (min, max) = (image.scale_min, image.scale_max);
    let mut out = [min; N_PIXELS];
    if max > min {
        let range = max - min;
        for (v, &p) in out.iter_mut().zip(&image.pixels) {
            *v = match p {
                0 => min,
                255 => max,
                p => min + f64::from(p) * range / 255.0,
            };
        }
    }
    Ok(out)
}

/// Inverse of [`encode`]: drops the pads. The result has id 0 and no label.
pub fn decode(image: &EncodedImage) -> Result<FusedSample> {
    let padded = decode_padded(image)?;
    FusedSample::from_slice(0, &padded[..N_CHANNELS], None)
}

/// Builds an image from wider integer intensities, rejecting values outside
/// `0..=255`.
pub fn image_from_intensities(
    intensities: &[i64],
    scale_min: f64,
    scale_max: f64,
) -> Result<EncodedImage> {
    if intensities.len() != N_PIXELS {
        return Err(Error::Format(format!(
            "expected {N_PIXELS} pixels, found {}",
            intensities.len()
        )));
    }
    let mut pixels = [0u8; N_PIXELS];
    for (k, (p, &v)) in pixels.iter_mut().zip(intensities).enumerate() {
        *p = u8::try_from(v)
            .map_err(|_| Error::Format(format!("pixel {k} value {v} outside [0, 255]")))?;
    }
    let image = EncodedImage {
        pixels,
        scale_min,
        scale_max,
        pad_count: PAD_COUNT,
    };
    image.validate()?;
    Ok(image)
}

/// Serialises to the `.sie` layout: `"SIE1"`, then little-endian u16 width,
/// u16 height, u16 pad count, f64 min, f64 max, and 16 row-major pixels.
pub fn to_sie_bytes(image: &EncodedImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIE_LEN);
    out.extend_from_slice(SIE_MAGIC);
    out.extend_from_slice(&(SIDE as u16).to_le_bytes());
    out.extend_from_slice(&(SIDE as u16).to_le_bytes());
    out.extend_from_slice(&(image.pad_count as u16).to_le_bytes());
    out.extend_from_slice(&image.scale_min.to_le_bytes());
    out.extend_from_slice(&image.scale_max.to_le_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

pub fn from_sie_bytes(bytes: &[u8]) -> Result<EncodedImage> {
    if bytes.len() != SIE_LEN {
        return Err(Error::Format(format!(
            "sie container must be {SIE_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != SIE_MAGIC {
        return Err(Error::Format("bad sie magic".into()));
    }
    let u16_at = |off: usize| u16::from_le_bytes([bytes[off], bytes[off + 1]]);
    let f64_at = |off: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[off..off + 8]);
        f64::from_le_bytes(b)
    };
    let (width, height) = (u16_at(4), u16_at(6));
    if usize::from(width) != SIDE || usize::from(height) != SIDE {
        return Err(Error::Format(format!(
            "unsupported image size {width}x{height}"
        )));
    }
    let mut pixels = [0u8; N_PIXELS];
    pixels.copy_from_slice(&bytes[26..26 + N_PIXELS]);
    let image = EncodedImage {
        pixels,
        scale_min: f64_at(10),
        scale_max: f64_at(18),
        pad_count: usize::from(u16_at(8)),
    };
    image.validate()?;
    Ok(image)
}

pub fn write_sie(image: &EncodedImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_sie_bytes(image)).map_err(|e| Error::io(path, e))
}

pub fn read_sie(path: impl AsRef<Path>) -> Result<EncodedImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_sie_bytes(&bytes)
}

/// Scale metadata stored next to a PGM export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub scale_min: f64,
    pub scale_max: f64,
    pub pad_count: usize,
}

/// Binary PGM (P5) bytes for the 4×4 image.
pub fn to_pgm_bytes(image: &EncodedImage) -> Vec<u8> {
    let mut out = format!("P5\n{SIDE} {SIDE}\n255\n").into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn sidecar(image: &EncodedImage) -> PgmSidecar {
    PgmSidecar {
        scale_min: image.scale_min,
        scale_max: image.scale_max,
        pad_count: image.pad_count,
    }
}

pub fn from_pgm_bytes(bytes: &[u8], meta: &PgmSidecar) -> Result<EncodedImage> {
    let header = format!("P5\n{SIDE} {SIDE}\n255\n");
    let body = bytes
        .strip_prefix(header.as_bytes())
        .ok_or_else(|| Error::Format("unsupported PGM header".into()))?;
    if body.len() != N_PIXELS {
        return Err(Error::Format(format!(
            "PGM body must hold {N_PIXELS} bytes, found {}",
            body.len()
        )));
    }
    let mut pixels = [0u8; N_PIXELS];
    pixels.copy_from_slice(body);
    let image = EncodedImage {
        pixels,
        scale_min: meta.scale_min,
        scale_max: meta.scale_max,
        pad_count: meta.pad_count,
    };
    image.validate()?;
    Ok(image)
}

/// Writes `<stem>.pgm` and `<stem>.json` into `dir`.
pub fn write_pgm(image: &EncodedImage, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    let pgm = dir.join(format!("{stem}.pgm"));
    fs::write(&pgm, to_pgm_bytes(image)).map_err(|e| Error::io(&pgm, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string(&sidecar(image))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

/// One line of an encode manifest: which file holds which sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub file: String,
    pub label: Option<Label>,
    pub pose: i64,
}

pub const MANIFEST_HEADER: &str = "id,file,label,pose";

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let label = e.label.map(|l| l.code().to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.id, e.file, label, e.pose));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::Format("manifest header missing".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let row = i + 2;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::ColumnCount {
                    row,
                    expected: 4,
                    found: f.len(),
                });
            }
            let bad = |what: &str| Error::MalformedRow {
                row,
                reason: format!("bad {what}"),
            };
            let label = if f[2].is_empty() {
                None
            } else {
                Some(
                    f[2].parse::<u8>()
                        .ok()
                        .and_then(Label::from_code)
                        .ok_or_else(|| Error::NonBinaryLabel {
                            row,
                            value: f[2].to_string(),
                        })?,
                )
            };
            Ok(ManifestEntry {
                id: f[0].parse().map_err(|_| bad("id"))?,
                file: f[1].to_string(),
                label,
                pose: f[3].parse().map_err(|_| bad("pose"))?,
            })
        })
        .collect()
}
