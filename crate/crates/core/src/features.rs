//! GIST descriptors and principal component analysis.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::codec::{EncodedImage, SIDE};
use crate::util::format_g17;
use crate::{Error, Result};

/// Side length of the resized image used for GIST.
pub const RESIZED_SIDE: usize = 256;
/// Descriptor length with the default parameters: 4 scales × 8 orientations × 4×4 blocks.
pub const DESCRIPTOR_LEN: usize = 512;

/// Square grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    side: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width != height {
            return Err(Error::invalid(format!(
                "image is {width}x{height}, expected square"
            )));
        }
        if width == 0 {
            return Err(Error::invalid("empty image"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            side: width,
            pixels,
        })
    }

    pub fn from_encoded(image: &EncodedImage) -> Self {
        GrayImage {
            side: SIDE,
            pixels: image.intensities(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    /// Quarter turn counter-clockwise.
    pub fn rotate90(&self) -> GrayImage {
        let n = self.side;
        let pixels = (0..n * n)
            .map(|k| {
                let (r, c) = (k / n, k % n);
                self.get(c, n - 1 - r)
            })
            .collect();
        GrayImage { side: n, pixels }
    }

    pub fn scaled(&self, c: f64) -> GrayImage {
        GrayImage {
            side: self.side,
            pixels: self.pixels.iter().map(|p| c * p).collect(),
        }
    }
}

/// Nearest-neighbour resize; for an integer ratio this replicates each
/// source pixel into a `side / source` square block.
pub fn resize_nearest(image: &GrayImage, side: usize) -> Result<GrayImage> {
    if side == 0 {
        return Err(Error::invalid("target side must be positive"));
    }
    let src = image.side;
    let pixels = (0..side * side)
        .map(|k| {
            let (r, c) = (k / side, k % side);
            image.get(r * src / side, c * src / side)
        })
        .collect();
    Ok(GrayImage { side, pixels })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GistParams {
    pub scales: usize,
    pub orientations: usize,
    /// Pooling grid is `grid × grid` blocks.
    pub grid: usize,
    /// Local contrast normalisation before filtering.
    pub prefilter: bool,
    /// Cut-off of the prefilter's Gaussian, in cycles per image.
    pub prefilter_fc: f64,
}

impl Default for GistParams {
    fn default() -> Self {
        GistParams {
            scales: 4,
            orientations: 8,
            grid: 4,
            prefilter: false,
            prefilter_fc: 4.0,
        }
    }
}

impl GistParams {
    pub fn descriptor_len(&self) -> usize {
        self.scales * self.orientations * self.grid * self.grid
    }
}

/// Pooled filter-response magnitudes, ordered scale, then orientation, then
/// block (row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GistDescriptor {
    pub values: Vec<f64>,
}

impl GistDescriptor {
    pub fn index(
        params: &GistParams,
        scale: usize,
        orientation: usize,
        block_row: usize,
        block_col: usize,
    ) -> usize {
        ((scale * params.orientations + orientation) * params.grid + block_row) * params.grid
            + block_col
    }
}

/// 2D FFT plans for one image size.
struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        plan.process(data);
        transpose(data, n);
        plan.process(data);
        transpose(data, n);
        if inverse {
            let scale = 1.0 / (n * n) as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Signed frequency of FFT bin `k` on an `n`-point grid: `−n/2 ..= n/2 − 1`.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Precomputed log-polar Gabor bank for one image size. Shared read-only
/// across images.
pub struct GistBank {
    params: GistParams,
    side: usize,
    /// One transfer function per (scale, orientation), in FFT bin order.
    filters: Vec<Vec<f64>>,
    fft: Fft2,
}

impl GistBank {
    pub fn new(side: usize, params: GistParams) -> Result<Self> {
        if params.scales == 0 || params.orientations == 0 || params.grid == 0 {
            return Err(Error::invalid(
                "scales, orientations and grid must be positive",
            ));
        }
        if side == 0 || !side.is_multiple_of(params.grid) {
            return Err(Error::invalid(format!(
                "image side {side} is not divisible by the {0}x{0} grid",
                params.grid
            )));
        }
        let n = side;
        let nf = n as f64;
        let o = params.orientations as f64;
        let mut filters = Vec::with_capacity(params.scales * params.orientations);
        for s in 0..params.scales {
            let centre = 0.3 / 1.85f64.powi(s as i32);
            let angular = 16.0 * o * o / (32.0 * 32.0);
            for j in 0..params.orientations {
                let theta = PI / o * j as f64;
                let mut g = vec![0.0; n * n];
                for u in 0..n {
                    let fy = signed_freq(u, n);
                    for v in 0..n {
                        let fx = signed_freq(v, n);
                        let fr = (fx * fx + fy * fy).sqrt();
                        let mut tr = fy.atan2(fx) + theta;
                        if tr < -PI {
                            tr += 2.0 * PI;
                        } else if tr > PI {
                            tr -= 2.0 * PI;
                        }
                        let radial = fr / nf / centre - 1.0;
                        g[u * n + v] =
                            (-10.0 * 0.35 * radial * radial - 2.0 * angular * PI * tr * tr).exp();
                    }
                }
                g[0] = 0.0;
                filters.push(g);
            }
        }
        Ok(GistBank {
            params,
            side,
            filters,
            fft: Fft2::new(n),
        })
    }

    pub fn params(&self) -> &GistParams {
        &self.params
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Transfer function of filter (scale, orientation) in FFT bin order.
    pub fn filter(&self, scale: usize, orientation: usize) -> &[f64] {
        &self.filters[scale * self.params.orientations + orientation]
    }

    pub fn describe(&self, image: &GrayImage) -> Result<GistDescriptor> {
        if image.side != self.side {
            return Err(Error::invalid(format!(
                "bank built for side {}, image has side {}",
                self.side, image.side
            )));
        }
        let n = self.side;
        let input = if self.params.prefilter {
            prefilter(image, self.params.prefilter_fc, &self.fft)
        } else {
            image.pixels.clone()
        };
        let mut spectrum: Vec<Complex64> = input.iter().map(|&p| Complex64::new(p, 0.0)).collect();
        self.fft.transform(&mut spectrum, false);

        let g = self.params.grid;
        let block = n / g;
        let area = (block * block) as f64;
        let mut values = Vec::with_capacity(self.params.descriptor_len());
        let mut work = vec![Complex64::new(0.0, 0.0); n * n];
        for filt in &self.filters {
            for (w, (s, f)) in work.iter_mut().zip(spectrum.iter().zip(filt)) {
                *w = s * f;
            }
            self.fft.transform(&mut work, true);
            for br in 0..g {
                for bc in 0..g {
                    let mut sum = 0.0;
                    for r in br * block..(br + 1) * block {
                        for c in bc * block..(bc + 1) * block {
                            sum += work[r * n + c].norm();
                        }
                    }
                    values.push(sum / area);
                }
            }
        }
        Ok(GistDescriptor { values })
    }
}

/// Log transform, high-pass whitening and local contrast normalisation, with
/// periodic boundaries.
fn prefilter(image: &GrayImage, fc: f64, fft: &Fft2) -> Vec<f64> {
    let n = image.side;
    let s1 = fc / 2f64.ln().sqrt();
    let gauss: Vec<f64> = (0..n * n)
        .map(|k| {
            let fy = signed_freq(k / n, n);
            let fx = signed_freq(k % n, n);
            (-(fx * fx + fy * fy) / (s1 * s1)).exp()
        })
        .collect();
    let lowpass = |x: &[f64]| -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.transform(&mut buf, false);
        buf.iter_mut().zip(&gauss).for_each(|(b, g)| *b *= g);
        fft.transform(&mut buf, true);
        buf.iter().map(|c| c.re).collect()
    };
    let logged: Vec<f64> = image.pixels.iter().map(|p| (p + 1.0).ln()).collect();
    let low = lowpass(&logged);
    let high: Vec<f64> = logged.iter().zip(&low).map(|(a, b)| a - b).collect();
    let energy: Vec<f64> = high.iter().map(|v| v * v).collect();
    let local = lowpass(&energy);
    high.iter()
        .zip(&local)
        .map(|(h, e)| h / (0.2 + e.abs().sqrt()))
        .collect()
}

/// One-shot GIST; builds the bank for the image size.
pub fn gist(image: &GrayImage, params: &GistParams) -> Result<GistDescriptor> {
    GistBank::new(image.side, *params)?.describe(image)
}

/// Descriptors for many same-size images with one shared bank.
pub fn gist_batch(images: &[GrayImage], params: &GistParams) -> Result<Vec<GistDescriptor>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let bank = GistBank::new(first.side, *params)?;
    #[cfg(feature = "parallel")]
    let out = images.par_iter().map(|im| bank.describe(im)).collect();
    #[cfg(not(feature = "parallel"))]
    let out = images.iter().map(|im| bank.describe(im)).collect();
    out
}

/// `id,g0,…,g{len−1}` rows.
pub fn render_descriptor_csv(rows: &[(usize, &[f64])]) -> String {
    let width = rows.first().map_or(DESCRIPTOR_LEN, |r| r.1.len());
    let mut out = String::from("id");
    for k in 0..width {
        out.push_str(&format!(",g{k}"));
    }
    out.push('\n');
    for (id, values) in rows {
        out.push_str(&id.to_string());
        for v in values.iter() {
            out.push(',');
            out.push_str(&format_g17(*v));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// PCA

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, one per row, by decreasing variance.
    /// Only the `rank` directions with non-zero variance are kept.
    pub components: Vec<Vec<f64>>,
    /// Sample variance (n − 1 denominator) along each component.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance per component. A zero-variance data set
    /// gets the single ratio 0.
    pub ratios: Vec<f64>,
    pub rank: usize,
}

pub fn pca_fit(data: &[Vec<f64>]) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 samples"));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("PCA rows must share a positive dimension"));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input has non-finite values"));
    }
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = nalgebra::DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let svd = nalgebra::linalg::SVD::new(centred, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numeric("SVD did not return right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let s_max = s.first().copied().unwrap_or(0.0);
    let tol = n.max(d) as f64 * f64::EPSILON * s_max;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let total: f64 = s[..rank].iter().map(|v| v * v).sum();
    if rank == 0 {
        log::warn!("PCA input has zero variance");
        return Ok(PcaModel {
            mean,
            components: Vec::new(),
            explained_variance: Vec::new(),
            ratios: vec![0.0],
            rank: 0,
        });
    }
    let components = order[..rank]
        .iter()
        .map(|&k| v_t.row(k).iter().copied().collect())
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance: s[..rank].iter().map(|v| v * v / (n - 1) as f64).collect(),
        ratios: s[..rank].iter().map(|v| v * v / total).collect(),
        rank,
    })
}

impl PcaModel {
    pub fn cumulative_ratios(&self) -> Vec<f64> {
        self.ratios
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// Coordinates of `x` on the first `k` components.
    pub fn transform(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.mean.len(),
                x.len()
            )));
        }
        if k > self.rank {
            return Err(Error::invalid(format!(
                "k = {k} exceeds rank {}",
                self.rank
            )));
        }
        Ok(self.components[..k]
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() > self.rank {
            return Err(Error::invalid("more coordinates than components"));
        }
        let mut x = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        Ok(x)
    }
}

/// Smallest `k` whose cumulative ratio reaches `threshold` (1e−9 slack);
/// the rank if none does.
pub fn pca_select_k(model: &PcaModel, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(model
        .cumulative_ratios()
        .iter()
        .position(|&c| c >= threshold - 1e-9)
        .map_or(model.rank, |p| p + 1)
        .min(model.rank))
}
