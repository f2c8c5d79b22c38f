//! Images to graph problems: patch features, the Gaussian-kernel weight
//! accessor, fidelity setup and the initial state. Also the synthetic images
//! used by tests and benchmarks.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Affinity, FidelityData, GaussianSimilarity};

/// Initial label on unsupervised vertices.
pub const INITIAL_GUESS: f64 = 0.49;

/// Row-major image with interleaved channels, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 || data.len() != height * width * channels {
            return Err(Error::Input("image dimensions do not match the data".into()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("image values must lie in [0,1]".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Loads any supported raster; colour images become 3 channels, grey
    /// images 1, alpha is dropped.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        if img.color().has_color() {
            let rgb = img.to_rgb32f();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect();
            Self::new(h as usize, w as usize, 3, data)
        } else {
            let l = img.to_luma32f();
            let (w, h) = l.dimensions();
            let data = l.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect();
            Self::new(h as usize, w as usize, 1, data)
        }
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 3 {
            image::RgbImage::from_raw(w, h, bytes).expect("buffer size").save(path)?;
        } else {
            image::GrayImage::from_raw(w, h, bytes).expect("buffer size").save(path)?;
        }
        Ok(())
    }

    /// Multiplies every channel of each pixel by `weights[pixel]`.
    pub fn weighted(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.pixels() {
            return Err(Error::Dimension { what: "pixel weights", expected: self.pixels(), got: weights.len() });
        }
        let c = self.channels;
        let data = self.data.iter().enumerate().map(|(i, v)| (v * weights[i / c]).clamp(0.0, 1.0)).collect();
        Self::new(self.height, self.width, c, data)
    }
}

/// Binary label image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<bool>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Input("mask dimensions do not match the data".into()));
        }
        Ok(Self { height, width, labels })
    }

    /// Loads a single-channel mask where 0 is background and the maximum
    /// representable value is the class. Anything else is rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        if img.color().has_color() {
            return Err(Error::Input(format!("label mask {} must be single-channel", path.display())));
        }
        let (w, h, vals, max): (u32, u32, Vec<u32>, u32) = match img {
            image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA16(_) => {
                let l = img.to_luma16();
                let (w, h) = l.dimensions();
                (w, h, l.into_raw().into_iter().map(u32::from).collect(), 65535)
            }
            _ => {
                let l = img.to_luma8();
                let (w, h) = l.dimensions();
                (w, h, l.into_raw().into_iter().map(u32::from).collect(), 255)
            }
        };
        if let Some(v) = vals.iter().find(|&&v| v != 0 && v != max) {
            return Err(Error::Input(format!("label mask {} is not binary (value {v})", path.display())));
        }
        Self::new(h as usize, w as usize, vals.into_iter().map(|v| v == max).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.labels.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size")
            .save(path)?;
        Ok(())
    }

    /// Fraction of disagreeing pixels.
    pub fn error_rate(&self, other: &LabelMask) -> Result<f64> {
        if self.labels.len() != other.labels.len() {
            return Err(Error::Input("masks differ in size".into()));
        }
        let wrong = self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count();
        Ok(wrong as f64 / self.labels.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelScale {
    /// Values in `[0,1]`.
    Unit,
    /// Values in `[0,255]`.
    Byte,
}

impl PixelScale {
    pub fn factor(self) -> f64 {
        match self {
            PixelScale::Unit => 1.0,
            PixelScale::Byte => 255.0,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            PixelScale::Unit => "unit",
            PixelScale::Byte => "byte",
        }
    }
}

impl FromStr for PixelScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(PixelScale::Unit),
            "byte" => Ok(PixelScale::Byte),
            _ => Err(Error::Input(format!("pixel scale must be 'unit' or 'byte', got '{s}'"))),
        }
    }
}

/// One feature vector per row, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    ell: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn ell(&self) -> usize {
        self.ell
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ell..(i + 1) * self.ell]
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<Self> {
        if self.ell != other.ell {
            return Err(Error::Input("feature dimensions differ (channel counts must match)".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { n: self.n + other.n, ell: self.ell, data })
    }
}

/// 3×3 Gaussian with standard deviation 1, normalized to sum 1.
pub fn gaussian_kernel3() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut s = 0.0;
    for (a, row) in k.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 1.0, b as f64 - 1.0);
            *v = (-(da * da + db * db) / 2.0).exp();
            s += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= s;
        }
    }
    k
}

/// Per pixel: the replication-padded 3×3 neighbourhood of each channel,
/// weighted by `9·K`, flattened row-major, channel after channel.
pub fn extract_features(img: &ImageTensor, scale: PixelScale) -> FeatureMatrix {
    let k = gaussian_kernel3();
    let (h, w, c) = (img.height, img.width, img.channels);
    let ell = 9 * c;
    let s = scale.factor();
    let mut data = Vec::with_capacity(h * w * ell);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                for (a, krow) in k.iter().enumerate() {
                    let yy = (y + a).saturating_sub(1).min(h - 1);
                    for (b, kv) in krow.iter().enumerate() {
                        let xx = (x + b).saturating_sub(1).min(w - 1);
                        data.push(9.0 * kv * img.get(yy, xx, ch) * s);
                    }
                }
            }
        }
    }
    FeatureMatrix { n: h * w, ell, data }
}

/// `ω_ij = Ω(z_i, z_j)` off the diagonal, 0 on it, computed on demand.
#[derive(Clone, Debug)]
pub struct KernelWeights {
    features: Arc<FeatureMatrix>,
    sim: GaussianSimilarity,
}

impl KernelWeights {
    pub fn new(features: Arc<FeatureMatrix>, sim: GaussianSimilarity) -> Result<Self> {
        if features.ell != sim.ell {
            return Err(Error::Dimension { what: "similarity feature length", expected: features.ell, got: sim.ell });
        }
        Ok(Self { features, sim })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn similarity(&self) -> GaussianSimilarity {
        self.sim
    }
}

impl Affinity for KernelWeights {
    fn len(&self) -> usize {
        self.features.n
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.features.row(i), self.features.row(j));
        self.sim.from_sq_dist(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }
}

/// A segmentation problem on the joint graph of a reference and a target
/// image. Vertices are the reference pixels followed by the target pixels.
#[derive(Clone, Debug)]
pub struct SegmentationProblem {
    pub weights: KernelWeights,
    pub fidelity: FidelityData,
    pub u0: Vec<f64>,
    pub n_reference: usize,
    pub target_height: usize,
    pub target_width: usize,
}

impl SegmentationProblem {
    pub fn n(&self) -> usize {
        self.u0.len()
    }

    /// Indices of the supervised (reference) vertices.
    pub fn supervised(&self) -> &[usize] {
        self.fidelity.support()
    }

    /// Thresholds the target block of `u` at ½.
    pub fn target_mask(&self, u: &[f64]) -> LabelMask {
        let labels = u[self.n_reference..].iter().map(|&x| x >= 0.5).collect();
        LabelMask { height: self.target_height, width: self.target_width, labels }
    }
}

pub fn assemble_problem(
    reference: &ImageTensor,
    labels: &LabelMask,
    target: &ImageTensor,
    mu_hat: f64,
    sim: GaussianSimilarity,
    scale: PixelScale,
) -> Result<SegmentationProblem> {
    if !(mu_hat > 0.0) || !mu_hat.is_finite() {
        return Err(Error::Input(format!("fidelity strength must be positive, got {mu_hat}")));
    }
    if labels.height != reference.height || labels.width != reference.width {
        return Err(Error::Input("reference image and label mask differ in size".into()));
    }
    if reference.channels != target.channels {
        return Err(Error::Input("reference and target images differ in channel count".into()));
    }
    let fr = extract_features(reference, scale);
    let ft = extract_features(target, scale);
    let feats = Arc::new(fr.concat(&ft)?);
    let weights = KernelWeights::new(feats, sim)?;
    let (nr, nt) = (reference.pixels(), target.pixels());
    let mut mu = vec![0.0; nr + nt];
    let mut f_tilde = vec![0.0; nr + nt];
    let mut u0 = vec![INITIAL_GUESS; nr + nt];
    for i in 0..nr {
        mu[i] = mu_hat;
        f_tilde[i] = if labels.labels[i] { 1.0 } else { 0.0 };
        u0[i] = f_tilde[i];
    }
    let fidelity = FidelityData::new(mu, f_tilde)?;
    Ok(SegmentationProblem {
        weights,
        fidelity,
        u0,
        n_reference: nr,
        target_height: target.height,
        target_width: target.width,
    })
}

pub const BACKGROUND: [f64; 3] = [0.25, 0.55, 0.30];
pub const FOREGROUND: [f64; 3] = [0.55, 0.44, 0.27];

/// Two-tone RGB image with an elliptical foreground; `(cy, cx, ry, rx)` are
/// fractions of the side length and `tones` is (background, foreground).
/// Returns the image and its exact mask.
pub fn two_tone(
    height: usize,
    width: usize,
    ellipse: (f64, f64, f64, f64),
    tones: ([f64; 3], [f64; 3]),
    noise: f64,
    seed: u64,
) -> (ImageTensor, LabelMask) {
    let (cy, cx, ry, rx) = ellipse;
    let inside = |y: usize, x: usize| {
        let dy = (y as f64 + 0.5 - cy * height as f64) / (ry * height as f64);
        let dx = (x as f64 + 0.5 - cx * width as f64) / (rx * width as f64);
        dy * dy + dx * dx <= 1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
    let mut data = Vec::with_capacity(height * width * 3);
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let fg = inside(y, x);
            labels.push(fg);
            let tone = if fg { tones.1 } else { tones.0 };
            for t in tone {
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                data.push((t + e).clamp(0.0, 1.0));
            }
        }
    }
    let img = ImageTensor::new(height, width, 3, data).expect("valid synthetic image");
    (img, LabelMask { height, width, labels })
}

/// Reference/target pair of the given side length with exact labels. The
/// target has a differently placed foreground. Both images carry additive
/// Gaussian noise of standard deviation `noise` (unit scale), drawn from
/// separate streams; with `noise = 0` many pixels share one patch and the
/// interpolation blocks of the Nyström methods degenerate.
pub struct SyntheticPair {
    pub reference: ImageTensor,
    pub reference_labels: LabelMask,
    pub target: ImageTensor,
    pub target_truth: LabelMask,
}

pub fn synthetic_pair(side: usize, noise: f64, seed: u64) -> SyntheticPair {
    let (reference, reference_labels) = two_tone(side, side, (0.45, 0.5, 0.3, 0.22), (BACKGROUND, FOREGROUND), noise, seed);
    let (target, target_truth) = two_tone(side, side, (0.55, 0.45, 0.25, 0.3), (BACKGROUND, FOREGROUND), noise, seed.wrapping_add(1));
    SyntheticPair { reference, reference_labels, target, target_truth }
}

/// Tones of the benchmark image. The contrast is kept low: with the
/// segmentation tones a few interpolation blocks per rank come out nearly
/// singular, and those draws dominate the mean Nyström error.
pub const BENCHMARK_TONES: ([f64; 3], [f64; 3]) = ([0.40, 0.50, 0.30], [0.50, 0.45, 0.30]);

/// Noise-free two-tone benchmark image of side `side`.
pub fn benchmark_image(side: usize) -> ImageTensor {
    two_tone(side, side, (0.5, 0.5, 0.3, 0.35), BENCHMARK_TONES, 0.0, 0).0
}
