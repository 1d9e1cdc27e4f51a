//! Dataset types and ingestion: CIFAR-10 binary batches, a synthetic
//! desk-scale generator, 8-bit quantization, and the balanced 80:20
//! detection-dataset protocol.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::AttackOutcome;
use crate::error::{Error, Result};
use crate::smallnet::Network;
use crate::spectral::{self, FeatureMode, FeatureVector};

/// A normalized multi-channel raster, pixels in [0,1], layout [c][h][w].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("pixel out of [0,1] range".into()));
        }
        Ok(Image { channels, height, width, pixels })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, pixels: vec![0.0; channels * height * width] }
    }

    /// One channel as an H×W matrix slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let area = self.height * self.width;
        &self.pixels[c * area..(c + 1) * area]
    }

    /// L∞ distance to another image of the same shape.
    pub fn linf_distance(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Round every pixel to the nearest of 256 8-bit levels, mimicking what
    /// saving the image to a common 8-bit format would do.
    pub fn quantize_8bit(&self) -> Image {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|p| (p * 255.0).round() / 255.0).collect(),
        }
    }
}

/// Images paired with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledImages {
    /// Deterministic stratified split; `train_fraction` of each class goes to
    /// the first returned set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (LabeledImages, LabeledImages) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for class in 0..self.class_count {
            let mut idx: Vec<usize> =
                (0..self.labels.len()).filter(|&i| self.labels[i] == class).collect();
            shuffle(&mut idx, &mut rng);
            let n_train = (idx.len() as f64 * train_fraction).round() as usize;
            train_idx.extend_from_slice(&idx[..n_train]);
            test_idx.extend_from_slice(&idx[n_train..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        (self.subset(&train_idx), self.subset(&test_idx))
    }

    fn subset(&self, indices: &[usize]) -> LabeledImages {
        LabeledImages {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_CLASSES: usize = 10;

/// Load CIFAR-10 style binary batches: per record one label byte followed by
/// 3072 channel-major pixel bytes (R, G, B planes of 32×32).
pub fn load_cifar10_binary(path: &Path) -> Result<LabeledImages> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_cifar10(&bytes)
}

pub fn decode_cifar10(bytes: &[u8]) -> Result<LabeledImages> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        let expected = (bytes.len() / CIFAR_RECORD + 1) * CIFAR_RECORD;
        return Err(Error::Format(format!(
            "file length {} is not a positive multiple of {CIFAR_RECORD} (next valid: {expected})",
            bytes.len()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = chunk[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {rec}: label byte {label} >= {CIFAR_CLASSES}")));
        }
        let pixels = chunk[1..].iter().map(|&b| b as f64 / 255.0).collect();
        images.push(Image::new(3, 32, 32, pixels)?);
        labels.push(label);
    }
    Ok(LabeledImages { images, labels, class_count: CIFAR_CLASSES })
}

/// Re-encode into the 3073-byte record format. Only byte-exact for images
/// whose pixels are exact multiples of 1/255 (e.g. loaded or quantized).
pub fn encode_cifar10(data: &LabeledImages) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.images.len() * CIFAR_RECORD);
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if img.channels != 3 || img.height != 32 || img.width != 32 {
            return Err(Error::Shape("CIFAR record format requires 3x32x32 images".into()));
        }
        if label >= CIFAR_CLASSES {
            return Err(Error::Data(format!("label {label} not encodable as CIFAR record")));
        }
        out.push(label as u8);
        out.extend(img.pixels.iter().map(|p| (p * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn save_cifar10_binary(data: &LabeledImages, path: &Path) -> Result<()> {
    let bytes = encode_cifar10(data)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Bilinear upsampling of a per-channel coarse grid to `size`×`size`.
fn upsample(grid: &[f64], grid_size: usize, channels: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * size * size];
    for c in 0..channels {
        for y in 0..size {
            let v = y as f64 * (grid_size - 1) as f64 / (size - 1).max(1) as f64;
            let (y0, fy) = (v.floor() as usize, v.fract());
            let y1 = (y0 + 1).min(grid_size - 1);
            for x in 0..size {
                let u = x as f64 * (grid_size - 1) as f64 / (size - 1).max(1) as f64;
                let (x0, fx) = (u.floor() as usize, u.fract());
                let x1 = (x0 + 1).min(grid_size - 1);
                let g = |yy: usize, xx: usize| grid[(c * grid_size + yy) * grid_size + xx];
                let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                out[(c * size + y) * size + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Synthetic class-conditional dataset: per-class smooth random template plus
/// per-sample smooth noise, both bilinear-upsampled coarse grids. The clean
/// distribution is low-frequency by construction, mimicking natural images;
/// amplitudes keep pixels inside [0,1] without clipping. A per-sample
/// difficulty factor scales the class signal so classification margins span
/// from confident down to near zero. Fully determined by the seed.
pub fn synth_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> LabeledImages {
    const TEMPLATE_GRID: usize = 4;
    const NOISE_GRID: usize = 8;
    const CONTRAST: f64 = 0.34;
    const NOISE: f64 = 0.25;
    // Small broadband noise floor so clean spectra are not exactly
    // band-limited; ~1.3/255 per pixel.
    const FINE_NOISE: f64 = 0.005;
    // Per-sample signal strength range: hard examples near MIN_DIFFICULTY
    // sit close to the decision boundary.
    const MIN_DIFFICULTY: f64 = 0.25;
    let channels = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let grid: Vec<f64> = (0..channels * TEMPLATE_GRID * TEMPLATE_GRID)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            upsample(&grid, TEMPLATE_GRID, channels, size)
        })
        .collect();

    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            let grid: Vec<f64> = (0..channels * NOISE_GRID * NOISE_GRID)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            let noise = upsample(&grid, NOISE_GRID, channels, size);
            let difficulty = rng.gen_range(MIN_DIFFICULTY..1.0);
            let pixels = templates[class]
                .iter()
                .zip(&noise)
                .map(|(t, n)| {
                    let v = 0.5
                        + difficulty * CONTRAST * (t - 0.5)
                        + NOISE * (n - 0.5)
                        + rng.gen_range(-FINE_NOISE..FINE_NOISE);
                    v.clamp(0.0, 1.0)
                })
                .collect();
            images.push(Image { channels, height: size, width: size, pixels });
            labels.push(class);
        }
    }
    LabeledImages { images, labels, class_count: classes }
}

/// Train/test membership of one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Balanced clean/adversarial feature vectors with a stratified 80:20 split.
#[derive(Debug, Clone)]
pub struct DetectionDataset {
    pub features: Vec<FeatureVector>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl DetectionDataset {
    pub fn train_set(&self) -> Vec<&FeatureVector> {
        self.features
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(f, _)| f)
            .collect()
    }

    pub fn test_set(&self) -> Vec<&FeatureVector> {
        self.features
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == Split::Test)
            .map(|(f, _)| f)
            .collect()
    }
}

/// Options controlling feature extraction when assembling a detection dataset.
#[derive(Debug, Clone)]
pub struct DetectionOptions {
    pub mode: FeatureMode,
    /// log(1+m) scaling of spectral magnitudes.
    pub log_scale: bool,
    /// Round adversarial images to 8-bit levels before feature extraction.
    pub quantize_8bit: bool,
}

/// Build the balanced detection dataset: positives are the spectra of
/// successful adversarial images, negatives an equal-count seeded subset of
/// the clean pool, then an 80:20 stratified split.
pub fn build_detection_dataset(
    clean_pool: &[Image],
    outcomes: &[AttackOutcome],
    net: &Network,
    opts: &DetectionOptions,
    seed: u64,
) -> Result<DetectionDataset> {
    let successes: Vec<&AttackOutcome> = outcomes.iter().filter(|o| o.success).collect();
    if successes.is_empty() {
        return Err(Error::Data("no successful attack outcomes to build positives from".into()));
    }
    if clean_pool.len() < successes.len() {
        return Err(Error::Data(format!(
            "cannot balance 1:1 — {} successes but only {} clean images",
            successes.len(),
            clean_pool.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean_idx: Vec<usize> = (0..clean_pool.len()).collect();
    shuffle(&mut clean_idx, &mut rng);
    clean_idx.truncate(successes.len());
    clean_idx.sort_unstable();

    let extract = |img: &Image, label: u8, id: usize, attack: &str, eps: f64| -> Result<FeatureVector> {
        let mut fv = match &opts.mode {
            FeatureMode::Black => spectral::blackbox_features(img),
            FeatureMode::White { layers } => {
                let (_, trace) = net.forward(img, layers)?;
                spectral::whitebox_features(&trace, layers)?
            }
        };
        if opts.log_scale {
            for v in &mut fv.values {
                *v = (1.0 + *v).ln();
            }
        }
        fv.label = label;
        fv.sample_id = id;
        fv.attack = attack.to_string();
        fv.epsilon = eps;
        Ok(fv)
    };

    let mut features = Vec::with_capacity(2 * successes.len());
    for o in &successes {
        let img =
            if opts.quantize_8bit { o.adversarial.quantize_8bit() } else { o.adversarial.clone() };
        features.push(extract(&img, 1, o.sample_id, &o.attack_name, o.epsilon)?);
    }
    for &ci in &clean_idx {
        features.push(extract(&clean_pool[ci], 0, ci, "clean", 0.0)?);
    }

    // stratified 80:20
    let mut split = vec![Split::Test; features.len()];
    for label in [0u8, 1u8] {
        let mut idx: Vec<usize> =
            (0..features.len()).filter(|&i| features[i].label == label).collect();
        shuffle(&mut idx, &mut rng);
        let n_train = (idx.len() as f64 * 0.8).round() as usize;
        for &i in &idx[..n_train] {
            split[i] = Split::Train;
        }
    }
    Ok(DetectionDataset { features, split, seed })
}
