//! 2D discrete Fourier transforms and the spectral features both detectors
//! consume.
//!
//! `dft2_brute` is the O(N⁴) direct evaluation of the transform definition and
//! serves as the independent oracle for `fft2`, which runs a radix-2
//! row-column fast transform when a dimension is a power of two and the direct
//! per-dimension transform otherwise. Coefficients stay in natural order (DC
//! at index 0, no center shift).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::smallnet::{ActivationTrace, Tensor};

/// Magnitudes of the 2D Fourier coefficients of one real matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub magnitudes: Vec<f64>,
}

/// Which inputs spectral features are drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureMode {
    /// Input-image color-channel spectra only.
    Black,
    /// Spectra of the named feature maps captured from the target network.
    White { layers: Vec<String> },
}

/// Flat spectral feature vector with its detection label and provenance.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// 0 = clean, 1 = adversarial.
    pub label: u8,
    pub sample_id: usize,
    pub attack: String,
    pub epsilon: f64,
}

impl FeatureVector {
    pub fn unlabeled(values: Vec<f64>) -> Self {
        FeatureVector { values, label: 0, sample_id: 0, attack: String::new(), epsilon: 0.0 }
    }
}

/// Direct evaluation of the 2D DFT definition,
/// F(l,k) = Σ_{m,n} exp(−2πi(lm/R + kn/C))·x(m,n). Oracle and fallback only.
pub fn dft2_brute(data: &[f64], rows: usize, cols: usize) -> Result<Vec<Complex64>> {
    check_matrix(data, rows, cols)?;
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for l in 0..rows {
        for k in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..rows {
                for n in 0..cols {
                    let phase = -2.0 * PI * (l * m) as f64 / rows as f64
                        - 2.0 * PI * (k * n) as f64 / cols as f64;
                    acc += Complex64::from_polar(data[m * cols + n], phase);
                }
            }
            out[l * cols + k] = acc;
        }
    }
    Ok(out)
}

/// Fast 2D transform via 1D row-column decomposition.
pub fn fft2(data: &[f64], rows: usize, cols: usize) -> Result<Vec<Complex64>> {
    check_matrix(data, rows, cols)?;
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    // rows
    let mut scratch = vec![Complex64::new(0.0, 0.0); cols.max(rows)];
    for r in 0..rows {
        transform_1d(&mut buf[r * cols..(r + 1) * cols], &mut scratch);
    }
    // columns
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = buf[r * cols + c];
        }
        transform_1d(&mut col, &mut scratch);
        for r in 0..rows {
            buf[r * cols + c] = col[r];
        }
    }
    Ok(buf)
}

fn check_matrix(data: &[f64], rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("matrix dimensions must be positive".into()));
    }
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "matrix {rows}x{cols} needs {} values, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(())
}

/// In-place 1D DFT: radix-2 when the length is a power of two, direct
/// evaluation otherwise.
fn transform_1d(x: &mut [Complex64], scratch: &mut [Complex64]) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(x);
    } else {
        let s = &mut scratch[..n];
        for (k, out) in s.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, v) in x.iter().enumerate() {
                let phase = -2.0 * PI * ((k * m) % n) as f64 / n as f64;
                acc += v * Complex64::from_polar(1.0, phase);
            }
            *out = acc;
        }
        x.copy_from_slice(s);
    }
}

/// Iterative in-place radix-2 Cooley-Tukey.
fn fft_radix2(x: &mut [Complex64]) {
    let n = x.len();
    let levels = n.trailing_zeros();
    // bit-reversal permutation
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - levels)) & (n - 1);
        if j > i {
            x.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let wlen = Complex64::from_polar(1.0, ang);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = x[start + k];
                let v = x[start + k + len / 2] * w;
                x[start + k] = u + v;
                x[start + k + len / 2] = u - v;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// Elementwise modulus of a coefficient matrix.
pub fn magnitude(coeffs: &[Complex64], rows: usize, cols: usize) -> Result<Spectrum> {
    if coeffs.len() != rows * cols {
        return Err(Error::Shape("coefficient matrix size mismatch".into()));
    }
    Ok(Spectrum { height: rows, width: cols, magnitudes: coeffs.iter().map(|c| c.norm()).collect() })
}

/// Magnitude spectrum of one real matrix.
pub fn magnitude_spectrum(data: &[f64], rows: usize, cols: usize) -> Result<Spectrum> {
    magnitude(&fft2(data, rows, cols)?, rows, cols)
}

/// Black-box features: concatenated per-channel magnitude spectra of the
/// input image, channel order 0..C−1, row-major within each channel.
pub fn blackbox_features(image: &Image) -> FeatureVector {
    let mut values = Vec::with_capacity(image.channels * image.height * image.width);
    for c in 0..image.channels {
        let spec = magnitude_spectrum(image.channel(c), image.height, image.width)
            .expect("image channels are valid matrices");
        values.extend(spec.magnitudes);
    }
    FeatureVector::unlabeled(values)
}

/// White-box features: concatenated magnitude spectra of the requested
/// feature maps, in the given layer order then channel order.
pub fn whitebox_features(trace: &ActivationTrace, layers: &[String]) -> Result<FeatureVector> {
    if layers.is_empty() {
        return Err(Error::Config("white-box feature extraction needs at least one layer".into()));
    }
    let mut values = Vec::new();
    for name in layers {
        let t: &Tensor = trace
            .get(name)
            .ok_or_else(|| Error::UnknownLayer {
                name: name.clone(),
                valid: trace.keys().cloned().collect(),
            })?;
        if t.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "layer '{name}' output {:?} is not a channel map",
                t.shape
            )));
        }
        let (ch, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
        for c in 0..ch {
            let spec = magnitude_spectrum(&t.data[c * h * w..(c + 1) * h * w], h, w)?;
            values.extend(spec.magnitudes);
        }
    }
    Ok(FeatureVector::unlabeled(values))
}

/// Feature dimension of one mode given the image/layer shapes.
pub fn feature_dimension(mode: &FeatureMode, image_shape: (usize, usize, usize), layer_shapes: &BTreeMap<String, Vec<usize>>) -> Result<usize> {
    match mode {
        FeatureMode::Black => Ok(image_shape.0 * image_shape.1 * image_shape.2),
        FeatureMode::White { layers } => {
            let mut dim = 0;
            for name in layers {
                let s = layer_shapes.get(name).ok_or_else(|| Error::UnknownLayer {
                    name: name.clone(),
                    valid: layer_shapes.keys().cloned().collect(),
                })?;
                dim += s.iter().product::<usize>();
            }
            Ok(dim)
        }
    }
}

/// Per-channel mean spatial difference and accumulated spectral difference of
/// paired clean/adversarial images.
pub fn diff_heatmaps(clean: &[Image], adv: &[Image]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if clean.len() != adv.len() {
        return Err(Error::Data(format!(
            "pair count mismatch: {} clean vs {} adversarial",
            clean.len(),
            adv.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Data("need at least one clean/adversarial pair".into()));
    }
    let (ch, h, w) = (clean[0].channels, clean[0].height, clean[0].width);
    let mut spatial = vec![vec![0.0; h * w]; ch];
    let mut spectral = vec![vec![0.0; h * w]; ch];
    for (c_img, a_img) in clean.iter().zip(adv) {
        if c_img.channels != ch || c_img.height != h || c_img.width != w {
            return Err(Error::Shape("inconsistent image shapes across pairs".into()));
        }
        for c in 0..ch {
            let diff: Vec<f64> = a_img
                .channel(c)
                .iter()
                .zip(c_img.channel(c))
                .map(|(a, b)| a - b)
                .collect();
            for (acc, d) in spatial[c].iter_mut().zip(&diff) {
                *acc += d;
            }
            let spec = magnitude_spectrum(&diff, h, w)?;
            for (acc, m) in spectral[c].iter_mut().zip(&spec.magnitudes) {
                *acc += m;
            }
        }
    }
    let n = clean.len() as f64;
    for plane in &mut spatial {
        for v in plane.iter_mut() {
            *v /= n;
        }
    }
    Ok((spatial, spectral))
}

/// Write a matrix as binary PGM (P5), min-max normalized to 0–255, with a
/// sidecar `<path>.range.txt` recording the normalization range.
pub fn write_pgm(path: &Path, data: &[f64], rows: usize, cols: usize) -> Result<()> {
    check_matrix(data, rows, cols)?;
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if (max - min).abs() < f64::MIN_POSITIVE { 1.0 } else { max - min };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{cols} {rows}\n255\n")?;
    let bytes: Vec<u8> =
        data.iter().map(|v| (((v - min) / span) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    let sidecar = path.with_extension("range.txt");
    std::fs::write(sidecar, format!("min={min:.17e}\nmax={max:.17e}\n"))?;
    Ok(())
}
