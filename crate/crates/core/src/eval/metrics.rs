//! Image similarity metrics and post-processing used by the robustness sweeps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;
use crate::perceptual::Extractor;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const FID_JITTER: f64 = 1e-6;

/// Root mean squared difference on the 0–255 scale.
pub fn rmse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) * 255.0;
            d * d
        })
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

/// `20·log10(255 / rmse)`, capped at 100 dB.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (255.0 / e).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let t: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| taps[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    (out, ho, wo)
}

fn channel(img: &ImageTensor, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).map(|&v| v as f64).collect()
}

/// Windowed SSIM: 11×11 Gaussian window (σ = 1.5), valid windows only, data range 1,
/// averaged over windows and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, h, w, &taps);
        let (my, _, _) = filter_valid(&y, h, w, &taps);
        let (sxx, _, _) = filter_valid(&xx, h, w, &taps);
        let (syy, _, _) = filter_valid(&yy, h, w, &taps);
        let (sxy, _, _) = filter_valid(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fid {
    pub value: f64,
    /// Diagonal jitter was added because a covariance was singular.
    pub jittered: bool,
}

fn gaussian_fit(x: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (x.len(), x[0].len());
    let mut mu = DVector::zeros(d);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let e = sym_eigen(m).eigenvalues;
    let max = e.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = e.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    max == 0.0 || min <= max * 1e-10
}

fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two embedding sets.
pub fn fid_from_embeddings(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Fid> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config(format!(
            "FID needs at least 2 images per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a[0].len() != b[0].len() {
        return Err(Error::Shape("embedding dimensions differ".into()));
    }
    let (mu_a, mut cov_a) = gaussian_fit(a);
    let (mu_b, mut cov_b) = gaussian_fit(b);
    let jittered = is_singular(&cov_a) || is_singular(&cov_b);
    if jittered {
        let d = cov_a.nrows();
        cov_a += DMatrix::identity(d, d) * FID_JITTER;
        cov_b += DMatrix::identity(d, d) * FID_JITTER;
    }
    let ra = sqrtm_psd(&cov_a);
    let inner = &ra * &cov_b * &ra;
    let tr_sqrt: f64 = sym_eigen(&inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = &mu_a - &mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(Fid {
        value: value.max(0.0),
        jittered,
    })
}

/// `fid` with the perceptual extractor's pooled final level as embedder.
pub fn fid(a: &[ImageTensor], b: &[ImageTensor], embedder: &Extractor) -> Result<Fid> {
    let ea = a.iter().map(|i| embedder.embed(i)).collect::<Result<Vec<_>>>()?;
    let eb = b.iter().map(|i| embedder.embed(i)).collect::<Result<Vec<_>>>()?;
    fid_from_embeddings(&ea, &eb)
}

/// Gaussian blur with an odd `kernel` and `σ = kernel / 6`, edges clamped.
pub fn gaussian_blur(img: &ImageTensor, kernel: usize) -> Result<ImageTensor> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!("blur kernel {kernel} must be odd")));
    }
    let taps = gaussian_taps(kernel, kernel as f64 / 6.0);
    let (h, w, ch) = img.dims();
    let r = (kernel / 2) as i64;
    let src = img.data();
    let at = |y: i64, x: i64, c: usize| src[((y.clamp(0, h as i64 - 1) as usize) * w + x.clamp(0, w as i64 - 1) as usize) * ch + c] as f64;
    let mut tmp = vec![0.0f64; h * w * ch];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for c in 0..ch {
                tmp[(y as usize * w + x as usize) * ch + c] =
                    (-r..=r).map(|i| taps[(i + r) as usize] * at(y, x + i, c)).sum();
            }
        }
    }
    let tat = |y: i64, x: usize, c: usize| tmp[((y.clamp(0, h as i64 - 1) as usize) * w + x) * ch + c];
    let mut out = vec![0.0f32; h * w * ch];
    for y in 0..h as i64 {
        for x in 0..w {
            for c in 0..ch {
                out[(y as usize * w + x) * ch + c] =
                    (-r..=r).map(|i| taps[(i + r) as usize] * tat(y + i, x, c)).sum::<f64>() as f32;
            }
        }
    }
    ImageTensor::from_clamped(h, w, out)
}

/// Baseline JPEG encode/decode round trip at `quality` (1–100).
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Config(format!("JPEG quality {quality} outside [1, 100]")));
    }
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&img.to_rgb8())
        .map_err(|e| Error::Format(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Format(format!("jpeg decode: {e}")))?;
    ImageTensor::from_rgb8(&decoded.to_rgb8())
}
