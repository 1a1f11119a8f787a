//! Image representation, PNG/JPEG ingestion, dataset splitting and mask geometry.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng;
use crate::tensor::{Real, Shape, Tensor};

/// Smallest side accepted anywhere in the pipeline.
pub const MIN_SIDE: usize = 8;
/// Resolution used by default throughout training and evaluation.
pub const CANONICAL_SIZE: usize = 64;

/// `height × width × channels` image, row-major HWC, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Size(format!(
                "image is {height}x{width}, minimum is {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if channels != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary floats, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, 3, data)
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Result<Self> {
        Self::new(height, width, 3, vec![v; height * width * 3])
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// `[1, 3, h, w]` planar tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = self.dims();
        let mut out = vec![T::zero(); h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[ch * h * w + y * w + x] = T::of(self.get(y, x, ch) as f64);
                }
            }
        }
        Tensor::new(Shape::new(1, c, h, w), out)
    }

    /// Inverse of [`ImageTensor::to_tensor`] for one batch item, clamped to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let s = t.shape;
        if s.c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {}", s.c)));
        }
        let src = t.sample(index);
        let mut out = vec![0.0f32; s.per_sample()];
        for ch in 0..3 {
            for y in 0..s.h {
                for x in 0..s.w {
                    out[(y * s.w + x) * 3 + ch] = src[ch * s.plane() + y * s.w + x].as_f64() as f32;
                }
            }
        }
        Self::from_clamped(s.h, s.w, out)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|&v| quantize(v))
            .collect::<Vec<u8>>();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size")
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&b| normalize(b)).collect();
        Self::new(img.height() as usize, img.width() as usize, 3, data)
    }

    /// Lossless 8-bit PNG encoding.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("PNG encoding into memory");
        buf.into_inner()
    }

    /// Decodes PNG or JPEG bytes and resizes to `target × target`.
    pub fn from_encoded(bytes: &[u8], target: usize) -> Result<Self> {
        let format = image::guess_format(bytes).map_err(|e| Error::Format(e.to_string()))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(Error::Format(format!("{format:?} (only PNG and JPEG are accepted)")));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| Error::Format(e.to_string()))?;
        let rgb = img.to_rgb8();
        Self::from_rgb8(&resize_rgb(&rgb, target))
    }

    /// `(width, height)` of encoded image bytes, without decoding pixels.
    pub fn encoded_dims(bytes: &[u8]) -> Result<(u32, u32)> {
        image::ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| Error::Format(e.to_string()))?
            .into_dimensions()
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// Pixelwise `|a - b|` mean.
    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Max pixelwise `|a - b|`.
    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// 8-bit value to normalized intensity.
pub fn normalize(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Normalized intensity to the nearest 8-bit value.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn resize_rgb(rgb: &RgbImage, target: usize) -> RgbImage {
    if rgb.width() as usize == target && rgb.height() as usize == target {
        rgb.clone()
    } else {
        image::imageops::resize(rgb, target as u32, target as u32, FilterType::Triangle)
    }
}

/// Reads a PNG or JPEG and resizes it (bilinear) to `target_size × target_size`.
///
/// Grayscale and alpha inputs are converted to RGB.
pub fn load_image(path: impl AsRef<Path>, target_size: usize) -> Result<ImageTensor> {
    let path = path.as_ref();
    if target_size < MIN_SIDE {
        return Err(Error::Size(format!("target size {target_size} below {MIN_SIDE}")));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match ImageTensor::from_encoded(&bytes, target_size) {
        Err(Error::Format(msg)) => Err(Error::Format(format!("{}: {msg}", path.display()))),
        other => other,
    }
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, img.to_png_bytes()).map_err(|e| Error::io(path, e))
}

/// A 70/30 partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

pub const MIN_CORPUS: usize = 10;
pub const TRAIN_FRACTION: f64 = 0.7;

/// Seeded shuffle followed by a 70/30 partition.
pub fn split_dataset(corpus: &[String], seed: u64) -> Result<DatasetSplit> {
    if corpus.len() < MIN_CORPUS {
        return Err(Error::Config(format!(
            "corpus has {} items, need at least {MIN_CORPUS}",
            corpus.len()
        )));
    }
    let mut ids = corpus.to_vec();
    ids.shuffle(&mut rng(seed, 0x5911));
    let n_train = (TRAIN_FRACTION * corpus.len() as f64).round() as usize;
    let test = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        test,
        seed,
    })
}

/// An in-memory set of named images at one resolution.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageTensor> {
        self.ids.iter().position(|i| i == id).map(|p| &self.images[p])
    }

    /// Images for `ids`, in order. Unknown ids are a configuration error.
    pub fn select(&self, ids: &[String]) -> Result<Vec<ImageTensor>> {
        let index: std::collections::HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.images[i].clone())
                    .ok_or_else(|| Error::Config(format!("unknown image id `{id}`")))
            })
            .collect()
    }

    pub fn resolution(&self) -> Option<usize> {
        self.images.first().map(|i| i.height())
    }

    /// Reads every PNG/JPEG in `dir` (sorted by file name), or the ids listed in
    /// `manifest` (one relative path per line, `#` comments allowed).
    pub fn from_dir(dir: impl AsRef<Path>, manifest: Option<&Path>, size: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let names: Vec<String> = match manifest {
            Some(m) => std::fs::read_to_string(m)
                .map_err(|e| Error::io(m, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
            None => {
                let mut names = Vec::new();
                for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                    let entry = entry.map_err(|e| Error::io(dir, e))?;
                    let path: PathBuf = entry.path();
                    let ext = path
                        .extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase);
                    if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                        names.push(entry.file_name().to_string_lossy().into_owned());
                    }
                }
                names.sort();
                names
            }
        };
        let mut ds = Dataset::default();
        for name in names {
            let img = load_image(dir.join(&name), size)?;
            ds.ids.push(name);
            ds.images.push(img);
        }
        Ok(ds)
    }

    /// Writes every image as `<id>` (PNG) plus a `manifest.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, img) in self.ids.iter().zip(&self.images) {
            save_image(img, dir.join(id))?;
        }
        let manifest = dir.join("manifest.txt");
        std::fs::write(&manifest, self.ids.join("\n") + "\n").map_err(|e| Error::io(&manifest, e))
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Resolution at which [`MaskSpec::reference`] is defined.
pub const MASK_REFERENCE_RESOLUTION: usize = 512;

impl MaskSpec {
    /// 120 wide by 66 tall, centred horizontally in the upper half of a 512×512 frame.
    pub fn reference() -> Self {
        let (w, h) = (120, 66);
        let r = MASK_REFERENCE_RESOLUTION;
        Self {
            top: r / 4 - h / 2,
            left: (r - w) / 2,
            height: h,
            width: w,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.top + self.height > height || self.left + self.width > width {
            return Err(Error::Mask(format!(
                "mask {self:?} exceeds {height}x{width} image"
            )));
        }
        Ok(())
    }

    /// `[1, 1, h, w]` indicator (1 inside the mask).
    pub fn to_tensor<T: Real>(&self, height: usize, width: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); height * width];
        for y in 0..height {
            for x in 0..width {
                if self.contains(y, x) {
                    data[y * width + x] = T::one();
                }
            }
        }
        Tensor::new(Shape::new(1, 1, height, width), data)
    }
}

/// Scales a mask defined on a 512×512 frame to `image`'s size and re-centres it
/// horizontally in the upper half.
pub fn scale_mask(reference: &MaskSpec, image: &ImageTensor) -> Result<MaskSpec> {
    scale_mask_to(reference, image.height(), image.width())
}

pub fn scale_mask_to(reference: &MaskSpec, height: usize, width: usize) -> Result<MaskSpec> {
    let r = MASK_REFERENCE_RESOLUTION as f64;
    let sy = height as f64 / r;
    let sx = width as f64 / r;
    let h = ((reference.height as f64 * sy).round() as usize).min(height / 2);
    let w = ((reference.width as f64 * sx).round() as usize).min(width);
    if h == 0 || w == 0 {
        return Err(Error::Mask(format!(
            "mask {}x{} scales to zero area at {height}x{width}",
            reference.width, reference.height
        )));
    }
    let centre_y = height as f64 / 4.0;
    let top = (centre_y - h as f64 / 2.0).round().max(0.0) as usize;
    let mask = MaskSpec {
        top,
        left: (width - w) / 2,
        height: h,
        width: w,
    };
    mask.check_bounds(height, width)?;
    Ok(mask)
}

pub mod synth {
    //! Procedural "artwork" corpus: gradients, shapes, stripes and brush texture.

    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use super::{Dataset, ImageTensor};
    use crate::nn::rng;

    fn color(r: &mut ChaCha8Rng) -> [f32; 3] {
        [r.gen(), r.gen(), r.gen()]
    }

    fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
        [
            a[0] + (b[0] - a[0]) * t,
            a[1] + (b[1] - a[1]) * t,
            a[2] + (b[2] - a[2]) * t,
        ]
    }

    /// One deterministic image for `(seed, index)`.
    pub fn image(seed: u64, index: u64, size: usize) -> ImageTensor {
        let mut r = rng(seed, index);
        let s = size as f32;
        let mut px = vec![[0.0f32; 3]; size * size];

        let (c0, c1) = (color(&mut r), color(&mut r));
        let angle: f32 = r.gen_range(0.0..std::f32::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        for y in 0..size {
            for x in 0..size {
                let t = ((x as f32 / s - 0.5) * dx + (y as f32 / s - 0.5) * dy + 0.5).clamp(0.0, 1.0);
                px[y * size + x] = mix(c0, c1, t);
            }
        }

        let shapes = r.gen_range(2..=5);
        for _ in 0..shapes {
            let col = color(&mut r);
            let alpha: f32 = r.gen_range(0.5..1.0);
            let cx: f32 = r.gen_range(0.0..s);
            let cy: f32 = r.gen_range(0.0..s);
            match r.gen_range(0..4) {
                0 => {
                    let rad: f32 = r.gen_range(0.08..0.3) * s;
                    for y in 0..size {
                        for x in 0..size {
                            let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                            let cover = (rad - d + 0.5).clamp(0.0, 1.0) * alpha;
                            let p = &mut px[y * size + x];
                            *p = mix(*p, col, cover);
                        }
                    }
                }
                1 => {
                    let hw: f32 = r.gen_range(0.05..0.3) * s;
                    let hh: f32 = r.gen_range(0.05..0.3) * s;
                    for y in 0..size {
                        for x in 0..size {
                            if (x as f32 - cx).abs() < hw && (y as f32 - cy).abs() < hh {
                                let p = &mut px[y * size + x];
                                *p = mix(*p, col, alpha);
                            }
                        }
                    }
                }
                2 => {
                    let period: f32 = r.gen_range(0.08..0.25) * s;
                    let theta: f32 = r.gen_range(0.0..std::f32::consts::PI);
                    let (sx, sy) = (theta.cos(), theta.sin());
                    let extent: f32 = r.gen_range(0.2..0.5) * s;
                    for y in 0..size {
                        for x in 0..size {
                            let (ux, uy) = (x as f32 - cx, y as f32 - cy);
                            if ux.abs() > extent || uy.abs() > extent {
                                continue;
                            }
                            let phase = (ux * sx + uy * sy) / period * std::f32::consts::TAU;
                            let cover = (0.5 + 0.5 * phase.sin()) * alpha;
                            let p = &mut px[y * size + x];
                            *p = mix(*p, col, cover);
                        }
                    }
                }
                _ => {
                    let sigma: f32 = r.gen_range(0.08..0.25) * s;
                    for y in 0..size {
                        for x in 0..size {
                            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                            let cover = (-d2 / (2.0 * sigma * sigma)).exp() * alpha;
                            let p = &mut px[y * size + x];
                            *p = mix(*p, col, cover);
                        }
                    }
                }
            }
        }

        // brush-stroke texture
        let amp: f32 = r.gen_range(0.0..0.06);
        let fx: f32 = r.gen_range(0.2..0.9);
        let fy: f32 = r.gen_range(0.2..0.9);
        let mut data = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let tex = amp * ((x as f32 * fx).sin() * (y as f32 * fy + x as f32 * 0.3).cos());
                for c in px[y * size + x] {
                    data.push((c + tex).clamp(0.0, 1.0));
                }
            }
        }
        ImageTensor::new(size, size, 3, data).expect("synthetic image is valid")
    }

    /// `n` images named `synth_00000.png`, ….
    pub fn corpus(n: usize, size: usize, seed: u64) -> Dataset {
        let mut ds = Dataset::default();
        for i in 0..n {
            ds.ids.push(format!("synth_{i:05}.png"));
            ds.images.push(image(seed, i as u64, size));
        }
        ds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize(255), 1.0);
        assert_eq!(normalize(0), 0.0);
    }

    #[test]
    fn normalization_inverts_on_the_lattice() {
        for v in 0..=255u8 {
            assert_eq!(quantize(normalize(v)), v);
        }
    }

    #[test]
    fn png_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = synth::image(3, 1, 32);
        save_image(&img, &p).unwrap();
        let once = load_image(&p, 32).unwrap();
        let p2 = dir.path().join("b.png");
        save_image(&once, &p2).unwrap();
        let twice = load_image(&p2, 32).unwrap();
        assert!(once.max_abs_diff(&twice) <= 1.0 / 255.0);
        assert!(img.max_abs_diff(&once) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn load_resizes_and_promotes_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::GrayImage::from_pixel(40, 20, image::Luma([128u8]))
            .save(&p)
            .unwrap();
        let img = load_image(&p, 16).unwrap();
        assert_eq!(img.dims(), (16, 16, 3));
        assert!(img.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn load_errors_name_the_path() {
        let err = load_image("/nonexistent/x.png", 64).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
        assert!(err.to_string().contains("/nonexistent/x.png"));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&p, 64), Err(Error::Format(_))));
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&ids(1000), 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (700, 300));
        let s = split_dataset(&ids(10), 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert!(matches!(split_dataset(&ids(9), 1), Err(Error::Config(_))));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let corpus = ids(57);
        let a = split_dataset(&corpus, 42).unwrap();
        let b = split_dataset(&corpus, 42).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<_> = a.train.iter().chain(&a.test).cloned().collect();
        all.sort();
        let mut want = corpus.clone();
        want.sort();
        assert_eq!(all, want);
        assert_ne!(a, split_dataset(&corpus, 43).unwrap());
    }

    #[test]
    fn mask_scaling() {
        let r = MaskSpec::reference();
        assert_eq!((r.width, r.height), (120, 66));
        let at64 = scale_mask_to(&r, 64, 64).unwrap();
        assert_eq!((at64.width, at64.height), (15, 8));
        assert_eq!(scale_mask_to(&r, 512, 512).unwrap(), r);
        // centred horizontally, centred on the upper quarter line vertically
        assert_eq!(at64.left, (64 - 15) / 2);
        assert_eq!(at64.top, 12);
    }

    #[test]
    fn degenerate_mask_is_an_error() {
        let tiny = MaskSpec {
            top: 0,
            left: 0,
            height: 10,
            width: 10,
        };
        assert!(matches!(scale_mask_to(&tiny, 16, 16), Err(Error::Mask(_))));
    }

    #[test]
    fn tensor_layout_round_trips() {
        let img = synth::image(9, 0, 16);
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape, Shape::new(1, 3, 16, 16));
        assert_eq!(t.data[2 * 256 + 3 * 16 + 5], img.get(3, 5, 2) as f64);
        assert_eq!(ImageTensor::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn invalid_constructions() {
        assert!(matches!(ImageTensor::filled(7, 64, 0.0), Err(Error::Size(_))));
        assert!(ImageTensor::new(8, 8, 3, vec![1.5; 192]).is_err());
        assert!(ImageTensor::new(8, 8, 1, vec![0.5; 64]).is_err());
    }

    proptest! {
        #[test]
        fn mask_always_in_bounds(h in 8usize..300, w in 8usize..300) {
            let m = scale_mask_to(&MaskSpec::reference(), h, w).unwrap();
            prop_assert!(m.top + m.height <= h && m.left + m.width <= w);
            prop_assert!(m.area() > 0);
        }

        #[test]
        fn decoded_images_stay_in_range(seed in 0u64..1000, size in 8usize..40) {
            let bytes = synth::image(seed, 0, 24).to_png_bytes();
            let img = ImageTensor::from_encoded(&bytes, size).unwrap();
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(img.dims(), (size, size, 3));
        }
    }
}
