//! Minimal raster charts (no text rendering): line charts and image grids.

use image::{Rgb, RgbImage};

use crate::imagecore::ImageTensor;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 23, 23],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

pub fn color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for o in -1..=1 {
            put(img, x, y + o, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, c);
        }
    }
}

/// Line chart of `series` over a shared x axis (point index).
///
/// A legend swatch per series (in palette order) is drawn along the top edge.
/// Non-finite values are skipped.
pub fn line_chart(series: &[Series], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (left, right, top, bottom) = (50i64, width as i64 - 20, 40i64, height as i64 - 30);
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let grey = [200, 200, 200];
    for k in 0..=4 {
        let y = top + (bottom - top) * k / 4;
        line(&mut img, (left, y), (right, y), grey);
    }
    if lo < 0.0 && hi > 0.0 {
        let y0 = bottom - ((0.0 - lo) / (hi - lo) * (bottom - top) as f64) as i64;
        line(&mut img, (left, y0), (right, y0), [120, 120, 120]);
    }
    line(&mut img, (left, top), (left, bottom), [0, 0, 0]);
    line(&mut img, (left, bottom), (right, bottom), [0, 0, 0]);
    let px = |i: usize| {
        if n <= 1 {
            (left + right) / 2
        } else {
            left + (right - left) * i as i64 / (n as i64 - 1)
        }
    };
    let py = |v: f64| bottom - ((v - lo) / (hi - lo) * (bottom - top) as f64).round() as i64;
    for (si, s) in series.iter().enumerate() {
        let c = color(si);
        rect(&mut img, left + 30 * si as i64, 12, 20, 10, c);
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = (px(i), py(v));
            if let Some(q) = prev {
                line(&mut img, q, p, c);
            }
            rect(&mut img, p.0 - 3, p.1 - 3, 7, 7, c);
            prev = Some(p);
        }
    }
    img
}

/// Rows of equally sized images separated by a 2-pixel white gutter.
pub fn image_grid(rows: &[Vec<ImageTensor>]) -> Option<RgbImage> {
    let first = rows.iter().flat_map(|r| r.iter()).next()?;
    let (h, w) = (first.height() as u32, first.width() as u32);
    let cols = rows.iter().map(Vec::len).max()? as u32;
    let gap = 2;
    let mut out = RgbImage::from_pixel(
        cols * (w + gap) + gap,
        rows.len() as u32 * (h + gap) + gap,
        Rgb([255, 255, 255]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let tile = img.to_rgb8();
            image::imageops::overlay(
                &mut out,
                &tile,
                (gap + c as u32 * (w + gap)) as i64,
                (gap + r as u32 * (h + gap)) as i64,
            );
        }
    }
    Some(out)
}
