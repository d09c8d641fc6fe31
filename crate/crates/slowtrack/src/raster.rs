//! Low-level grayscale raster helpers shared by the dataset, feature and
//! tracking code: luma conversion, bilinear sampling, patch standardization
//! and PNG/JPEG I/O.

use ndarray::{Array1, Array2, ArrayView1};
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale intensity grid, row-major, values nominally in [0, 1].
pub type Grid = Array2<f64>;

/// Raw patch variance below this is treated as flat (featureless).
pub const FLAT_VARIANCE: f64 = 1e-6;

/// Divisor floor guarding standardization of degenerate patches.
pub const STD_EPS: f64 = 1e-8;

/// BT.601 luma conversion, fixing the grayscale convention for color inputs.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

pub fn load_gray(path: &Path) -> Result<Grid> {
    let img = image::open(path)
        .map_err(|e| Error::format(path.display().to_string(), 0, e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut grid = Grid::zeros((h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        grid[[y as usize, x as usize]] = luma(px[0], px[1], px[2]);
    }
    Ok(grid)
}

pub fn save_gray(path: &Path, grid: &Grid) -> Result<()> {
    let (h, w) = grid.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for (y, row) in grid.rows().into_iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            buf.put_pixel(x as u32, y as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0) as u8]));
        }
    }
    buf.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Bilinear sample treating out-of-range coordinates as clamped to the border
/// (replicate padding). `x` is the column coordinate, `y` the row.
pub fn bilinear_clamp(grid: &Grid, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
    let bot = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear sample with zero padding: anything outside the pixel-center grid
/// contributes 0, so fully exterior coordinates return exactly 0.
pub fn bilinear_zero(grid: &Grid, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r as usize >= h || c as usize >= w {
            0.0
        } else {
            grid[[r as usize, c as usize]]
        }
    };
    let top = fetch(y0, x0) * (1.0 - fx) + fetch(y0, x0 + 1.0) * fx;
    let bot = fetch(y0 + 1.0, x0) * (1.0 - fx) + fetch(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Integer-aligned crop; the window must lie inside the grid.
pub fn crop(grid: &Grid, top: usize, left: usize, edge: usize) -> Grid {
    grid.slice(ndarray::s![top..top + edge, left..left + edge])
        .to_owned()
}

pub fn flatten(patch: &Grid) -> Array1<f64> {
    Array1::from_iter(patch.iter().cloned())
}

pub fn mean_var(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Standardize a flattened patch to zero mean, unit variance. Returns `None`
/// for flat patches (raw variance below [`FLAT_VARIANCE`]), which training
/// data collection discards.
pub fn standardize(v: ArrayView1<f64>) -> Option<Array1<f64>> {
    let (mean, var) = mean_var(v);
    if var < FLAT_VARIANCE {
        return None;
    }
    let inv = 1.0 / var.sqrt().max(STD_EPS);
    Some(v.mapv(|x| (x - mean) * inv))
}

/// Standardization for dense extraction, where nothing can be discarded:
/// flat patches carry no feature content and map to the zero vector.
pub fn standardize_or_zero(v: ArrayView1<f64>) -> Array1<f64> {
    standardize(v).unwrap_or_else(|| Array1::zeros(v.len()))
}
