//! Phase-shifted optimal-stimulus rendering for qualitative inspection of
//! learned invariances. A pooled pair's stimulus at phase `theta` is the
//! linear filter combination `cos(theta) W_{2i} + sin(theta) W_{2i+1}`;
//! layer-2 stimuli are back-projected through the layer-1 bank.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::slowae::LayerWeights;
use crate::stack::grid_cells;

/// Pre-rescale layer-1 stimulus for `pair` at phase `theta` (radians),
/// reshaped to `edge x edge`.
pub fn stimulus_l1(layer1: &LayerWeights, pair: usize, theta: f64) -> Result<Grid> {
    if pair >= layer1.pooled_units() {
        return Err(Error::invalid_input(format!(
            "pair index {pair} out of range ({} pooled units)",
            layer1.pooled_units()
        )));
    }
    let edge = layer1.edge;
    if edge * edge != layer1.input_dim() {
        return Err(Error::invalid_input(
            "layer weights are not image-space".to_string(),
        ));
    }
    let a = layer1.w.row(2 * pair);
    let b = layer1.w.row(2 * pair + 1);
    let (sin_t, cos_t) = theta.sin_cos();
    let flat = &a.mapv(|v| v * cos_t) + &b.mapv(|v| v * sin_t);
    Ok(flat.into_shape_with_order((edge, edge)).unwrap().to_owned())
}

/// Pre-rescale layer-2 stimulus: the phase-shifted layer-2 weight vector is
/// distributed over the layer-1 bank, with each coefficient placing that
/// layer-1 pair's theta=0 stimulus at its cell's image-space offset.
/// Overlapping contributions sum without normalization.
pub fn stimulus_l2(
    layer1: &LayerWeights,
    layer2: &LayerWeights,
    k1: usize,
    pair: usize,
    theta: f64,
) -> Result<Grid> {
    if pair >= layer2.pooled_units() {
        return Err(Error::invalid_input(format!(
            "pair index {pair} out of range ({} pooled units)",
            layer2.pooled_units()
        )));
    }
    let e1 = layer1.edge;
    let e2 = layer2.edge;
    if e1 * e1 != layer1.input_dim() {
        return Err(Error::invalid_input(
            "layer-1 weights are not image-space".to_string(),
        ));
    }
    if e2 < e1 || k1 == 0 || (e2 - e1) % k1 != 0 {
        return Err(Error::invalid_input(format!(
            "layer-2 edge {e2} is not reachable from layer-1 edge {e1} with stride {k1}"
        )));
    }
    let cells = grid_cells(e2, e1, k1);
    let channels = layer1.pooled_units();
    if layer2.input_dim() != cells * cells * channels {
        return Err(Error::invalid_input(format!(
            "layer-2 input dimension {} does not match {cells}x{cells}x{channels}",
            layer2.input_dim()
        )));
    }

    let wa = layer2.w.row(2 * pair);
    let wb = layer2.w.row(2 * pair + 1);
    let (sin_t, cos_t) = theta.sin_cos();
    let mut canvas = Grid::zeros((e2, e2));
    for cr in 0..cells {
        for cc in 0..cells {
            for j in 0..channels {
                let idx = (cr * cells + cc) * channels + j;
                let coeff = cos_t * wa[idx] + sin_t * wb[idx];
                if coeff == 0.0 {
                    continue;
                }
                let basis = layer1.w.row(2 * j);
                for r in 0..e1 {
                    for c in 0..e1 {
                        canvas[[cr * k1 + r, cc * k1 + c]] += coeff * basis[r * e1 + c];
                    }
                }
            }
        }
    }
    Ok(canvas)
}

/// Affine min-max rescale to [0, 1]; a constant image maps to 0.5.
pub fn rescale_unit(img: &Grid) -> Grid {
    let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-12 {
        return Grid::from_elem(img.dim(), 0.5);
    }
    img.mapv(|v| (v - min) / (max - min))
}

/// One row per requested pair, one column per phase step, all cells
/// rescaled to [0, 1].
#[derive(Debug, Clone)]
pub struct StimulusGrid {
    pub cells: Vec<Vec<Grid>>,
    pub edge: usize,
}

fn thetas(step_deg: u32) -> Result<Vec<f64>> {
    if step_deg == 0 || 360 % step_deg != 0 || step_deg > 180 {
        return Err(Error::invalid_input(format!(
            "phase step must divide 360 and leave >= 2 columns, got {step_deg}"
        )));
    }
    Ok((0..360 / step_deg)
        .map(|k| (k * step_deg) as f64 * std::f64::consts::PI / 180.0)
        .collect())
}

pub fn render_grid_l1(
    layer1: &LayerWeights,
    pairs: &[usize],
    theta_step_deg: u32,
) -> Result<StimulusGrid> {
    let thetas = thetas(theta_step_deg)?;
    if pairs.is_empty() {
        return Err(Error::invalid_input("no pairs selected".to_string()));
    }
    let mut cells = Vec::with_capacity(pairs.len());
    for &p in pairs {
        let row: Result<Vec<Grid>> = thetas
            .iter()
            .map(|&t| stimulus_l1(layer1, p, t).map(|s| rescale_unit(&s)))
            .collect();
        cells.push(row?);
    }
    Ok(StimulusGrid {
        cells,
        edge: layer1.edge,
    })
}

pub fn render_grid_l2(
    layer1: &LayerWeights,
    layer2: &LayerWeights,
    k1: usize,
    pairs: &[usize],
    theta_step_deg: u32,
) -> Result<StimulusGrid> {
    let thetas = thetas(theta_step_deg)?;
    if pairs.is_empty() {
        return Err(Error::invalid_input("no pairs selected".to_string()));
    }
    let mut cells = Vec::with_capacity(pairs.len());
    for &p in pairs {
        let row: Result<Vec<Grid>> = thetas
            .iter()
            .map(|&t| stimulus_l2(layer1, layer2, k1, p, t).map(|s| rescale_unit(&s)))
            .collect();
        cells.push(row?);
    }
    Ok(StimulusGrid {
        cells,
        edge: layer2.edge,
    })
}

/// Write the grid as one tiled PNG with 1-px separators.
pub fn write_grid_png(grid: &StimulusGrid, path: &Path) -> Result<()> {
    let rows = grid.cells.len();
    let cols = grid.cells.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Err(Error::invalid_input("empty stimulus grid".to_string()));
    }
    let e = grid.edge;
    let width = cols * e + (cols - 1);
    let height = rows * e + (rows - 1);
    let mut img = image::GrayImage::new(width as u32, height as u32);
    for (ri, row) in grid.cells.iter().enumerate() {
        for (ci, cell) in row.iter().enumerate() {
            let ox = ci * (e + 1);
            let oy = ri * (e + 1);
            for r in 0..e {
                for c in 0..e {
                    let v = (cell[[r, c]].clamp(0.0, 1.0) * 255.0) as u8;
                    img.put_pixel((ox + c) as u32, (oy + r) as u32, image::Luma([v]));
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slowae::pool;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, p: usize, d: usize, edge: usize) -> LayerWeights {
        LayerWeights::new(
            Array2::from_shape_fn((p, d), |_| rng.random_range(-0.5..0.5)),
            edge,
        )
        .unwrap()
    }

    /// Quadrature-pair bank: rows 2j/2j+1 are cosine/sine gratings of equal
    /// norm, so each pair spans an exact two-dimensional subspace.
    fn quadrature_layer(edge: usize, pairs: usize) -> LayerWeights {
        let d = edge * edge;
        let mut w = Array2::zeros((2 * pairs, d));
        for j in 0..pairs {
            let fx = 1.0 + (j % 3) as f64;
            let fy = 1.0 + (j / 3 % 3) as f64;
            for r in 0..edge {
                for c in 0..edge {
                    let u = 2.0 * std::f64::consts::PI
                        * (fx * c as f64 + fy * r as f64)
                        / edge as f64;
                    w[[2 * j, r * edge + c]] = u.cos();
                    w[[2 * j + 1, r * edge + c]] = u.sin();
                }
            }
        }
        LayerWeights::new(w, edge).unwrap()
    }

    #[test]
    fn theta_zero_and_half_pi_select_the_filter_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = random_layer(&mut rng, 8, 36, 6);
        let s0 = stimulus_l1(&layer, 1, 0.0).unwrap();
        let s90 = stimulus_l1(&layer, 1, std::f64::consts::FRAC_PI_2).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert!((s0[[r, c]] - layer.w[[2, r * 6 + c]]).abs() < 1e-15);
                assert!((s90[[r, c]] - layer.w[[3, r * 6 + c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn opposite_phases_negate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = random_layer(&mut rng, 8, 36, 6);
        let s = stimulus_l1(&layer, 2, 0.7).unwrap();
        let sneg = stimulus_l1(&layer, 2, 0.7 + std::f64::consts::PI).unwrap();
        for (a, b) in s.iter().zip(sneg.iter()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_index_out_of_range_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = random_layer(&mut rng, 8, 36, 6);
        assert!(stimulus_l1(&layer, 4, 0.0).is_err());
    }

    #[test]
    fn one_hot_layer2_row_places_a_single_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer1 = random_layer(&mut rng, 8, 16, 4);
        // 14x14 would need edge 4 + stride 2 -> cells = 4; use edge2 = 8, k1 = 4 -> cells = 2.
        let cells = 2usize;
        let d2 = cells * cells * 4;
        let mut w2 = Array2::zeros((2, d2));
        // One-hot on cell (1, 0), layer-1 pair 3.
        let idx = (cells + 0) * 4 + 3;
        w2[[0, idx]] = 1.0;
        let layer2 = LayerWeights::new(w2, 8).unwrap();
        let canvas = stimulus_l2(&layer1, &layer2, 4, 0, 0.0).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let expect = if r >= 4 && c < 4 {
                    layer1.w[[6, (r - 4) * 4 + c]]
                } else {
                    0.0
                };
                assert!((canvas[[r, c]] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_layer2_rows_give_a_constant_canvas() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer1 = random_layer(&mut rng, 8, 16, 4);
        let layer2 = LayerWeights::new(Array2::zeros((2, 16)), 8).unwrap();
        let canvas = stimulus_l2(&layer1, &layer2, 4, 0, 1.1).unwrap();
        assert!(canvas.iter().all(|&v| v == 0.0));
        assert!(rescale_unit(&canvas).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn layer2_backprojection_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer1 = random_layer(&mut rng, 8, 16, 4);
        let layer2 = random_layer(&mut rng, 4, 16, 8);
        let theta = 0.63;
        let canvas = stimulus_l2(&layer1, &layer2, 4, 1, theta).unwrap();

        // Brute-force accumulation, pixel by pixel.
        let cells = 2usize;
        let mut oracle = Grid::zeros((8, 8));
        for r in 0..8usize {
            for c in 0..8usize {
                let mut acc = 0.0;
                for cr in 0..cells {
                    for cc in 0..cells {
                        let (or_, oc) = (cr * 4, cc * 4);
                        if r < or_ || c < oc || r >= or_ + 4 || c >= oc + 4 {
                            continue;
                        }
                        for j in 0..4 {
                            let idx = (cr * cells + cc) * 4 + j;
                            let coeff = theta.cos() * layer2.w[[2, idx]]
                                + theta.sin() * layer2.w[[3, idx]];
                            acc += coeff * layer1.w[[2 * j, (r - or_) * 4 + (c - oc)]];
                        }
                    }
                }
                oracle[[r, c]] = acc;
            }
        }
        for (a, b) in canvas.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_stimuli_pool_constantly_across_phase() {
        let layer = quadrature_layer(8, 4);
        for pair in 0..4 {
            let mut responses = Vec::new();
            for k in 0..10 {
                let theta = k as f64 * 36.0f64.to_radians();
                let stim = stimulus_l1(&layer, pair, theta).unwrap();
                let flat = crate::raster::flatten(&stim);
                let norm = flat.dot(&flat).sqrt();
                let unit = flat.mapv(|v| v / norm);
                let h = pool(&layer, unit.view(), 1e-6).unwrap();
                responses.push(h[pair]);
            }
            let (lo, hi) = responses
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            assert!(hi - lo < 1e-8, "pair {pair}: spread {}", hi - lo);
        }
    }

    #[test]
    fn render_grid_rejects_non_divisor_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = random_layer(&mut rng, 8, 36, 6);
        assert!(render_grid_l1(&layer, &[0], 37).is_err());
        assert!(render_grid_l1(&layer, &[0], 0).is_err());
        assert!(render_grid_l1(&layer, &[0], 360).is_err());
    }

    #[test]
    fn render_grid_writes_a_tiled_png() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = random_layer(&mut rng, 8, 36, 6);
        let grid = render_grid_l1(&layer, &[0, 2], 36).unwrap();
        assert_eq!(grid.cells.len(), 2);
        assert_eq!(grid.cells[0].len(), 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stimuli_layer1.png");
        write_grid_png(&grid, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width() as usize, 10 * 6 + 9);
        assert_eq!(img.height() as usize, 2 * 6 + 1);
    }
}
