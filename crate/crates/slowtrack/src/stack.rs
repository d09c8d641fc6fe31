//! Convolutional stacking: dense layer-1 extraction over larger patches,
//! layer-2 training vectors, and the final tracking representation that
//! concatenates amplitudes and phases from both layers.

use ndarray::{Array1, Array3, ArrayView1};

use crate::dataset::TrackSession;
use crate::error::{Error, Result};
use crate::raster::{self, Grid};
use crate::slowae::{pool_activations, LayerWeights};

/// Tracking observations are normalized to this template edge before
/// feature extraction.
pub const TEMPLATE_EDGE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Amplitude,
    Phase,
    Both,
}

/// Spatial grid of per-cell feature vectors. Arrays are indexed
/// `(row, col, channel)`; flattening is therefore row-major with the
/// channel index varying fastest.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub grid: usize,
    pub channels: usize,
    pub amplitude: Option<Array3<f64>>,
    pub phase: Option<Array3<f64>>,
}

/// Euclidean norm of a pooled pair viewed as the complex number `a + ib`.
pub fn amplitude(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Angle of the pooled pair in (-pi, pi]; the origin maps to 0.
pub fn phase(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let th = b.atan2(a);
    if th == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        th
    }
}

fn phases_of(y: ArrayView1<f64>) -> Array1<f64> {
    let half = y.len() / 2;
    Array1::from_iter((0..half).map(|j| phase(y[2 * j], y[2 * j + 1])))
}

/// Number of grid cells per side when sliding an `inner` window over an
/// `outer` extent with the given stride.
pub fn grid_cells(outer: usize, inner: usize, stride: usize) -> usize {
    (outer - inner) / stride + 1
}

/// Densely extract pooled layer features over a square image. Each cell
/// crops an `edge x edge` patch at `(row*stride, col*stride)`, standardizes
/// it (flat crops extract as zeros, leaving amplitudes at the pooling
/// floor), and applies the layer.
pub fn dense_extract(
    weights: &LayerWeights,
    image: &Grid,
    stride: usize,
    kind: FeatureKind,
    eps_pool: f64,
) -> Result<FeatureMap> {
    let (h, w) = image.dim();
    if h != w {
        return Err(Error::invalid_input(format!(
            "dense extraction expects a square image, got {h}x{w}"
        )));
    }
    let edge = weights.edge;
    if edge * edge != weights.input_dim() {
        return Err(Error::invalid_input(format!(
            "weights are not image-space: edge {edge} but input dimension {}",
            weights.input_dim()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid_input("stride must be >= 1".to_string()));
    }
    if h < edge {
        return Err(Error::invalid_input(format!(
            "image edge {h} is smaller than patch edge {edge}"
        )));
    }

    let g = grid_cells(h, edge, stride);
    let channels = weights.pooled_units();
    let mut amp = matches!(kind, FeatureKind::Amplitude | FeatureKind::Both)
        .then(|| Array3::zeros((g, g, channels)));
    let mut ph = matches!(kind, FeatureKind::Phase | FeatureKind::Both)
        .then(|| Array3::zeros((g, g, channels)));

    for r in 0..g {
        for c in 0..g {
            let patch = raster::crop(image, r * stride, c * stride, edge);
            let x = raster::standardize_or_zero(raster::flatten(&patch).view());
            let y = weights.w.dot(&x);
            if let Some(a) = amp.as_mut() {
                let pooled = pool_activations(y.view(), eps_pool);
                a.slice_mut(ndarray::s![r, c, ..]).assign(&pooled);
            }
            if let Some(p) = ph.as_mut() {
                p.slice_mut(ndarray::s![r, c, ..]).assign(&phases_of(y.view()));
            }
        }
    }

    Ok(FeatureMap {
        grid: g,
        channels,
        amplitude: amp,
        phase: ph,
    })
}

fn flatten3(a: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(a.iter().cloned())
}

/// Convolve layer 1 over each patch of d2-edge sessions and flatten the
/// amplitude maps into per-frame feature vectors, preserving the temporal
/// session structure so the slowness cost applies unchanged at layer 2.
pub fn layer2_training_vectors(
    sessions: &[TrackSession],
    layer1: &LayerWeights,
    k1: usize,
) -> Result<Vec<TrackSession>> {
    layer2_training_vectors_with(sessions, layer1, k1, crate::slowae::SlowCostConfig::default().eps_pool)
}

pub fn layer2_training_vectors_with(
    sessions: &[TrackSession],
    layer1: &LayerWeights,
    k1: usize,
    eps_pool: f64,
) -> Result<Vec<TrackSession>> {
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        if s.edge < layer1.edge {
            return Err(Error::invalid_input(format!(
                "session patch edge {} is smaller than layer-1 edge {}",
                s.edge, layer1.edge
            )));
        }
        if s.dim() != s.edge * s.edge {
            return Err(Error::invalid_input(
                "layer-2 training sessions must be image-space".to_string(),
            ));
        }
        let mut patches = Vec::with_capacity(s.len());
        for p in &s.patches {
            let grid = p
                .view()
                .into_shape_with_order((s.edge, s.edge))
                .unwrap()
                .to_owned();
            let map = dense_extract(layer1, &grid, k1, FeatureKind::Amplitude, eps_pool)?;
            patches.push(flatten3(map.amplitude.as_ref().unwrap()));
        }
        out.push(TrackSession {
            patches,
            edge: s.edge,
            source_id: s.source_id.clone(),
        });
    }
    Ok(out)
}

/// Geometry of the final tracking representation; depends only on layer
/// shapes and strides, never on image content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureGeometry {
    /// Layer-1 cells per side over the 32x32 template.
    pub l1_grid: usize,
    pub l1_channels: usize,
    /// Layer-2 window extent in layer-1 cells (the receptive field of one
    /// d2-edge training patch).
    pub window_cells: usize,
    /// Layer-2 windows per side over the layer-1 amplitude map.
    pub l2_grid: usize,
    pub l2_channels: usize,
    /// Total representation length.
    pub r: usize,
}

impl FeatureGeometry {
    pub fn compute(layer1: &LayerWeights, layer2: &LayerWeights, k1: usize, k2: usize) -> Result<Self> {
        if k1 == 0 || k2 == 0 {
            return Err(Error::invalid_input("strides must be >= 1".to_string()));
        }
        if TEMPLATE_EDGE < layer1.edge {
            return Err(Error::invalid_input(
                "layer-1 patch edge exceeds the tracking template".to_string(),
            ));
        }
        let l1_grid = grid_cells(TEMPLATE_EDGE, layer1.edge, k1);
        let l1_channels = layer1.pooled_units();
        if layer2.edge < layer1.edge || (layer2.edge - layer1.edge) % k1 != 0 {
            return Err(Error::invalid_input(format!(
                "layer-2 source edge {} is not reachable from layer-1 edge {} with stride {k1}",
                layer2.edge, layer1.edge
            )));
        }
        let window_cells = grid_cells(layer2.edge, layer1.edge, k1);
        if window_cells > l1_grid {
            return Err(Error::invalid_input(
                "layer-2 window does not fit the layer-1 feature map".to_string(),
            ));
        }
        let expected_d2 = window_cells * window_cells * l1_channels;
        if layer2.input_dim() != expected_d2 {
            return Err(Error::invalid_input(format!(
                "layer-2 input dimension {} does not match its geometry ({expected_d2})",
                layer2.input_dim()
            )));
        }
        let l2_grid = grid_cells(l1_grid, window_cells, k2);
        let l2_channels = layer2.pooled_units();
        let r = 2 * l1_grid * l1_grid * l1_channels + 2 * l2_grid * l2_grid * l2_channels;
        Ok(FeatureGeometry {
            l1_grid,
            l1_channels,
            window_cells,
            l2_grid,
            l2_channels,
            r,
        })
    }
}

/// Both trained layers plus the strides they are applied with.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub layer1: LayerWeights,
    pub layer2: LayerWeights,
    pub k1: usize,
    pub k2: usize,
    pub eps_pool: f64,
    pub geometry: FeatureGeometry,
}

impl FeatureExtractor {
    pub fn new(
        layer1: LayerWeights,
        layer2: LayerWeights,
        k1: usize,
        k2: usize,
        eps_pool: f64,
    ) -> Result<Self> {
        let geometry = FeatureGeometry::compute(&layer1, &layer2, k1, k2)?;
        Ok(FeatureExtractor {
            layer1,
            layer2,
            k1,
            k2,
            eps_pool,
            geometry,
        })
    }

    /// Final tracking representation of a 32x32 observation: layer-1
    /// amplitudes, layer-1 phases, layer-2 amplitudes, layer-2 phases, each
    /// block flattened row-major channel-minor, concatenated in that order.
    pub fn representation(&self, observation: &Grid) -> Result<Array1<f64>> {
        if observation.dim() != (TEMPLATE_EDGE, TEMPLATE_EDGE) {
            return Err(Error::invalid_input(format!(
                "observation must be {TEMPLATE_EDGE}x{TEMPLATE_EDGE}, got {:?}",
                observation.dim()
            )));
        }
        let g = &self.geometry;
        let l1 = dense_extract(&self.layer1, observation, self.k1, FeatureKind::Both, self.eps_pool)?;
        let l1_amp = l1.amplitude.as_ref().unwrap();
        let l1_phase = l1.phase.as_ref().unwrap();

        let mut z = Array1::zeros(g.r);
        let block = g.l1_grid * g.l1_grid * g.l1_channels;
        z.slice_mut(ndarray::s![0..block]).assign(&flatten3(l1_amp));
        z.slice_mut(ndarray::s![block..2 * block])
            .assign(&flatten3(l1_phase));

        // Layer 2 slides a window_cells^2 window over the amplitude map with
        // stride k2 cells, matching its training inputs geometrically.
        let wc = g.window_cells;
        let mut offset = 2 * block;
        let mut amp2 = Array1::zeros(g.l2_grid * g.l2_grid * g.l2_channels);
        let mut ph2 = Array1::zeros(g.l2_grid * g.l2_grid * g.l2_channels);
        let mut cell = 0;
        for wr in 0..g.l2_grid {
            for wcidx in 0..g.l2_grid {
                let window = l1_amp.slice(ndarray::s![
                    wr * self.k2..wr * self.k2 + wc,
                    wcidx * self.k2..wcidx * self.k2 + wc,
                    ..
                ]);
                let v = Array1::from_iter(window.iter().cloned());
                let y = self.layer2.w.dot(&v);
                let pooled = pool_activations(y.view(), self.eps_pool);
                let phs = phases_of(y.view());
                let at = cell * g.l2_channels;
                amp2.slice_mut(ndarray::s![at..at + g.l2_channels]).assign(&pooled);
                ph2.slice_mut(ndarray::s![at..at + g.l2_channels]).assign(&phs);
                cell += 1;
            }
        }
        z.slice_mut(ndarray::s![offset..offset + amp2.len()]).assign(&amp2);
        offset += amp2.len();
        z.slice_mut(ndarray::s![offset..offset + ph2.len()]).assign(&ph2);
        Ok(z)
    }
}
