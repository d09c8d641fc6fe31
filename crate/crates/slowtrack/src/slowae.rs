//! Temporally slow subspace autoencoder layer.
//!
//! One layer is a tied-weight linear autoencoder whose hidden units are
//! pooled in adjacent pairs by an L2 norm. Training minimizes
//!
//! ```text
//!   sum_i ||x_i - W'W x_i||^2
//!     + alpha * sum_sessions sum_consecutive-frames ||h_f - h_{f+1}||_1
//!     + gamma * sum_i ||h_i||_1
//! ```
//!
//! where `h` is the pooled representation. Absolute values inside the
//! slowness term are smoothed as `sqrt(u^2 + eps_l1)` and the pooling norm
//! carries `eps_pool` inside its radicand, so the objective is everywhere
//! differentiable and the analytic gradient can be checked against finite
//! differences.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use crate::dataset::{Cursor, TrackSession};
use crate::error::{Error, Result};
use crate::lbfgs::{self, OptimizerConfig, StopReason};

/// One trained autoencoder layer: `w` is `p x d` (hidden units by input
/// dimension) and `edge` records the source patch edge. For the first layer
/// `d == edge * edge`; a stacked layer keeps the source edge with `d` equal
/// to the convolved feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w: Array2<f64>,
    pub edge: usize,
}

/// Hidden units are pooled in fixed adjacent pairs.
pub const POOL_ARITY: usize = 2;

impl LayerWeights {
    pub fn new(w: Array2<f64>, edge: usize) -> Result<Self> {
        let (p, d) = w.dim();
        if p < 2 || p % POOL_ARITY != 0 {
            return Err(Error::invalid_input(format!(
                "hidden unit count must be even and >= 2, got {p}"
            )));
        }
        if d < 2 {
            return Err(Error::invalid_input(format!(
                "input dimension must be >= 2, got {d}"
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input("weights contain non-finite entries".to_string()));
        }
        Ok(LayerWeights { w, edge })
    }

    pub fn hidden_units(&self) -> usize {
        self.w.dim().0
    }

    pub fn input_dim(&self) -> usize {
        self.w.dim().1
    }

    pub fn pooled_units(&self) -> usize {
        self.hidden_units() / POOL_ARITY
    }
}

/// Cost-term weights and smoothing constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowCostConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub eps_l1: f64,
    pub eps_pool: f64,
}

impl Default for SlowCostConfig {
    fn default() -> Self {
        SlowCostConfig {
            alpha: 100.0,
            gamma: 20.0,
            eps_l1: 1e-6,
            eps_pool: 1e-6,
        }
    }
}

impl SlowCostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.gamma < 0.0 {
            return Err(Error::invalid_input(
                "cost weights alpha/gamma must be non-negative".to_string(),
            ));
        }
        for (name, eps) in [("eps_l1", self.eps_l1), ("eps_pool", self.eps_pool)] {
            if !(eps > 0.0 && eps <= 1e-3) {
                return Err(Error::invalid_input(format!(
                    "{name} must lie in (0, 1e-3], got {eps}"
                )));
            }
        }
        Ok(())
    }
}

/// Pool a hidden activation vector in adjacent pairs:
/// `h_j = sqrt(y_{2j}^2 + y_{2j+1}^2 + eps_pool)`.
pub fn pool_activations(y: ArrayView1<f64>, eps_pool: f64) -> Array1<f64> {
    let half = y.len() / POOL_ARITY;
    Array1::from_iter((0..half).map(|j| {
        let a = y[2 * j];
        let b = y[2 * j + 1];
        (a * a + b * b + eps_pool).sqrt()
    }))
}

/// Pooled response of an input vector under `weights`.
pub fn pool(weights: &LayerWeights, x: ArrayView1<f64>, eps_pool: f64) -> Result<Array1<f64>> {
    if x.len() != weights.input_dim() {
        return Err(Error::invalid_input(format!(
            "input has dimension {}, weights expect {}",
            x.len(),
            weights.input_dim()
        )));
    }
    let y = weights.w.dot(&x);
    Ok(pool_activations(y.view(), eps_pool))
}

/// Samples packed row-per-patch, plus session extents into the row index.
struct Packed {
    x: Array2<f64>,
    sessions: Vec<(usize, usize)>, // (first row, frame count)
}

fn pack(sessions: &[TrackSession], d: usize) -> Result<Packed> {
    if sessions.is_empty() {
        return Err(Error::invalid_input("empty training set".to_string()));
    }
    let mut n = 0;
    let mut extents = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::invalid_input(format!(
                "session {i} has {} frames, need >= 2",
                s.len()
            )));
        }
        for p in &s.patches {
            if p.len() != d {
                return Err(Error::invalid_input(format!(
                    "session {i} patch dimension {} does not match weights ({d})",
                    p.len()
                )));
            }
        }
        extents.push((n, s.len()));
        n += s.len();
    }
    let mut x = Array2::zeros((n, d));
    let mut row = 0;
    for s in sessions {
        for p in &s.patches {
            x.row_mut(row).assign(p);
            row += 1;
        }
    }
    Ok(Packed { x, sessions: extents })
}

/// Eq-style objective over packed data. Returns cost alone or with gradient.
fn objective(
    w: &Array2<f64>,
    packed: &Packed,
    cfg: &SlowCostConfig,
    want_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let x = &packed.x;
    let n = x.dim().0;
    let p = w.dim().0;
    let half = p / POOL_ARITY;

    // Reconstruction: rows of y are W x_i, rows of r are x_i - W'W x_i.
    let y = x.dot(&w.t()); // (n, p)
    let xhat = y.dot(w); // (n, d)
    let r = x - &xhat;
    let cost_recon = r.iter().map(|v| v * v).sum::<f64>();

    // Pooled amplitudes.
    let mut h = Array2::<f64>::zeros((n, half));
    for i in 0..n {
        for j in 0..half {
            let a = y[[i, 2 * j]];
            let b = y[[i, 2 * j + 1]];
            h[[i, j]] = (a * a + b * b + cfg.eps_pool).sqrt();
        }
    }
    let cost_sparse = h.sum();

    // Slowness over consecutive frames of each session; `c` accumulates the
    // per-unit coefficients that later multiply dh/dy.
    let mut c = Array2::<f64>::from_elem((n, half), cfg.gamma);
    let mut cost_slow = 0.0;
    for &(start, len) in &packed.sessions {
        for f in 0..len - 1 {
            let a = start + f;
            let b = a + 1;
            for j in 0..half {
                let s = h[[a, j]] - h[[b, j]];
                let sm = (s * s + cfg.eps_l1).sqrt();
                cost_slow += sm;
                if want_grad {
                    let u = cfg.alpha * s / sm;
                    c[[a, j]] += u;
                    c[[b, j]] -= u;
                }
            }
        }
    }

    let cost = cost_recon + cfg.alpha * cost_slow + cfg.gamma * cost_sparse;
    if !want_grad {
        return (cost, None);
    }

    // d(recon)/dW = -2 (Y'R + W (R'X)) summed over samples.
    let mut grad = y.t().dot(&r) + w.dot(&r.t().dot(x));
    grad.mapv_inplace(|v| -2.0 * v);

    // Pool terms: dcost/dy_{i,2j} = c_{i,j} * y_{i,2j} / h_{i,j}.
    let mut gy = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..half {
            let k = c[[i, j]] / h[[i, j]];
            gy[[i, 2 * j]] = k * y[[i, 2 * j]];
            gy[[i, 2 * j + 1]] = k * y[[i, 2 * j + 1]];
        }
    }
    grad += &gy.t().dot(x);
    (cost, Some(grad))
}

/// Full objective value over `sessions`.
pub fn cost(weights: &LayerWeights, sessions: &[TrackSession], cfg: &SlowCostConfig) -> Result<f64> {
    cfg.validate()?;
    let packed = pack(sessions, weights.input_dim())?;
    Ok(objective(&weights.w, &packed, cfg, false).0)
}

/// Analytic gradient of the smoothed objective, same shape as `w`.
pub fn gradient(
    weights: &LayerWeights,
    sessions: &[TrackSession],
    cfg: &SlowCostConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let packed = pack(sessions, weights.input_dim())?;
    Ok(objective(&weights.w, &packed, cfg, true).1.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Converged,
    MaxIterations,
    /// The line search stalled; the best iterate reached is returned.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: TrainStatus,
}

#[derive(Debug)]
pub struct TrainedLayer {
    pub weights: LayerWeights,
    pub report: TrainReport,
}

/// Train one layer from a Gaussian init (stddev 0.01, seeded) with L-BFGS.
pub fn train_layer(
    sessions: &[TrackSession],
    hidden_units: usize,
    cfg: &SlowCostConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<TrainedLayer> {
    cfg.validate()?;
    if hidden_units < 2 || hidden_units % POOL_ARITY != 0 {
        return Err(Error::invalid_input(format!(
            "hidden unit count must be even and >= 2, got {hidden_units}"
        )));
    }
    let first = sessions
        .first()
        .ok_or_else(|| Error::invalid_input("empty training set".to_string()))?;
    let d = first.dim();
    let edge = first.edge;
    let packed = pack(sessions, d)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).unwrap();
    let w0 = Array1::from_iter((0..hidden_units * d).map(|_| normal.sample(&mut rng)));

    let (initial_cost, _) = objective(
        &w0.view().into_shape_with_order((hidden_units, d)).unwrap().to_owned(),
        &packed,
        cfg,
        false,
    );

    let f = |flat: &Array1<f64>| {
        let w = flat
            .view()
            .into_shape_with_order((hidden_units, d))
            .unwrap()
            .to_owned();
        let (cost, grad) = objective(&w, &packed, cfg, true);
        let g = grad.unwrap();
        (cost, Array1::from_iter(g.iter().cloned()))
    };
    let res = lbfgs::minimize(f, w0, opt);

    let w = res
        .x
        .into_shape_with_order((hidden_units, d))
        .unwrap()
        .to_owned();
    let status = match res.reason {
        StopReason::GradientTolerance => TrainStatus::Converged,
        StopReason::MaxIterations => TrainStatus::MaxIterations,
        StopReason::LineSearchFailed => TrainStatus::LineSearchStalled,
    };
    Ok(TrainedLayer {
        weights: LayerWeights::new(w, edge)?,
        report: TrainReport {
            initial_cost,
            final_cost: res.fx,
            grad_norm: res.grad_norm,
            iterations: res.iterations,
            status,
        },
    })
}

// --- weight file codec ------------------------------------------------------
//
// Layout, little-endian throughout:
//   "SLWT" | version u32 | p u32 | d u32 | edge u32 |
//   W row-major f64 | alpha f64 | gamma f64 | eps_l1 f64 | eps_pool f64

pub const WEIGHT_MAGIC: [u8; 4] = *b"SLWT";
pub const WEIGHT_VERSION: u32 = 1;

pub fn encode_weights(weights: &LayerWeights, cfg: &SlowCostConfig) -> Vec<u8> {
    let (p, d) = weights.w.dim();
    let mut out = Vec::with_capacity(20 + p * d * 8 + 32);
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(weights.edge as u32).to_le_bytes());
    for v in weights.w.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [cfg.alpha, cfg.gamma, cfg.eps_l1, cfg.eps_pool] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8], origin: &str) -> Result<(LayerWeights, SlowCostConfig)> {
    let mut cur = Cursor::new(bytes, origin);
    let magic = cur.take(4, "magic")?;
    if magic != WEIGHT_MAGIC {
        return Err(cur.err_at(0, "bad magic, expected \"SLWT\""));
    }
    let version = cur.u32("version")?;
    if version != WEIGHT_VERSION {
        return Err(cur.err_at(4, format!("unsupported version {version}")));
    }
    let p = cur.u32("hidden unit count")? as u64;
    let d = cur.u32("input dimension")? as u64;
    let edge = cur.u32("patch edge")? as u64;
    if p < 2 || p % POOL_ARITY as u64 != 0 {
        return Err(cur.err_at(8, format!("hidden unit count must be even and >= 2, got {p}")));
    }
    if d < 2 {
        return Err(cur.err_at(12, format!("input dimension must be >= 2, got {d}")));
    }
    let expected = p
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(32))
        .ok_or_else(|| cur.err_at(8, "header counts overflow"))?;
    let body = cur.offset();
    let remaining = (bytes.len() as u64).saturating_sub(body);
    if remaining < expected {
        return Err(cur.err_at(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes, found {remaining}"),
        ));
    }
    if remaining > expected {
        return Err(cur.err_at(body + expected, "trailing bytes after payload"));
    }

    let mut w = Array2::zeros((p as usize, d as usize));
    for v in w.iter_mut() {
        let at = cur.offset();
        *v = cur.f64()?;
        if !v.is_finite() {
            return Err(cur.err_at(at, "non-finite weight entry"));
        }
    }
    let cfg = SlowCostConfig {
        alpha: cur.f64()?,
        gamma: cur.f64()?,
        eps_l1: cur.f64()?,
        eps_pool: cur.f64()?,
    };
    cfg.validate()
        .map_err(|e| cur.err_at(body + p * d * 8, e.to_string()))?;
    let weights = LayerWeights::new(w, edge as usize)
        .map_err(|e| cur.err_at(body, e.to_string()))?;
    Ok((weights, cfg))
}

pub fn save_weights(weights: &LayerWeights, cfg: &SlowCostConfig, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(weights, cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<(LayerWeights, SlowCostConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, &path.display().to_string())
}
