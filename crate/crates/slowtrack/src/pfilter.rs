//! Particle-filter state estimation over axis-aligned affine boxes:
//! Gaussian dynamic model, likelihood weights exponential in the classifier
//! confidence, systematic resampling and MAP-particle selection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::Rect;
use crate::raster::{self, Grid};
use crate::stack::TEMPLATE_EDGE;

/// Bounding-box hypothesis: center in pixels, box width as a multiple of the
/// 32-px template edge (`scale`), and height/width ratio (`aspect`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineState {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub aspect: f64,
}

const SCALE_CLAMP: (f64, f64) = (1e-3, 1e3);

impl AffineState {
    pub fn from_rect(r: &Rect) -> Result<Self> {
        if r.w <= 0.0 || r.h <= 0.0 {
            return Err(Error::invalid_input(format!(
                "degenerate box {}x{}",
                r.w, r.h
            )));
        }
        Ok(AffineState {
            x: r.x + r.w / 2.0 - 0.5,
            y: r.y + r.h / 2.0 - 0.5,
            scale: r.w / TEMPLATE_EDGE as f64,
            aspect: r.h / r.w,
        })
    }

    pub fn width(&self) -> f64 {
        self.scale * TEMPLATE_EDGE as f64
    }

    pub fn height(&self) -> f64 {
        self.width() * self.aspect
    }

    pub fn to_rect(&self) -> Rect {
        let w = self.width();
        let h = self.height();
        Rect {
            x: self.x - w / 2.0 + 0.5,
            y: self.y - h / 2.0 + 0.5,
            w,
            h,
        }
    }
}

/// Diagonal Gaussian state-transition variances for (x, y, scale, aspect).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicModel {
    pub var: [f64; 4],
}

impl DynamicModel {
    pub fn validate(&self) -> Result<()> {
        if self.var.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid_input(
                "dynamic-model variances must be finite and non-negative".to_string(),
            ));
        }
        Ok(())
    }

    /// Translational standard deviations consumed by negative sampling.
    pub fn sigma_xy(&self) -> (f64, f64) {
        (self.var[0].sqrt(), self.var[1].sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub states: Vec<AffineState>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// All particles at `state` with uniform weights.
    pub fn seeded(state: AffineState, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid_input("particle count must be >= 1".to_string()));
        }
        Ok(ParticleSet {
            states: vec![state; count],
            weights: vec![1.0 / count as f64; count],
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Perturb every state element with independent Gaussian noise; weights are
/// untouched, scale and aspect are clamped to sane bounds. Consumes four
/// normal draws per particle, in (x, y, scale, aspect) order.
pub fn propagate(particles: &mut ParticleSet, q: &DynamicModel, rng: &mut ChaCha8Rng) -> Result<()> {
    q.validate()?;
    let normals: Vec<Normal<f64>> = q
        .var
        .iter()
        .map(|&v| Normal::new(0.0, v.sqrt()).unwrap())
        .collect();
    for s in &mut particles.states {
        s.x += normals[0].sample(rng);
        s.y += normals[1].sample(rng);
        s.scale = (s.scale + normals[2].sample(rng)).clamp(SCALE_CLAMP.0, SCALE_CLAMP.1);
        s.aspect = (s.aspect + normals[3].sample(rng)).clamp(SCALE_CLAMP.0, SCALE_CLAMP.1);
    }
    Ok(())
}

/// Classifier outputs per particle for one frame.
#[derive(Debug, Clone)]
pub struct WeighOutcome {
    /// Raw classifier margins w'z (monotone in the confidence score).
    pub margins: Vec<f64>,
    /// Logistic confidence scores f(z) in (0, 1).
    pub probs: Vec<f64>,
}

impl WeighOutcome {
    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Re-weight particles by `exp(f(z))` where the score comes from a pure
/// per-particle scorer returning the classifier margin. Scoring runs in
/// parallel with results gathered in particle order, so the outcome is
/// independent of thread count.
pub fn weigh_with<F>(particles: &mut ParticleSet, margin_of: F) -> Result<WeighOutcome>
where
    F: Fn(&AffineState) -> Result<f64> + Sync,
{
    let margins: Vec<f64> = particles
        .states
        .par_iter()
        .map(|s| margin_of(s))
        .collect::<Result<Vec<f64>>>()?;
    let probs: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
    for (w, p) in particles.weights.iter_mut().zip(&probs) {
        *w *= p.exp();
    }
    let total: f64 = particles.weights.iter().sum();
    // exp(f) >= 1 > 0, so the normalizer cannot vanish.
    for w in &mut particles.weights {
        *w /= total;
    }
    Ok(WeighOutcome { margins, probs })
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Systematic resampling. Output weights are uniform and the offspring count
/// of particle `i` is within one of `n * w_i`. Consumes one uniform draw.
pub fn resample(particles: &mut ParticleSet, rng: &mut ChaCha8Rng) {
    let n = particles.len();
    let u0: f64 = rng.random_range(0.0..1.0);
    let mut out = Vec::with_capacity(n);
    let mut cum = particles.weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = (k as f64 + u0) / n as f64;
        while u > cum && i + 1 < n {
            i += 1;
            cum += particles.weights[i];
        }
        out.push(particles.states[i]);
    }
    particles.states = out;
    particles.weights = vec![1.0 / n as f64; n];
}

/// MAP particle: the state with the highest score this frame, ties broken by
/// the lowest particle index. Any strictly increasing transform of the
/// scores selects the same particle.
pub fn estimate<'a>(particles: &'a ParticleSet, scores: &[f64]) -> (usize, &'a AffineState) {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (best, &particles.states[best])
}

/// Crop the state's box and bilinearly resample it to the 32x32 template.
/// Pixels outside the frame read as zero.
pub fn crop_and_warp(frame: &Grid, state: &AffineState) -> Grid {
    let e = TEMPLATE_EDGE;
    let sx = state.width();
    let sy = state.height();
    let mut out = Grid::zeros((e, e));
    for r in 0..e {
        for c in 0..e {
            let src_x = state.x - sx / 2.0 + (c as f64 + 0.5) * sx / e as f64;
            let src_y = state.y - sy / 2.0 + (r as f64 + 0.5) * sy / e as f64;
            out[[r, c]] = raster::bilinear_zero(frame, src_x, src_y);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn state(x: f64, y: f64) -> AffineState {
        AffineState {
            x,
            y,
            scale: 1.0,
            aspect: 1.0,
        }
    }

    #[test]
    fn rect_roundtrip() {
        let r = Rect {
            x: 10.0,
            y: 20.0,
            w: 40.0,
            h: 30.0,
        };
        let s = AffineState::from_rect(&r).unwrap();
        let back = s.to_rect();
        assert!((back.x - r.x).abs() < 1e-12);
        assert!((back.y - r.y).abs() < 1e-12);
        assert!((back.w - r.w).abs() < 1e-12);
        assert!((back.h - r.h).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_propagation_is_identity() {
        let mut p = ParticleSet::seeded(state(5.0, 6.0), 16).unwrap();
        let before = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        propagate(&mut p, &DynamicModel { var: [0.0; 4] }, &mut rng).unwrap();
        assert_eq!(p.states, before.states);
        assert_eq!(p.weights, before.weights);
    }

    #[test]
    fn propagation_matches_requested_variance() {
        let q = DynamicModel {
            var: [4.0, 9.0, 0.0, 0.0],
        };
        let n = 100_000;
        let mut p = ParticleSet::seeded(state(0.0, 0.0), n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        propagate(&mut p, &q, &mut rng).unwrap();
        for (axis, expect) in [(0usize, 4.0), (1, 9.0)] {
            let vals: Vec<f64> = p
                .states
                .iter()
                .map(|s| if axis == 0 { s.x } else { s.y })
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(
                (var - expect).abs() < 0.05 * expect,
                "axis {axis}: var {var} vs {expect}"
            );
        }
        // Weights untouched, bit-exactly.
        assert!(p.weights.iter().all(|&w| w == 1.0 / n as f64));
    }

    #[test]
    fn weights_after_weighing_form_a_distribution() {
        let mut p = ParticleSet::seeded(state(0.0, 0.0), 64).unwrap();
        let out = weigh_with(&mut p, |s| Ok(s.x - s.y)).unwrap();
        assert_eq!(out.probs.len(), 64);
        assert!((p.weight_sum() - 1.0).abs() < 1e-12);
        assert!(p.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn identical_particles_stay_uniform() {
        let mut p = ParticleSet::seeded(state(1.0, 2.0), 10).unwrap();
        weigh_with(&mut p, |s| Ok(s.x + s.y)).unwrap();
        for &w in &p.weights {
            assert!((w - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_scores_give_weight_ratio_e() {
        // Margins far in saturation make f(z) exactly 1 and 0.
        let mut p = ParticleSet {
            states: vec![state(0.0, 0.0), state(1.0, 0.0)],
            weights: vec![0.5, 0.5],
        };
        let out = weigh_with(&mut p, |s| Ok(if s.x == 0.0 { 1e3 } else { -1e3 })).unwrap();
        assert_eq!(out.probs[0], 1.0);
        assert_eq!(out.probs[1], 0.0);
        let ratio = p.weights[0] / p.weights[1];
        assert!((ratio - std::f64::consts::E).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn resampling_uniform_weights_preserves_the_multiset() {
        let states: Vec<AffineState> = (0..8).map(|i| state(i as f64, 0.0)).collect();
        let mut p = ParticleSet {
            states: states.clone(),
            weights: vec![1.0 / 8.0; 8],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        resample(&mut p, &mut rng);
        let mut xs: Vec<f64> = p.states.iter().map(|s| s.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, (0..8).map(|i| i as f64).collect::<Vec<_>>());
        assert!(p.weights.iter().all(|&w| w == 1.0 / 8.0));
    }

    #[test]
    fn degenerate_weight_resamples_to_a_single_state() {
        let mut p = ParticleSet {
            states: vec![state(1.0, 0.0), state(2.0, 0.0), state(3.0, 0.0)],
            weights: vec![0.0, 1.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        resample(&mut p, &mut rng);
        assert!(p.states.iter().all(|s| s.x == 2.0));
    }

    #[test]
    fn systematic_offspring_counts_track_weights() {
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut p = ParticleSet {
            states: (0..n).map(|i| state(i as f64, 0.0)).collect(),
            weights: weights.clone(),
        };
        resample(&mut p, &mut rng);
        let mut counts = vec![0usize; n];
        for s in &p.states {
            counts[s.x as usize] += 1;
        }
        for i in 0..n {
            let expect = n as f64 * weights[i];
            assert!(
                (counts[i] as f64 - expect).abs() <= 1.0 + 1e-9,
                "particle {i}: {} offspring for expectation {expect}",
                counts[i]
            );
        }
    }

    #[test]
    fn estimate_takes_the_map_particle_with_index_tiebreak() {
        let p = ParticleSet {
            states: vec![state(0.0, 0.0), state(1.0, 0.0), state(2.0, 0.0)],
            weights: vec![1.0 / 3.0; 3],
        };
        let (idx, s) = estimate(&p, &[0.2, 0.9, 0.9]);
        assert_eq!(idx, 1);
        assert_eq!(s.x, 1.0);
        // Strictly increasing transforms cannot change the winner.
        let (idx2, _) = estimate(&p, &[0.2f64.exp(), 0.9f64.exp(), 0.9f64.exp()]);
        assert_eq!(idx2, 1);
        let single = ParticleSet::seeded(state(4.0, 4.0), 1).unwrap();
        assert_eq!(estimate(&single, &[0.5]).0, 0);
    }

    #[test]
    fn exact_template_crop_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let frame = Grid::from_shape_fn((48, 48), |_| rng.random_range(0.0..1.0));
        let s = AffineState::from_rect(&Rect {
            x: 8.0,
            y: 5.0,
            w: 32.0,
            h: 32.0,
        })
        .unwrap();
        let t = crop_and_warp(&frame, &s);
        for r in 0..32 {
            for c in 0..32 {
                assert!(
                    (t[[r, c]] - frame[[r + 5, c + 8]]).abs() < 1e-9,
                    "({r},{c})"
                );
            }
        }
    }

    #[test]
    fn fully_outside_state_crops_to_zeros() {
        let frame = Grid::from_elem((20, 20), 0.8);
        let s = state(1000.0, 1000.0);
        let t = crop_and_warp(&frame, &s);
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_outside_crop_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let frame = Grid::from_shape_fn((40, 40), |_| rng.random_range(0.0..1.0));
        // 32x32 box hanging half off the left edge, integer-aligned.
        let s = AffineState::from_rect(&Rect {
            x: -16.0,
            y: 4.0,
            w: 32.0,
            h: 32.0,
        })
        .unwrap();
        let t = crop_and_warp(&frame, &s);
        for r in 0..32 {
            for c in 0..32 {
                let src_c = c as i64 - 16;
                let expect = if src_c < 0 {
                    0.0
                } else {
                    frame[[r + 4, src_c as usize]]
                };
                assert!((t[[r, c]] - expect).abs() < 1e-9, "({r},{c})");
            }
        }
    }
}
