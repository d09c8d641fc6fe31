//! Sequential training-data collection: motion-interest masking over image
//! sequences, tracked-patch session sampling, a synthetic session generator
//! for controlled experiments, and the binary session-file codec.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{self, Grid};

/// One grayscale frame of a sequence; `index` is 1-based.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pixels: Grid,
    pub index: usize,
}

/// An ordered run of same-sized patches cropped from one tracked region.
/// Patches are stored flattened row-major and standardized to zero mean and
/// unit variance. `edge` records the source patch edge; for image-space
/// sessions `dim() == edge * edge`, while feature-space sessions produced by
/// the stacking code keep the source edge but a different dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSession {
    pub patches: Vec<Array1<f64>>,
    pub edge: usize,
    pub source_id: String,
}

impl TrackSession {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Flattened patch dimension.
    pub fn dim(&self) -> usize {
        self.patches.first().map_or(0, |p| p.len())
    }
}

/// Boolean motion-interest grid congruent with the source frames.
#[derive(Debug, Clone)]
pub struct InterestMask {
    pub bits: Array2<bool>,
}

impl InterestMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn window_overlaps(&self, top: usize, left: usize, edge: usize) -> bool {
        self.bits
            .slice(ndarray::s![top..top + edge, left..left + edge])
            .iter()
            .any(|&b| b)
    }
}

fn check_congruent(frames: &[Frame]) -> Result<(usize, usize)> {
    if frames.len() < 2 {
        return Err(Error::invalid_input(format!(
            "need at least 2 frames, got {}",
            frames.len()
        )));
    }
    let dim = frames[0].pixels.dim();
    for f in frames {
        if f.pixels.dim() != dim {
            return Err(Error::invalid_input(format!(
                "frame {} has dimensions {:?}, expected {:?}",
                f.index,
                f.pixels.dim(),
                dim
            )));
        }
    }
    Ok(dim)
}

/// Accumulate absolute inter-frame differences over consecutive pairs,
/// threshold, and clear 4-connected components smaller than
/// `min_component_area`.
pub fn accumulate_difference_mask(
    frames: &[Frame],
    threshold: f64,
    min_component_area: usize,
) -> Result<InterestMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid_input(format!(
            "difference threshold must lie in (0,1), got {threshold}"
        )));
    }
    let (h, w) = check_congruent(frames)?;

    let mut acc = Array2::<f64>::zeros((h, w));
    for pair in frames.windows(2) {
        acc += &(&pair[1].pixels - &pair[0].pixels).mapv(f64::abs);
    }
    let mut bits = acc.mapv(|v| v > threshold);
    remove_small_components(&mut bits, min_component_area);
    Ok(InterestMask { bits })
}

/// Flood-fill labeling with 4-connectivity; components below `min_area`
/// are cleared in place.
fn remove_small_components(bits: &mut Array2<bool>, min_area: usize) {
    if min_area <= 1 {
        return;
    }
    let (h, w) = bits.dim();
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !bits[[r, c]] || seen[[r, c]] {
                continue;
            }
            stack.push((r, c));
            seen[[r, c]] = true;
            component.clear();
            while let Some((cr, cc)) = stack.pop() {
                component.push((cr, cc));
                let mut push = |nr: usize, nc: usize, seen: &mut Array2<bool>| {
                    if bits[[nr, nc]] && !seen[[nr, nc]] {
                        seen[[nr, nc]] = true;
                        stack.push((nr, nc));
                    }
                };
                if cr > 0 {
                    push(cr - 1, cc, &mut seen);
                }
                if cr + 1 < h {
                    push(cr + 1, cc, &mut seen);
                }
                if cc > 0 {
                    push(cr, cc - 1, &mut seen);
                }
                if cc + 1 < w {
                    push(cr, cc + 1, &mut seen);
                }
            }
            if component.len() < min_area {
                for &(cr, cc) in &component {
                    bits[[cr, cc]] = false;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleStatus {
    Complete,
    /// The mask had no set bits reachable by any window; nothing sampled.
    NoInterest,
    /// Fewer sessions than requested survived the attempt budget.
    Exhausted { requested: usize, produced: usize },
}

#[derive(Debug)]
pub struct SessionSample {
    pub sessions: Vec<TrackSession>,
    pub status: SampleStatus,
}

const TRACK_SEARCH_RADIUS: i64 = 2;
const SAMPLE_ATTEMPTS: usize = 200;

/// Sample `n_sessions` tracked-patch sessions whose initial window overlaps
/// the interest mask; subsequent patches follow per-frame integer motion
/// estimated by exhaustive SSD matching in a ±2 px window. Sessions are
/// independent given the base seed (per-session seed = `base_seed ^ index`).
pub fn sample_track_sessions(
    frames: &[Frame],
    mask: &InterestMask,
    edge: usize,
    n_sessions: usize,
    n_f: usize,
    base_seed: u64,
) -> Result<SessionSample> {
    let (h, w) = check_congruent(frames)?;
    if mask.bits.dim() != (h, w) {
        return Err(Error::invalid_input(
            "interest mask dimensions do not match frames".to_string(),
        ));
    }
    if edge == 0 || edge > w.min(h) {
        return Err(Error::invalid_input(format!(
            "patch edge {edge} exceeds frame size {w}x{h}"
        )));
    }
    if n_f < 2 || n_f > frames.len() {
        return Err(Error::invalid_input(format!(
            "frames per session must be in [2, {}], got {n_f}",
            frames.len()
        )));
    }
    if n_sessions == 0 {
        return Ok(SessionSample {
            sessions: Vec::new(),
            status: SampleStatus::Complete,
        });
    }
    if mask.count() == 0 {
        return Ok(SessionSample {
            sessions: Vec::new(),
            status: SampleStatus::NoInterest,
        });
    }

    let mut sessions = Vec::with_capacity(n_sessions);
    for i in 0..n_sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ i as u64);
        if let Some(s) = sample_one(frames, mask, edge, n_f, i, &mut rng, (h, w)) {
            sessions.push(s);
        }
    }

    let status = if sessions.len() == n_sessions {
        SampleStatus::Complete
    } else if sessions.is_empty() {
        SampleStatus::NoInterest
    } else {
        SampleStatus::Exhausted {
            requested: n_sessions,
            produced: sessions.len(),
        }
    };
    Ok(SessionSample { sessions, status })
}

fn sample_one(
    frames: &[Frame],
    mask: &InterestMask,
    edge: usize,
    n_f: usize,
    index: usize,
    rng: &mut ChaCha8Rng,
    (h, w): (usize, usize),
) -> Option<TrackSession> {
    'attempt: for _ in 0..SAMPLE_ATTEMPTS {
        let f0 = rng.random_range(0..=frames.len() - n_f);
        let top = rng.random_range(0..=h - edge);
        let left = rng.random_range(0..=w - edge);
        if !mask.window_overlaps(top, left, edge) {
            continue;
        }

        let mut raw = Vec::with_capacity(n_f);
        let mut pos = (top as i64, left as i64);
        raw.push(raster::crop(&frames[f0].pixels, top, left, edge));
        for k in 1..n_f {
            pos = ssd_match(&raw[k - 1], &frames[f0 + k].pixels, pos, edge);
            raw.push(raster::crop(
                &frames[f0 + k].pixels,
                pos.0 as usize,
                pos.1 as usize,
                edge,
            ));
        }

        let mut patches = Vec::with_capacity(n_f);
        for p in &raw {
            match raster::standardize(raster::flatten(p).view()) {
                Some(std) => patches.push(std),
                None => continue 'attempt, // flat patch, resample
            }
        }
        return Some(TrackSession {
            patches,
            edge,
            source_id: format!("track{index}:f{}:y{top}x{left}", frames[f0].index),
        });
    }
    None
}

/// Exhaustive SSD search over integer shifts within the tracking radius,
/// scanning row-major so ties resolve deterministically.
fn ssd_match(prev_patch: &Grid, next_frame: &Grid, (top, left): (i64, i64), edge: usize) -> (i64, i64) {
    let (h, w) = next_frame.dim();
    let mut best = (top, left);
    let mut best_ssd = f64::INFINITY;
    for dy in -TRACK_SEARCH_RADIUS..=TRACK_SEARCH_RADIUS {
        for dx in -TRACK_SEARCH_RADIUS..=TRACK_SEARCH_RADIUS {
            let nt = top + dy;
            let nl = left + dx;
            if nt < 0 || nl < 0 || nt as usize + edge > h || nl as usize + edge > w {
                continue;
            }
            let cand = next_frame.slice(ndarray::s![
                nt as usize..nt as usize + edge,
                nl as usize..nl as usize + edge
            ]);
            let ssd = cand
                .iter()
                .zip(prev_patch.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            if ssd < best_ssd {
                best_ssd = ssd;
                best = (nt, nl);
            }
        }
    }
    best
}

fn sym_uniform(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..max)
    } else {
        0.0
    }
}

/// Synthesize track sessions by sweeping each base patch along a random
/// constant-velocity trajectory of sub-pixel translations and rotations,
/// resampled bilinearly with border replication. The trajectory starts at
/// the identity, so the first patch is the standardized base patch. Sessions
/// whose patches degenerate to flat are omitted.
pub fn generate_synthetic_sessions(
    base_patches: &[Grid],
    n_f: usize,
    max_shift: f64,
    max_rotation_deg: f64,
    base_seed: u64,
) -> Result<Vec<TrackSession>> {
    if base_patches.is_empty() {
        return Err(Error::invalid_input("no base patches given".to_string()));
    }
    if n_f < 2 {
        return Err(Error::invalid_input(format!(
            "sessions need at least 2 frames, got {n_f}"
        )));
    }
    let edge = base_patches[0].dim().0;
    for (i, b) in base_patches.iter().enumerate() {
        if b.dim() != (edge, edge) {
            return Err(Error::invalid_input(format!(
                "base patch {i} is {:?}, expected {edge}x{edge}",
                b.dim()
            )));
        }
    }

    let n = base_patches.len();
    let mut sessions = Vec::with_capacity(n);
    'session: for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ i as u64);
        let base = &base_patches[i % base_patches.len()];
        // Per-session draws, in documented order: vx, vy, rotation rate.
        let vx = sym_uniform(&mut rng, max_shift);
        let vy = sym_uniform(&mut rng, max_shift);
        let rate = sym_uniform(&mut rng, max_rotation_deg);

        let mut patches = Vec::with_capacity(n_f);
        for f in 0..n_f {
            let ox = f as f64 * vx;
            let oy = f as f64 * vy;
            let theta = (f as f64 * rate).to_radians();
            let patch = warp_patch(base, ox, oy, theta);
            match raster::standardize(raster::flatten(&patch).view()) {
                Some(std) => patches.push(std),
                None => continue 'session,
            }
        }
        sessions.push(TrackSession {
            patches,
            edge,
            source_id: format!("synthetic{i}"),
        });
    }
    Ok(sessions)
}

/// Sample `base` under a rotation about its center followed by a translation
/// of the sampling window. `theta = 0`, zero offset is the exact identity.
fn warp_patch(base: &Grid, ox: f64, oy: f64, theta: f64) -> Grid {
    let edge = base.dim().0;
    let ctr = (edge as f64 - 1.0) / 2.0;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut out = Grid::zeros((edge, edge));
    for r in 0..edge {
        for c in 0..edge {
            let px = c as f64 - ctr;
            let py = r as f64 - ctr;
            // Inverse rotation maps output coordinates back into the base.
            let sx = cos_t * px + sin_t * py + ctr + ox;
            let sy = -sin_t * px + cos_t * py + ctr + oy;
            out[[r, c]] = raster::bilinear_clamp(base, sx, sy);
        }
    }
    out
}

/// Deterministic bank of soft oriented step-edge patches used as synthetic
/// session material (and by the CLI's `--synthetic` collection mode).
pub fn synthetic_base_patches(count: usize, edge: usize, seed: u64) -> Vec<Grid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctr = (edge as f64 - 1.0) / 2.0;
    (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let offset = rng.random_range(-(edge as f64) / 4.0..edge as f64 / 4.0);
            let softness = rng.random_range(0.6..1.8);
            let polarity: bool = rng.random();
            let (sin_t, cos_t) = theta.sin_cos();
            Grid::from_shape_fn((edge, edge), |(r, c)| {
                let u = (c as f64 - ctr) * cos_t + (r as f64 - ctr) * sin_t - offset;
                let v = 1.0 / (1.0 + (-u / softness).exp());
                if polarity {
                    v
                } else {
                    1.0 - v
                }
            })
        })
        .collect()
}

/// Load a directory of 8-bit PNG/JPEG frames in lexicographic filename order.
pub fn load_sequence(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|s| s.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png") | Some("jpg") | Some("jpeg")
            )
        })
        .collect();
    paths.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if paths.is_empty() {
        return Err(Error::invalid_input(format!(
            "no PNG/JPEG frames found in {}",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        frames.push(Frame {
            pixels: raster::load_gray(p)?,
            index: i + 1,
        });
    }
    let dims = frames[0].pixels.dim();
    for f in &frames {
        if f.pixels.dim() != dims {
            return Err(Error::invalid_input(format!(
                "sequence frames disagree on size: frame {} is {:?}, expected {:?}",
                f.index,
                f.pixels.dim(),
                dims
            )));
        }
    }
    Ok(frames)
}

// --- session file codec ---------------------------------------------------
//
// Layout, all integers little-endian:
//   "SLTK" | version u32 | n_sessions u32 | n_f u32 | edge u32 |
//   patches f64-LE, row-major within a patch, frame-major within a session,
//   session-major overall.

pub const SESSION_MAGIC: [u8; 4] = *b"SLTK";
pub const SESSION_VERSION: u32 = 1;

pub fn encode_sessions(sessions: &[TrackSession]) -> Result<Vec<u8>> {
    let first = sessions
        .first()
        .ok_or_else(|| Error::invalid_input("no sessions to export".to_string()))?;
    let (n_f, edge, dim) = (first.len(), first.edge, first.dim());
    if dim != edge * edge {
        return Err(Error::invalid_input(format!(
            "session patches are {dim}-dimensional, expected edge^2 = {}",
            edge * edge
        )));
    }
    for (i, s) in sessions.iter().enumerate() {
        if s.len() != n_f || s.edge != edge || s.patches.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid_input(format!(
                "session {i} geometry disagrees with the first session"
            )));
        }
    }

    let mut out = Vec::with_capacity(20 + sessions.len() * n_f * dim * 8);
    out.extend_from_slice(&SESSION_MAGIC);
    out.extend_from_slice(&SESSION_VERSION.to_le_bytes());
    out.extend_from_slice(&(sessions.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n_f as u32).to_le_bytes());
    out.extend_from_slice(&(edge as u32).to_le_bytes());
    for s in sessions {
        for p in &s.patches {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decode a session file from bytes. `origin` names the source in errors.
pub fn decode_sessions(bytes: &[u8], origin: &str) -> Result<Vec<TrackSession>> {
    let mut cur = Cursor::new(bytes, origin);
    let magic = cur.take(4, "magic")?;
    if magic != SESSION_MAGIC {
        return Err(cur.err_at(0, "bad magic, expected \"SLTK\""));
    }
    let version = cur.u32("version")?;
    if version != SESSION_VERSION {
        return Err(cur.err_at(4, format!("unsupported version {version}")));
    }
    let n_sessions = cur.u32("session count")? as u64;
    let n_f = cur.u32("frames per session")? as u64;
    let edge = cur.u32("patch edge")? as u64;
    if n_sessions > 0 {
        if n_f < 2 {
            return Err(cur.err_at(12, format!("frames per session must be >= 2, got {n_f}")));
        }
        if edge == 0 {
            return Err(cur.err_at(16, "patch edge must be nonzero"));
        }
    }
    let expected = n_sessions
        .checked_mul(n_f)
        .and_then(|v| v.checked_mul(edge))
        .and_then(|v| v.checked_mul(edge))
        .and_then(|v| v.checked_mul(8))
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

    let dim = (edge * edge) as usize;
    let mut sessions = Vec::with_capacity(n_sessions as usize);
    for i in 0..n_sessions {
        let mut patches = Vec::with_capacity(n_f as usize);
        for _ in 0..n_f {
            let mut p = Array1::zeros(dim);
            for v in p.iter_mut() {
                *v = cur.f64()?;
            }
            patches.push(p);
        }
        sessions.push(TrackSession {
            patches,
            edge: edge as usize,
            source_id: format!("{origin}#{i}"),
        });
    }
    Ok(sessions)
}

pub fn export_sessions(sessions: &[TrackSession], path: &Path) -> Result<()> {
    let bytes = encode_sessions(sessions)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn import_sessions(path: &Path) -> Result<Vec<TrackSession>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sessions(&bytes, &path.display().to_string())
}

/// Byte cursor that reports the offset of the first unsatisfiable read.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], origin: &'a str) -> Self {
        Cursor { bytes, pos: 0, origin }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn err_at(&self, offset: u64, detail: impl Into<String>) -> Error {
        Error::format(self.origin, offset, detail)
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_at(
                self.bytes.len() as u64,
                format!("unexpected end of data reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8, "f64 payload")?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(pixels: Grid, index: usize) -> Frame {
        Frame { pixels, index }
    }

    /// 3 frames with a 5x5 unit block stepping 2 px right per frame.
    fn moving_block_frames() -> Vec<Frame> {
        (0..3)
            .map(|i| {
                let mut g = Grid::zeros((16, 24));
                let left = 3 + 2 * i;
                g.slice_mut(ndarray::s![4..9, left..left + 5]).fill(1.0);
                frame(g, i + 1)
            })
            .collect()
    }

    /// Independent per-pixel accumulation oracle for the difference mask.
    fn brute_force_mask(frames: &[Frame], threshold: f64) -> Array2<bool> {
        let (h, w) = frames[0].pixels.dim();
        Array2::from_shape_fn((h, w), |(r, c)| {
            let mut acc = 0.0;
            for k in 0..frames.len() - 1 {
                acc += (frames[k + 1].pixels[[r, c]] - frames[k].pixels[[r, c]]).abs();
            }
            acc > threshold
        })
    }

    #[test]
    fn identical_frames_give_empty_mask() {
        let g = Grid::from_elem((8, 8), 0.3);
        let frames = vec![frame(g.clone(), 1), frame(g, 2)];
        let mask = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn moving_block_mask_matches_per_pixel_oracle() {
        let frames = moving_block_frames();
        let mask = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        assert_eq!(mask.bits, brute_force_mask(&frames, 0.5));
        assert!(mask.count() > 0);
    }

    #[test]
    fn size_filter_clears_small_components() {
        let frames = moving_block_frames();
        let unfiltered = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        let area = unfiltered.count();
        let mask = accumulate_difference_mask(&frames, 0.5, area + 1).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn mask_invariant_under_frame_reversal() {
        let frames = moving_block_frames();
        let mut reversed = frames.clone();
        reversed.reverse();
        let a = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        let b = accumulate_difference_mask(&reversed, 0.5, 1).unwrap();
        assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let g = Grid::zeros((4, 4));
        let r = accumulate_difference_mask(&[frame(g, 1)], 0.1, 1);
        assert!(r.is_err());
    }

    #[test]
    fn mismatched_dimensions_is_an_error() {
        let frames = vec![frame(Grid::zeros((4, 4)), 1), frame(Grid::zeros((4, 5)), 2)];
        assert!(accumulate_difference_mask(&frames, 0.1, 1).is_err());
    }

    #[test]
    fn all_false_mask_samples_nothing() {
        let frames = moving_block_frames();
        let mask = InterestMask {
            bits: Array2::from_elem(frames[0].pixels.dim(), false),
        };
        let out = sample_track_sessions(&frames, &mask, 8, 5, 2, 7).unwrap();
        assert!(out.sessions.is_empty());
        assert_eq!(out.status, SampleStatus::NoInterest);
    }

    #[test]
    fn zero_sessions_requested_is_empty_and_complete() {
        let frames = moving_block_frames();
        let mask = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        let out = sample_track_sessions(&frames, &mask, 8, 0, 2, 7).unwrap();
        assert!(out.sessions.is_empty());
        assert_eq!(out.status, SampleStatus::Complete);
    }

    #[test]
    fn sampled_windows_overlap_the_mask() {
        let frames = moving_block_frames();
        let mask = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        let out = sample_track_sessions(&frames, &mask, 8, 12, 3, 99).unwrap();
        assert!(!out.sessions.is_empty());
        for s in &out.sessions {
            assert_eq!(s.len(), 3);
            assert_eq!(s.dim(), 64);
            // Start position is recorded in the source id: "...:yTOPxLEFT".
            let tail = s.source_id.rsplit(":y").next().unwrap();
            let (top, left) = tail.split_once('x').unwrap();
            let (top, left): (usize, usize) = (top.parse().unwrap(), left.parse().unwrap());
            assert!(mask.window_overlaps(top, left, 8), "window misses mask: {}", s.source_id);
        }
    }

    #[test]
    fn emitted_patches_are_standardized() {
        let frames = moving_block_frames();
        let mask = accumulate_difference_mask(&frames, 0.5, 1).unwrap();
        let out = sample_track_sessions(&frames, &mask, 8, 6, 3, 3).unwrap();
        for s in &out.sessions {
            for p in &s.patches {
                let (m, v) = raster::mean_var(p.view());
                assert!(m.abs() < 1e-9);
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthetic_identity_trajectory_repeats_base() {
        let bases = synthetic_base_patches(4, 8, 11);
        let sessions = generate_synthetic_sessions(&bases, 5, 0.0, 0.0, 5).unwrap();
        assert_eq!(sessions.len(), 4);
        for (s, base) in sessions.iter().zip(&bases) {
            let expect = raster::standardize(raster::flatten(base).view()).unwrap();
            for p in &s.patches {
                assert_eq!(p, &expect);
            }
        }
    }

    #[test]
    fn synthetic_first_patch_is_the_base() {
        let bases = synthetic_base_patches(6, 10, 21);
        let sessions = generate_synthetic_sessions(&bases, 4, 1.0, 6.0, 77).unwrap();
        for (s, base) in sessions.iter().zip(&bases) {
            let expect = raster::standardize(raster::flatten(base).view()).unwrap();
            assert_eq!(s.patches[0], expect);
        }
    }

    #[test]
    fn synthetic_consecutive_patches_are_closer_than_shuffled_pairs() {
        let bases = synthetic_base_patches(120, 8, 31);
        let sessions = generate_synthetic_sessions(&bases, 5, 1.0, 0.0, 13).unwrap();
        assert!(sessions.len() >= 100);
        let mut consecutive = 0.0;
        let mut consecutive_n = 0.0;
        let mut shuffled = 0.0;
        let mut shuffled_n = 0.0;
        // Shuffled statistic pairs frame f of session i with frame f+1 of
        // session i+1, breaking temporal correlation without changing the
        // marginal patch distribution.
        for i in 0..sessions.len() {
            let s = &sessions[i];
            let other = &sessions[(i + 1) % sessions.len()];
            for f in 0..s.len() - 1 {
                let mad = |a: &Array1<f64>, b: &Array1<f64>| {
                    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
                };
                consecutive += mad(&s.patches[f], &s.patches[f + 1]);
                consecutive_n += 1.0;
                shuffled += mad(&s.patches[f], &other.patches[f + 1]);
                shuffled_n += 1.0;
            }
        }
        assert!(
            consecutive / consecutive_n < shuffled / shuffled_n,
            "temporal coherence lost: {} vs {}",
            consecutive / consecutive_n,
            shuffled / shuffled_n
        );
    }

    #[test]
    fn synthetic_rejects_empty_bases() {
        assert!(generate_synthetic_sessions(&[], 5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn session_file_roundtrip_is_bit_exact() {
        let bases = synthetic_base_patches(3, 6, 2);
        let sessions = generate_synthetic_sessions(&bases, 3, 0.7, 3.0, 8).unwrap();
        let bytes = encode_sessions(&sessions).unwrap();
        let back = decode_sessions(&bytes, "mem").unwrap();
        assert_eq!(back.len(), sessions.len());
        for (a, b) in sessions.iter().zip(&back) {
            assert_eq!(a.edge, b.edge);
            assert_eq!(a.patches, b.patches);
        }
    }

    #[test]
    fn decode_rejects_bad_magic_at_offset_zero() {
        let err = decode_sessions(b"XXXX\x01\x00\x00\x00", "mem").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_names_truncation_offset() {
        let bases = synthetic_base_patches(1, 4, 2);
        let sessions = generate_synthetic_sessions(&bases, 2, 0.0, 0.0, 0).unwrap();
        let bytes = encode_sessions(&sessions).unwrap();
        let err = decode_sessions(&bytes[..bytes.len() - 5], "mem").unwrap_err();
        match err {
            Error::Format { offset, detail, .. } => {
                assert_eq!(offset, (bytes.len() - 5) as u64);
                assert!(detail.contains("truncated"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_rejects_overflowing_counts() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SLTK");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_sessions(&bytes, "mem").is_err());
    }
}
