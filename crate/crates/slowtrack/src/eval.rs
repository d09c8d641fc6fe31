//! Benchmark metrics: intersection-over-union success rate, center-location
//! error, multi-trial median selection and report emission.

use std::path::Path;

use crate::error::{Error, Result};

/// Axis-aligned box, top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn overlap(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

fn check_lengths(pred: &[Rect], truth: &[Rect]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid_input(format!(
            "predictions ({}) and ground truth ({}) must be nonempty and equal length",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Percentage of frames with IoU strictly above 0.5.
pub fn success_rate(pred: &[Rect], truth: &[Rect]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, g)| overlap(p, g) > 0.5)
        .count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Per-frame Euclidean center distances and their mean.
pub fn col_error(pred: &[Rect], truth: &[Rect]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, truth)?;
    let per_frame: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, g)| {
            let (px, py) = p.center();
            let (gx, gy) = g.center();
            ((px - gx).powi(2) + (py - gy).powi(2)).sqrt()
        })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((per_frame, mean))
}

#[derive(Debug, Clone)]
pub struct TrialMetrics {
    pub sr: f64,
    pub mean_col: f64,
    pub per_frame_col: Vec<f64>,
}

pub fn trial_metrics(pred: &[Rect], truth: &[Rect]) -> Result<TrialMetrics> {
    let sr = success_rate(pred, truth)?;
    let (per_frame_col, mean_col) = col_error(pred, truth)?;
    Ok(TrialMetrics {
        sr,
        mean_col,
        per_frame_col,
    })
}

fn max_min_norm(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        // All equal: every trial gets the neutral score.
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Pick the median trial by max-min-normalized SR plus normalized inverse
/// mean COL error. Ties resolve to the lower trial index; the lower median
/// is used for even trial counts.
pub fn median_trial(trials: &[TrialMetrics]) -> Result<usize> {
    if trials.is_empty() {
        return Err(Error::invalid_input("no trials to select from".to_string()));
    }
    let srs: Vec<f64> = trials.iter().map(|t| t.sr).collect();
    let inv_col: Vec<f64> = trials
        .iter()
        .map(|t| {
            if t.mean_col > 0.0 {
                1.0 / t.mean_col
            } else {
                f64::INFINITY
            }
        })
        .collect();
    // An all-perfect COL column (all infinite) normalizes as all-equal.
    let inv_col = if inv_col.iter().all(|v| v.is_infinite()) {
        vec![1.0; trials.len()]
    } else {
        inv_col
    };
    let scores: Vec<f64> = max_min_norm(&srs)
        .iter()
        .zip(max_min_norm(&inv_col))
        .map(|(a, b)| a + b)
        .collect();

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let median_score = scores[order[(scores.len() - 1) / 2]];
    for (i, &s) in scores.iter().enumerate() {
        if s == median_score {
            return Ok(i);
        }
    }
    unreachable!("median score always exists")
}

/// Ground truth file: one `x,y,w,h` line per frame, 1-based frame order.
pub fn parse_ground_truth(text: &str, origin: &str) -> Result<Vec<Rect>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::format(
                    origin,
                    offset,
                    format!("line {}: expected x,y,w,h", lineno + 1),
                ));
            }
            let mut vals = [0.0f64; 4];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| {
                    Error::format(
                        origin,
                        offset,
                        format!("line {}: bad number {f:?}", lineno + 1),
                    )
                })?;
            }
            if !(vals[2] > 0.0 && vals[3] > 0.0) || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    origin,
                    offset,
                    format!("line {}: box extent must be positive", lineno + 1),
                ));
            }
            out.push(Rect {
                x: vals[0],
                y: vals[1],
                w: vals[2],
                h: vals[3],
            });
        }
        offset += line.len() as u64 + 1;
    }
    if out.is_empty() {
        return Err(Error::format(origin, 0, "no ground-truth boxes"));
    }
    Ok(out)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<Rect>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text, &path.display().to_string())
}

/// Per-frame comparison CSV plus a COL-error line plot.
pub fn emit_report(pred: &[Rect], truth: &[Rect], dir: &Path) -> Result<TrialMetrics> {
    check_lengths(pred, truth)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = trial_metrics(pred, truth)?;

    let mut csv = String::from("frame,pred_x,pred_y,pred_w,pred_h,gt_x,gt_y,gt_w,gt_h,iou,col\n");
    for (i, (p, g)) in pred.iter().zip(truth).enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            i + 1,
            p.x,
            p.y,
            p.w,
            p.h,
            g.x,
            g.y,
            g.w,
            g.h,
            overlap(p, g),
            metrics.per_frame_col[i],
        ));
    }
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let plot_path = dir.join("col_error.png");
    plot_series(&metrics.per_frame_col, &plot_path)?;
    Ok(metrics)
}

/// Minimal line chart: white background, gray axes, black polyline.
fn plot_series(values: &[f64], path: &Path) -> Result<()> {
    let (w, h) = (640u32, 360u32);
    let margin = 40.0;
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let vmax = values.iter().cloned().fold(f64::MIN, f64::max).max(1.0);
    let n = values.len().max(2);

    let to_px = |i: usize, v: f64| -> (f64, f64) {
        let x = margin + (w as f64 - 2.0 * margin) * i as f64 / (n - 1) as f64;
        let y = h as f64 - margin - (h as f64 - 2.0 * margin) * (v / vmax);
        (x, y)
    };
    let mut draw_line = |a: (f64, f64), b: (f64, f64), color: image::Rgb<u8>| {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a.0 + (b.0 - a.0) * t;
            let y = a.1 + (b.1 - a.1) * t;
            if x >= 0.0 && y >= 0.0 && (x as u32) < w && (y as u32) < h {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    };

    let axis = image::Rgb([160, 160, 160]);
    draw_line((margin, margin), (margin, h as f64 - margin), axis);
    draw_line(
        (margin, h as f64 - margin),
        (w as f64 - margin, h as f64 - margin),
        axis,
    );
    let ink = image::Rgb([20, 20, 20]);
    for i in 1..values.len() {
        draw_line(to_px(i - 1, values[i - 1]), to_px(i, values[i]), ink);
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}
