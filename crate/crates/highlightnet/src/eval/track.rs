//! Baseline normalized cross-correlation tracker and the one-pass
//! evaluation metrics (precision at 20 px, success AUC over IoU thresholds).
//!
//! The tracker is deliberately simple and fully deterministic so that A/B
//! deltas between runs with and without enhancement are attributable to the
//! enhancer alone.

use std::path::Path;

use crate::enhancer::{enhance, to_gray, EnhanceConfig, GrayImage, ModelWeights};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::imgio::Rgb32Image;

/// Axis-aligned box: top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid_argument(format!(
                "box size must be positive, got {w}x{h}"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Euclidean distance between box centers.
    pub fn center_distance(&self, other: &BoundingBox) -> f32 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        let (dx, dy) = ((ax - bx) as f64, (ay - by) as f64);
        (dx * dx + dy * dy).sqrt() as f32
    }

    /// Intersection over union, computed in f64 so identical boxes give
    /// exactly 1 (f32 corner sums would lose small extents to cancellation).
    pub fn iou(&self, other: &BoundingBox) -> f32 {
        let (ax, ay, aw, ah) = (self.x as f64, self.y as f64, self.w as f64, self.h as f64);
        let (bx, by, bw, bh) = (other.x as f64, other.y as f64, other.w as f64, other.h as f64);
        let ix = (ax + aw).min(bx + bw) - ax.max(bx);
        let iy = (ay + ah).min(by + bh) - ay.max(by);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = aw * ah + bw * bh - inter;
        (inter / union) as f32
    }
}

/// Parses a ground-truth file: one `x,y,w,h` line per frame.
pub fn parse_gt_file(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::NotFound(format!("cannot read {}: {e}", path.display())))?;
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid_argument(format!(
                "{}:{}: expected x,y,w,h",
                path.display(),
                lineno + 1
            )));
        }
        let vals: Vec<f32> = parts
            .iter()
            .map(|p| {
                p.parse::<f32>().map_err(|_| {
                    Error::invalid_argument(format!("{}:{}: bad number '{p}'", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        boxes.push(BoundingBox::new(vals[0], vals[1], vals[2], vals[3])?);
    }
    if boxes.is_empty() {
        return Err(Error::invalid_argument(format!("{} contains no boxes", path.display())));
    }
    Ok(boxes)
}

struct IntRect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

fn clamp_to_frame(b: &BoundingBox, fw: usize, fh: usize) -> Result<IntRect> {
    let x0 = b.x.round().max(0.0) as i64;
    let y0 = b.y.round().max(0.0) as i64;
    let x1 = ((b.x + b.w).round() as i64).min(fw as i64);
    let y1 = ((b.y + b.h).round() as i64).min(fh as i64);
    if x0 >= x1 || y0 >= y1 || x0 >= fw as i64 || y0 >= fh as i64 {
        return Err(Error::TrackingLost(format!(
            "template box ({}, {}, {}, {}) lies outside the {}x{} frame",
            b.x, b.y, b.w, b.h, fw, fh
        )));
    }
    Ok(IntRect {
        x: x0 as usize,
        y: y0 as usize,
        w: (x1 - x0) as usize,
        h: (y1 - y0) as usize,
    })
}

fn gray_of(frame: &Rgb32Image, enhancer: Option<(&ModelWeights, &EnhanceConfig)>) -> Result<GrayImage> {
    match enhancer {
        Some((weights, cfg)) => Ok(enhance(frame, weights, cfg)?.gray),
        None => Ok(to_gray(frame)?.0),
    }
}

/// Normalized cross-correlation between the template and the same-size patch
/// at (px, py); -2 when either side is flat (so any real match wins).
fn ncc_score(img: &GrayImage, px: usize, py: usize, tpl: &[f32], tw: usize, th: usize, tpl_mean: f64) -> f64 {
    let w = img.width();
    let data = img.data();
    let n = (tw * th) as f64;
    let mut patch_sum = 0.0f64;
    for r in 0..th {
        for c in 0..tw {
            patch_sum += data[(py + r) * w + px + c] as f64;
        }
    }
    let patch_mean = patch_sum / n;
    let mut num = 0.0f64;
    let mut st = 0.0f64;
    let mut sp = 0.0f64;
    for r in 0..th {
        for c in 0..tw {
            let t = tpl[r * tw + c] as f64 - tpl_mean;
            let p = data[(py + r) * w + px + c] as f64 - patch_mean;
            num += t * p;
            st += t * t;
            sp += p * p;
        }
    }
    let denom = (st * sp).sqrt();
    if denom < 1e-12 {
        return -2.0;
    }
    num / denom
}

/// Tracks the initial box through the frames by exhaustive NCC matching.
///
/// The gray template is cut from frame 0 (each frame is enhanced first when
/// an enhancer is supplied). For every following frame, all placements of
/// the fixed-size box inside a search window twice the template size,
/// centered on the previous estimate and clipped to the frame, are scored;
/// the argmax wins, ties broken by smallest (row, col).
pub fn ncc_track(
    frames: &[Rgb32Image],
    init: BoundingBox,
    enhancer: Option<(&ModelWeights, &EnhanceConfig)>,
) -> Result<Vec<BoundingBox>> {
    if frames.len() < 2 {
        return Err(Error::invalid_argument("need at least 2 frames".to_string()));
    }
    let (fh, fw) = (frames[0].height, frames[0].width);
    if frames.iter().any(|f| f.height != fh || f.width != fw) {
        return Err(Error::invalid_argument("all frames must have the same size".to_string()));
    }
    let rect = clamp_to_frame(&init, fw, fh)?;
    let (tw, th) = (rect.w, rect.h);

    let first = gray_of(&frames[0], enhancer)?;
    let mut tpl = Vec::with_capacity(tw * th);
    for r in 0..th {
        for c in 0..tw {
            tpl.push(first.data()[(rect.y + r) * fw + rect.x + c]);
        }
    }
    let tpl_mean = tpl.iter().map(|&v| v as f64).sum::<f64>() / tpl.len() as f64;

    let mut boxes = vec![BoundingBox::new(rect.x as f32, rect.y as f32, tw as f32, th as f32)?];
    let (mut prev_x, mut prev_y) = (rect.x as i64, rect.y as i64);

    for frame in &frames[1..] {
        let gray = gray_of(frame, enhancer)?;
        // Search window of twice the template size centered on the previous
        // estimate; candidate top-lefts keep the box inside both the window
        // and the frame.
        let cx = prev_x + tw as i64 / 2;
        let cy = prev_y + th as i64 / 2;
        let x_lo = (cx - tw as i64).max(0).min((fw - tw) as i64) as usize;
        let x_hi = cx.clamp(0, (fw - tw) as i64) as usize;
        let y_lo = (cy - th as i64).max(0).min((fh - th) as i64) as usize;
        let y_hi = cy.clamp(0, (fh - th) as i64) as usize;

        let mut best = f64::NEG_INFINITY;
        let (mut bx, mut by) = (x_lo, y_lo);
        for y0 in y_lo..=y_hi {
            for x0 in x_lo..=x_hi {
                let s = ncc_score(&gray, x0, y0, &tpl, tw, th, tpl_mean);
                if s > best {
                    best = s;
                    bx = x0;
                    by = y0;
                }
            }
        }
        boxes.push(BoundingBox::new(bx as f32, by as f32, tw as f32, th as f32)?);
        prev_x = bx as i64;
        prev_y = by as i64;
    }
    Ok(boxes)
}

/// One-pass evaluation: center-location error per frame, precision at the
/// 20-pixel threshold, and success AUC over 51 evenly spaced IoU thresholds
/// (strict `IoU > t`).
pub fn one_pass_eval(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::invalid_argument(format!(
            "prediction/ground-truth length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid_argument("empty sequences".to_string()));
    }
    let cle: Vec<f32> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let n = pred.len() as f64;
    let precision = cle.iter().filter(|&&d| d <= 20.0).count() as f64 / n;

    let ious: Vec<f32> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let mut auc = 0.0f64;
    const STEPS: usize = 51;
    for i in 0..STEPS {
        let t = i as f64 / (STEPS - 1) as f64;
        let frac = ious.iter().filter(|&&v| v as f64 > t).count() as f64 / n;
        auc += frac;
    }
    auc /= STEPS as f64;

    Ok(MetricReport::Tracking {
        precision_at_20: precision as f32,
        success_auc: auc as f32,
        cle,
    })
}
