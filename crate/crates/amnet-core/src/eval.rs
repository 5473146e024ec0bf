//! One-pass evaluation: center-error precision and IoU success curves pooled
//! over every frame of every sequence.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sequence::SequenceRecord;
use crate::tracker::{BBox, TrackStats};

pub const CURVE_BINS: usize = 51;
/// Precision thresholds: 0, 1, …, 50 center-error pixels.
pub fn precision_threshold(i: usize) -> f64 {
    i as f64
}
/// Success thresholds: 0.00, 0.02, …, 1.00 IoU.
pub fn success_threshold(i: usize) -> f64 {
    i as f64 * 0.02
}

pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Fraction of errors at or below each pixel threshold.
fn precision_curve(errors: &[f64]) -> [f64; CURVE_BINS] {
    let mut out = [0.0; CURVE_BINS];
    if errors.is_empty() {
        return out;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let t = precision_threshold(i);
        *slot = errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64;
    }
    out
}

/// Fraction of overlaps strictly above each IoU threshold.
fn success_curve(ious: &[f64]) -> [f64; CURVE_BINS] {
    let mut out = [0.0; CURVE_BINS];
    if ious.is_empty() {
        return out;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let t = success_threshold(i);
        *slot = ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64;
    }
    out
}

fn auc(curve: &[f64; CURVE_BINS]) -> f64 {
    curve.iter().sum::<f64>() / CURVE_BINS as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct SeqEval {
    pub name: String,
    pub frames: usize,
    pub mean_iou: f64,
    pub mean_center_error: f64,
    pub precision_at_20: f64,
    pub success_auc: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_sequence: Vec<SeqEval>,
    /// Pooled over all frames of all sequences, in tracking order.
    pub center_errors: Vec<f64>,
    pub ious: Vec<f64>,
    pub precision: [f64; CURVE_BINS],
    pub success: [f64; CURVE_BINS],
    pub precision_at_20: f64,
    pub success_auc: f64,
    /// Aggregate tracked-frames-per-second across sequences.
    pub fps: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs `track` over every sequence and scores its boxes against ground
/// truth. Every frame counts, including the given first frame.
pub fn ope_evaluate<F>(mut track: F, seqs: &[SequenceRecord]) -> Result<EvalReport>
where
    F: FnMut(&SequenceRecord) -> Result<(Vec<BBox>, TrackStats)>,
{
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("no sequences to evaluate".into()));
    }
    let mut per_sequence = Vec::with_capacity(seqs.len());
    let mut all_errors = Vec::new();
    let mut all_ious = Vec::new();
    let mut total_frames = 0usize;
    let mut total_seconds = 0.0f64;

    for seq in seqs {
        let (boxes, stats) = track(seq)?;
        if boxes.len() != seq.len() {
            return Err(Error::InvalidArgument(format!(
                "tracker returned {} boxes for {}-frame sequence '{}'",
                boxes.len(),
                seq.len(),
                seq.name
            )));
        }
        let errors: Vec<f64> =
            boxes.iter().zip(&seq.boxes).map(|(p, g)| center_error(p, g)).collect();
        let ious: Vec<f64> = boxes.iter().zip(&seq.boxes).map(|(p, g)| iou(p, g)).collect();

        let p = precision_curve(&errors);
        let s = success_curve(&ious);
        per_sequence.push(SeqEval {
            name: seq.name.clone(),
            frames: seq.len(),
            mean_iou: mean(&ious),
            mean_center_error: mean(&errors),
            precision_at_20: p[20],
            success_auc: auc(&s),
        });
        all_errors.extend(errors);
        all_ious.extend(ious);
        total_frames += stats.tracked_frames;
        total_seconds += stats.seconds;
    }

    let precision = precision_curve(&all_errors);
    let success = success_curve(&all_ious);
    let fps = if total_seconds > 0.0 { total_frames as f64 / total_seconds } else { 0.0 };
    Ok(EvalReport {
        per_sequence,
        precision_at_20: precision[20],
        success_auc: auc(&success),
        center_errors: all_errors,
        ious: all_ious,
        precision,
        success,
        fps,
    })
}

impl EvalReport {
    /// Writes precision.csv, success.csv, per_sequence.csv and summary.json
    /// into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write_file = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f =
                fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
        };

        let mut p = String::from("threshold,precision\n");
        for (i, v) in self.precision.iter().enumerate() {
            p.push_str(&format!("{},{v}\n", precision_threshold(i)));
        }
        write_file("precision.csv", p)?;

        let mut s = String::from("threshold,success\n");
        for (i, v) in self.success.iter().enumerate() {
            s.push_str(&format!("{},{v}\n", success_threshold(i)));
        }
        write_file("success.csv", s)?;

        let mut rows =
            String::from("name,frames,mean_iou,mean_center_error,precision_at_20,success_auc\n");
        for e in &self.per_sequence {
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.name, e.frames, e.mean_iou, e.mean_center_error, e.precision_at_20, e.success_auc
            ));
        }
        write_file("per_sequence.csv", rows)?;

        let summary = serde_json::json!({
            "precision_at_20": self.precision_at_20,
            "success_auc": self.success_auc,
            "fps": self.fps,
            "frames": self.ious.len(),
            "sequences": self.per_sequence.len(),
        });
        write_file("summary.json", format!("{:#}\n", summary))
    }
}

/// Reads a two-column curve CSV written by [`EvalReport::write`].
pub fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| Error::InvalidArgument(format!(
                "bad curve row {} in {}: '{line}'",
                i + 1,
                path.display()
            )))
        };
        let t = parse(cols.next())?;
        let v = parse(cols.next())?;
        out.push((t, v));
    }
    Ok(out)
}
