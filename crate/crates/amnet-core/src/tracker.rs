//! Frame-by-frame inference: crop, one forward pass, argmax, state update.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AmNet;
use crate::ops;
use crate::params::ParamStore;
use crate::sequence::SequenceRecord;
use crate::tensor::{Dims, Tensor};

/// Axis-aligned box: top-left corner in image pixels, real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate box {self:?}")))
        }
    }
}

/// Square crop centered at `center` with side `side` (image pixels), padded
/// with the frame's per-channel mean outside the frame, normalized to [0,1]
/// RGB and resized to out².
pub fn crop_resize(frame: &RgbImage, center: (f64, f64), side: f64, out: usize) -> Tensor<f32> {
    let (fw, fh) = (frame.width() as usize, frame.height() as usize);
    let side_px = side.round().max(1.0) as usize;
    let left = (center.0 - side / 2.0).round() as isize;
    let top = (center.1 - side / 2.0).round() as isize;

    let mut mean = [0f64; 3];
    for p in frame.pixels() {
        for c in 0..3 {
            mean[c] += p.0[c] as f64;
        }
    }
    let denom = (fw * fh) as f64 * 255.0;
    for m in &mut mean {
        *m /= denom;
    }

    let mut crop = Tensor::<f32>::zeros(Dims::new(1, 3, side_px, side_px));
    for y in 0..side_px {
        let iy = top + y as isize;
        for x in 0..side_px {
            let ix = left + x as isize;
            let inside = iy >= 0 && (iy as usize) < fh && ix >= 0 && (ix as usize) < fw;
            for c in 0..3 {
                let v = if inside {
                    frame.get_pixel(ix as u32, iy as u32).0[c] as f64 / 255.0
                } else {
                    mean[c]
                };
                crop.set(0, c, y, x, v as f32);
            }
        }
    }
    if side_px == out {
        crop
    } else {
        ops::bilinear_resize(&crop, out, out).expect("resize to positive size")
    }
}

/// Anything that turns (current ROI, previous ROI, template) into a
/// single-channel response map.
pub trait ResponseModel {
    fn roi_size(&self) -> usize;
    fn template_size(&self) -> usize;
    fn response(&self, roi_t: &Tensor<f32>, roi_prev: &Tensor<f32>, tmpl: &Tensor<f32>)
        -> Result<Tensor<f32>>;
}

/// The trained network with a forward-pass counter for throughput checks.
pub struct AmNetModel {
    net: AmNet,
    store: ParamStore<f32>,
    forwards: AtomicU64,
}

impl AmNetModel {
    pub fn new(net: AmNet, store: ParamStore<f32>) -> Result<Self> {
        net.validate_store(&store)?;
        Ok(AmNetModel { net, store, forwards: AtomicU64::new(0) })
    }

    pub fn net(&self) -> &AmNet {
        &self.net
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }
}

impl ResponseModel for AmNetModel {
    fn roi_size(&self) -> usize {
        self.net.cfg().roi_size
    }

    fn template_size(&self) -> usize {
        self.net.cfg().template_size
    }

    fn response(&self, roi_t: &Tensor<f32>, roi_prev: &Tensor<f32>, tmpl: &Tensor<f32>)
        -> Result<Tensor<f32>> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.net.response(&self.store, roi_t, roi_prev, tmpl)
    }
}

#[derive(Debug, Clone)]
pub struct TrackState {
    pub bbox: BBox,
    pub template: Tensor<f32>,
    pub prev_roi: Tensor<f32>,
    /// Center and side (image pixels) of the last ROI crop.
    pub roi_center: (f64, f64),
    pub roi_side: f64,
}

fn roi_side_for(bbox: &BBox) -> f64 {
    3.0 * bbox.w.max(bbox.h)
}

pub fn init(model: &impl ResponseModel, frame0: &RgbImage, bbox0: BBox) -> Result<TrackState> {
    bbox0.validate()?;
    let center = bbox0.center();
    let side = roi_side_for(&bbox0);
    Ok(TrackState {
        template: crop_resize(frame0, center, bbox0.w.max(bbox0.h), model.template_size()),
        prev_roi: crop_resize(frame0, center, side, model.roi_size()),
        roi_center: center,
        roi_side: side,
        bbox: bbox0,
    })
}

/// One tracking step: crop the new ROI at the previous geometry, run the
/// model, move the box to the argmax, then re-crop template and ROI at the
/// new center so the next step's pair shares coordinates.
pub fn track_step(model: &impl ResponseModel, state: &mut TrackState, frame: &RgbImage) -> Result<BBox> {
    let roi_t = crop_resize(frame, state.roi_center, state.roi_side, model.roi_size());
    let map = model.response(&roi_t, &state.prev_roi, &state.template)?;

    let (r, c) = map.argmax_hw(0, 0);
    let scale = state.roi_side / map.dims().w as f64;
    let left = state.roi_center.0 - state.roi_side / 2.0;
    let top = state.roi_center.1 - state.roi_side / 2.0;
    let center = (left + c as f64 * scale, top + r as f64 * scale);

    let bbox = BBox::new(center.0 - state.bbox.w / 2.0, center.1 - state.bbox.h / 2.0, state.bbox.w, state.bbox.h);
    let side = roi_side_for(&bbox);
    state.template = crop_resize(frame, center, bbox.w.max(bbox.h), model.template_size());
    state.prev_roi = crop_resize(frame, center, side, model.roi_size());
    state.roi_center = center;
    state.roi_side = side;
    state.bbox = bbox;
    Ok(bbox)
}

#[derive(Debug, Clone, Copy)]
pub struct TrackStats {
    /// Frames processed after the initialization frame.
    pub tracked_frames: usize,
    /// Wall-clock seconds spent in `track_step` (crop + forward + update).
    pub seconds: f64,
    pub fps: f64,
}

/// Runs the whole sequence from its ground-truth first box. Frame 0's output
/// is that box verbatim.
pub fn track_sequence(
    model: &impl ResponseModel,
    seq: &SequenceRecord,
) -> Result<(Vec<BBox>, TrackStats)> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument(format!("sequence '{}' has no frames", seq.name)));
    }
    let bbox0 = seq.boxes[0];
    let mut state = init(model, &seq.frame(0)?, bbox0)?;
    let mut boxes = Vec::with_capacity(seq.len());
    boxes.push(bbox0);

    let start = Instant::now();
    for t in 1..seq.len() {
        let frame = seq.frame(t)?;
        boxes.push(track_step(model, &mut state, &frame)?);
    }
    let seconds = start.elapsed().as_secs_f64();
    let tracked = seq.len() - 1;
    let fps = if tracked > 0 && seconds > 0.0 { tracked as f64 / seconds } else { 0.0 };
    Ok((boxes, TrackStats { tracked_frames: tracked, seconds, fps }))
}
