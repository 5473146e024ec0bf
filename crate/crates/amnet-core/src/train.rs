//! Minibatch Adam training on synthetic (ROI_t, ROI_{t-1}, template) triplets
//! against Gaussian ground-truth maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{gaussian_gt, GtMap};
use crate::model::{AmNet, ModelConfig};
use crate::params::{AdamConfig, ParamStore};
use crate::sequence::SequenceRecord;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::tracker::crop_resize;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Learning rate drops ×0.1 every this many steps.
    pub lr_step_interval: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
    /// Max crop-center perturbation, in ROI pixels.
    pub perturb_roi_px: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_start: 1e-3,
            lr_end: 1e-5,
            lr_step_interval: 2000,
            weight_decay: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 200,
            seed: 7,
            perturb_roi_px: 16.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: &str| Error::Config {
            field: format!("train.{field}"),
            reason: reason.into(),
        };
        if self.batch_size < 1 {
            return Err(err("batch_size", "must be at least 1"));
        }
        if !(self.lr_end <= self.lr_start) {
            return Err(err("lr_end", "must not exceed lr_start"));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(err("lr_start", "learning rates must be positive"));
        }
        if self.lr_step_interval == 0 {
            return Err(err("lr_step_interval", "must be positive"));
        }
        if self.steps == 0 {
            return Err(err("steps", "must be positive"));
        }
        if self.perturb_roi_px < 0.0 {
            return Err(err("perturb_roi_px", "must be non-negative"));
        }
        Ok(())
    }

    /// lr(step) = max(lr_end, lr_start · 0.1^floor(step / interval)).
    /// Dividing by an exact power of ten keeps boundary values decimal-exact
    /// (1e-3 → 1e-4 → 1e-5), which multiplying by 0.1 would not.
    pub fn lr_at(&self, step: usize) -> f64 {
        let drops = (step / self.lr_step_interval).min(i32::MAX as usize) as i32;
        (self.lr_start / 10f64.powi(drops)).max(self.lr_end)
    }
}

/// One training sample: both ROI crops, the template, and where the target
/// center lands in response-map coordinates.
pub struct Triplet {
    pub roi_t: Tensor<f32>,
    pub roi_prev: Tensor<f32>,
    pub template: Tensor<f32>,
    /// (row, col) of the ground-truth peak, response-map pixels.
    pub peak: (f64, f64),
    /// Target box size converted to response-map pixels.
    pub box_wh_roi: (f64, f64),
}

/// Crops a training triplet around the ground-truth box at frame t−1, with a
/// uniform crop-center perturbation of up to ±`perturb_roi_px` (expressed in
/// ROI pixels) so ground-truth peaks are not always centered.
pub fn sample_triplet(
    seq: &SequenceRecord,
    t: usize,
    model_cfg: &ModelConfig,
    perturb_roi_px: f64,
    rng: &mut impl Rng,
) -> Result<Triplet> {
    if t == 0 || t >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "triplet frame index {t} outside 1..{}",
            seq.len()
        )));
    }
    let box_prev = seq.boxes[t - 1];
    let box_t = seq.boxes[t];
    box_prev.validate()?;
    box_t.validate()?;

    let roi = model_cfg.roi_size;
    let side = 3.0 * box_prev.w.max(box_prev.h);
    let scale = side / roi as f64;
    let ctr = box_prev.center();

    // Fixed draw order: dx then dy, even when the amplitude is zero.
    let p = perturb_roi_px;
    let dx = rng.gen_range(-p..=p) * scale;
    let dy = rng.gen_range(-p..=p) * scale;
    let center_p = (ctr.0 + dx, ctr.1 + dy);

    let frame_prev = seq.frame(t - 1)?;
    let frame_t = seq.frame(t)?;

    let roi_t = crop_resize(&frame_t, center_p, side, roi);
    let roi_prev = crop_resize(&frame_prev, center_p, side, roi);
    let template = crop_resize(
        &frame_prev,
        ctr,
        box_prev.w.max(box_prev.h),
        model_cfg.template_size,
    );

    let (tx, ty) = box_t.center();
    let left = center_p.0 - side / 2.0;
    let top = center_p.1 - side / 2.0;
    let hi = (roi - 1) as f64;
    let peak = (
        ((ty - top) / scale).clamp(0.0, hi),
        ((tx - left) / scale).clamp(0.0, hi),
    );

    Ok(Triplet {
        roi_t,
        roi_prev,
        template,
        peak,
        box_wh_roi: (box_t.w / scale, box_t.h / scale),
    })
}

pub fn triplet_gt(net: &AmNet, trip: &Triplet) -> Result<GtMap<f32>> {
    let sigma = net.gt_sigma(trip.box_wh_roi.0, trip.box_wh_roi.1);
    gaussian_gt(trip.peak, sigma, net.response_size())
}

#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Runs the full training loop in place on `store`. Deterministic for a given
/// (corpus, cfg) pair: one seeded stream drives sequence choice, frame choice
/// and crop perturbation, and gradients reduce in sample order.
pub fn train(
    net: &AmNet,
    store: &mut ParamStore<f32>,
    corpus: &[SequenceRecord],
    cfg: &TrainConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    net.validate_store(store)?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    if let Some(s) = corpus.iter().find(|s| s.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "sequence '{}' has fewer than 2 frames",
            s.name
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        store.zero_grad();
        let mut loss_sum = 0.0f64;

        for _ in 0..cfg.batch_size {
            let seq = &corpus[rng.gen_range(0..corpus.len())];
            let t = rng.gen_range(1..seq.len());
            let trip = sample_triplet(seq, t, net.cfg(), cfg.perturb_roi_px, &mut rng)?;
            let gt = triplet_gt(net, &trip)?;

            let mut tape = Tape::new();
            let (loss, _) =
                net.training_graph(&mut tape, store, &trip.roi_t, &trip.roi_prev, &trip.template, &gt)?;
            loss_sum += tape.value(loss).to_f64().data()[0];
            let grads = tape.backward(loss)?;
            store.accumulate(&grads)?;
        }

        store.scale_grads(1.0 / cfg.batch_size as f64);
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: loss });
        }

        let lr = cfg.lr_at(step);
        store.adam_step(&AdamConfig {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        });
        log.push(StepLog { step, lr, loss });
    }
    Ok(log)
}
