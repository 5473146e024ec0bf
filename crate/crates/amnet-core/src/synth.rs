//! Seeded synthetic sequences: a textured square target on procedural value
//! noise, with constant velocity plus Gaussian position jitter, optional
//! global camera jitter and periodic occlusion windows.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::SequenceRecord;
use crate::tracker::BBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frame_w: usize,
    pub frame_h: usize,
    pub frames: usize,
    pub sequences: usize,
    /// Square target side, pixels.
    pub target_size: usize,
    /// Speed in px/frame; direction is drawn per sequence unless `velocity`
    /// pins it.
    pub speed: f64,
    pub velocity: Option<(f64, f64)>,
    /// Std-dev of the per-frame Gaussian wobble added on top of the linear
    /// motion (does not accumulate).
    pub pos_jitter: f64,
    /// Uniform ±J px global shift per frame.
    pub camera_jitter: usize,
    /// Every `occlusion_period` frames the target is hidden for
    /// `occlusion_len` frames; 0 disables occlusion.
    pub occlusion_period: usize,
    pub occlusion_len: usize,
    pub base_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_w: 96,
            frame_h: 72,
            frames: 60,
            sequences: 8,
            target_size: 16,
            speed: 1.2,
            velocity: None,
            pos_jitter: 0.4,
            camera_jitter: 1,
            occlusion_period: 0,
            occlusion_len: 0,
            base_seed: 101,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: &str| Error::Config {
            field: format!("synth.{field}"),
            reason: reason.into(),
        };
        if self.frame_w < 64 || self.frame_h < 64 {
            return Err(err("frame_w", "frame sides must be at least 64"));
        }
        if self.target_size < 8 {
            return Err(err("target_size", "must be at least 8"));
        }
        let margin = self.camera_jitter + 2;
        if self.target_size + 2 * margin > self.frame_w.min(self.frame_h) {
            return Err(err("target_size", "target plus jitter margin does not fit in the frame"));
        }
        if self.frames == 0 || self.sequences == 0 {
            return Err(err("frames", "frames and sequences must be positive"));
        }
        if self.occlusion_period > 0 && self.occlusion_len >= self.occlusion_period {
            return Err(err("occlusion_len", "must be shorter than occlusion_period"));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let h = splitmix64(seed ^ (x as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (y as u64).wrapping_mul(0xc2b2ae3d27d4eb4f));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Infinite procedural value noise in [0,1] with the given lattice cell size.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let gx = (x / cell).floor();
    let gy = (y / cell).floor();
    let fx = smoothstep(x / cell - gx);
    let fy = smoothstep(y / cell - gy);
    let (gx, gy) = (gx as i64, gy as i64);
    let v00 = lattice(seed, gx, gy);
    let v01 = lattice(seed, gx + 1, gy);
    let v10 = lattice(seed, gx, gy + 1);
    let v11 = lattice(seed, gx + 1, gy + 1);
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    top + (bot - top) * fy
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Box-Muller transform; two uniform draws per sample.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub struct SynthResult {
    pub record: SequenceRecord,
    /// Logged global (x, y) camera shift per frame; frame 0 is (0, 0).
    pub camera_offsets: Vec<(i32, i32)>,
}

/// Deterministic for a given (cfg, seed) pair.
pub fn synth_sequence(cfg: &SynthConfig, seed: u64) -> Result<SynthResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.target_size;
    let (fw, fh) = (cfg.frame_w as f64, cfg.frame_h as f64);
    let margin = (cfg.camera_jitter + 2) as f64;

    let bg_seed = splitmix64(seed ^ 0x6261636b64726f70);
    let tex_seed = splitmix64(seed ^ 0x746172676574);

    // Distinct high-contrast hue for the target.
    let hue: [f64; 3] = {
        let picks = [[0.95, 0.2, 0.15], [0.15, 0.9, 0.2], [0.95, 0.85, 0.1], [0.2, 0.3, 0.95]];
        picks[rng.gen_range(0..picks.len())]
    };

    let (lo_x, hi_x) = (margin, fw - margin - s as f64);
    let (lo_y, hi_y) = (margin, fh - margin - s as f64);
    let mut tx = rng.gen_range(lo_x..=hi_x);
    let mut ty = rng.gen_range(lo_y..=hi_y);
    let (mut vx, mut vy) = match cfg.velocity {
        Some(v) => v,
        None => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            (cfg.speed * angle.cos(), cfg.speed * angle.sin())
        }
    };

    let occluded = |t: usize| {
        cfg.occlusion_period > 0
            && t % cfg.occlusion_period >= cfg.occlusion_period - cfg.occlusion_len
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut boxes = Vec::with_capacity(cfg.frames);
    let mut camera_offsets = Vec::with_capacity(cfg.frames);

    for t in 0..cfg.frames {
        if t > 0 {
            tx += vx;
            ty += vy;
            if tx < lo_x || tx > hi_x {
                tx = tx.clamp(lo_x, hi_x);
                vx = -vx;
            }
            if ty < lo_y || ty > hi_y {
                ty = ty.clamp(lo_y, hi_y);
                vy = -vy;
            }
        }
        // Fixed draw order per frame: camera x, camera y, wobble x, wobble y.
        let j = cfg.camera_jitter as i32;
        let cam = if t == 0 {
            let _ = (rng.gen_range(-j..=j), rng.gen_range(-j..=j));
            (0, 0)
        } else {
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        };
        let wob_x = gaussian(&mut rng) * cfg.pos_jitter;
        let wob_y = gaussian(&mut rng) * cfg.pos_jitter;

        // Rasterized target position in world coordinates.
        let rx = (tx + wob_x).round() as i64;
        let ry = (ty + wob_y).round() as i64;
        let hidden = occluded(t);

        let frame = RgbImage::from_fn(cfg.frame_w as u32, cfg.frame_h as u32, |x, y| {
            let wx = x as i64 + cam.0 as i64;
            let wy = y as i64 + cam.1 as i64;
            let on_target =
                !hidden && wx >= rx && wx < rx + s as i64 && wy >= ry && wy < ry + s as i64;
            let px = if on_target {
                let (ux, uy) = ((wx - rx) as f64, (wy - ry) as f64);
                let n = value_noise(tex_seed, ux, uy, 3.0);
                [
                    quantize(hue[0] * (0.55 + 0.45 * n)),
                    quantize(hue[1] * (0.55 + 0.45 * n)),
                    quantize(hue[2] * (0.55 + 0.45 * n)),
                ]
            } else {
                let coarse = value_noise(bg_seed, wx as f64, wy as f64, 11.0);
                let fine = value_noise(bg_seed ^ 0xff, wx as f64, wy as f64, 4.0);
                let l = 0.30 + 0.35 * coarse + 0.12 * fine;
                [
                    quantize(l + 0.05 * (value_noise(bg_seed ^ 1, wx as f64, wy as f64, 9.0) - 0.5)),
                    quantize(l + 0.05 * (value_noise(bg_seed ^ 2, wx as f64, wy as f64, 9.0) - 0.5)),
                    quantize(l + 0.05 * (value_noise(bg_seed ^ 3, wx as f64, wy as f64, 9.0) - 0.5)),
                ]
            };
            Rgb(px)
        });

        frames.push(frame);
        boxes.push(BBox::new(
            (rx - cam.0 as i64) as f64,
            (ry - cam.1 as i64) as f64,
            s as f64,
            s as f64,
        ));
        camera_offsets.push(cam);
    }

    let record = SequenceRecord::from_memory(format!("synth{seed:05}"), frames, boxes)?;
    Ok(SynthResult { record, camera_offsets })
}

/// One sequence per seed base_seed + i.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SequenceRecord>> {
    (0..cfg.sequences)
        .map(|i| synth_sequence(cfg, cfg.base_seed + i as u64).map(|r| r.record))
        .collect()
}
