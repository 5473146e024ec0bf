//! Motion stream: learned contrast maps, spotlight-filtered frame
//! differencing, and the pooling-based suppression/enhancement difference.

use crate::error::Result;
use crate::model::{ModelConfig, MotionInput};
use crate::ops::{ConvSpec, PoolSpec};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Dims, Scalar, Tensor};

pub struct MnetNodes {
    contrast: Vec<(NodeId, NodeId)>,
    /// Spotlight branch kernels carry no bias: a zero difference map must
    /// stay exactly zero through them.
    spot: Vec<NodeId>,
    fuse_w: NodeId,
    fuse_b: NodeId,
    luma_w: Option<NodeId>,
}

fn contrast_spec(k: usize) -> ConvSpec {
    ConvSpec::same(3, 3, k, 1)
}

fn spot_spec(k: usize) -> ConvSpec {
    ConvSpec::same(3, 1, k, 1)
}

pub fn params_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
) -> Result<MnetNodes> {
    let mut contrast = Vec::new();
    for i in 1..=cfg.contrast_kernels.len() {
        let w = tape.param(
            format!("mnet.contrast{i}.weight"),
            store.value(&format!("mnet.contrast{i}.weight"))?.clone(),
        )?;
        let b = tape.param(
            format!("mnet.contrast{i}.bias"),
            store.value(&format!("mnet.contrast{i}.bias"))?.clone(),
        )?;
        contrast.push((w, b));
    }
    let mut spot = Vec::new();
    for &k in &cfg.spotlight_kernels {
        spot.push(tape.param(
            format!("mnet.spot{k}.weight"),
            store.value(&format!("mnet.spot{k}.weight"))?.clone(),
        )?);
    }
    let luma_w = match cfg.motion_input {
        MotionInput::Rgb => None,
        MotionInput::Luminance => {
            // Fixed (untrained) 1×1 conv replacing each channel with BT.601 luma.
            let mut w = Tensor::zeros(Dims::new(3, 3, 1, 1));
            for o in 0..3 {
                for (c, coef) in [0.299, 0.587, 0.114].iter().enumerate() {
                    w.set(o, c, 0, 0, T::from_f64(*coef));
                }
            }
            Some(tape.leaf(w))
        }
    };
    Ok(MnetNodes {
        contrast,
        spot,
        fuse_w: tape.param("mnet.fuse.weight", store.value("mnet.fuse.weight")?.clone())?,
        fuse_b: tape.param("mnet.fuse.bias", store.value("mnet.fuse.bias")?.clone())?,
        luma_w,
    })
}

/// Cascade of size-preserving convs with ReLU; 3-in/3-out at every stage.
pub fn contrast<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &MnetNodes,
    cfg: &ModelConfig,
    patch: NodeId,
) -> Result<NodeId> {
    let mut x = patch;
    if let Some(lw) = nodes.luma_w {
        x = tape.conv2d(x, lw, None, ConvSpec::new(3, 3, 1))?;
    }
    for (i, &k) in cfg.contrast_kernels.iter().enumerate() {
        let (w, b) = nodes.contrast[i];
        let y = tape.conv2d(x, w, Some(b), contrast_spec(k))?;
        x = tape.relu(y);
    }
    Ok(x)
}

/// Element-wise difference of the two contrast maps, three parallel window
/// sums at different scales, then a 1×1 fusion down to one channel.
pub fn spotlight<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &MnetNodes,
    cfg: &ModelConfig,
    zc_t: NodeId,
    zc_prev: NodeId,
) -> Result<NodeId> {
    let d = tape.sub(zc_t, zc_prev)?;
    let mut branches = Vec::with_capacity(nodes.spot.len());
    for (i, &k) in cfg.spotlight_kernels.iter().enumerate() {
        branches.push(tape.conv2d(d, nodes.spot[i], None, spot_spec(k))?);
    }
    let stacked = tape.concat_depth(&branches)?;
    let spec = ConvSpec::new(branches.len(), 1, 1);
    tape.conv2d(stacked, nodes.fuse_w, Some(nodes.fuse_b), spec)
}

/// Parameter-free suppression/enhancement: a max-pool cascade minus an
/// avg-pool cascade (kernels from config, each stride 2), resized back up.
pub fn bsfe<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, o_sf: NodeId) -> Result<NodeId> {
    let (h, w) = {
        let d = tape.value(o_sf).dims();
        (d.h, d.w)
    };
    let mut avg = o_sf;
    let mut max = o_sf;
    for &k in &cfg.pool_kernels {
        let spec = PoolSpec::halving(k);
        avg = tape.avg_pool(avg, spec)?;
        max = tape.max_pool(max, spec)?;
    }
    let diff = tape.sub(max, avg)?;
    tape.bilinear_resize(diff, h, w)
}

pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &MnetNodes,
    cfg: &ModelConfig,
    roi_t: NodeId,
    roi_prev: NodeId,
) -> Result<NodeId> {
    let zc_t = contrast(tape, nodes, cfg, roi_t)?;
    let zc_prev = contrast(tape, nodes, cfg, roi_prev)?;
    let o_sf = spotlight(tape, nodes, cfg, zc_t, zc_prev)?;
    bsfe(tape, cfg, o_sf)
}

pub fn param_dims(cfg: &ModelConfig) -> Vec<(String, Dims)> {
    let mut out = Vec::new();
    for (i, &k) in cfg.contrast_kernels.iter().enumerate() {
        out.push((format!("mnet.contrast{}.weight", i + 1), contrast_spec(k).weight_dims()));
        out.push((format!("mnet.contrast{}.bias", i + 1), Dims::new(1, 3, 1, 1)));
    }
    for &k in &cfg.spotlight_kernels {
        out.push((format!("mnet.spot{k}.weight"), spot_spec(k).weight_dims()));
    }
    out.push(("mnet.fuse.weight".into(), Dims::new(1, cfg.spotlight_kernels.len(), 1, 1)));
    out.push(("mnet.fuse.bias".into(), Dims::new(1, 1, 1, 1)));
    out
}
