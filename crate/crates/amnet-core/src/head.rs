//! Fusion head: joins the two stream outputs into the final response map,
//! builds Gaussian ground-truth maps, and defines the training loss.

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Dims, Scalar, Tensor};

pub struct HeadNodes {
    fuse_w: NodeId,
    fuse_b: NodeId,
}

pub fn params_on_tape<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<HeadNodes> {
    Ok(HeadNodes {
        fuse_w: tape.param("head.fuse.weight", store.value("head.fuse.weight")?.clone())?,
        fuse_b: tape.param("head.fuse.bias", store.value("head.fuse.bias")?.clone())?,
    })
}

/// Resizes the appearance map up to the motion map's size, stacks the two
/// single-channel maps, applies the 1×1 fusion conv and squashes with a
/// sigmoid. Output values are strictly inside (0, 1).
pub fn fuse<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &HeadNodes,
    o_a: NodeId,
    o_m: NodeId,
) -> Result<NodeId> {
    let md = tape.value(o_m).dims();
    let o_a_r = tape.bilinear_resize(o_a, md.h, md.w)?;
    let stacked = tape.concat_depth(&[o_a_r, o_m])?;
    let fused = tape.conv2d(stacked, nodes.fuse_w, Some(nodes.fuse_b), ConvSpec::new(2, 1, 1))?;
    Ok(tape.sigmoid(fused))
}

#[derive(Debug, Clone)]
pub struct GtMap<T: Scalar> {
    pub map: Tensor<T>,
    /// (row, col) of the peak in response-map pixels.
    pub peak: (f64, f64),
    pub sigma: f64,
}

/// Isotropic Gaussian with value 1 at the peak:
/// value(r,c) = exp(−((r−pr)² + (c−pc)²)/(2σ²)).
pub fn gaussian_gt<T: Scalar>(peak_rc: (f64, f64), sigma: f64, size: usize) -> Result<GtMap<T>> {
    let (pr, pc) = peak_rc;
    let hi = size as f64;
    if !(0.0..hi).contains(&pr) || !(0.0..hi).contains(&pc) {
        return Err(Error::InvalidArgument(format!(
            "gaussian peak ({pr}, {pc}) outside the {size}×{size} map"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("gaussian sigma {sigma} must be positive")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut map = Tensor::zeros(Dims::new(1, 1, size, size));
    for r in 0..size {
        let dr = r as f64 - pr;
        for c in 0..size {
            let dc = c as f64 - pc;
            map.set(0, 0, r, c, T::from_f64((-(dr * dr + dc * dc) * inv).exp()));
        }
    }
    Ok(GtMap { map, peak: peak_rc, sigma })
}

/// Mean over all elements of the squared difference. The regularization term
/// that usually rides along is handled by the optimizer's weight decay, not
/// here.
pub fn ridge_loss<T: Scalar>(tape: &mut Tape<T>, o_am: NodeId, gt: NodeId) -> Result<NodeId> {
    let d = tape.sub(o_am, gt)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

pub fn param_dims() -> Vec<(String, Dims)> {
    vec![
        ("head.fuse.weight".into(), Dims::new(1, 2, 1, 1)),
        ("head.fuse.bias".into(), Dims::new(1, 1, 1, 1)),
    ]
}
