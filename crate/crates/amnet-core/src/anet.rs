//! Appearance stream: a Siamese dilated-conv embedding with lateral feature
//! concatenation, per-level cross-correlation and a 1×1 level fusion.

use crate::error::Result;
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Dims, Scalar, Tensor};

/// (name, in_ch, out_ch, kernel, dilation) for the six embedding layers.
/// Dilation rates follow the hybrid 1,2,3 pattern twice; padding keeps the
/// spatial size, so the only geometry change in this stream is the xcorr.
pub const LAYERS: [(&str, usize, usize, usize, usize); 6] = [
    ("conv1", 3, 6, 5, 1),
    ("conv2", 6, 12, 3, 2),
    ("conv3", 12, 24, 3, 3),
    ("conv4", 24, 36, 5, 1),
    ("conv5", 36, 48, 3, 2),
    ("conv6", 48, 64, 3, 3),
];

/// Lateral pairing (shallow, deep) of layer outputs, 0-based; channel sums
/// come out as 42, 60 and 88.
pub const LATERAL: [(usize, usize); 3] = [(0, 3), (1, 4), (2, 5)];

pub const LEVEL_CHANNELS: [usize; 3] = [42, 60, 88];

pub fn layer_spec(i: usize) -> ConvSpec {
    let (_, ci, co, k, d) = LAYERS[i];
    ConvSpec::same(ci, co, k, d)
}

/// Handles to this stream's parameter nodes on one tape.
pub struct AnetNodes {
    layers: [(NodeId, NodeId); 6],
    fuse_w: NodeId,
    fuse_b: NodeId,
}

pub fn params_on_tape<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<AnetNodes> {
    let mut layers = Vec::with_capacity(6);
    for (name, ..) in LAYERS {
        let w = tape.param(
            format!("anet.{name}.weight"),
            store.value(&format!("anet.{name}.weight"))?.clone(),
        )?;
        let b = tape.param(
            format!("anet.{name}.bias"),
            store.value(&format!("anet.{name}.bias"))?.clone(),
        )?;
        layers.push((w, b));
    }
    Ok(AnetNodes {
        layers: layers.try_into().expect("six layers"),
        fuse_w: tape.param("anet.fuse.weight", store.value("anet.fuse.weight")?.clone())?,
        fuse_b: tape.param("anet.fuse.bias", store.value("anet.fuse.bias")?.clone())?,
    })
}

/// Runs the six-layer embedding and returns the three lateral levels.
/// Both Siamese branches call this with the same `AnetNodes`, so weight
/// sharing is structural.
pub fn embed<T: Scalar>(tape: &mut Tape<T>, nodes: &AnetNodes, patch: NodeId) -> Result<[NodeId; 3]> {
    let mut outs = Vec::with_capacity(6);
    let mut x = patch;
    for (i, &(w, b)) in nodes.layers.iter().enumerate() {
        let y = tape.conv2d(x, w, Some(b), layer_spec(i))?;
        x = tape.relu(y);
        outs.push(x);
    }
    let mut levels = Vec::with_capacity(3);
    for &(lo, hi) in &LATERAL {
        levels.push(tape.concat_depth(&[outs[lo], outs[hi]])?);
    }
    Ok([levels[0], levels[1], levels[2]])
}

/// Variance floor for score-map standardization. Keeps an all-equal map
/// (e.g. from a zero input) at exactly zero instead of dividing 0 by 0.
const STD_EPS: f64 = 1e-6;

/// Shifts and scales a map to zero mean and unit variance (up to the eps
/// floor). Raw correlation scores ride on a large DC pedestal and their
/// magnitude tracks the squared feature scale, which differs per level and
/// starts tiny under Xavier; standardizing makes the three levels comparable
/// and hands the 1×1 fusion an O(1) signal at any point in training.
fn standardize<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let m = tape.mean(x);
    let centered = tape.sub_bcast(x, m)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq);
    let eps = tape.leaf(Tensor::filled(Dims::new(1, 1, 1, 1), T::from_f64(STD_EPS)));
    let var_eps = tape.add(var, eps)?;
    let sd = tape.sqrt(var_eps)?;
    tape.div_bcast(centered, sd)
}

/// Full appearance forward: per-level valid cross-correlation, each score map
/// standardized so the level magnitudes are comparable before the 1×1 fusion,
/// then stacked and fused.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &AnetNodes,
    roi: NodeId,
    tmpl: NodeId,
) -> Result<NodeId> {
    let roi_pyr = embed(tape, nodes, roi)?;
    let tmpl_pyr = embed(tape, nodes, tmpl)?;
    let mut scores = Vec::with_capacity(3);
    for l in 0..3 {
        let s = tape.xcorr(roi_pyr[l], tmpl_pyr[l])?;
        scores.push(standardize(tape, s)?);
    }
    let stacked = tape.concat_depth(&scores)?;
    let spec = ConvSpec::new(3, 1, 1);
    tape.conv2d(stacked, nodes.fuse_w, Some(nodes.fuse_b), spec)
}

/// Parameter names and shapes contributed by this stream, in storage order.
pub fn param_dims() -> Vec<(String, Dims)> {
    let mut out = Vec::new();
    for (i, (name, _, co, ..)) in LAYERS.iter().enumerate() {
        out.push((format!("anet.{name}.weight"), layer_spec(i).weight_dims()));
        out.push((format!("anet.{name}.bias"), Dims::new(1, *co, 1, 1)));
    }
    out.push(("anet.fuse.weight".into(), Dims::new(1, 3, 1, 1)));
    out.push(("anet.fuse.bias".into(), Dims::new(1, 1, 1, 1)));
    out
}
