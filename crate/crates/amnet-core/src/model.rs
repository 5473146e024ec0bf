//! Whole-model assembly: configuration, parameter table, initialization,
//! forward graphs for inference and training, and the motion ablation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{self, GtMap};
use crate::params::{xavier_with_rng, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Dims, Scalar, Tensor};
use crate::{anet, mnet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionInput {
    Rgb,
    Luminance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub template_size: usize,
    pub roi_size: usize,
    pub spotlight_kernels: Vec<usize>,
    pub contrast_kernels: Vec<usize>,
    pub pool_kernels: Vec<usize>,
    pub gt_sigma_factor: f64,
    pub motion_input: MotionInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            template_size: 64,
            roi_size: 192,
            spotlight_kernels: vec![3, 5, 7],
            contrast_kernels: vec![7, 5, 3],
            pool_kernels: vec![3, 5, 7],
            gt_sigma_factor: 0.1,
            motion_input: MotionInput::Rgb,
        }
    }
}

fn cfg_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: format!("model.{field}"), reason: reason.into() }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.template_size < 16 {
            return Err(cfg_err("template_size", "must be at least 16"));
        }
        if self.roi_size < self.template_size {
            return Err(cfg_err("roi_size", "must be at least template_size"));
        }
        if self.roi_size % 8 != 0 {
            return Err(cfg_err(
                "roi_size",
                "must be divisible by 8 (three halving pool stages)",
            ));
        }
        for (field, list) in [
            ("spotlight_kernels", &self.spotlight_kernels),
            ("contrast_kernels", &self.contrast_kernels),
            ("pool_kernels", &self.pool_kernels),
        ] {
            if list.is_empty() {
                return Err(cfg_err(field, "must not be empty"));
            }
            if let Some(k) = list.iter().find(|&&k| k % 2 == 0 || k == 0) {
                return Err(cfg_err(field, format!("kernel {k} is not an odd positive integer")));
            }
        }
        if self.pool_kernels.len() != 3 {
            return Err(cfg_err("pool_kernels", "exactly three cascade stages expected"));
        }
        if !(self.gt_sigma_factor > 0.0) {
            return Err(cfg_err("gt_sigma_factor", "must be positive"));
        }
        Ok(())
    }
}

/// Node handles of one full forward pass.
pub struct ForwardNodes {
    pub o_a: NodeId,
    pub o_m: NodeId,
    pub o_am: NodeId,
}

#[derive(Debug, Clone)]
pub struct AmNet {
    cfg: ModelConfig,
}

impl AmNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        // Structural shape checks: every conv layer preserves its input size
        // and uses stride 1; the pool cascade divides by exactly 8.
        for i in 0..anet::LAYERS.len() {
            let spec = anet::layer_spec(i);
            assert_eq!(spec.stride, (1, 1));
            for s in [cfg.template_size, cfg.roi_size] {
                assert_eq!(spec.output_hw(s, s).unwrap(), (s, s));
            }
        }
        let mut side = cfg.roi_size;
        for &k in &cfg.pool_kernels {
            side = crate::ops::PoolSpec::halving(k).output_hw(side, side).unwrap().0;
        }
        assert_eq!(side, cfg.roi_size / 8);
        Ok(AmNet { cfg })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Side of O_AM (and O_M): the ROI size.
    pub fn response_size(&self) -> usize {
        self.cfg.roi_size
    }

    /// Side of the native appearance score map (valid correlation).
    pub fn score_size(&self) -> usize {
        self.cfg.roi_size - self.cfg.template_size + 1
    }

    /// Full parameter table in canonical (checkpoint) order.
    pub fn param_dims(&self) -> Vec<(String, Dims)> {
        let mut out = anet::param_dims();
        out.extend(mnet::param_dims(&self.cfg));
        out.extend(head::param_dims());
        out
    }

    /// Xavier-initialized weights and zero biases, drawn in table order from
    /// one seeded stream. The three 1×1 fusion convs instead start as equal
    /// positive averaging weights: a random sign there would feed a score map
    /// into the response inverted, and under a short training budget the
    /// optimizer cannot cross back through zero.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, dims) in self.param_dims() {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(dims)
            } else if name.ends_with(".fuse.weight") {
                Tensor::filled(dims, T::from_f64(1.0 / dims.c as f64))
            } else {
                xavier_with_rng(dims, &mut rng)
            };
            store.insert(name, value).expect("unique parameter names");
        }
        store
    }

    /// Checks a parameter store against the architecture, naming the first
    /// mismatch.
    pub fn validate_store<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        let table = self.param_dims();
        for (name, dims) in &table {
            match store.get(name) {
                None => {
                    return Err(Error::CheckpointArch {
                        name: name.clone(),
                        expected: dims.to_string(),
                        found: "missing".into(),
                    })
                }
                Some(e) if e.value.dims() != *dims => {
                    return Err(Error::CheckpointArch {
                        name: name.clone(),
                        expected: dims.to_string(),
                        found: e.value.dims().to_string(),
                    })
                }
                _ => {}
            }
        }
        if store.len() != table.len() {
            let known: Vec<&str> = table.iter().map(|(n, _)| n.as_str()).collect();
            let extra = store
                .names()
                .find(|n| !known.contains(n))
                .unwrap_or("?")
                .to_string();
            return Err(Error::CheckpointArch {
                name: extra,
                expected: "no such parameter".into(),
                found: "present".into(),
            });
        }
        Ok(())
    }

    fn check_patch<T: Scalar>(&self, what: &'static str, t: &Tensor<T>, side: usize) -> Result<()> {
        let d = t.dims();
        if d != Dims::new(1, 3, side, side) {
            return Err(Error::ShapeMismatch {
                op: what,
                lhs: Dims::new(1, 3, side, side).to_string(),
                rhs: d.to_string(),
            });
        }
        Ok(())
    }

    /// Records the full two-stream forward pass on `tape`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        roi_t: &Tensor<T>,
        roi_prev: &Tensor<T>,
        tmpl: &Tensor<T>,
    ) -> Result<ForwardNodes> {
        self.check_patch("forward roi_t", roi_t, self.cfg.roi_size)?;
        self.check_patch("forward roi_prev", roi_prev, self.cfg.roi_size)?;
        self.check_patch("forward template", tmpl, self.cfg.template_size)?;

        let a_nodes = anet::params_on_tape(tape, store)?;
        let m_nodes = mnet::params_on_tape(tape, store, &self.cfg)?;
        let h_nodes = head::params_on_tape(tape, store)?;

        let roi_t = tape.leaf(roi_t.clone());
        let roi_prev = tape.leaf(roi_prev.clone());
        let tmpl = tape.leaf(tmpl.clone());

        let o_a = anet::forward(tape, &a_nodes, roi_t, tmpl)?;
        let o_m = mnet::forward(tape, &m_nodes, &self.cfg, roi_t, roi_prev)?;
        let o_am = head::fuse(tape, &h_nodes, o_a, o_m)?;
        Ok(ForwardNodes { o_a, o_m, o_am })
    }

    /// One inference pass; returns the O_AM response map value.
    pub fn response<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        roi_t: &Tensor<T>,
        roi_prev: &Tensor<T>,
        tmpl: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let nodes = self.forward(&mut tape, store, roi_t, roi_prev, tmpl)?;
        Ok(tape.value(nodes.o_am).clone())
    }

    /// Forward plus ridge loss against a Gaussian ground-truth map. Returns
    /// the loss node and the forward handles.
    pub fn training_graph<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        roi_t: &Tensor<T>,
        roi_prev: &Tensor<T>,
        tmpl: &Tensor<T>,
        gt: &GtMap<T>,
    ) -> Result<(NodeId, ForwardNodes)> {
        let nodes = self.forward(tape, store, roi_t, roi_prev, tmpl)?;
        let gt_leaf = tape.leaf(gt.map.clone());
        let loss = head::ridge_loss(tape, nodes.o_am, gt_leaf)?;
        Ok((loss, nodes))
    }

    /// Ground-truth sigma for a target box of (w, h) response-map pixels.
    pub fn gt_sigma(&self, w: f64, h: f64) -> f64 {
        self.cfg.gt_sigma_factor * (w * h).sqrt()
    }

    /// Zeroes the motion channel of the head fusion conv in place, turning
    /// the model into its appearance-only variant at inference time.
    pub fn ablate_motion<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let w = store.value_mut("head.fuse.weight")?;
        w.set(0, 1, 0, 0, T::ZERO);
        Ok(())
    }
}
