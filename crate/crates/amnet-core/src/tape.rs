//! Tape-based reverse-mode differentiation over the fixed op vocabulary.
//!
//! Ops evaluate eagerly as they are recorded, so a tape doubles as the
//! forward pass; `backward` then walks the nodes in reverse and accumulates
//! f64 gradients for every named parameter node.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec, PoolSpec};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum OpKind {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, spec: ConvSpec },
    AvgPool { input: NodeId, spec: PoolSpec },
    MaxPool { input: NodeId, spec: PoolSpec },
    Relu { input: NodeId },
    Sigmoid { input: NodeId },
    ConcatDepth { inputs: Vec<NodeId> },
    Sub { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    SubBcast { a: NodeId, s: NodeId },
    DivBcast { a: NodeId, s: NodeId },
    Sqrt { input: NodeId },
    Scale { input: NodeId, factor: f64 },
    BilinearResize { input: NodeId },
    Xcorr { roi: NodeId, tmpl: NodeId },
    Mean { input: NodeId },
    Sum { input: NodeId },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: OpKind,
    param: Option<String>,
    needs_grad: bool,
}

/// Per-parameter gradients from one backward pass, keyed by parameter name.
#[derive(Debug, Default)]
pub struct Gradients {
    map: IndexMap<String, Tensor<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: OpKind, param: Option<String>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, param, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, OpKind::Leaf, None, false)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<NodeId> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.param.as_deref() == Some(&name)) {
            return Err(Error::Autodiff(format!("duplicate parameter '{name}' on one tape")));
        }
        Ok(self.push(value, OpKind::Leaf, Some(name), true))
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let b_slice = bias.map(|b| self.nodes[b.0].value.data().to_vec());
        let value = ops::conv2d(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            b_slice.as_deref(),
            &spec,
        )?;
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(value, OpKind::Conv2d { input, weight, bias, spec }, None, needs))
    }

    pub fn avg_pool(&mut self, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let value = ops::avg_pool2d(&self.nodes[input.0].value, &spec)?;
        let needs = self.needs(input);
        Ok(self.push(value, OpKind::AvgPool { input, spec }, None, needs))
    }

    pub fn max_pool(&mut self, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let value = ops::max_pool2d(&self.nodes[input.0].value, &spec)?;
        let needs = self.needs(input);
        Ok(self.push(value, OpKind::MaxPool { input, spec }, None, needs))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = ops::relu(&self.nodes[input.0].value);
        let needs = self.needs(input);
        self.push(value, OpKind::Relu { input }, None, needs)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = ops::sigmoid(&self.nodes[input.0].value);
        let needs = self.needs(input);
        self.push(value, OpKind::Sigmoid { input }, None, needs)
    }

    pub fn concat_depth(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = ops::concat_depth(&tensors)?;
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(value, OpKind::ConcatDepth { inputs: inputs.to_vec() }, None, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::subtract(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, OpKind::Sub { a, b }, None, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, OpKind::Add { a, b }, None, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::mul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, OpKind::Mul { a, b }, None, needs))
    }

    /// Subtracts the single-element node `s` from every element of `a`.
    pub fn sub_bcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let value = ops::sub_bcast(&self.nodes[a.0].value, &self.nodes[s.0].value)?;
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, OpKind::SubBcast { a, s }, None, needs))
    }

    /// Divides every element of `a` by the single-element node `s`.
    pub fn div_bcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let value = ops::div_bcast(&self.nodes[a.0].value, &self.nodes[s.0].value)?;
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, OpKind::DivBcast { a, s }, None, needs))
    }

    pub fn sqrt(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::sqrt_elem(&self.nodes[input.0].value)?;
        let needs = self.needs(input);
        Ok(self.push(value, OpKind::Sqrt { input }, None, needs))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = ops::scale(&self.nodes[input.0].value, factor);
        let needs = self.needs(input);
        self.push(value, OpKind::Scale { input, factor }, None, needs)
    }

    pub fn bilinear_resize(&mut self, input: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let value = ops::bilinear_resize(&self.nodes[input.0].value, out_h, out_w)?;
        let needs = self.needs(input);
        Ok(self.push(value, OpKind::BilinearResize { input }, None, needs))
    }

    pub fn xcorr(&mut self, roi: NodeId, tmpl: NodeId) -> Result<NodeId> {
        let value = ops::xcorr(&self.nodes[roi.0].value, &self.nodes[tmpl.0].value)?;
        let needs = self.needs(roi) || self.needs(tmpl);
        Ok(self.push(value, OpKind::Xcorr { roi, tmpl }, None, needs))
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let value = ops::mean_all(&self.nodes[input.0].value);
        let needs = self.needs(input);
        self.push(value, OpKind::Mean { input }, None, needs)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let value = ops::sum_all(&self.nodes[input.0].value);
        let needs = self.needs(input);
        self.push(value, OpKind::Sum { input }, None, needs)
    }

    /// Reverse sweep from a scalar loss node. Returns ∂loss/∂param for every
    /// parameter reachable from the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Autodiff("backward on an empty tape".into()));
        }
        let ld = self.nodes[loss.0].value.dims();
        if ld.count() != 1 {
            return Err(Error::Autodiff(format!("loss must be scalar, got {ld}")));
        }

        let mut grads: Vec<Option<Tensor<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(ld, 1.0));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            let node = &self.nodes[i];
            match &node.op {
                OpKind::Leaf => {
                    grads[i] = Some(g); // keep for parameter collection
                    continue;
                }
                OpKind::Conv2d { input, weight, bias, spec } => {
                    let want_in = self.needs(*input);
                    let want_w = self.needs(*weight);
                    let want_b = bias.map(|b| self.needs(b)).unwrap_or(false);
                    let mut gi = want_in.then(|| self.grad_slot(&mut grads, *input));
                    let mut gw = want_w.then(|| self.grad_slot(&mut grads, *weight));
                    let mut gb_t = want_b.then(|| self.grad_slot(&mut grads, bias.unwrap()));
                    ops::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        spec,
                        &g,
                        gi.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb_t.as_deref_mut().map(|t| t.data_mut()),
                    );
                    self.store_back(&mut grads, *input, gi);
                    self.store_back(&mut grads, *weight, gw);
                    if let Some(b) = bias {
                        self.store_back(&mut grads, *b, gb_t);
                    }
                }
                OpKind::AvgPool { input, spec } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        ops::avg_pool2d_backward(self.nodes[input.0].value.dims(), spec, &g, &mut gi);
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::MaxPool { input, spec } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        ops::max_pool2d_backward(&self.nodes[input.0].value, spec, &g, &mut gi);
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::Relu { input } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        ops::relu_backward(&self.nodes[input.0].value, &g, &mut gi);
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::Sigmoid { input } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        ops::sigmoid_backward(&node.value, &g, &mut gi);
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::ConcatDepth { inputs } => {
                    let mut c0 = 0;
                    for &inp in inputs {
                        let d = self.nodes[inp.0].value.dims();
                        if self.needs(inp) {
                            let mut gi = self.grad_slot(&mut grads, inp);
                            for n in 0..d.n {
                                for c in 0..d.c {
                                    let src = g.plane(n, c0 + c);
                                    for (dst, &s) in gi.plane_mut(n, c).iter_mut().zip(src) {
                                        *dst += s;
                                    }
                                }
                            }
                            self.store_back(&mut grads, inp, Some(gi));
                        }
                        c0 += d.c;
                    }
                }
                OpKind::Sub { a, b } => {
                    if self.needs(*a) {
                        let mut ga = self.grad_slot(&mut grads, *a);
                        for (x, &s) in ga.data_mut().iter_mut().zip(g.data()) {
                            *x += s;
                        }
                        self.store_back(&mut grads, *a, Some(ga));
                    }
                    if self.needs(*b) {
                        let mut gb = self.grad_slot(&mut grads, *b);
                        for (x, &s) in gb.data_mut().iter_mut().zip(g.data()) {
                            *x -= s;
                        }
                        self.store_back(&mut grads, *b, Some(gb));
                    }
                }
                OpKind::Add { a, b } => {
                    for &side in [a, b].into_iter() {
                        if self.needs(side) {
                            let mut gs = self.grad_slot(&mut grads, side);
                            for (x, &s) in gs.data_mut().iter_mut().zip(g.data()) {
                                *x += s;
                            }
                            self.store_back(&mut grads, side, Some(gs));
                        }
                    }
                }
                OpKind::Mul { a, b } => {
                    if self.needs(*a) {
                        let mut ga = self.grad_slot(&mut grads, *a);
                        for ((x, &s), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(self.nodes[b.0].value.data()) {
                            *x += s * bv.to_f64();
                        }
                        self.store_back(&mut grads, *a, Some(ga));
                    }
                    if self.needs(*b) {
                        let mut gb = self.grad_slot(&mut grads, *b);
                        for ((x, &s), av) in gb.data_mut().iter_mut().zip(g.data()).zip(self.nodes[a.0].value.data()) {
                            *x += s * av.to_f64();
                        }
                        self.store_back(&mut grads, *b, Some(gb));
                    }
                }
                OpKind::SubBcast { a, s } => {
                    if self.needs(*a) {
                        let mut ga = self.grad_slot(&mut grads, *a);
                        for (x, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                            *x += gv;
                        }
                        self.store_back(&mut grads, *a, Some(ga));
                    }
                    if self.needs(*s) {
                        let mut gs = self.grad_slot(&mut grads, *s);
                        gs.data_mut()[0] -= g.data().iter().sum::<f64>();
                        self.store_back(&mut grads, *s, Some(gs));
                    }
                }
                OpKind::DivBcast { a, s } => {
                    let sv = self.nodes[s.0].value.data()[0].to_f64();
                    if self.needs(*a) {
                        let mut ga = self.grad_slot(&mut grads, *a);
                        for (x, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                            *x += gv / sv;
                        }
                        self.store_back(&mut grads, *a, Some(ga));
                    }
                    if self.needs(*s) {
                        let dot: f64 = g
                            .data()
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(&gv, av)| gv * av.to_f64())
                            .sum();
                        let mut gs = self.grad_slot(&mut grads, *s);
                        gs.data_mut()[0] -= dot / (sv * sv);
                        self.store_back(&mut grads, *s, Some(gs));
                    }
                }
                OpKind::Sqrt { input } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        for ((x, &gv), ov) in
                            gi.data_mut().iter_mut().zip(g.data()).zip(node.value.data())
                        {
                            *x += gv * 0.5 / ov.to_f64();
                        }
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::Scale { input, factor } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        for (x, &s) in gi.data_mut().iter_mut().zip(g.data()) {
                            *x += s * factor;
                        }
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::BilinearResize { input } => {
                    if self.needs(*input) {
                        let mut gi = self.grad_slot(&mut grads, *input);
                        ops::bilinear_resize_backward(self.nodes[input.0].value.dims(), &g, &mut gi);
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::Xcorr { roi, tmpl } => {
                    let want_r = self.needs(*roi);
                    let want_t = self.needs(*tmpl);
                    let mut gr = want_r.then(|| self.grad_slot(&mut grads, *roi));
                    let mut gt = want_t.then(|| self.grad_slot(&mut grads, *tmpl));
                    ops::xcorr_backward(
                        &self.nodes[roi.0].value,
                        &self.nodes[tmpl.0].value,
                        &g,
                        gr.as_deref_mut(),
                        gt.as_deref_mut(),
                    );
                    self.store_back(&mut grads, *roi, gr);
                    self.store_back(&mut grads, *tmpl, gt);
                }
                OpKind::Mean { input } => {
                    if self.needs(*input) {
                        let d = self.nodes[input.0].value.dims();
                        let s = g.data()[0] / d.count() as f64;
                        let mut gi = self.grad_slot(&mut grads, *input);
                        for x in gi.data_mut() {
                            *x += s;
                        }
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
                OpKind::Sum { input } => {
                    if self.needs(*input) {
                        let s = g.data()[0];
                        let mut gi = self.grad_slot(&mut grads, *input);
                        for x in gi.data_mut() {
                            *x += s;
                        }
                        self.store_back(&mut grads, *input, Some(gi));
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                if let Some(g) = grads[i].take() {
                    out.map.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    /// Takes the (possibly missing) gradient buffer for a node, zeroed if new.
    fn grad_slot(&self, grads: &mut [Option<Tensor<f64>>], id: NodeId) -> Box<Tensor<f64>> {
        Box::new(
            grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.dims())),
        )
    }

    fn store_back(&self, grads: &mut [Option<Tensor<f64>>], id: NodeId, g: Option<Box<Tensor<f64>>>) {
        if let Some(g) = g {
            grads[id.0] = Some(*g);
        }
    }
}
