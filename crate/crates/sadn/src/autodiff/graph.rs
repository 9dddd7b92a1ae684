//! Define-by-run reverse-mode differentiation over rank-4 tensors.
//!
//! A [`Graph`] is an append-only arena: every operator call evaluates its
//! result immediately and records a node, so node ids are already in
//! topological order. [`Graph::backward`] walks the arena in reverse and
//! accumulates cotangents into each differentiable node; calling it twice
//! accumulates twice, use [`Graph::zero_grads`] between steps.

use crate::autodiff::conv::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_weight, conv2d_forward,
    conv2d_transposed_forward, ConvSpec,
};
use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Numerically stable logistic sigmoid.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that a logistic variable with location `mu` and scale
/// `exp(log_s)` rounds to the integer-width bin centred on `v`, floored
/// at `floor` so codelengths stay finite.
pub fn bin_prob(v: f64, mu: f64, log_s: f64, floor: f64) -> f64 {
    let inv_s = (-log_s).exp();
    let p = logistic((v - mu + 0.5) * inv_s) - logistic((v - mu - 0.5) * inv_s);
    p.max(floor)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// inputs: x, w, optional bias
    Conv2d(ConvSpec),
    /// inputs: x, w, optional bias
    ConvT2d(ConvSpec),
    /// nearest-neighbour replication by an integer factor
    Upsample(usize),
    /// channel-axis concatenation of all inputs
    Concat,
    LeakyRelu(f64),
    Add,
    Sub,
    Mul,
    Scale(f64),
    Square,
    /// reduce to a scalar
    Sum,
    /// reduce to a scalar
    Mean,
    /// elementwise -log2(x)
    NegLog2,
    /// inputs: values, mu, log_s; per-element bin probability
    Likelihood { floor: f64 },
    /// round half away from zero; gradient is zero almost everywhere
    Round,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Computation arena. Build values through the operator methods, then call
/// [`Graph::backward`] on a scalar node.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, vec![], value, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient, `None` until `backward` has reached the node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, inputs, value, grad: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Index(format!("node {} not in this graph", id.0)));
        }
        Ok(())
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- operators ------------------------------------------------------

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let value = conv2d_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.requires(&inputs);
        Ok(self.push(Op::Conv2d(spec), inputs, value, rg))
    }

    pub fn conv2d_transposed(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let value = conv2d_transposed_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let rg = self.requires(&inputs);
        Ok(self.push(Op::ConvT2d(spec), inputs, value, rg))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        self.check(x)?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let [n, c, h, w] = self.value(x).shape();
        let mut out = Tensor::zeros([n, c, h * factor, w * factor]);
        for bn in 0..n {
            for ch in 0..c {
                for i in 0..h * factor {
                    let src = self.value(x).row(bn, ch, i / factor);
                    let dst = out.row_mut(bn, ch, i);
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = src[j / factor];
                    }
                }
            }
        }
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Upsample(factor), vec![x], out, rg))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Config("concat needs at least one input".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let [n, _, h, w] = self.value(parts[0]).shape();
        let mut c_total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).shape();
            if pn != n || ph != h || pw != w {
                return Err(Error::Shape(format!(
                    "concat input {:?} incompatible with {:?}",
                    self.value(p).shape(),
                    self.value(parts[0]).shape()
                )));
            }
            c_total += pc;
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for bn in 0..n {
            let mut c_off = 0;
            for &p in parts {
                let pc = self.value(p).shape()[1];
                for ch in 0..pc {
                    for i in 0..h {
                        out.row_mut(bn, c_off + ch, i)
                            .copy_from_slice(self.value(p).row(bn, ch, i));
                    }
                }
                c_off += pc;
            }
        }
        let rg = self.requires(parts);
        Ok(self.push(Op::Concat, parts.to_vec(), out, rg))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.requires(&[x]);
        Ok(self.push(Op::LeakyRelu(slope), vec![x], value, rg))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let value = match op {
            Op::Add => ta.zip_map(tb, |x, y| x + y)?,
            Op::Sub => ta.zip_map(tb, |x, y| x - y)?,
            Op::Mul => ta.zip_map(tb, |x, y| x * y)?,
            _ => unreachable!(),
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(op, vec![a, b], value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| c * v);
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Scale(c), vec![x], value, rg))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| v * v);
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Square, vec![x], value, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Sum, vec![x], value, rg))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let n = self.value(x).numel() as f64;
        let value = Tensor::scalar(self.value(x).sum() / n);
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Mean, vec![x], value, rg))
    }

    pub fn neg_log2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("neg_log2 needs strictly positive input".into()));
        }
        let value = self.value(x).map(|v| -v.log2());
        let rg = self.requires(&[x]);
        Ok(self.push(Op::NegLog2, vec![x], value, rg))
    }

    /// Per-element probability of each value's quantization bin under a
    /// per-channel logistic model. `mu` and `log_s` are `[1, C, 1, 1]` and
    /// broadcast over batch and space.
    pub fn likelihood(&mut self, x: NodeId, mu: NodeId, log_s: NodeId, floor: f64) -> Result<NodeId> {
        self.check(x)?;
        self.check(mu)?;
        self.check(log_s)?;
        let [n, c, h, w] = self.value(x).shape();
        for (name, id) in [("mu", mu), ("log_s", log_s)] {
            if self.value(id).shape() != [1, c, 1, 1] {
                return Err(Error::Shape(format!(
                    "{name} shape {:?}, expected [1, {c}, 1, 1]",
                    self.value(id).shape()
                )));
            }
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::Config(format!("likelihood floor {floor} out of (0, 1)")));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        for bn in 0..n {
            for ch in 0..c {
                let m = self.value(mu)[[0, ch, 0, 0]];
                let ls = self.value(log_s)[[0, ch, 0, 0]];
                for i in 0..h {
                    let src = self.value(x).row(bn, ch, i);
                    let dst = out.row_mut(bn, ch, i);
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = bin_prob(v, m, ls, floor);
                    }
                }
            }
        }
        let rg = self.requires(&[x, mu, log_s]);
        Ok(self.push(Op::Likelihood { floor }, vec![x, mu, log_s], out, rg))
    }

    /// Round half away from zero, matching the codec's integer quantizer.
    pub fn round(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(f64::round);
        let rg = self.requires(&[x]);
        Ok(self.push(Op::Round, vec![x], value, rg))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Backpropagate from a scalar `loss` node, adding into every
    /// reachable differentiable node's gradient buffer.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Config("backward from a node with no differentiable ancestors".into()));
        }
        // Cotangents for this pass live in a scratch arena so that every
        // backward call contributes exactly one unit seed to the persistent
        // per-node gradients, no matter how often it is repeated.
        let mut cot: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        cot[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let dy = match &cot[i] {
                Some(g) => g.clone(),
                None => continue, // not reachable from the loss
            };
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            for (id, g) in self.input_grads(&op, &inputs, NodeId(i), &dy)? {
                if !self.nodes[id.0].requires_grad {
                    continue;
                }
                match &mut cot[id.0] {
                    Some(buf) => buf.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (i, c) in cot.into_iter().enumerate() {
            if let Some(c) = c {
                match &mut self.nodes[i].grad {
                    Some(buf) => buf.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    /// Cotangent of every input of one node. Pure reads; accumulation
    /// happens in the caller.
    fn input_grads(&self, op: &Op, inputs: &[NodeId], out: NodeId, dy: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut grads = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv2d(spec) => {
                let (x, w) = (inputs[0], inputs[1]);
                if self.nodes[x.0].requires_grad {
                    grads.push((x, conv2d_backward_input(dy, val(w), spec, val(x).shape())?));
                }
                if self.nodes[w.0].requires_grad {
                    grads.push((w, conv2d_backward_weight(dy, val(x), spec)?));
                }
                if let Some(&b) = inputs.get(2) {
                    if self.nodes[b.0].requires_grad {
                        grads.push((b, conv2d_backward_bias(dy)));
                    }
                }
            }
            Op::ConvT2d(spec) => {
                let (x, w) = (inputs[0], inputs[1]);
                if self.nodes[x.0].requires_grad {
                    // adjoint of the adjoint: gather dy with the forward conv
                    grads.push((x, conv2d_forward(dy, val(w), None, spec)?));
                }
                if self.nodes[w.0].requires_grad {
                    grads.push((w, conv2d_backward_weight(val(x), dy, spec)?));
                }
                if let Some(&b) = inputs.get(2) {
                    if self.nodes[b.0].requires_grad {
                        grads.push((b, conv2d_backward_bias(dy)));
                    }
                }
            }
            Op::Upsample(f) => {
                let x = inputs[0];
                let [n, c, h, w] = val(x).shape();
                let mut dx = Tensor::zeros([n, c, h, w]);
                for bn in 0..n {
                    for ch in 0..c {
                        for i in 0..h * f {
                            let src = dy.row(bn, ch, i);
                            let dst = dx.row_mut(bn, ch, i / f);
                            for (j, &g) in src.iter().enumerate() {
                                dst[j / f] += g;
                            }
                        }
                    }
                }
                grads.push((x, dx));
            }
            Op::Concat => {
                let [n, _, h, w] = val(out).shape();
                let mut c_off = 0;
                for &p in inputs {
                    let pc = val(p).shape()[1];
                    if self.nodes[p.0].requires_grad {
                        let mut dx = Tensor::zeros([n, pc, h, w]);
                        for bn in 0..n {
                            for ch in 0..pc {
                                for i in 0..h {
                                    dx.row_mut(bn, ch, i).copy_from_slice(dy.row(bn, c_off + ch, i));
                                }
                            }
                        }
                        grads.push((p, dx));
                    }
                    c_off += pc;
                }
            }
            Op::LeakyRelu(slope) => {
                let x = inputs[0];
                let dx = val(x).zip_map(dy, |v, g| if v > 0.0 { g } else { slope * g })?;
                grads.push((x, dx));
            }
            Op::Add => {
                grads.push((inputs[0], dy.clone()));
                grads.push((inputs[1], dy.clone()));
            }
            Op::Sub => {
                grads.push((inputs[0], dy.clone()));
                grads.push((inputs[1], dy.map(|g| -g)));
            }
            Op::Mul => {
                grads.push((inputs[0], dy.zip_map(val(inputs[1]), |g, b| g * b)?));
                grads.push((inputs[1], dy.zip_map(val(inputs[0]), |g, a| g * a)?));
            }
            Op::Scale(c) => {
                grads.push((inputs[0], dy.map(|g| c * g)));
            }
            Op::Square => {
                grads.push((inputs[0], dy.zip_map(val(inputs[0]), |g, v| 2.0 * v * g)?));
            }
            Op::Sum => {
                let g = dy.item()?;
                grads.push((inputs[0], Tensor::full(val(inputs[0]).shape(), g)));
            }
            Op::Mean => {
                let g = dy.item()? / val(inputs[0]).numel() as f64;
                grads.push((inputs[0], Tensor::full(val(inputs[0]).shape(), g)));
            }
            Op::NegLog2 => {
                let inv_ln2 = 1.0 / std::f64::consts::LN_2;
                grads.push((inputs[0], dy.zip_map(val(inputs[0]), |g, v| -g * inv_ln2 / v)?));
            }
            Op::Likelihood { floor } => {
                let (x, mu, log_s) = (inputs[0], inputs[1], inputs[2]);
                let [n, c, h, w] = val(x).shape();
                let mut dx = Tensor::zeros([n, c, h, w]);
                let mut dmu = Tensor::zeros([1, c, 1, 1]);
                let mut dls = Tensor::zeros([1, c, 1, 1]);
                for bn in 0..n {
                    for ch in 0..c {
                        let m = val(mu)[[0, ch, 0, 0]];
                        let ls = val(log_s)[[0, ch, 0, 0]];
                        let inv_s = (-ls).exp();
                        let mut acc_mu = 0.0;
                        let mut acc_ls = 0.0;
                        for i in 0..h {
                            let xr = val(x).row(bn, ch, i);
                            let gr = dy.row(bn, ch, i);
                            let dr = dx.row_mut(bn, ch, i);
                            for ((d, &v), &g) in dr.iter_mut().zip(xr).zip(gr) {
                                let a = (v - m + 0.5) * inv_s;
                                let b = (v - m - 0.5) * inv_s;
                                let sa = logistic(a);
                                let sb = logistic(b);
                                if sa - sb < *floor {
                                    continue; // clamped bin: flat in all arguments
                                }
                                let da = sa * (1.0 - sa);
                                let db = sb * (1.0 - sb);
                                let dp_dv = (da - db) * inv_s;
                                *d += g * dp_dv;
                                acc_mu -= g * dp_dv;
                                acc_ls -= g * (da * a - db * b);
                            }
                        }
                        dmu[[0, ch, 0, 0]] += acc_mu;
                        dls[[0, ch, 0, 0]] += acc_ls;
                    }
                }
                if self.nodes[x.0].requires_grad {
                    grads.push((x, dx));
                }
                if self.nodes[mu.0].requires_grad {
                    grads.push((mu, dmu));
                }
                if self.nodes[log_s.0].requires_grad {
                    grads.push((log_s, dls));
                }
            }
            Op::Round => {
                grads.push((inputs[0], Tensor::zeros(val(inputs[0]).shape())));
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(shape: [usize; 4], vals: &[f64]) -> Tensor {
        Tensor::from_vec(shape, vals.to_vec()).unwrap()
    }

    #[test]
    fn sum_backward_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 2, 2], &[1.0, -2.0, 3.0, 4.0]), true);
        let s = g.sum(x).unwrap();
        assert_eq!(g.value(s).item().unwrap(), 6.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_divides_by_count() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let m = g.mean(x).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 2.5);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 3], &[1.5, -2.0, 0.5]), true);
        let y = g.square(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, -4.0, 1.0]);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let a = g.leaf(tensor([1, 1, 1, 2], &[2.0, 3.0]), true);
        let b = g.leaf(tensor([1, 1, 1, 2], &[5.0, -1.0]), true);
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[5.0, -1.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn reuse_accumulates_along_both_paths() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 1], &[7.0]), true);
        let z = g.add(x, x).unwrap();
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 1], &[3.0]), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn leaky_relu_slopes() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 3], &[2.0, -4.0, 1.0]), true);
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, -0.8, 1.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(tensor([1, 1, 1, 2], &[1.0, 2.0]), true);
        let b = g.leaf(tensor([1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]), true);
        let cat = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), [1, 3, 1, 2]);
        let w = g.leaf(tensor([1, 3, 1, 2], &[1.0, 1.0, 10.0, 10.0, 100.0, 100.0]), false);
        let p = g.mul(cat, w).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn upsample_backward_pools() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 2], &[1.0, 2.0]), true);
        let y = g.upsample(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), [1, 1, 2, 4]);
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn round_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 3], &[0.4, -1.5, 2.6]), true);
        let r = g.round(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, -2.0, 3.0]);
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_chain_matches_direct_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xv = Tensor::rand_uniform([1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let wv = Tensor::rand_uniform([3, 2, 3, 3], -0.5, 0.5, &mut rng);
        let spec = ConvSpec::new((3, 3), 2, 3);

        let mut g = Graph::new();
        let x = g.leaf(xv.clone(), true);
        let w = g.leaf(wv.clone(), true);
        let y = g.conv2d(x, w, None, spec).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();

        let ones = Tensor::full(g.value(y).shape(), 1.0);
        let dx = crate::autodiff::conv::conv2d_backward_input(&ones, &wv, &spec, xv.shape()).unwrap();
        let dw = crate::autodiff::conv::conv2d_backward_weight(&ones, &xv, &spec).unwrap();
        assert_eq!(g.grad(x).unwrap(), &dx);
        assert_eq!(g.grad(w).unwrap(), &dw);
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let xv = tensor([1, 1, 1, 3], &[0.0, 1.0, -1.0]);
        let floor = f64::powi(2.0, -16);
        let loss = |m: f64, ls: f64, xs: &Tensor| -> f64 {
            xs.data().iter().map(|&v| -bin_prob(v, m, ls, floor).log2()).sum()
        };

        let (m0, ls0) = (0.3, -0.2);
        let mut g = Graph::new();
        let x = g.leaf(xv.clone(), true);
        let mu = g.leaf(tensor([1, 1, 1, 1], &[m0]), true);
        let ls = g.leaf(tensor([1, 1, 1, 1], &[ls0]), true);
        let p = g.likelihood(x, mu, ls, floor).unwrap();
        let bits = g.neg_log2(p).unwrap();
        let total = g.sum(bits).unwrap();
        g.backward(total).unwrap();

        let eps = 1e-6;
        let fd_mu = (loss(m0 + eps, ls0, &xv) - loss(m0 - eps, ls0, &xv)) / (2.0 * eps);
        let fd_ls = (loss(m0, ls0 + eps, &xv) - loss(m0, ls0 - eps, &xv)) / (2.0 * eps);
        assert!((g.grad(mu).unwrap().data()[0] - fd_mu).abs() < 1e-7);
        assert!((g.grad(ls).unwrap().data()[0] - fd_ls).abs() < 1e-7);

        for k in 0..3 {
            let mut lo = xv.clone();
            let mut hi = xv.clone();
            lo.data_mut()[k] -= eps;
            hi.data_mut()[k] += eps;
            let fd = (loss(m0, ls0, &hi) - loss(m0, ls0, &lo)) / (2.0 * eps);
            assert!((g.grad(x).unwrap().data()[k] - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 2], &[1.0, 2.0]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(tensor([1, 1, 1, 1], &[1.0]), true);
        let c = g.leaf(tensor([1, 1, 1, 1], &[2.0]), false);
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }
}
