use super::{check_same_shape, out_extent, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum OpKind<T> {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Conv2d { input: NodeId, kernels: NodeId, bias: NodeId, padding: usize, stride: usize },
    MaxPool2d { input: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulScalar { x: NodeId, c: T },
    Mean { x: NodeId },
    Sum { x: NodeId },
    GlobalAvgPool { x: NodeId },
    Sign,
    Clamp { x: NodeId, lo: T, hi: T },
    AddBias { x: NodeId, bias: NodeId },
    Reshape { x: NodeId },
    MseLoss { pred: NodeId, target: NodeId },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: OpKind<T>,
}

/// Topologically ordered record of executed operations. Nodes only reference
/// earlier nodes, so a single reverse sweep visits every node after all of
/// its consumers. All reductions run in a fixed order, so identical inputs
/// and operation sequences give bitwise-identical gradients.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, OpKind::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, populated by [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: OpKind<T>) -> NodeId {
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, parents: &[NodeId], op: OpKind<T>) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, rg, op)
    }

    /// 2-D matrix product: `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::dimension(format!(
                "matmul: incompatible shapes {ash:?} and {bsh:?}"
            )));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![T::zero(); m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + aip * brow[j];
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, &[a, b], OpKind::Matmul { a, b }))
    }

    /// Batched 2-D cross-correlation with zero padding.
    /// input `[B x C_in x H x W]`, kernels `[C_out x C_in x kh x kw]`, bias `[C_out]`.
    #[allow(clippy::needless_range_loop)]
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: usize,
        stride: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive".to_string()));
        }
        let ish = self.nodes[input.0].value.shape().to_vec();
        let ksh = self.nodes[kernels.0].value.shape().to_vec();
        let bsh = self.nodes[bias.0].value.shape().to_vec();
        if ish.len() != 4 || ksh.len() != 4 {
            return Err(Error::dimension(format!(
                "conv2d: expected 4-D input and kernels, got {ish:?} and {ksh:?}"
            )));
        }
        let (bsz, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (cout, kcin, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
        if kcin != cin {
            return Err(Error::dimension(format!(
                "conv2d: input channels {cin} vs kernel channels {kcin}"
            )));
        }
        if bsh != [cout] {
            return Err(Error::dimension(format!(
                "conv2d: bias shape {bsh:?}, expected [{cout}]"
            )));
        }
        let oh = out_extent(h, kh, padding, stride)?;
        let ow = out_extent(w, kw, padding, stride)?;

        let id = self.nodes[input.0].value.data();
        let kd = self.nodes[kernels.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        let mut out = vec![T::zero(); bsz * cout * oh * ow];
        for b in 0..bsz {
            for oc in 0..cout {
                let obase = (b * cout + oc) * oh * ow;
                let bias_v = bd[oc];
                for v in &mut out[obase..obase + oh * ow] {
                    *v = bias_v;
                }
                for ic in 0..cin {
                    let ibase = (b * cin + ic) * h * w;
                    let kbase = (oc * cin + ic) * kh * kw;
                    for r in 0..kh {
                        for c in 0..kw {
                            let wv = kd[kbase + r * kw + c];
                            if wv == T::zero() {
                                continue;
                            }
                            conv_row_pass(
                                &mut out[obase..obase + oh * ow],
                                &id[ibase..ibase + h * w],
                                wv,
                                (h, w),
                                (oh, ow),
                                (r, c),
                                padding,
                                stride,
                            );
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, cout, oh, ow], out)?;
        Ok(self.push_op(
            value,
            &[input, kernels, bias],
            OpKind::Conv2d { input, kernels, bias, padding, stride },
        ))
    }

    /// Per-window maximum over `[B x C x H x W]`. Ties go to the first
    /// (row-major) maximal element.
    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        if window == 0 || stride == 0 {
            return Err(Error::config("maxpool2d: window and stride must be positive".to_string()));
        }
        let ish = self.nodes[input.0].value.shape().to_vec();
        if ish.len() != 4 {
            return Err(Error::dimension(format!("maxpool2d: expected 4-D input, got {ish:?}")));
        }
        let (bsz, ch, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        if window > h || window > w {
            return Err(Error::dimension(format!(
                "maxpool2d: window {window} exceeds spatial dims {h}x{w}"
            )));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let id = self.nodes[input.0].value.data();
        let mut out = vec![T::zero(); bsz * ch * oh * ow];
        let mut argmax = vec![0usize; bsz * ch * oh * ow];
        for bc in 0..bsz * ch {
            let ibase = bc * h * w;
            let obase = bc * oh * ow;
            for r in 0..oh {
                for c in 0..ow {
                    let mut best_idx = ibase + (r * stride) * w + c * stride;
                    let mut best = id[best_idx];
                    for dr in 0..window {
                        for dc in 0..window {
                            let idx = ibase + (r * stride + dr) * w + (c * stride + dc);
                            if id[idx] > best {
                                best = id[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + r * ow + c] = best;
                    argmax[obase + r * ow + c] = best_idx;
                }
            }
        }
        let value = Tensor::new(vec![bsz, ch, oh, ow], out)?;
        Ok(self.push_op(value, &[input], OpKind::MaxPool2d { input, argmax }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(value, &[x], OpKind::Relu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same_shape("add", &self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        Ok(self.push_op(value, &[a, b], OpKind::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same_shape("sub", &self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        Ok(self.push_op(value, &[a, b], OpKind::Sub { a, b }))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: T) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v * c);
        self.push_op(value, &[x], OpKind::MulScalar { x, c })
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let n = T::elem(xv.numel() as f64);
        let s = xv.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let value = Tensor::scalar(s / n);
        self.push_op(value, &[x], OpKind::Mean { x })
    }

    /// Sum over all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let value = Tensor::scalar(s);
        self.push_op(value, &[x], OpKind::Sum { x })
    }

    /// `[B x C x H x W] -> [B x C]`, spatial mean per channel.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let ish = self.nodes[x.0].value.shape().to_vec();
        if ish.len() != 4 {
            return Err(Error::dimension(format!(
                "global_avg_pool: expected 4-D input, got {ish:?}"
            )));
        }
        let (bsz, ch, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let area = T::elem((h * w) as f64);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); bsz * ch];
        for bc in 0..bsz * ch {
            let s = xd[bc * h * w..(bc + 1) * h * w].iter().fold(T::zero(), |acc, &v| acc + v);
            out[bc] = s / area;
        }
        let value = Tensor::new(vec![bsz, ch], out)?;
        Ok(self.push_op(value, &[x], OpKind::GlobalAvgPool { x }))
    }

    /// Elementwise sign: -1, 0, or +1. Not differentiable; gradient is zero.
    pub fn sign(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        self.push(value, false, OpKind::Sign)
    }

    /// Elementwise projection onto `[lo, hi]`.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v.max(lo).min(hi));
        self.push_op(value, &[x], OpKind::Clamp { x, lo, hi })
    }

    /// Row-wise bias addition: `[B x N] + [N] -> [B x N]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xsh = self.nodes[x.0].value.shape().to_vec();
        let bsh = self.nodes[bias.0].value.shape().to_vec();
        if xsh.len() != 2 || bsh.len() != 1 || xsh[1] != bsh[0] {
            return Err(Error::dimension(format!(
                "add_bias: shapes {xsh:?} and {bsh:?} incompatible"
            )));
        }
        let (bsz, n) = (xsh[0], xsh[1]);
        let xd = self.nodes[x.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        let mut out = vec![T::zero(); bsz * n];
        for i in 0..bsz {
            for j in 0..n {
                out[i * n + j] = xd[i * n + j] + bd[j];
            }
        }
        let value = Tensor::new(xsh, out)?;
        Ok(self.push_op(value, &[x, bias], OpKind::AddBias { x, bias }))
    }

    /// Same data, new shape; element count must be preserved.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = Tensor::new(shape, self.nodes[x.0].value.data().to_vec())?;
        Ok(self.push_op(value, &[x], OpKind::Reshape { x }))
    }

    /// Mean over all elements of squared differences.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        check_same_shape("mse_loss", &self.nodes[pred.0].value, &self.nodes[target.0].value)?;
        let n = T::elem(self.nodes[pred.0].value.numel() as f64);
        let s = self.nodes[pred.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[target.0].value.data())
            .fold(T::zero(), |acc, (&p, &t)| {
                let d = p - t;
                acc + d * d
            });
        let value = Tensor::scalar(s / n);
        Ok(self.push_op(value, &[pred, target], OpKind::MseLoss { pred, target }))
    }

    /// Fingerprint of the piecewise-linear region the forward pass landed
    /// in: relu sign masks and max-pool argmax choices. Two evaluations with
    /// the same fingerprint lie on the same smooth piece, so finite
    /// differences between them are valid.
    pub fn activation_fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut mix = |byte: u64| {
            hash ^= byte;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for node in &self.nodes {
            match &node.op {
                OpKind::Relu { x } => {
                    for &v in self.nodes[x.0].value.data() {
                        mix(u64::from(v > T::zero()));
                    }
                }
                OpKind::MaxPool2d { argmax, .. } => {
                    for &idx in argmax {
                        mix(idx as u64);
                    }
                }
                _ => {}
            }
        }
        hash
    }

    fn add_grad(&mut self, id: NodeId, contrib: &[T]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![T::zero(); numel]);
        for (g, &c) in grad.iter_mut().zip(contrib) {
            *g = *g + c;
        }
    }

    /// Reverse sweep from a scalar loss. The graph may be differentiated
    /// only once; a second call is a usage error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::usage("backward: graph already differentiated".to_string()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            // Dispatch on the op, routing the incoming gradient to parents.
            let op = std::mem::replace(&mut self.nodes[i].op, OpKind::Leaf);
            match &op {
                OpKind::Leaf | OpKind::Sign => {}
                OpKind::Matmul { a, b } => self.backward_matmul(*a, *b, &g),
                OpKind::Conv2d { input, kernels, bias, padding, stride } => {
                    self.backward_conv2d(*input, *kernels, *bias, *padding, *stride, &g)
                }
                OpKind::MaxPool2d { input, argmax, .. } => {
                    if self.nodes[input.0].requires_grad {
                        let mut d = vec![T::zero(); self.nodes[input.0].value.numel()];
                        for (o, &src) in argmax.iter().enumerate() {
                            d[src] = d[src] + g[o];
                        }
                        self.add_grad(*input, &d);
                    }
                }
                OpKind::Relu { x } => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<T> = self.nodes[x.0]
                            .value
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gi)| if v > T::zero() { gi } else { T::zero() })
                            .collect();
                        self.add_grad(*x, &d);
                    }
                }
                OpKind::Add { a, b } => {
                    self.add_grad(*a, &g);
                    self.add_grad(*b, &g);
                }
                OpKind::Sub { a, b } => {
                    self.add_grad(*a, &g);
                    if self.nodes[b.0].requires_grad {
                        let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                        self.add_grad(*b, &neg);
                    }
                }
                OpKind::MulScalar { x, c } => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<T> = g.iter().map(|&v| v * *c).collect();
                        self.add_grad(*x, &d);
                    }
                }
                OpKind::Mean { x } => {
                    if self.nodes[x.0].requires_grad {
                        let n = self.nodes[x.0].value.numel();
                        let scale = g[0] / T::elem(n as f64);
                        self.add_grad(*x, &vec![scale; n]);
                    }
                }
                OpKind::Sum { x } => {
                    if self.nodes[x.0].requires_grad {
                        let n = self.nodes[x.0].value.numel();
                        self.add_grad(*x, &vec![g[0]; n]);
                    }
                }
                OpKind::GlobalAvgPool { x } => {
                    if self.nodes[x.0].requires_grad {
                        let sh = self.nodes[x.0].value.shape();
                        let (h, w) = (sh[2], sh[3]);
                        let area = T::elem((h * w) as f64);
                        let mut d = vec![T::zero(); self.nodes[x.0].value.numel()];
                        for (bc, &gv) in g.iter().enumerate() {
                            let v = gv / area;
                            for e in &mut d[bc * h * w..(bc + 1) * h * w] {
                                *e = v;
                            }
                        }
                        self.add_grad(*x, &d);
                    }
                }
                OpKind::Clamp { x, lo, hi } => {
                    if self.nodes[x.0].requires_grad {
                        let d: Vec<T> = self.nodes[x.0]
                            .value
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gi)| if v >= *lo && v <= *hi { gi } else { T::zero() })
                            .collect();
                        self.add_grad(*x, &d);
                    }
                }
                OpKind::Reshape { x } => {
                    self.add_grad(*x, &g);
                }
                OpKind::AddBias { x, bias } => {
                    self.add_grad(*x, &g);
                    if self.nodes[bias.0].requires_grad {
                        let sh = self.nodes[x.0].value.shape();
                        let (bsz, n) = (sh[0], sh[1]);
                        let mut d = vec![T::zero(); n];
                        for i in 0..bsz {
                            for j in 0..n {
                                d[j] = d[j] + g[i * n + j];
                            }
                        }
                        self.add_grad(*bias, &d);
                    }
                }
                OpKind::MseLoss { pred, target } => {
                    let n = T::elem(self.nodes[pred.0].value.numel() as f64);
                    let two = T::elem(2.0);
                    let scale = g[0] * two / n;
                    if self.nodes[pred.0].requires_grad {
                        let d: Vec<T> = self.nodes[pred.0]
                            .value
                            .data()
                            .iter()
                            .zip(self.nodes[target.0].value.data())
                            .map(|(&p, &t)| scale * (p - t))
                            .collect();
                        self.add_grad(*pred, &d);
                    }
                    if self.nodes[target.0].requires_grad {
                        let d: Vec<T> = self.nodes[pred.0]
                            .value
                            .data()
                            .iter()
                            .zip(self.nodes[target.0].value.data())
                            .map(|(&p, &t)| -scale * (p - t))
                            .collect();
                        self.add_grad(*target, &d);
                    }
                }
            }
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backward_matmul(&mut self, a: NodeId, b: NodeId, g: &[T]) {
        let ash = self.nodes[a.0].value.shape();
        let bsh = self.nodes[b.0].value.shape();
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        if self.nodes[a.0].requires_grad {
            // dA = G . B^T
            let bd = self.nodes[b.0].value.data();
            let mut da = vec![T::zero(); m * k];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    if gij == T::zero() {
                        continue;
                    }
                    let brow = bd;
                    for p in 0..k {
                        da[i * k + p] = da[i * k + p] + gij * brow[p * n + j];
                    }
                }
            }
            self.add_grad(a, &da);
        }
        if self.nodes[b.0].requires_grad {
            // dB = A^T . G
            let ad = self.nodes[a.0].value.data();
            let mut db = vec![T::zero(); k * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == T::zero() {
                        continue;
                    }
                    let grow = &g[i * n..(i + 1) * n];
                    let drow = &mut db[p * n..(p + 1) * n];
                    for j in 0..n {
                        drow[j] = drow[j] + aip * grow[j];
                    }
                }
            }
            self.add_grad(b, &db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[allow(clippy::needless_range_loop)]
    fn backward_conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: usize,
        stride: usize,
        g: &[T],
    ) {
        let ish = self.nodes[input.0].value.shape().to_vec();
        let ksh = self.nodes[kernels.0].value.shape().to_vec();
        let (bsz, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (cout, _, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
        let oh = out_extent(h, kh, padding, stride).unwrap();
        let ow = out_extent(w, kw, padding, stride).unwrap();

        if self.nodes[bias.0].requires_grad {
            let mut db = vec![T::zero(); cout];
            for b in 0..bsz {
                for oc in 0..cout {
                    let obase = (b * cout + oc) * oh * ow;
                    let s = g[obase..obase + oh * ow].iter().fold(T::zero(), |acc, &v| acc + v);
                    db[oc] = db[oc] + s;
                }
            }
            self.add_grad(bias, &db);
        }

        let want_input = self.nodes[input.0].requires_grad;
        let want_kernels = self.nodes[kernels.0].requires_grad;
        if !want_input && !want_kernels {
            return;
        }
        let id = self.nodes[input.0].value.data();
        let kd = self.nodes[kernels.0].value.data();
        let mut dinput = if want_input { vec![T::zero(); bsz * cin * h * w] } else { Vec::new() };
        let mut dkernels =
            if want_kernels { vec![T::zero(); cout * cin * kh * kw] } else { Vec::new() };

        for b in 0..bsz {
            for oc in 0..cout {
                let obase = (b * cout + oc) * oh * ow;
                let gslice = &g[obase..obase + oh * ow];
                for ic in 0..cin {
                    let ibase = (b * cin + ic) * h * w;
                    let kbase = (oc * cin + ic) * kh * kw;
                    for r in 0..kh {
                        for c in 0..kw {
                            let (lo, hi, off) =
                                valid_out_range((h, w), (oh, ow), (r, c), padding, stride);
                            let (lo_c, hi_c, off_c) = (lo.1, hi.1, off.1);
                            let (lo_r, hi_r, off_r) = (lo.0, hi.0, off.0);
                            let wv = kd[kbase + r * kw + c];
                            let mut dk_acc = T::zero();
                            for orow in lo_r..hi_r {
                                let irow = ((orow * stride) as isize + off_r) as usize;
                                let grow = &gslice[orow * ow..(orow + 1) * ow];
                                for ocol in lo_c..hi_c {
                                    let icol = ((ocol * stride) as isize + off_c) as usize;
                                    let iidx = ibase + irow * w + icol;
                                    let gv = grow[ocol];
                                    if want_input {
                                        dinput[iidx] = dinput[iidx] + gv * wv;
                                    }
                                    if want_kernels {
                                        dk_acc = dk_acc + gv * id[iidx];
                                    }
                                }
                            }
                            if want_kernels {
                                let e = &mut dkernels[kbase + r * kw + c];
                                *e = *e + dk_acc;
                            }
                        }
                    }
                }
            }
        }
        if want_input {
            self.add_grad(input, &dinput);
        }
        if want_kernels {
            self.add_grad(kernels, &dkernels);
        }
    }
}

/// Output index range `[lo, hi)` for which the input index
/// `o * stride + k - padding` stays within `[0, extent)`, per axis.
#[allow(clippy::type_complexity)]
fn valid_out_range(
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (kr, kc): (usize, usize),
    padding: usize,
    stride: usize,
) -> ((usize, usize), (usize, usize), (isize, isize)) {
    let range = |extent: usize, out_extent: usize, k: usize| -> (usize, usize, isize) {
        let off = k as isize - padding as isize;
        let lo = if off < 0 {
            ((-off) as usize).div_ceil(stride)
        } else {
            0
        };
        let max_i = extent as isize - 1 - off;
        if max_i < 0 {
            return (0, 0, off);
        }
        let hi = ((max_i as usize) / stride + 1).min(out_extent);
        (lo, hi, off)
    };
    let (lo_r, hi_r, off_r) = range(h, oh, kr);
    let (lo_c, hi_c, off_c) = range(w, ow, kc);
    ((lo_r, lo_c), (hi_r.max(lo_r), hi_c.max(lo_c)), (off_r, off_c))
}

/// Forward accumulation for one kernel tap over all output positions.
#[allow(clippy::too_many_arguments)]
fn conv_row_pass<T: Element>(
    out: &mut [T],
    input: &[T],
    wv: T,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (kr, kc): (usize, usize),
    padding: usize,
    stride: usize,
) {
    let ((lo_r, lo_c), (hi_r, hi_c), (off_r, off_c)) =
        valid_out_range((h, w), (oh, ow), (kr, kc), padding, stride);
    for orow in lo_r..hi_r {
        let irow = (orow * stride) as isize + off_r;
        let irow = irow as usize;
        let orow_base = orow * ow;
        let irow_base = irow * w;
        for ocol in lo_c..hi_c {
            let icol = ((ocol * stride) as isize + off_c) as usize;
            out[orow_base + ocol] = out[orow_base + ocol] + wv * input[irow_base + icol];
        }
    }
}
