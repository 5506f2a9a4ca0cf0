use super::conv::ConvGeom;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Conv2d { geom: ConvGeom },
    Dense,
    Relu,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Square,
    GlobalAvgPool,
    MaxPool2d { argmax: Vec<usize> },
    L2Normalize { scales: Vec<f64> },
    PairwiseSqDist,
    Hinge,
    Gather { indices: Vec<usize> },
    Sum,
    Mean,
    SoftmaxCrossEntropy { probs: Vec<f64>, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Dense => "dense",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Square => "square",
            Op::GlobalAvgPool => "global_avg_pool2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::PairwiseSqDist => "squared_l2_distance",
            Op::Hinge => "hinge",
            Op::Gather { .. } => "gather",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes only ever reference earlier nodes, so the insertion order is a
/// topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if it was reached.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros for nodes the loss does not depend on.
    pub fn get_or_zeros(&self, tape: &Tape, id: NodeId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Input node ids of `id` (all strictly smaller than `id`).
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].inputs.iter().map(|&i| NodeId(i)).collect()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: vec![],
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param,
            inputs: vec![],
            value,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Same-padded 2-D convolution. `x`: [N, Cin, H, W], `w`: [Cout, Cin, k, k], `b`: [Cout].
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 4
            || ws.len() != 4
            || ws[1] != xs[1]
            || ws[2] != ws[3]
            || ws[2] % 2 == 0
            || bs != [ws[0]]
            || !(stride == 1 || stride == 2)
        {
            return Err(shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}, bias {:?}, stride {}", xs, ws, bs, stride),
            ));
        }
        let geom = ConvGeom::new(xs[1], ws[0], xs[2], xs[3], ws[2], stride);
        let n = xs[0];
        let in_len = geom.in_ch * geom.height * geom.width;
        let out_len = geom.out_ch * geom.out_pixels();
        let mut out = vec![0.0; n * out_len];
        let mut cols = vec![0.0; geom.patch_len() * geom.out_pixels()];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for s in 0..n {
                geom.im2col(&xv[s * in_len..(s + 1) * in_len], &mut cols);
                geom.forward_sample(wv, bv, &cols, &mut out[s * out_len..(s + 1) * out_len]);
            }
        }
        let value = Tensor::new(vec![n, geom.out_ch, geom.out_h, geom.out_w], out)?;
        self.push(Op::Conv2d { geom }, vec![x.0, w.0, b.0], value)
    }

    /// Affine map `x · w + b` with `x`: [N, I], `w`: [I, O], `b`: [O].
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(shape_err(
                "dense",
                format!("input {:?}, weight {:?}, bias {:?}", xs, ws, bs),
            ));
        }
        let (n, i_dim, o_dim) = (xs[0], xs[1], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * o_dim];
        for r in 0..n {
            let dst = &mut out[r * o_dim..(r + 1) * o_dim];
            dst.copy_from_slice(bv);
            for k in 0..i_dim {
                let a = xv[r * i_dim + k];
                let wrow = &wv[k * o_dim..(k + 1) * o_dim];
                for (d, w) in dst.iter_mut().zip(wrow) {
                    *d += a * w;
                }
            }
        }
        let value = Tensor::new(vec![n, o_dim], out)?;
        self.push(Op::Dense, vec![x.0, w.0, b.0], value)
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(op, vec![x.0], value)
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                op.name(),
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(op, vec![a.0, b.0], value)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    /// `[x]_+`, the hinge. Identical to relu numerically but kept distinct on the tape.
    pub fn hinge(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Hinge, x, |v| v.max(0.0))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::Scale(c), x, |v| v * c)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::AddScalar, x, |v| v + c)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Square, x, |v| v * v)
    }

    /// [N, C, H, W] → [N, C], averaging over the spatial axes.
    pub fn global_avg_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] * xs[3] == 0 {
            return Err(shape_err("global_avg_pool2d", format!("input {:?}", xs)));
        }
        let hw = xs[2] * xs[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![xs[0], xs[1]], data)?;
        self.push(Op::GlobalAvgPool, vec![x.0], value)
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(shape_err("max_pool2d", format!("input {:?}", xs)));
        }
        let (h, w) = (xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let planes = xs[0] * xs[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], oh, ow], out)?;
        self.push(Op::MaxPool2d { argmax }, vec![x.0], value)
    }

    /// Row-wise `x / sqrt(|x|² + eps)` on a rank-2 tensor.
    pub fn l2_normalize(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(shape_err("l2_normalize", format!("input {:?}", xs)));
        }
        let d = xs[1];
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        let mut scales = Vec::with_capacity(xs[0]);
        for (src, dst) in xv.chunks(d.max(1)).zip(out.chunks_mut(d.max(1))) {
            let s = (src.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            for (o, v) in dst.iter_mut().zip(src) {
                *o = v / s;
            }
            scales.push(s);
        }
        let value = Tensor::new(xs, out)?;
        self.push(Op::L2Normalize { scales }, vec![x.0], value)
    }

    /// [N, D] → [N, N] matrix of squared Euclidean distances between rows.
    pub fn pairwise_sqdist(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(shape_err("squared_l2_distance", format!("input {:?}", xs)));
        }
        let data = sqdist_matrix(self.value(x).data(), xs[0], xs[1]);
        let value = Tensor::new(vec![xs[0], xs[0]], data)?;
        self.push(Op::PairwiseSqDist, vec![x.0], value)
    }

    /// Picks flat-indexed elements of `x` into a rank-1 tensor.
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let n = self.value(x).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err(
                "gather",
                format!("index {} out of range for {} elements", bad, n),
            ));
        }
        let xv = self.value(x).data();
        let data = indices.iter().map(|&i| xv[i]).collect();
        let value = Tensor::vector(data);
        self.push(Op::Gather { indices }, vec![x.0], value)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x.0], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(shape_err("mean", "empty input".into()));
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean, vec![x.0], Tensor::scalar(m))
    }

    /// Mean multinomial cross-entropy of `logits` [N, C] against class `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 || labels.iter().any(|&l| l >= ls[1]) {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} with {} labels", ls, labels.len()),
            ));
        }
        let c = ls[1];
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for k in 0..c {
                probs[r * c + k] = (row[k] - m).exp() / z;
            }
            loss += z.ln() + m - row[y];
        }
        loss /= labels.len() as f64;
        self.push(
            Op::SoftmaxCrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            vec![logits.0],
            Tensor::scalar(loss),
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = self.input_grads(node, &g);
            for (slot, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[*slot] {
                    Some(acc) => acc.add_assign(&contrib),
                    empty => *empty = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, input: usize) -> bool {
        self.nodes[input].requires_grad
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
        let gv = g.data();
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let like = |t: &Tensor, data: Vec<f64>| Some(Tensor::new(t.shape().to_vec(), data).expect("shape"));
        match &node.op {
            Op::Constant | Op::Param => vec![],
            Op::Conv2d { geom } => {
                let (x, w) = (input(0), input(1));
                let n = x.shape()[0];
                let in_len = geom.in_ch * geom.height * geom.width;
                let out_len = geom.out_ch * geom.out_pixels();
                let mut gx = self.wants(node.inputs[0]).then(|| vec![0.0; x.len()]);
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; geom.out_ch];
                let mut cols = vec![0.0; geom.patch_len() * geom.out_pixels()];
                let mut scratch = vec![0.0; cols.len()];
                let mut w_t = vec![0.0; w.len()];
                super::gemm::transpose(geom.out_ch, geom.patch_len(), w.data(), &mut w_t);
                for s in 0..n {
                    let go = &gv[s * out_len..(s + 1) * out_len];
                    geom.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
                    geom.backward_params(go, &cols, &mut scratch, &mut gw, &mut gb);
                    if let Some(gx) = gx.as_mut() {
                        geom.backward_cols(go, &w_t, &mut scratch);
                        let gcols = &scratch;
                        geom.col2im(gcols, &mut gx[s * in_len..(s + 1) * in_len]);
                    }
                }
                vec![
                    gx.and_then(|d| like(x, d)),
                    like(w, gw),
                    like(input(2), gb),
                ]
            }
            Op::Dense => {
                let (x, w) = (input(0), input(1));
                let (n, i_dim) = (x.shape()[0], x.shape()[1]);
                let o_dim = w.shape()[1];
                let (xv, wv) = (x.data(), w.data());
                let gx = self.wants(node.inputs[0]).then(|| {
                    let mut gx = vec![0.0; n * i_dim];
                    for r in 0..n {
                        let grow = &gv[r * o_dim..(r + 1) * o_dim];
                        for k in 0..i_dim {
                            let wrow = &wv[k * o_dim..(k + 1) * o_dim];
                            gx[r * i_dim + k] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    gx
                });
                let mut gw = vec![0.0; i_dim * o_dim];
                let mut gb = vec![0.0; o_dim];
                for r in 0..n {
                    let grow = &gv[r * o_dim..(r + 1) * o_dim];
                    for (b, v) in gb.iter_mut().zip(grow) {
                        *b += v;
                    }
                    for k in 0..i_dim {
                        let a = xv[r * i_dim + k];
                        for (slot, v) in gw[k * o_dim..(k + 1) * o_dim].iter_mut().zip(grow) {
                            *slot += a * v;
                        }
                    }
                }
                vec![gx.and_then(|d| like(x, d)), like(w, gw), like(input(2), gb)]
            }
            Op::Relu | Op::Hinge => {
                let x = input(0);
                let d = x
                    .data()
                    .iter()
                    .zip(gv)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![like(x, d)]
            }
            Op::Add => vec![
                self.wants(node.inputs[0]).then(|| g.clone()),
                self.wants(node.inputs[1]).then(|| g.clone()),
            ],
            Op::Sub => vec![
                self.wants(node.inputs[0]).then(|| g.clone()),
                self.wants(node.inputs[1])
                    .then(|| like(g, gv.iter().map(|v| -v).collect()))
                    .flatten(),
            ],
            Op::Mul => {
                let (a, b) = (input(0), input(1));
                vec![
                    self.wants(node.inputs[0])
                        .then(|| like(a, gv.iter().zip(b.data()).map(|(g, y)| g * y).collect()))
                        .flatten(),
                    self.wants(node.inputs[1])
                        .then(|| like(b, gv.iter().zip(a.data()).map(|(g, x)| g * x).collect()))
                        .flatten(),
                ]
            }
            Op::Scale(c) => vec![like(g, gv.iter().map(|v| v * c).collect())],
            Op::AddScalar => vec![Some(g.clone())],
            Op::Square => {
                let x = input(0);
                vec![like(x, x.data().iter().zip(gv).map(|(v, g)| 2.0 * v * g).collect())]
            }
            Op::GlobalAvgPool => {
                let x = input(0);
                let hw = x.shape()[2] * x.shape()[3];
                let mut d = vec![0.0; x.len()];
                for (chunk, gval) in d.chunks_mut(hw).zip(gv) {
                    chunk.fill(gval / hw as f64);
                }
                vec![like(x, d)]
            }
            Op::MaxPool2d { argmax } => {
                let x = input(0);
                let mut d = vec![0.0; x.len()];
                for (&idx, gval) in argmax.iter().zip(gv) {
                    d[idx] += gval;
                }
                vec![like(x, d)]
            }
            Op::L2Normalize { scales } => {
                let y = &node.value;
                let dim = y.shape()[1].max(1);
                let mut d = vec![0.0; y.len()];
                for (r, s) in scales.iter().enumerate() {
                    let yr = &y.data()[r * dim..(r + 1) * dim];
                    let gr = &gv[r * dim..(r + 1) * dim];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..dim {
                        d[r * dim + c] = (gr[c] - yr[c] * dot) / s;
                    }
                }
                vec![like(y, d)]
            }
            Op::PairwiseSqDist => {
                let x = input(0);
                let (n, dim) = (x.shape()[0], x.shape()[1]);
                let xv = x.data();
                let mut d = vec![0.0; x.len()];
                for i in 0..n {
                    for j in 0..n {
                        let coef = 2.0 * (gv[i * n + j] + gv[j * n + i]);
                        if coef == 0.0 || i == j {
                            continue;
                        }
                        for c in 0..dim {
                            d[i * dim + c] += coef * (xv[i * dim + c] - xv[j * dim + c]);
                        }
                    }
                }
                vec![like(x, d)]
            }
            Op::Gather { indices } => {
                let x = input(0);
                let mut d = vec![0.0; x.len()];
                for (&i, gval) in indices.iter().zip(gv) {
                    d[i] += gval;
                }
                vec![like(x, d)]
            }
            Op::Sum => {
                let x = input(0);
                vec![like(x, vec![gv[0]; x.len()])]
            }
            Op::Mean => {
                let x = input(0);
                vec![like(x, vec![gv[0] / x.len() as f64; x.len()])]
            }
            Op::SoftmaxCrossEntropy { probs, labels } => {
                let x = input(0);
                let c = x.shape()[1];
                let n = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * gv[0] / n).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * c + y] -= gv[0] / n;
                }
                vec![like(x, d)]
            }
        }
    }
}

/// Squared Euclidean distances between all row pairs of an `n × dim` buffer.
pub(crate) fn sqdist_matrix(x: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = x[i * dim..(i + 1) * dim]
                .iter()
                .zip(&x[j * dim..(j + 1) * dim])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .max(0.0);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}
