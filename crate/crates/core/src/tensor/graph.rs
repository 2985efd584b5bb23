use super::kernels::{self, ConvGeom};
use super::{Element, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddChannelBias(NodeId, NodeId),
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    UpsampleNearest(NodeId, usize),
    AvgPool(NodeId, usize),
    ConcatChannels(Vec<NodeId>),
    LeakyRelu(NodeId, f64),
    Relu(NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Reshape(NodeId),
    L1(NodeId, NodeId, Reduction),
    Mse(NodeId, NodeId, Reduction),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::UpsampleNearest(..) => "upsample_nearest",
            Op::AvgPool(..) => "avg_pool",
            Op::ConcatChannels(..) => "concat_channels",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(..) => "relu",
            Op::Linear { .. } => "linear",
            Op::Reshape(..) => "reshape",
            Op::L1(..) => "l1_loss",
            Op::Mse(..) => "mse_loss",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<E> {
    op: Op,
    value: Tensor<E>,
    requires_grad: bool,
}

/// Append-only op record. Node inputs always precede the node, so the
/// record is a topological order by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

fn dims4(t: &[usize]) -> Option<(usize, usize, usize, usize)> {
    match *t {
        [n, c, h, w] => Some((n, c, h, w)),
        _ => None,
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor<E>) -> NodeId {
        self.leaf(t, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`] (parameters, or
    /// inputs under a gradient check).
    pub fn variable(&mut self, t: Tensor<E>) -> NodeId {
        self.leaf(t, true)
    }

    fn leaf(&mut self, t: Tensor<E>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: t, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn dim_err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(TensorError::Dimension { node: self.nodes.len(), msg: msg.into() })
    }

    fn push(&mut self, op: Op, dims: Vec<usize>, data: Vec<E>) -> Result<NodeId> {
        let node = self.nodes.len();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { node, op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddChannelBias(a, b) => {
                self.rg(*a) || self.rg(*b)
            }
            Op::L1(a, b, _) | Op::Mse(a, b, _) => self.rg(*a) || self.rg(*b),
            Op::Scale(a, _)
            | Op::UpsampleNearest(a, _)
            | Op::AvgPool(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => self.rg(*a),
            Op::Conv2d { x, w, .. } => self.rg(*x) || self.rg(*w),
            Op::Linear { x, w, b } => self.rg(*x) || self.rg(*w) || self.rg(*b),
            Op::ConcatChannels(ids) => ids.iter().any(|&i| self.rg(i)),
        };
        let value = Tensor::new(dims, data)?;
        self.nodes.push(Node { op, value, requires_grad });
        Ok(NodeId(node))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn data(&self, id: NodeId) -> &[E] {
        self.nodes[id.0].value.data()
    }

    fn same_dims(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return self.dim_err(format!(
                "operand shapes differ: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            ));
        }
        Ok(())
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(E, E) -> E) -> Result<NodeId> {
        self.same_dims(a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let dims = self.dims(a).to_vec();
        self.push(op, dims, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let k = E::of(s);
        let data = self.data(a).iter().map(|&v| v * k).collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Scale(a, s), dims, data)
    }

    /// `x[n, c, :, :] += b[c]` (bias dims `[C]`) or `b[n, c]` (bias dims `[N, C]`).
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let Some((n, c, h, w)) = dims4(self.dims(x)) else {
            return self.dim_err(format!("channel bias needs NCHW input, got {:?}", self.dims(x)));
        };
        let per_item = match *self.dims(b) {
            [bc] if bc == c => false,
            [bn, bc] if bn == n && bc == c => true,
            ref d => return self.dim_err(format!("bias dims {d:?} incompatible with {:?}", self.dims(x))),
        };
        let bias = self.data(b);
        let mut data = self.data(x).to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let bv = if per_item { bias[ni * c + ci] } else { bias[ci] };
                for v in &mut data[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w] {
                    *v += bv;
                }
            }
        }
        let dims = self.dims(x).to_vec();
        self.push(Op::AddChannelBias(x, b), dims, data)
    }

    fn conv_geom(&self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<ConvGeom> {
        let Some((n, cin, h, wd)) = dims4(self.dims(x)) else {
            return self.dim_err(format!("conv2d input must be NCHW, got {:?}", self.dims(x)));
        };
        let Some((cout, wcin, kh, kw)) = dims4(self.dims(w)) else {
            return self.dim_err(format!("conv2d weight must be [Cout,Cin,k,k], got {:?}", self.dims(w)));
        };
        if wcin != cin || kh != kw {
            return self.dim_err(format!(
                "conv2d weight {:?} incompatible with input {:?}",
                self.dims(w),
                self.dims(x)
            ));
        }
        let (Some(ho), Some(wo)) = (
            kernels::conv_output_len(h, kh, stride, pad),
            kernels::conv_output_len(wd, kh, stride, pad),
        ) else {
            return self.dim_err(format!("kernel {kh} stride {stride} pad {pad} does not fit {h}x{wd}"));
        };
        Ok(ConvGeom { n, cin, h, w: wd, cout, k: kh, stride, pad, ho, wo })
    }

    /// Cross-correlation with zero padding. Weight layout `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let g = self.conv_geom(x, w, stride, pad)?;
        let data = kernels::conv2d_forward(self.data(x), self.data(w), &g);
        self.push(Op::Conv2d { x, w, stride, pad }, vec![g.n, g.cout, g.ho, g.wo], data)
    }

    pub fn upsample_nearest(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let Some((n, c, h, w)) = dims4(self.dims(x)) else {
            return self.dim_err("upsample needs NCHW input");
        };
        if s == 0 {
            return self.dim_err("upsample factor must be positive");
        }
        let data = kernels::upsample_nearest(self.data(x), n * c, h, w, s);
        self.push(Op::UpsampleNearest(x, s), vec![n, c, h * s, w * s], data)
    }

    pub fn avg_pool(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let Some((n, c, h, w)) = dims4(self.dims(x)) else {
            return self.dim_err("avg_pool needs NCHW input");
        };
        if s == 0 || h % s != 0 || w % s != 0 {
            return self.dim_err(format!("avg_pool factor {s} does not divide {h}x{w}"));
        }
        let data = kernels::avg_pool(self.data(x), n * c, h, w, s);
        self.push(Op::AvgPool(x, s), vec![n, c, h / s, w / s], data)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return self.dim_err("concat of zero tensors");
        };
        let Some((n, _, h, w)) = dims4(self.dims(first)) else {
            return self.dim_err("concat needs NCHW inputs");
        };
        let mut total_c = 0;
        for &p in parts {
            match dims4(self.dims(p)) {
                Some((pn, pc, ph, pw)) if pn == n && ph == h && pw == w => total_c += pc,
                _ => {
                    return self.dim_err(format!(
                        "concat operand {:?} incompatible with {:?}",
                        self.dims(p),
                        self.dims(first)
                    ))
                }
            }
        }
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for ni in 0..n {
            for &p in parts {
                let pc = self.dims(p)[1];
                data.extend_from_slice(&self.data(p)[ni * pc * h * w..(ni + 1) * pc * h * w]);
            }
        }
        self.push(Op::ConcatChannels(parts.to_vec()), vec![n, total_c, h, w], data)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let k = E::of(slope);
        let data = self.data(x).iter().map(|&v| if v > E::zero() { v } else { v * k }).collect();
        let dims = self.dims(x).to_vec();
        self.push(Op::LeakyRelu(x, slope), dims, data)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.data(x).iter().map(|&v| if v > E::zero() { v } else { E::zero() }).collect();
        let dims = self.dims(x).to_vec();
        self.push(Op::Relu(x), dims, data)
    }

    /// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (&[n, fin], &[out, win], &[bout]) = (self.dims(x), self.dims(w), self.dims(b)) else {
            return self.dim_err(format!(
                "linear expects x [N,in], W [out,in], b [out]; got {:?}, {:?}, {:?}",
                self.dims(x),
                self.dims(w),
                self.dims(b)
            ));
        };
        if fin != win || bout != out {
            return self.dim_err(format!(
                "linear shapes disagree: x {:?}, W {:?}, b {:?}",
                self.dims(x),
                self.dims(w),
                self.dims(b)
            ));
        }
        let mut data = vec![E::zero(); n * out];
        for ni in 0..n {
            data[ni * out..(ni + 1) * out].copy_from_slice(self.data(b));
        }
        E::gemm(n, fin, out, self.data(x), false, self.data(w), true, &mut data, true);
        self.push(Op::Linear { x, w, b }, vec![n, out], data)
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let numel: usize = dims.iter().product();
        if numel != self.value(x).numel() {
            return self.dim_err(format!("cannot reshape {:?} into {dims:?}", self.dims(x)));
        }
        let data = self.data(x).to_vec();
        self.push(Op::Reshape(x), dims.to_vec(), data)
    }

    fn reduce_scale(&self, n: usize, red: Reduction) -> f64 {
        match red {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        }
    }

    /// `‖a − b‖₁`, reduced. The subgradient at `a == b` is 0.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId, red: Reduction) -> Result<NodeId> {
        self.same_dims(a, b)?;
        let acc: f64 = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y).as_f64().abs()).sum();
        let v = acc * self.reduce_scale(self.value(a).numel(), red);
        self.push(Op::L1(a, b, red), vec![1], vec![E::of(v)])
    }

    pub fn mse_loss(&mut self, a: NodeId, b: NodeId, red: Reduction) -> Result<NodeId> {
        self.same_dims(a, b)?;
        let acc: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum();
        let v = acc * self.reduce_scale(self.value(a).numel(), red);
        self.push(Op::Mse(a, b, red), vec![1], vec![E::of(v)])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).sum_f64();
        self.push(Op::Sum(x), vec![1], vec![E::of(v)])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).mean_f64();
        self.push(Op::Mean(x), vec![1], vec![E::of(v)])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss { node: loss.0, dims: lv.dims().to_vec() });
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<E>, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let mut acc = |id: NodeId, contrib: Vec<E>| {
            if !self.rg(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(db).map(|(&gv, &bv)| gv * bv).collect());
                acc(*b, g.iter().zip(da).map(|(&gv, &av)| gv * av).collect());
            }
            Op::Scale(a, s) => {
                let k = E::of(*s);
                acc(*a, g.iter().map(|&v| v * k).collect());
            }
            Op::AddChannelBias(x, b) => {
                acc(*x, g.to_vec());
                if self.rg(*b) {
                    let (n, c, h, w) = dims4(self.dims(*x)).expect("checked in forward");
                    let per_item = self.dims(*b).len() == 2;
                    let mut db = vec![E::zero(); self.value(*b).numel()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let s: E = g[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w].iter().copied().sum();
                            db[if per_item { ni * c + ci } else { ci }] += s;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let geom = self.conv_geom(*x, *w, *stride, *pad).expect("checked in forward");
                let (dx, dw) =
                    kernels::conv2d_backward(self.data(*x), self.data(*w), g, &geom, self.rg(*x), self.rg(*w));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
            }
            Op::UpsampleNearest(x, s) => {
                let (n, c, h, w) = dims4(self.dims(*x)).expect("checked in forward");
                acc(*x, kernels::block_sum(g, n * c, h * s, w * s, *s));
            }
            Op::AvgPool(x, s) => {
                let (n, c, h, w) = dims4(self.dims(*x)).expect("checked in forward");
                let inv = E::of(1.0 / (s * s) as f64);
                let up = kernels::upsample_nearest(g, n * c, h / s, w / s, *s);
                acc(*x, up.into_iter().map(|v| v * inv).collect());
            }
            Op::ConcatChannels(parts) => {
                let (n, total_c, h, w) = dims4(node.value.dims()).expect("checked in forward");
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p)[1];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(n * pc * h * w);
                        for ni in 0..n {
                            let start = (ni * total_c + offset) * h * w;
                            dp.extend_from_slice(&g[start..start + pc * h * w]);
                        }
                        acc(p, dp);
                    }
                    offset += pc;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let k = E::of(*slope);
                let dx = self.data(*x).iter().zip(g).map(|(&v, &gv)| if v > E::zero() { gv } else { gv * k });
                acc(*x, dx.collect());
            }
            Op::Relu(x) => {
                let dx = self.data(*x).iter().zip(g).map(|(&v, &gv)| if v > E::zero() { gv } else { E::zero() });
                acc(*x, dx.collect());
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.dims(*x)[0], self.dims(*x)[1]);
                let out = self.dims(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![E::zero(); n * fin];
                    E::gemm(n, out, fin, g, false, self.data(*w), false, &mut dx, false);
                    acc(*x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![E::zero(); out * fin];
                    E::gemm(out, n, fin, g, true, self.data(*x), false, &mut dw, false);
                    acc(*w, dw);
                }
                if self.rg(*b) {
                    let mut db = vec![E::zero(); out];
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    acc(*b, db);
                }
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::L1(a, b, red) => {
                let k = g[0] * E::of(self.reduce_scale(self.value(*a).numel(), *red));
                let da: Vec<E> = self
                    .data(*a)
                    .iter()
                    .zip(self.data(*b))
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > E::zero() {
                            k
                        } else if d < E::zero() {
                            -k
                        } else {
                            E::zero()
                        }
                    })
                    .collect();
                acc(*b, da.iter().map(|&v| -v).collect());
                acc(*a, da);
            }
            Op::Mse(a, b, red) => {
                let k = g[0] * E::of(2.0 * self.reduce_scale(self.value(*a).numel(), *red));
                let da: Vec<E> = self.data(*a).iter().zip(self.data(*b)).map(|(&x, &y)| (x - y) * k).collect();
                acc(*b, da.iter().map(|&v| -v).collect());
                acc(*a, da);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0] * E::of(1.0 / n as f64); n]);
            }
        }
    }
}

/// Per-node gradients from one reverse pass.
#[derive(Clone, Debug)]
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient with respect to `id`, shaped like its value; zeros when the
    /// loss does not depend on it.
    pub fn wrt(&self, graph: &Graph<E>, id: NodeId) -> Tensor<E> {
        let dims = graph.dims(id).to_vec();
        match &self.grads[id.0] {
            Some(g) if graph.rg(id) => Tensor::new(dims, g.clone()).expect("gradient matches value shape"),
            _ => Tensor::zeros(&dims),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn add_and_relu_forward() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        let b = g.input(t(&[2], &[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let r = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(r).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let img = Tensor::from_fn(&[1, 1, 5, 6], |i| (i as f64 * 0.37).sin());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let x = g.input(img.clone());
        let w = g.input(t(&[1, 1, 3, 3], &k));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y), &img);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn l1_gradient_is_sign() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[3], &[3.0, -3.0, 0.0]));
        let z = g.input(Tensor::zeros(&[3]));
        let loss = g.l1_loss(x, z, Reduction::Sum).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        let b = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(TensorError::Dimension { node, .. }) => assert_eq!(node, 2),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[1], &[f64::MAX]));
        assert!(matches!(g.scale(a, 10.0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f32).sqrt()));
        let up = g.upsample_nearest(x, 3).unwrap();
        let back = g.avg_pool(up, 3).unwrap();
        assert_eq!(g.value(x), g.value(back));
    }
}
