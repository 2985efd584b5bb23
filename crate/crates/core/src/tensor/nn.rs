//! Named parameter storage and the two parameterised layers the networks use.

use rand::Rng;

use super::{Element, Gradients, Graph, NodeId, Result, Tensor, TensorError};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<E = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<E>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamSet<F> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Replace every tensor from a name-keyed source, checking shapes.
    pub fn load_from<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor<E>>) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = lookup(name).ok_or_else(|| TensorError::Invalid(format!("missing parameter {name}")))?;
            if src.dims() != slot.dims() {
                return Err(TensorError::Invalid(format!(
                    "parameter {name}: expected dims {:?}, found {:?}",
                    slot.dims(),
                    src.dims()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    /// Record every parameter as a leaf of `g`. With `trainable == false` the
    /// leaves carry no gradient, which keeps inference graphs cheap.
    pub fn bind(&self, g: &mut Graph<E>, trainable: bool) -> Bound {
        let nodes = self
            .tensors
            .iter()
            .map(|t| if trainable { g.variable(t.clone()) } else { g.input(t.clone()) })
            .collect();
        Bound { nodes }
    }
}

/// Graph node ids of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradients for each parameter, in parameter order.
    pub fn grads<E: Element>(&self, g: &Graph<E>, grads: &Gradients<E>) -> Vec<Tensor<E>> {
        self.nodes.iter().map(|&n| grads.wrt(g, n)).collect()
    }
}

fn uniform_tensor(rng: &mut impl Rng, dims: &[usize], bound: f64) -> Tensor<f32> {
    Tensor::from_fn(dims, |_| rng.random_range(-bound..bound) as f32)
}

/// 2-D convolution with per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet<f32>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform_tensor(rng, &[cout, cin, k, k], bound));
        let b = ps.add(format!("{name}.bias"), uniform_tensor(rng, &[cout], bound));
        Self { w, b, stride, pad }
    }

    /// "Same" 3x3 convolution.
    pub fn same3(ps: &mut ParamSet<f32>, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(ps, rng, name, cin, cout, 3, 1, 1)
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, x: NodeId) -> Result<NodeId> {
        let y = g.conv2d(x, p.node(self.w), self.stride, self.pad)?;
        g.add_channel_bias(y, p.node(self.b))
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }
}

/// Fully connected layer.
#[derive(Clone, Debug)]
pub struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new(ps: &mut ParamSet<f32>, rng: &mut impl Rng, name: &str, fin: usize, fout: usize) -> Self {
        let bound = 1.0 / (fin as f64).sqrt();
        let w = ps.add(format!("{name}.weight"), uniform_tensor(rng, &[fout, fin], bound));
        let b = ps.add(format!("{name}.bias"), uniform_tensor(rng, &[fout], bound));
        Self { w, b }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.linear(x, p.node(self.w), p.node(self.b))
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }
}

/// Multiply a parameter in place, e.g. to start an output layer near zero.
pub fn scale_param(ps: &mut ParamSet<f32>, id: ParamId, factor: f32) {
    for v in ps.tensors_mut()[id.0].data_mut() {
        *v *= factor;
    }
}
