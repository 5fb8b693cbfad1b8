//! Layers shared by the Cold & Warm network and the baseline two-tower.
//! Every block keeps the activations its backward pass needs in an explicit
//! trace rather than inside itself, so forward passes stay `&self`.

use crate::error::Result;
use crate::tensor::{
    concat_all, dense_backward, dense_forward, embedding_mean, embedding_mean_backward,
    Activation, Parameter, Rng, Tensor,
};

/// Named traversal over trainable parameters.
pub trait Module {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter));
}

pub fn named_params<M: Module + ?Sized>(m: &M) -> Vec<(String, &Parameter)> {
    let mut out = Vec::new();
    m.visit("", &mut |n, p| out.push((n, p)));
    out
}

pub fn named_params_mut<M: Module + ?Sized>(m: &mut M) -> Vec<(String, &mut Parameter)> {
    let mut out = Vec::new();
    m.visit_mut("", &mut |n, p| out.push((n, p)));
    out
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Parameter {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        f(prefix.to_string(), self);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        f(prefix.to_string(), self);
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

/// Embedding table initialised uniformly in `±1/√dim`.
pub fn embedding_table(rows: usize, dim: usize, rng: &mut Rng) -> Parameter {
    Parameter::uniform(rows, dim, 1.0 / (dim as f64).sqrt(), rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
    pub activation: Activation,
}

impl Dense {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        Self {
            w: Parameter::uniform(inputs, outputs, 1.0 / (inputs as f64).sqrt(), rng),
            b: Parameter::zeros(1, outputs),
            activation,
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            w: Parameter::zeros(inputs, outputs),
            b: Parameter::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.shape().0
    }

    pub fn outputs(&self) -> usize {
        self.w.shape().1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dense_forward(x, &self.w, &self.b, self.activation)
    }

    pub fn backward(&mut self, x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
        dense_backward(x, y, dy, &mut self.w, &mut self.b, self.activation)
    }
}

impl Module for Dense {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrace {
    pub activations: Vec<Tensor>,
}

impl MlpTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }
}

impl Mlp {
    /// Layers `sizes[0]→sizes[1]→…`, each with the paired activation.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(sizes.len(), activations.len() + 1);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Dense::new(w[0], w[1], a, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: Tensor) -> Result<MlpTrace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for layer in &self.layers {
            let y = layer.forward(activations.last().expect("non-empty"))?;
            activations.push(y);
        }
        Ok(MlpTrace { activations })
    }

    pub fn backward(&mut self, trace: &MlpTrace, dy: Tensor) -> Tensor {
        let mut grad = dy;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(&trace.activations[i], &trace.activations[i + 1], &grad);
        }
        grad
    }
}

impl Module for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.layers.visit(prefix, f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.layers.visit_mut(prefix, f);
    }
}

/// One table per categorical field; the output concatenates one row per field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEmbeddings {
    pub tables: Vec<Parameter>,
    pub dim: usize,
}

impl FieldEmbeddings {
    pub fn new(cardinalities: &[usize], dim: usize, rng: &mut Rng) -> Self {
        Self {
            tables: cardinalities
                .iter()
                .map(|&n| embedding_table(n, dim, rng))
                .collect(),
            dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.tables.len() * self.dim
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Tensor> {
        let bags: Vec<&[u32]> = ids.iter().map(std::slice::from_ref).collect();
        self.forward_bags(&bags)
    }

    pub fn backward(&mut self, ids: &[u32], dy: &Tensor) {
        let bags: Vec<&[u32]> = ids.iter().map(std::slice::from_ref).collect();
        self.backward_bags(&bags, dy);
    }

    /// Mean of each field's rows for multi-valued fields.
    pub fn forward_bags(&self, bags: &[&[u32]]) -> Result<Tensor> {
        assert_eq!(bags.len(), self.tables.len(), "one id bag per field");
        let parts = self
            .tables
            .iter()
            .zip(bags)
            .map(|(t, ids)| embedding_mean(t, ids, self.dim).map(|p| p.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(concat_all(&parts.iter().collect::<Vec<_>>()))
    }

    pub fn backward_bags(&mut self, bags: &[&[u32]], dy: &Tensor) {
        for (f, (table, ids)) in self.tables.iter_mut().zip(bags).enumerate() {
            embedding_mean_backward(table, ids, &dy.as_slice()[f * self.dim..(f + 1) * self.dim]);
        }
    }
}

impl Module for FieldEmbeddings {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.tables.visit(prefix, f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.tables.visit_mut(prefix, f);
    }
}

/// `e_up`: per-field profile embeddings, concatenated, one dense layer to d.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTower {
    pub fields: FieldEmbeddings,
    pub dense: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTrace {
    pub input: Tensor,
    pub output: Tensor,
}

impl ProfileTower {
    pub fn new(cardinalities: &[usize], d: usize, rng: &mut Rng) -> Self {
        let fields = FieldEmbeddings::new(cardinalities, d, rng);
        let dense = Dense::new(fields.output_dim().max(1), d, Activation::Identity, rng);
        Self { fields, dense }
    }

    pub fn forward(&self, profile: &[u32]) -> Result<ProfileTrace> {
        let mut input = self.fields.forward(profile)?;
        if input.is_empty() {
            input = Tensor::zeros(1, 1);
        }
        let output = self.dense.forward(&input)?;
        Ok(ProfileTrace { input, output })
    }

    pub fn backward(&mut self, profile: &[u32], trace: &ProfileTrace, dy: &Tensor) {
        let dx = self.dense.backward(&trace.input, &trace.output, dy);
        if !profile.is_empty() {
            self.fields.backward(profile, &dx);
        }
    }
}

impl Module for ProfileTower {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.fields.visit(&join(prefix, "fields"), f);
        self.dense.visit(&join(prefix, "dense"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.fields.visit_mut(&join(prefix, "fields"), f);
        self.dense.visit_mut(&join(prefix, "dense"), f);
    }
}

/// Inputs of the item tower: the item index and its multi-valued fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub item: u32,
    pub fields: Vec<Vec<u32>>,
}

/// `e_i`: item-id embedding plus mean-pooled field embeddings, then an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemTower {
    pub ids: Parameter,
    pub fields: FieldEmbeddings,
    pub mlp: Mlp,
}

impl ItemTower {
    pub fn new(n_items: usize, field_cardinalities: &[usize], d: usize, rng: &mut Rng) -> Self {
        let ids = embedding_table(n_items, d, rng);
        let fields = FieldEmbeddings::new(field_cardinalities, d, rng);
        let input = d + fields.output_dim();
        let mlp = Mlp::new(
            &[input, d, d],
            &[Activation::Relu, Activation::Identity],
            rng,
        );
        Self { ids, fields, mlp }
    }

    pub fn forward(&self, item: &ItemFeatures) -> Result<MlpTrace> {
        let id = crate::tensor::embedding_lookup(&self.ids, item.item as usize)?;
        let bags: Vec<&[u32]> = item.fields.iter().map(Vec::as_slice).collect();
        let fields = self.fields.forward_bags(&bags)?;
        self.mlp.forward(crate::tensor::concat(&id, &fields))
    }

    pub fn backward(&mut self, item: &ItemFeatures, trace: &MlpTrace, dy: Tensor) {
        let dx = self.mlp.backward(trace, dy);
        let d = self.ids.shape().1;
        crate::tensor::embedding_backward(&mut self.ids, item.item as usize, &dx.as_slice()[..d]);
        let bags: Vec<&[u32]> = item.fields.iter().map(Vec::as_slice).collect();
        let rest = Tensor::row_vector(dx.as_slice()[d..].to_vec());
        self.fields.backward_bags(&bags, &rest);
    }
}

impl Module for ItemTower {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        f(join(prefix, "ids"), &self.ids);
        self.fields.visit(&join(prefix, "fields"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        f(join(prefix, "ids"), &mut self.ids);
        self.fields.visit_mut(&join(prefix, "fields"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}
