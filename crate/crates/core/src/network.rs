//! Student MLP (encoder → classifier head + projection head) and its
//! mean-teacher shadow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layer sizes. Input and class counts come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_embed_dim() -> usize {
    32
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: default_hidden(), embed_dim: default_embed_dim() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[1, out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect() };
        Self {
            weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("weight shape"),
            bias: Tensor::matrix(1, fan_out, draw(fan_out)).expect("bias shape"),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[1, fan_out]) }
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

/// Plain (off-tape) forward outputs, one row per input.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub embeddings: Tensor<T>,
}

/// Forward outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars<'t, T> {
    pub logits: Var<'t, T>,
    pub probs: Var<'t, T>,
    pub embeddings: Var<'t, T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    encoder: Vec<Linear<T>>,
    classifier: Linear<T>,
    projection: Linear<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_dim: usize, num_classes: usize, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::build(input_dim, num_classes, config, |i, o| Linear::init(i, o, rng))
    }

    /// All weights and biases zero.
    pub fn zeros(input_dim: usize, num_classes: usize, config: &ModelConfig) -> Result<Self> {
        Self::build(input_dim, num_classes, config, Linear::zeros)
    }

    fn build(
        input_dim: usize,
        num_classes: usize,
        config: &ModelConfig,
        mut layer: impl FnMut(usize, usize) -> Linear<T>,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 || config.embed_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::arg(
                "model",
                format!("input {input_dim}, classes {num_classes}, hidden {:?}, embed {}", config.hidden, config.embed_dim),
            ));
        }
        let mut encoder = Vec::with_capacity(config.hidden.len());
        let mut width = input_dim;
        for &h in &config.hidden {
            encoder.push(layer(width, h));
            width = h;
        }
        let classifier = layer(width, num_classes);
        let projection = layer(width, config.embed_dim);
        Ok(Self { encoder, classifier, projection })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().unwrap_or(&self.classifier).weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.weight.cols()
    }

    /// Parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &l.weight));
            out.push((format!("encoder.{i}.bias"), &l.bias));
        }
        for (name, l) in [("classifier", &self.classifier), ("projection", &self.projection)] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out
    }

    /// Same order as [`Network::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain([&mut self.classifier, &mut self.projection]) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn congruent(&self, other: &Self) -> bool {
        let (a, b) = (self.named_params(), other.named_params());
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.shape() == y.shape())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape("forward", format!("input {:?}, encoder expects {} features", x.shape(), self.input_dim())));
        }
        Ok(())
    }

    /// Forward pass without recording; used by the teacher and for evaluation.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Forward<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.encoder {
            h = l.apply(&h)?.relu();
        }
        let logits = self.classifier.apply(&h)?;
        let probs = logits.softmax_rows(T::one());
        let embeddings = self.projection.apply(&h)?.l2_normalize_rows();
        Ok(Forward { logits, probs, embeddings })
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundNetwork<'t, T> {
        let params = self.named_params().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
        BoundNetwork { params, depth: self.encoder.len() }
    }

    /// Copies gradients for `bound`'s leaves into each parameter's `grad` buffer.
    pub fn apply_gradients(&mut self, bound: &BoundNetwork<'_, T>, grads: &Gradients<T>) -> Result<()> {
        for (p, &v) in self.params_mut().into_iter().zip(&bound.params) {
            match grads.get(v) {
                Some(g) => p.set_grad(g.data().to_vec())?,
                None => p.set_grad(vec![T::zero(); p.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.clear_grad();
        }
    }
}

/// A [`Network`]'s parameters as tape leaves.
pub struct BoundNetwork<'t, T> {
    params: Vec<Var<'t, T>>,
    depth: usize,
}

impl<'t, T: Scalar> BoundNetwork<'t, T> {
    pub fn params(&self) -> &[Var<'t, T>] {
        &self.params
    }

    fn affine(&self, x: Var<'t, T>, layer: usize) -> Result<Var<'t, T>> {
        x.matmul(self.params[2 * layer])?.add(self.params[2 * layer + 1])
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<ForwardVars<'t, T>> {
        let mut h = x;
        for i in 0..self.depth {
            h = self.affine(h, i)?.relu();
        }
        let logits = self.affine(h, self.depth)?;
        let probs = logits.softmax(T::one())?;
        let embeddings = self.affine(h, self.depth + 1)?.l2_normalize_rows();
        Ok(ForwardVars { logits, probs, embeddings })
    }
}

/// Exponential-moving-average shadow of the student. Never placed on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher<T>(Network<T>);

impl<T: Scalar> Teacher<T> {
    /// Exact copy of the student.
    pub fn from_student(student: &Network<T>) -> Self {
        let mut net = student.clone();
        net.zero_grad();
        Self(net)
    }

    pub fn network(&self) -> &Network<T> {
        &self.0
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Forward<T>> {
        self.0.forward(x)
    }

    /// `θ_teacher ← ω θ_teacher + (1 − ω) θ_student`, elementwise.
    pub fn ema_update(&mut self, student: &Network<T>, omega: T) -> Result<()> {
        if !(omega >= T::zero() && omega <= T::one()) {
            return Err(Error::arg("omega", format!("must lie in [0, 1], got {omega}")));
        }
        if !self.0.congruent(student) {
            return Err(Error::shape("ema_update", "teacher and student differ in structure"));
        }
        let keep = T::one() - omega;
        for (t, (_, s)) in self.0.params_mut().into_iter().zip(student.named_params()) {
            for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
                *tv = omega * *tv + keep * sv;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Student and teacher parameters flattened into one `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Vec<ManifestEntry>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(student: &Network<T>, teacher: &Teacher<T>) -> Self {
        let mut manifest = Vec::new();
        let mut data = Vec::new();
        for (prefix, net) in [("student", student), ("teacher", teacher.network())] {
            for (name, t) in net.named_params() {
                manifest.push(ManifestEntry { name: format!("{prefix}.{name}"), shape: t.shape().to_vec(), offset: data.len() });
                data.extend(t.data().iter().map(|v| v.as_f64()));
            }
        }
        Self { manifest, data }
    }

    /// Writes parameters into networks of the matching architecture.
    pub fn restore_into<T: Scalar>(&self, student: &mut Network<T>, teacher: &mut Teacher<T>) -> Result<()> {
        let mut targets: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let names: Vec<String> = student.named_params().into_iter().map(|(n, _)| n).collect();
        for (n, t) in names.iter().zip(student.params_mut()) {
            targets.push((format!("student.{n}"), t));
        }
        for (n, t) in names.iter().zip(teacher.0.params_mut()) {
            targets.push((format!("teacher.{n}"), t));
        }
        if targets.len() != self.manifest.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, model has {}", self.manifest.len(), targets.len())));
        }
        for ((name, t), m) in targets.into_iter().zip(&self.manifest) {
            let n = t.numel();
            if name != m.name || t.shape() != m.shape.as_slice() || m.offset + n > self.data.len() {
                return Err(Error::Format(format!("checkpoint entry {} does not match {name} {:?}", m.name, t.shape())));
            }
            for (dst, &src) in t.data_mut().iter_mut().zip(&self.data[m.offset..m.offset + n]) {
                *dst = T::lit(src);
            }
        }
        Ok(())
    }

    /// Raw little-endian `f64` payload.
    pub fn data_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_parts(manifest: Vec<ManifestEntry>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("checkpoint payload is not a whole number of f64 values".into()));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { manifest, data })
    }
}
