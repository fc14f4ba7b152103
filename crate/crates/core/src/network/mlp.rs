use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::Embedding;
use super::params::{ParameterVector, Span};
use crate::autodiff::taylor::Unary;
use crate::autodiff::{FieldModel, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
    /// Only usable for value evaluation (order 0).
    Relu,
}

impl Activation {
    fn unary(self) -> Unary {
        match self {
            Activation::Tanh => Unary::Tanh,
            Activation::Sin => Unary::Sin,
            Activation::Relu => Unary::Relu,
        }
    }
}

/// A dense layer as it appears in the layout: weight `fan_in x fan_out` then bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

fn layout_of(layers: &[LayerShape]) -> Vec<Span> {
    let mut spans = Vec::with_capacity(2 * layers.len());
    let mut off = 0;
    for l in layers {
        let wl = l.fan_in * l.fan_out;
        spans.push(Span { name: format!("{}.w", l.name), offset: off, len: wl });
        off += wl;
        spans.push(Span { name: format!("{}.b", l.name), offset: off, len: l.fan_out });
        off += l.fan_out;
    }
    spans
}

/// The gated architecture with two encoder branches `U`, `V`:
///
/// ```text
/// U = s(X Wu + bu), V = s(X Wv + bv), H1 = s(X W0 + b0)
/// Zn = s(Hn Wn + bn),  H(n+1) = (1 - Zn) * U + Zn * V,   n = 1..D-1
/// out = HD WD + bD
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifiedMlp {
    pub in_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModifiedMlp {
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut l = vec![
            LayerShape { name: "u".into(), fan_in: self.in_dim, fan_out: self.width },
            LayerShape { name: "v".into(), fan_in: self.in_dim, fan_out: self.width },
            LayerShape { name: "h0".into(), fan_in: self.in_dim, fan_out: self.width },
        ];
        for n in 1..self.depth {
            l.push(LayerShape { name: format!("z{n}"), fan_in: self.width, fan_out: self.width });
        }
        l.push(LayerShape { name: "out".into(), fan_in: self.width, fan_out: self.out_dim });
        l
    }
}

/// Plain tanh MLP with `depth` hidden layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainMlp {
    pub in_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl PlainMlp {
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut l = Vec::new();
        let mut fan_in = self.in_dim;
        for n in 0..self.depth {
            l.push(LayerShape { name: format!("h{n}"), fan_in, fan_out: self.width });
            fan_in = self.width;
        }
        l.push(LayerShape { name: "out".into(), fan_in, fan_out: self.out_dim });
        l
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    Modified(ModifiedMlp),
    Plain(PlainMlp),
}

impl Body {
    pub fn layers(&self) -> Vec<LayerShape> {
        match self {
            Body::Modified(m) => m.layers(),
            Body::Plain(p) => p.layers(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Body::Modified(m) => m.in_dim,
            Body::Plain(p) => p.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Body::Modified(m) => m.out_dim,
            Body::Plain(p) => p.out_dim,
        }
    }

    fn activation(&self) -> Activation {
        match self {
            Body::Modified(m) => m.activation,
            Body::Plain(p) => p.activation,
        }
    }

    pub fn layout(&self) -> Vec<Span> {
        layout_of(&self.layers())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    /// Records the body on a tape; `features` must be `in_dim` contiguous nodes.
    pub fn record<'a, const N: usize>(&self, tape: &'a Tape<'a, N>, offset: usize, features: Var<'a, N>) -> Result<Vec<Var<'a, N>>> {
        let act = self.activation();
        if act == Activation::Relu && N > 1 {
            return Err(Error::UnsupportedPrimitive("relu"));
        }
        let f = act.unary();
        let layers = self.layers();
        let mut off = offset;
        let mut dense = |input: Var<'a, N>, l: &LayerShape| {
            let w = off;
            let b = w + l.fan_in * l.fan_out;
            off = b + l.fan_out;
            tape.affine(input, l.fan_in, l.fan_out, w, b)
        };
        let out = match self {
            Body::Modified(m) => {
                let w = m.width;
                let u = tape.unary_range(f, dense(features, &layers[0]), w);
                let v = tape.unary_range(f, dense(features, &layers[1]), w);
                let mut h = tape.unary_range(f, dense(features, &layers[2]), w);
                for l in &layers[3..layers.len() - 1] {
                    let z = tape.unary_range(f, dense(h, l), w);
                    h = tape.gate_range(z, u, v, w);
                }
                dense(h, layers.last().unwrap())
            }
            Body::Plain(p) => {
                let mut h = features;
                for l in &layers[..layers.len() - 1] {
                    h = tape.unary_range(f, dense(h, l), p.width);
                }
                dense(h, layers.last().unwrap())
            }
        };
        Ok((0..self.out_dim()).map(|j| tape.at(out, j)).collect())
    }

    /// Plain evaluation on a feature vector.
    pub fn forward(&self, params: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.in_dim() {
            return Err(Error::ShapeError { expected: self.in_dim(), got: features.len() });
        }
        if params.len() != self.param_count() {
            return Err(Error::ShapeError { expected: self.param_count(), got: params.len() });
        }
        let tape = Tape::<1>::new(params);
        let first = tape.leaf([features[0]]);
        for &x in &features[1..] {
            tape.leaf([x]);
        }
        let outs = self.record(&tape, 0, first)?;
        Ok(outs.iter().map(|v| v.value()).collect())
    }
}

/// Embedding followed by a trainable body: the field `x -> u_theta(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pinn {
    pub embedding: Embedding,
    pub body: Body,
}

impl Pinn {
    pub fn new(embedding: Embedding, body: Body) -> Result<Self> {
        if embedding.feature_dim() != body.in_dim() {
            return Err(Error::ShapeError { expected: embedding.feature_dim(), got: body.in_dim() });
        }
        Ok(Self { embedding, body })
    }

    pub fn layout(&self) -> Vec<Span> {
        self.body.layout()
    }

    /// Layer names in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        self.body.layers().into_iter().map(|l| l.name).collect()
    }

    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(&self, seed: u64) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.body.param_count());
        for l in self.body.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for _ in 0..l.fan_in * l.fan_out {
                values.push(rng.random_range(-limit..limit));
            }
            values.extend(std::iter::repeat_n(0.0, l.fan_out));
        }
        ParameterVector::new(values, self.layout()).expect("layout covers values")
    }

    /// Field values at a point.
    pub fn eval(&self, params: &[f64], point: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::<1>::new(params);
        let coords: Vec<[f64; 1]> = point.iter().map(|&x| [x]).collect();
        let outs = self.record(&tape, 0, &coords)?;
        Ok(outs.iter().map(|v| v.value()).collect())
    }
}

impl FieldModel for Pinn {
    fn coord_dim(&self) -> usize {
        self.embedding.coord_dim()
    }

    fn output_dim(&self) -> usize {
        self.body.out_dim()
    }

    fn param_count(&self) -> usize {
        self.body.param_count()
    }

    fn record<'a, const N: usize>(&self, tape: &'a Tape<'a, N>, offset: usize, coords: &[[f64; N]]) -> Result<Vec<Var<'a, N>>> {
        if coords.len() != self.coord_dim() {
            return Err(Error::ShapeError { expected: self.coord_dim(), got: coords.len() });
        }
        let feats = self.embedding.towers(coords);
        let first = tape.leaf(feats[0]);
        for f in &feats[1..] {
            tape.leaf(*f);
        }
        self.body.record(tape, offset, first)
    }
}

/// `q + 1` copies of one architecture with disjoint parameters: stage
/// fields `k1..kq` followed by the solution field `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBundle {
    pub net: Pinn,
    pub stages: usize,
}

impl StageBundle {
    pub fn new(net: Pinn, stages: usize) -> Self {
        Self { net, stages }
    }

    pub fn member_names(&self) -> Vec<String> {
        let mut n: Vec<String> = (1..=self.stages).map(|i| format!("k{i}")).collect();
        n.push("u".into());
        n
    }

    pub fn members(&self) -> usize {
        self.stages + 1
    }

    /// Offset of member `i` (stages first, solution last).
    pub fn member_offset(&self, i: usize) -> usize {
        i * self.net.param_count()
    }

    pub fn solution_offset(&self) -> usize {
        self.member_offset(self.stages)
    }

    pub fn param_count(&self) -> usize {
        self.members() * self.net.param_count()
    }

    /// Bundle vector from a solution vector and per-stage vectors.
    pub fn assemble(&self, stages: &[ParameterVector], solution: &ParameterVector) -> Result<ParameterVector> {
        if stages.len() != self.stages {
            return Err(Error::ShapeError { expected: self.stages, got: stages.len() });
        }
        let names = self.member_names();
        let mut parts: Vec<(&str, &ParameterVector)> = stages.iter().zip(&names).map(|(p, n)| (n.as_str(), p)).collect();
        parts.push(("u", solution));
        ParameterVector::concat(&parts)
    }

    pub fn init(&self, solution: &ParameterVector, seed: u64) -> Result<ParameterVector> {
        let stages: Vec<_> = (0..self.stages).map(|i| self.net.init(seed.wrapping_add(1 + i as u64))).collect();
        self.assemble(&stages, solution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::FourierEmbedding1D;

    fn small(modified: bool) -> Pinn {
        let emb = Embedding::Fourier1D(FourierEmbedding1D::new(3, 2.0));
        let body = if modified {
            Body::Modified(ModifiedMlp { in_dim: 7, width: 8, depth: 3, out_dim: 1, activation: Activation::Tanh })
        } else {
            Body::Plain(PlainMlp { in_dim: 7, width: 8, depth: 2, out_dim: 1, activation: Activation::Tanh })
        };
        Pinn::new(emb, body).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = small(true);
        let p = vec![0.0; net.param_count()];
        assert_eq!(net.body.forward(&p, &[0.3; 7]).unwrap(), vec![0.0]);
    }

    #[test]
    fn output_bias_passes_through_zero_layers() {
        let net = small(true);
        let mut pv = ParameterVector::zeros(net.layout()).unwrap();
        pv.slice_mut("out.b").unwrap()[0] = 1.75;
        assert_eq!(net.body.forward(pv.values(), &[-0.4; 7]).unwrap(), vec![1.75]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = small(false);
        let p = vec![0.0; net.param_count()];
        assert!(matches!(net.body.forward(&p, &[0.0; 6]), Err(Error::ShapeError { .. })));
    }

    #[test]
    fn init_is_seeded() {
        let net = small(true);
        assert_eq!(net.init(7), net.init(7));
        assert_ne!(net.init(7), net.init(8));
        let pv = net.init(7);
        assert!(pv.slice("z1.b").unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn relu_rejected_above_order_zero() {
        let emb = Embedding::Identity { dim: 1 };
        let body = Body::Plain(PlainMlp { in_dim: 1, width: 4, depth: 1, out_dim: 1, activation: Activation::Relu });
        let net = Pinn::new(emb, body).unwrap();
        let p = net.init(1);
        assert!(net.eval(p.values(), &[0.2]).is_ok());
        let r = crate::autodiff::taylor_eval(&net, p.values(), &[0.2], 0, 2);
        assert!(matches!(r, Err(Error::UnsupportedPrimitive("relu"))));
    }

    #[test]
    fn bundle_layout_is_member_major() {
        let net = small(false);
        let b = StageBundle::new(net.clone(), 2);
        let sol = net.init(3);
        let pv = b.init(&sol, 3).unwrap();
        assert_eq!(pv.len(), b.param_count());
        assert_eq!(pv.span("u.h0.w").unwrap().offset, b.solution_offset());
        assert_eq!(pv.member("u").unwrap(), sol);
    }
}
