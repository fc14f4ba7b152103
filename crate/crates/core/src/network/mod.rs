//! Fourier-feature embeddings, the gated ("modified") MLP, a plain MLP, and
//! the multi-network bundle used by multi-stage Runge–Kutta residuals.

mod embedding;
mod mlp;
mod params;

pub use embedding::{Embedding, FourierEmbedding1D, FourierEmbedding2D};
pub use mlp::{Activation, Body, LayerShape, ModifiedMlp, Pinn, PlainMlp, StageBundle};
pub use params::{ParameterVector, Span};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Modified,
    Plain,
}

/// Architecture hyper-parameters, independent of the problem geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    #[serde(default)]
    pub arch: Architecture,
    pub depth: usize,
    pub width: usize,
    /// Fourier modes `M` of the embedding.
    pub modes: usize,
}

impl NetSpec {
    pub fn body(&self, in_dim: usize, out_dim: usize) -> Body {
        match self.arch {
            Architecture::Modified => Body::Modified(ModifiedMlp {
                in_dim,
                width: self.width,
                depth: self.depth,
                out_dim,
                activation: Activation::Tanh,
            }),
            Architecture::Plain => Body::Plain(PlainMlp {
                in_dim,
                width: self.width,
                depth: self.depth,
                out_dim,
                activation: Activation::Tanh,
            }),
        }
    }
}
