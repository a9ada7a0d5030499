//! Tiny transformer sentence classifier.
//!
//! Token + learned position embeddings feed `num_layers` blocks of
//! multi-head self-attention and a ReLU MLP, each wrapped in a residual
//! connection. There is no layer normalization. Token states are mean-pooled
//! and passed to a linear classifier with a softmax output.
//!
//! Three passes share the cached [`ForwardTrace`]: gradient backprop for
//! training, relevance propagation for the difficulty measurer, and the
//! input-gradient saliency used by the gradient-based measurer.

mod backward;
mod checkpoint;
mod forward;
mod lrp;

pub use backward::{input_gradient, loss_and_gradients, Sample};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{forward, pooled_embedding, token_embedding, ForwardTrace, LayerTrace};
pub use lrp::{lrp_linear, lrp_relevance, lrp_residual, LrpOutput, DEFAULT_LRP_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};
use crate::numerics::{Matrix, RngStream};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 2,
            mlp_hidden: 64,
            num_classes,
            max_seq_len: 128,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("num_classes", self.num_classes),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PcsError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(PcsError::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(PcsError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Weights of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub w_1: Matrix,
    pub b_1: Matrix,
    pub w_2: Matrix,
    pub b_2: Matrix,
}

impl LayerParams {
    fn zeros(d: usize, hidden: usize) -> Self {
        LayerParams {
            w_q: Matrix::zeros(d, d),
            b_q: Matrix::zeros(1, d),
            w_k: Matrix::zeros(d, d),
            b_k: Matrix::zeros(1, d),
            w_v: Matrix::zeros(d, d),
            b_v: Matrix::zeros(1, d),
            w_o: Matrix::zeros(d, d),
            b_o: Matrix::zeros(1, d),
            w_1: Matrix::zeros(d, hidden),
            b_1: Matrix::zeros(1, hidden),
            w_2: Matrix::zeros(hidden, d),
            b_2: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 12] {
        [
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("w_1", &self.w_1),
            ("b_1", &self.b_1),
            ("w_2", &self.w_2),
            ("b_2", &self.b_2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.w_1,
            &mut self.b_1,
            &mut self.w_2,
            &mut self.b_2,
        ]
    }
}

/// All model weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embed: Matrix,
    pub pos_embed: Matrix,
    pub layers: Vec<LayerParams>,
    pub w_c: Matrix,
    pub b_c: Matrix,
}

/// A named view of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorName {
    /// Encoder layer index, `None` for embeddings and the classifier.
    pub layer: Option<usize>,
    pub name: &'static str,
}

impl TensorName {
    pub fn is_head(&self) -> bool {
        self.layer.is_none() && (self.name == "w_c" || self.name == "b_c")
    }

    pub fn is_bias(&self) -> bool {
        self.name.starts_with("b_")
    }
}

impl std::fmt::Display for TensorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layers.{l}.{}", self.name),
            None => f.write_str(self.name),
        }
    }
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        Ok(ModelParams {
            config: config.clone(),
            token_embed: Matrix::zeros(config.vocab_size, d),
            pos_embed: Matrix::zeros(config.max_seq_len, d),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::zeros(d, config.mlp_hidden))
                .collect(),
            w_c: Matrix::zeros(d, config.num_classes),
            b_c: Matrix::zeros(1, config.num_classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.config).expect("config already validated")
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<(TensorName, &Matrix)> {
        let mut out = vec![
            (TensorName { layer: None, name: "token_embed" }, &self.token_embed),
            (TensorName { layer: None, name: "pos_embed" }, &self.pos_embed),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, m) in layer.tensors() {
                out.push((TensorName { layer: Some(l), name }, m));
            }
        }
        out.push((TensorName { layer: None, name: "w_c" }, &self.w_c));
        out.push((TensorName { layer: None, name: "b_c" }, &self.b_c));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.token_embed, &mut self.pos_embed];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.w_c);
        out.push(&mut self.b_c);
        out
    }

    pub fn names(&self) -> Vec<TensorName> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Flattened copy of every weight in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(PcsError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_parameters()
            )));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Zeroes every bias tensor.
    pub fn zero_biases(&mut self) {
        for layer in &mut self.layers {
            for m in [
                &mut layer.b_q,
                &mut layer.b_k,
                &mut layer.b_v,
                &mut layer.b_o,
                &mut layer.b_1,
                &mut layer.b_2,
            ] {
                m.fill(0.0);
            }
        }
        self.b_c.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

fn fill_normal(m: &mut Matrix, std: f64, rng: &mut RngStream) {
    for x in m.data_mut() {
        *x = std * rng.normal();
    }
}

/// Random initialization: normal weights with standard deviation
/// `1/sqrt(fan_in)`, embeddings with `1/sqrt(embed_dim)`, zero biases.
pub fn init_params(config: &ModelConfig, rng: &mut RngStream) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(config)?;
    let d = config.embed_dim;
    let embed_std = 1.0 / (d as f64).sqrt();
    fill_normal(&mut p.token_embed, embed_std, rng);
    fill_normal(&mut p.pos_embed, embed_std, rng);
    let hidden_std = 1.0 / (config.mlp_hidden as f64).sqrt();
    for layer in &mut p.layers {
        fill_normal(&mut layer.w_q, embed_std, rng);
        fill_normal(&mut layer.w_k, embed_std, rng);
        fill_normal(&mut layer.w_v, embed_std, rng);
        fill_normal(&mut layer.w_o, embed_std, rng);
        fill_normal(&mut layer.w_1, embed_std, rng);
        fill_normal(&mut layer.w_2, hidden_std, rng);
    }
    fill_normal(&mut p.w_c, embed_std, rng);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig::new(20, 3)
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = config();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = config();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.vocab_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&config(), &mut RngStream::new(5)).unwrap();
        let b = init_params(&config(), &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
        let c = init_params(&config(), &mut RngStream::new(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_biases_are_zero() {
        let p = init_params(&config(), &mut RngStream::new(1)).unwrap();
        for (name, m) in p.tensors() {
            if name.is_bias() {
                assert!(m.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn embedding_row_norms_in_band() {
        let cfg = config();
        let p = init_params(&cfg, &mut RngStream::new(2)).unwrap();
        let d = cfg.embed_dim as f64;
        let sigma = 1.0 / d.sqrt();
        let (lo, hi) = (0.1 * d.sqrt() * sigma, 10.0 * d.sqrt() * sigma);
        for r in 0..cfg.vocab_size {
            let n = crate::numerics::norm(p.token_embed.row(r));
            assert!(n >= lo && n <= hi, "row {r} norm {n}");
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let p = init_params(&config(), &mut RngStream::new(3)).unwrap();
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.names().len(), 2 + 12 * 2 + 2);
    }
}
