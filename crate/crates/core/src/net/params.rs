use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NetError;

fn default_context() -> usize {
    1024
}
fn default_d_model() -> usize {
    256
}
fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    4
}

/// Transformer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "default_context")]
    pub context_len: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    /// Feed-forward width; `None` means `4 * d_model`.
    #[serde(default)]
    pub d_ff: Option<usize>,
    /// Residual dropout probability, applied only during training.
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            context_len: default_context(),
            d_model: default_d_model(),
            n_layers: default_layers(),
            n_heads: default_heads(),
            d_ff: None,
            dropout: 0.0,
        }
    }

    pub fn ff_width(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.context_len == 0 || self.d_model == 0 {
            return bad("vocab_size, context_len and d_model must be positive");
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.ff_width() == 0 {
            return bad("n_layers, n_heads and d_ff must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Weights of one pre-norm transformer block. Matrices are `[in x out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub qkv_w: Tensor<F>,
    pub qkv_b: Tensor<F>,
    pub proj_w: Tensor<F>,
    pub proj_b: Tensor<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
    pub fc_w: Tensor<F>,
    pub fc_b: Tensor<F>,
    pub fc_proj_w: Tensor<F>,
    pub fc_proj_b: Tensor<F>,
}

/// All trainable tensors. Also used as the gradient and optimizer-moment
/// container, since those share the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<F>,
    pub pos_emb: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_g: Tensor<F>,
    pub lnf_b: Tensor<F>,
    pub head_w: Tensor<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, NetError> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_width();
        let z = |s: &[usize]| Tensor::zeros(s);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_g: z(&[d]),
                ln1_b: z(&[d]),
                qkv_w: z(&[d, 3 * d]),
                qkv_b: z(&[3 * d]),
                proj_w: z(&[d, d]),
                proj_b: z(&[d]),
                ln2_g: z(&[d]),
                ln2_b: z(&[d]),
                fc_w: z(&[d, ff]),
                fc_b: z(&[ff]),
                fc_proj_w: z(&[ff, d]),
                fc_proj_b: z(&[d]),
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tok_emb: z(&[config.vocab_size, d]),
            pos_emb: z(&[config.context_len, d]),
            layers,
            lnf_g: z(&[d]),
            lnf_b: z(&[d]),
            head_w: z(&[d, config.vocab_size]),
        })
    }

    /// Weights ~ N(0, 0.02), biases and norm shifts 0, norm scales 1.
    ///
    /// Draws come from xoshiro256++ seeded through splitmix64
    /// (`Xoshiro256PlusPlus::seed_from_u64`) and are consumed in
    /// [`ModelParams::tensors`] order, so a given seed yields the same values
    /// for `f32` and `f64` models up to the final cast.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NetError> {
        let mut params = Self::zeros(config)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        for (name, t) in params.tensors_mut() {
            if name.ends_with("_g") {
                t.data.iter_mut().for_each(|v| *v = F::one());
            } else if name.ends_with("_b") {
                // biases and shifts stay zero
            } else {
                t.data
                    .iter_mut()
                    .for_each(|v| *v = F::of(normal.sample(&mut rng)));
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut v = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            v.extend([
                (p("ln1_g"), &l.ln1_g),
                (p("ln1_b"), &l.ln1_b),
                (p("qkv_w"), &l.qkv_w),
                (p("qkv_b"), &l.qkv_b),
                (p("proj_w"), &l.proj_w),
                (p("proj_b"), &l.proj_b),
                (p("ln2_g"), &l.ln2_g),
                (p("ln2_b"), &l.ln2_b),
                (p("fc_w"), &l.fc_w),
                (p("fc_b"), &l.fc_b),
                (p("fc_proj_w"), &l.fc_proj_w),
                (p("fc_proj_b"), &l.fc_proj_b),
            ]);
        }
        v.extend([
            ("lnf_g".to_string(), &self.lnf_g),
            ("lnf_b".to_string(), &self.lnf_b),
            ("head_w".to_string(), &self.head_w),
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut v = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            v.extend([
                (p("ln1_g"), &mut l.ln1_g),
                (p("ln1_b"), &mut l.ln1_b),
                (p("qkv_w"), &mut l.qkv_w),
                (p("qkv_b"), &mut l.qkv_b),
                (p("proj_w"), &mut l.proj_w),
                (p("proj_b"), &mut l.proj_b),
                (p("ln2_g"), &mut l.ln2_g),
                (p("ln2_b"), &mut l.ln2_b),
                (p("fc_w"), &mut l.fc_w),
                (p("fc_b"), &mut l.fc_b),
                (p("fc_proj_w"), &mut l.fc_proj_w),
                (p("fc_proj_b"), &mut l.fc_proj_b),
            ]);
        }
        v.extend([
            ("lnf_g".to_string(), &mut self.lnf_g),
            ("lnf_b".to_string(), &mut self.lnf_b),
            ("head_w".to_string(), &mut self.head_w),
        ]);
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros(&self.config).expect("valid config");
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }
}
