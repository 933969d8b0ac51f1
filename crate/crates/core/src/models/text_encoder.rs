use candle_core::{DType, Module, Tensor, D};
use candle_nn::{embedding, linear, Embedding, Linear, VarBuilder};
use candle_transformers::models::bert::{BertModel, Config as BertConfig, HiddenAct};
use serde::{Deserialize, Serialize};

use super::TEXT_FEATURES;
use crate::error::{Error, Result};

/// Which text encoder to build, as written in model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextBackbone {
    /// Pretrained transformer read from `<weights_dir>/<checkpoint>/`.
    Pretrained { checkpoint: String },
    /// Transformer of the given shape, randomly initialised, with a word
    /// vocabulary fitted on the training texts.
    Transformer(TransformerShape),
    /// Mean of word embeddings; a small stand-in for quick experiments.
    BagOfWords { embed_dim: usize },
}

impl Default for TextBackbone {
    fn default() -> Self {
        Self::Pretrained {
            checkpoint: "bert-base-uncased".into(),
        }
    }
}

/// Transformer hyper-parameters that fix the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerShape {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
}

impl TransformerShape {
    /// The 12-layer, 768-wide base configuration.
    pub fn base(vocab_size: usize) -> Self {
        let c = BertConfig::default();
        Self {
            vocab_size,
            hidden_size: c.hidden_size,
            num_hidden_layers: c.num_hidden_layers,
            num_attention_heads: c.num_attention_heads,
            intermediate_size: c.intermediate_size,
            max_position_embeddings: c.max_position_embeddings,
            type_vocab_size: c.type_vocab_size,
            layer_norm_eps: c.layer_norm_eps,
        }
    }

    pub fn from_config_json(text: &str) -> Result<Self> {
        let c: BertConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("text encoder config.json: {e}")))?;
        Ok(Self {
            vocab_size: c.vocab_size,
            hidden_size: c.hidden_size,
            num_hidden_layers: c.num_hidden_layers,
            num_attention_heads: c.num_attention_heads,
            intermediate_size: c.intermediate_size,
            max_position_embeddings: c.max_position_embeddings,
            type_vocab_size: c.type_vocab_size,
            layer_norm_eps: c.layer_norm_eps,
        })
    }

    fn to_config(&self) -> BertConfig {
        BertConfig {
            vocab_size: self.vocab_size,
            hidden_size: self.hidden_size,
            num_hidden_layers: self.num_hidden_layers,
            num_attention_heads: self.num_attention_heads,
            intermediate_size: self.intermediate_size,
            hidden_act: HiddenAct::Gelu,
            max_position_embeddings: self.max_position_embeddings,
            type_vocab_size: self.type_vocab_size,
            layer_norm_eps: self.layer_norm_eps,
            ..BertConfig::default()
        }
    }
}

/// Fully resolved encoder architecture; stored in checkpoint sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextArchitecture {
    Transformer(TransformerShape),
    BagOfWords { vocab_size: usize, embed_dim: usize },
}

/// Maps token ids and an attention mask to one 768-wide vector per sequence.
pub enum TextEncoder {
    Transformer { model: BertModel, pooler: Linear },
    BagOfWords { embeddings: Embedding, pooler: Linear },
}

impl std::fmt::Debug for TextEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Transformer { .. } => f.write_str("TextEncoder::Transformer"),
            Self::BagOfWords { .. } => f.write_str("TextEncoder::BagOfWords"),
        }
    }
}

impl TextEncoder {
    pub fn new(arch: &TextArchitecture, vb: VarBuilder) -> Result<Self> {
        match arch {
            TextArchitecture::Transformer(shape) => {
                if shape.hidden_size % shape.num_attention_heads != 0 {
                    return Err(Error::Config(format!(
                        "hidden size {} is not divisible by {} heads",
                        shape.hidden_size, shape.num_attention_heads
                    )));
                }
                let config = shape.to_config();
                let model = BertModel::load(vb.clone(), &config)?;
                let pooler = linear(shape.hidden_size, TEXT_FEATURES, vb.pp("pooler.dense"))?;
                Ok(Self::Transformer { model, pooler })
            }
            TextArchitecture::BagOfWords {
                vocab_size,
                embed_dim,
            } => Ok(Self::BagOfWords {
                embeddings: embedding(*vocab_size, *embed_dim, vb.pp("embeddings.word_embeddings"))?,
                pooler: linear(*embed_dim, TEXT_FEATURES, vb.pp("pooler.dense"))?,
            }),
        }
    }

    /// `token_ids` and `attention_mask` are `(batch, len)` u32 tensors.
    pub fn forward(&self, token_ids: &Tensor, attention_mask: &Tensor) -> Result<Tensor> {
        match self {
            Self::Transformer { model, pooler } => {
                let token_types = token_ids.zeros_like()?;
                let hidden = model.forward(token_ids, &token_types, Some(attention_mask))?;
                let cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
                Ok(pooler.forward(&cls)?.tanh()?)
            }
            Self::BagOfWords { embeddings, pooler } => {
                let emb = embeddings.forward(token_ids)?;
                let mask = attention_mask.to_dtype(emb.dtype())?.unsqueeze(D::Minus1)?;
                let summed = emb.broadcast_mul(&mask)?.sum(1)?;
                let count = mask.sum(1)?.clamp(1.0, f64::INFINITY)?;
                let mean = summed.broadcast_div(&count)?;
                Ok(pooler.forward(&mean)?.tanh()?)
            }
        }
    }
}

/// Cuts a padded `(batch, len)` pair down to the longest real sequence.
/// Masked positions never influence the pooled output, so this only saves
/// work.
pub(crate) fn trim_padding(ids: &[Vec<u32>], masks: &[Vec<u32>]) -> (usize, Vec<u32>, Vec<u32>) {
    let len = masks
        .iter()
        .map(|m| m.iter().rposition(|&v| v != 0).map_or(1, |p| p + 1))
        .max()
        .unwrap_or(1);
    let mut flat_ids = Vec::with_capacity(ids.len() * len);
    let mut flat_mask = Vec::with_capacity(ids.len() * len);
    for (i, m) in ids.iter().zip(masks) {
        flat_ids.extend_from_slice(&i[..len]);
        flat_mask.extend_from_slice(&m[..len]);
    }
    (len, flat_ids, flat_mask)
}

pub(crate) fn batch_tensors(ids: &[Vec<u32>], masks: &[Vec<u32>]) -> Result<(Tensor, Tensor)> {
    let (len, flat_ids, flat_mask) = trim_padding(ids, masks);
    let dev = candle_core::Device::Cpu;
    let shape = (ids.len(), len);
    Ok((
        Tensor::from_vec(flat_ids, shape, &dev)?,
        Tensor::from_vec(flat_mask, shape, &dev)?.to_dtype(DType::U32)?,
    ))
}
