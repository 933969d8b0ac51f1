//! Weight import from published checkpoints and the on-disk format of
//! trained models: `weights.safetensors` plus a `checkpoint.json` sidecar.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use super::head::HeadConfig;
use super::image_encoder::ImageArchitecture;
use super::text_encoder::TextArchitecture;
use super::ModelFamily;
use crate::error::{Error, Result};
use crate::preprocess::ImageSpec;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const WORD_VOCAB_FILE: &str = "word_vocab.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TFIDF_FILE: &str = "tfidf_vocabulary.json";
pub const BASELINE_FILE: &str = "baseline.json";

/// Bumped whenever the sidecar layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// JSON sidecar stored next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub family: ModelFamily,
    pub arity: usize,
    pub text_checkpoint: Option<String>,
    pub image_checkpoint: Option<String>,
    pub text_architecture: Option<TextArchitecture>,
    pub image_architecture: Option<ImageArchitecture>,
    pub head: Option<HeadConfig>,
    pub image_spec: Option<ImageSpec>,
    pub cleaning_rules: String,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SIDECAR_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Self = serde_json::from_str(&text)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        Ok(meta)
    }
}

pub(crate) fn read_safetensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    if !path.is_file() {
        return Err(Error::Config(format!("weights file {} not found", path.display())));
    }
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

/// Names under which a published checkpoint may store the parameter that
/// this crate calls `name`.
fn published_names(name: &str) -> Vec<String> {
    let mut stems = vec![name.to_string()];
    if let Some(stem) = name.strip_suffix("LayerNorm.weight") {
        stems.push(format!("{stem}LayerNorm.gamma"));
    } else if let Some(stem) = name.strip_suffix("LayerNorm.bias") {
        stems.push(format!("{stem}LayerNorm.beta"));
    }
    let mut out = Vec::new();
    for s in stems {
        out.push(format!("bert.{s}"));
        out.push(format!("resnet.{s}"));
        out.push(s);
    }
    out
}

/// Copies every variable under `prefix` from `tensors`. Every variable must
/// be found with a matching shape; a partial import would silently mix
/// pretrained and random weights.
pub(crate) fn import_prefix(
    varmap: &VarMap,
    prefix: &str,
    tensors: &HashMap<String, Tensor>,
    published: bool,
) -> Result<usize> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut missing = Vec::new();
    let mut copied = 0;
    for (name, var) in data.iter() {
        let Some(local) = name.strip_prefix(prefix) else {
            continue;
        };
        let candidates = if published {
            published_names(local)
        } else {
            vec![name.clone()]
        };
        let Some(t) = candidates.iter().find_map(|c| tensors.get(c)) else {
            missing.push(name.clone());
            continue;
        };
        if t.dims() != var.dims() {
            return Err(Error::Config(format!(
                "weight {name}: checkpoint shape {:?} differs from model shape {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(&t.to_dtype(DType::F32)?)?;
        copied += 1;
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Config(format!(
            "{} weights missing from checkpoint, e.g. {}",
            missing.len(),
            missing.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(copied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::VarBuilder;

    #[test]
    fn published_names_cover_prefixes_and_aliases() {
        let names = published_names("embeddings.LayerNorm.weight");
        assert!(names.contains(&"bert.embeddings.LayerNorm.gamma".to_string()));
        assert!(names.contains(&"embeddings.LayerNorm.weight".to_string()));
        assert!(published_names("embedder.embedder.convolution.weight")
            .contains(&"resnet.embedder.embedder.convolution.weight".to_string()));
    }

    #[test]
    fn import_requires_every_weight() {
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu);
        candle_nn::linear(2, 2, vb.pp("enc.fc")).unwrap();
        let mut tensors = HashMap::new();
        tensors.insert("bert.fc.weight".to_string(), Tensor::ones((2, 2), DType::F32, &Device::Cpu).unwrap());
        assert!(matches!(import_prefix(&vm, "enc.", &tensors, true), Err(Error::Config(_))));
        tensors.insert("fc.bias".to_string(), Tensor::ones(2, DType::F32, &Device::Cpu).unwrap());
        assert_eq!(import_prefix(&vm, "enc.", &tensors, true).unwrap(), 2);
        let w: Vec<Vec<f32>> = vm.data().lock().unwrap()["enc.fc.weight"].to_vec2().unwrap();
        assert_eq!(w, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        tensors.insert("fc.bias".to_string(), Tensor::ones(3, DType::F32, &Device::Cpu).unwrap());
        assert!(import_prefix(&vm, "enc.", &tensors, true).is_err());
    }
}
