use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{
    import_prefix, read_safetensors, CheckpointMeta, FORMAT_VERSION, TOKENIZER_FILE, WEIGHTS_FILE, WORD_VOCAB_FILE,
};
use super::head::{ClassifierHead, HeadConfig};
use super::image_encoder::{ImageArchitecture, ImageBackbone, ImageEncoder};
use super::init::{is_buffer, seeded_init};
use super::text_encoder::{batch_tensors, TextArchitecture, TextBackbone, TextEncoder, TransformerShape};
use super::{argmax, BaselineParams, ModelFamily, Prediction};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::preprocess::{clean_text, prepare_image, CleanText, ImageSpec, TextTokenizer, WordVocabulary, CLEANING_RULES_VERSION};

/// Fine-tuned unimodal checkpoints whose encoders seed a fusion model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStart {
    pub text: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

/// Architecture choices shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub text_backbone: TextBackbone,
    pub image_backbone: ImageBackbone,
    /// Root holding one directory per published checkpoint id.
    pub weights_dir: PathBuf,
    pub hidden_width: usize,
    pub dropout: f32,
    pub image: ImageSpec,
    /// Minimum count for a word to enter a fitted word vocabulary.
    pub min_word_count: usize,
    pub warm_start: WarmStart,
    pub baseline: BaselineParams,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            text_backbone: TextBackbone::default(),
            image_backbone: ImageBackbone::default(),
            weights_dir: PathBuf::from("weights"),
            hidden_width: 512,
            dropout: 0.1,
            image: ImageSpec::default(),
            min_word_count: 1,
            warm_start: WarmStart::default(),
            baseline: BaselineParams::default(),
        }
    }
}

/// Inputs for one mini-batch, already on the device.
#[derive(Debug)]
pub struct PreparedBatch {
    /// Positions (within the requested slice) that made it into the batch.
    pub kept: Vec<usize>,
    pub token_ids: Option<Tensor>,
    pub attention_mask: Option<Tensor>,
    pub images: Option<Tensor>,
    /// `(sample id, message)` for samples that could not be prepared.
    pub failures: Vec<(String, String)>,
}

/// A text, image or fused classifier: encoders plus the shared head shape,
/// all parameters living in one variable map.
pub struct NeuralClassifier {
    family: ModelFamily,
    arity: usize,
    seed: u64,
    varmap: VarMap,
    text: Option<(TextEncoder, TextTokenizer, TextArchitecture)>,
    image: Option<(ImageEncoder, ImageArchitecture)>,
    head: ClassifierHead,
    image_spec: ImageSpec,
    text_checkpoint: Option<String>,
    image_checkpoint: Option<String>,
}

impl std::fmt::Debug for NeuralClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeuralClassifier")
            .field("family", &self.family)
            .field("arity", &self.arity)
            .field("head", self.head.config())
            .finish()
    }
}

enum WeightSource {
    Published(PathBuf),
    Random,
}

fn resolve_text(
    backbone: &TextBackbone,
    settings: &ModelSettings,
    texts: &[CleanText],
) -> Result<(TextArchitecture, TextTokenizer, WeightSource, Option<String>)> {
    match backbone {
        TextBackbone::Pretrained { checkpoint } => {
            let dir = settings.weights_dir.join(checkpoint);
            let config_path = dir.join("config.json");
            let config = std::fs::read_to_string(&config_path).map_err(|_| {
                Error::Config(format!(
                    "text encoder weights `{checkpoint}` unavailable: {} not found",
                    config_path.display()
                ))
            })?;
            let shape = TransformerShape::from_config_json(&config)?;
            let tokenizer = TextTokenizer::from_pretrained_dir(&dir)?;
            Ok((
                TextArchitecture::Transformer(shape),
                tokenizer,
                WeightSource::Published(dir.join("model.safetensors")),
                Some(checkpoint.clone()),
            ))
        }
        TextBackbone::Transformer(shape) => {
            let vocab = WordVocabulary::fit(texts, settings.min_word_count);
            let shape = TransformerShape {
                vocab_size: vocab.len(),
                ..shape.clone()
            };
            Ok((TextArchitecture::Transformer(shape), TextTokenizer::Word(vocab), WeightSource::Random, None))
        }
        TextBackbone::BagOfWords { embed_dim } => {
            let vocab = WordVocabulary::fit(texts, settings.min_word_count);
            let arch = TextArchitecture::BagOfWords {
                vocab_size: vocab.len(),
                embed_dim: *embed_dim,
            };
            Ok((arch, TextTokenizer::Word(vocab), WeightSource::Random, None))
        }
    }
}

fn resolve_image(backbone: &ImageBackbone, settings: &ModelSettings) -> Result<(WeightSource, Option<String>)> {
    match backbone {
        ImageBackbone::Pretrained { checkpoint } => {
            let path = settings.weights_dir.join(checkpoint).join("model.safetensors");
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "image encoder weights `{checkpoint}` unavailable: {} not found",
                    path.display()
                )));
            }
            Ok((WeightSource::Published(path), Some(checkpoint.clone())))
        }
        _ => Ok((WeightSource::Random, None)),
    }
}

impl NeuralClassifier {
    /// Builds a fresh classifier. `training_texts` feeds word-vocabulary
    /// fitting for backbones that have no published tokenizer.
    pub fn build(
        family: ModelFamily,
        arity: usize,
        settings: &ModelSettings,
        training_texts: &[CleanText],
        seed: u64,
    ) -> Result<Self> {
        let width = family
            .feature_width()
            .ok_or_else(|| Error::Config(format!("{family} is not a neural family")))?;
        let text_parts = if family.uses_text() {
            Some(resolve_text(&settings.text_backbone, settings, training_texts)?)
        } else {
            None
        };
        let image_parts = if family.uses_image() {
            Some(resolve_image(&settings.image_backbone, settings)?)
        } else {
            None
        };
        let head = HeadConfig {
            input_width: width,
            hidden_width: settings.hidden_width,
            arity,
            dropout: settings.dropout,
        };
        let (text, text_source, text_checkpoint) = match text_parts {
            Some((arch, tokenizer, source, checkpoint)) => (Some((arch, tokenizer)), source, checkpoint),
            None => (None, WeightSource::Random, None),
        };
        let (image_source, image_checkpoint) = image_parts.unwrap_or((WeightSource::Random, None));
        let mut model = Self::assemble(
            family,
            arity,
            seed,
            text,
            family.uses_image().then(|| settings.image_backbone.architecture()),
            head,
            settings.image,
        )?;
        model.text_checkpoint = text_checkpoint;
        model.image_checkpoint = image_checkpoint;
        seeded_init(&model.varmap, seed, |_| true)?;
        if let WeightSource::Published(path) = text_source {
            import_prefix(&model.varmap, "text_encoder.", &read_safetensors(&path)?, true)?;
        }
        if let WeightSource::Published(path) = image_source {
            import_prefix(&model.varmap, "image_encoder.", &read_safetensors(&path)?, true)?;
        }
        model.apply_warm_start(&settings.warm_start)?;
        Ok(model)
    }

    fn assemble(
        family: ModelFamily,
        arity: usize,
        seed: u64,
        text: Option<(TextArchitecture, TextTokenizer)>,
        image: Option<ImageArchitecture>,
        head: HeadConfig,
        image_spec: ImageSpec,
    ) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let text = match text {
            Some((arch, tokenizer)) => Some((TextEncoder::new(&arch, vb.pp("text_encoder"))?, tokenizer, arch)),
            None => None,
        };
        let image = match image {
            Some(arch) => Some((ImageEncoder::new(&arch, vb.pp("image_encoder"))?, arch)),
            None => None,
        };
        let head = ClassifierHead::new(head, vb.pp("head"))?;
        Ok(Self {
            family,
            arity,
            seed,
            varmap,
            text,
            image,
            head,
            image_spec,
            text_checkpoint: None,
            image_checkpoint: None,
        })
    }

    fn apply_warm_start(&mut self, warm: &WarmStart) -> Result<()> {
        if let (Some(dir), Some((_, _, arch))) = (&warm.text, &self.text) {
            let meta = CheckpointMeta::load(dir)?;
            if meta.text_architecture.as_ref() != Some(arch) {
                return Err(Error::Config(format!(
                    "warm-start text checkpoint {} has a different architecture",
                    dir.display()
                )));
            }
            let tensors = read_safetensors(&dir.join(WEIGHTS_FILE))?;
            import_prefix(&self.varmap, "text_encoder.", &tensors, false)?;
            let tokenizer = load_tokenizer(dir)?;
            if let Some((_, t, _)) = &mut self.text {
                *t = tokenizer;
            }
        }
        if let (Some(dir), Some((_, arch))) = (&warm.image, &self.image) {
            let meta = CheckpointMeta::load(dir)?;
            if meta.image_architecture.as_ref() != Some(arch) {
                return Err(Error::Config(format!(
                    "warm-start image checkpoint {} has a different architecture",
                    dir.display()
                )));
            }
            let tensors = read_safetensors(&dir.join(WEIGHTS_FILE))?;
            import_prefix(&self.varmap, "image_encoder.", &tensors, false)?;
        }
        Ok(())
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn image_spec(&self) -> &ImageSpec {
        &self.image_spec
    }

    pub fn tokenizer(&self) -> Option<&TextTokenizer> {
        self.text.as_ref().map(|(_, t, _)| t)
    }

    /// Trainable variables, excluding normalisation running statistics.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        let mut named: Vec<(&String, &Var)> = data.iter().filter(|(n, _)| !is_buffer(n)).collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    /// Deep copy of every variable, for early-stopping rollback.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        data.iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &HashMap<String, Tensor>) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        for (name, var) in data.iter() {
            let t = snapshot
                .get(name)
                .ok_or_else(|| Error::Config(format!("snapshot lacks {name}")))?;
            var.set(t)?;
        }
        Ok(())
    }

    /// SHA-256 over all parameter bytes in name order.
    pub fn parameter_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        let mut hasher = Sha256::new();
        for name in names {
            hasher.update(name.as_bytes());
            let values: Vec<f32> = data[name].flatten_all()?.to_vec1()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    /// Tokenizes and decodes the inputs this family needs. Samples whose
    /// image cannot be read are reported in `failures` and left out.
    pub fn prepare(&self, samples: &[&Sample]) -> Result<PreparedBatch> {
        let mut kept = Vec::with_capacity(samples.len());
        let mut failures = Vec::new();
        let mut pixels = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if self.image.is_some() {
                let Some(path) = s.image_path() else {
                    failures.push((s.id.clone(), "no readable image".to_string()));
                    continue;
                };
                match prepare_image(path, &s.id, &self.image_spec) {
                    Ok(t) => pixels.extend_from_slice(&t.data),
                    Err(e) => {
                        failures.push((s.id.clone(), e.to_string()));
                        continue;
                    }
                }
            }
            kept.push(i);
        }
        let (token_ids, attention_mask) = match &self.text {
            Some((_, tokenizer, _)) if !kept.is_empty() => {
                let mut ids = Vec::with_capacity(kept.len());
                let mut masks = Vec::with_capacity(kept.len());
                for &i in &kept {
                    let seq = tokenizer.tokenize(&clean_text(&samples[i].text))?;
                    ids.push(seq.token_ids);
                    masks.push(seq.attention_mask.into_iter().map(u32::from).collect());
                }
                let (ids, masks) = batch_tensors(&ids, &masks)?;
                (Some(ids), Some(masks))
            }
            _ => (None, None),
        };
        let images = if self.image.is_some() && !kept.is_empty() {
            let side = self.image_spec.size;
            Some(Tensor::from_vec(pixels, (kept.len(), 3, side, side), &Device::Cpu)?)
        } else {
            None
        };
        Ok(PreparedBatch {
            kept,
            token_ids,
            attention_mask,
            images,
            failures,
        })
    }

    /// Head input features for a prepared batch.
    pub fn features(&self, batch: &PreparedBatch) -> Result<Tensor> {
        let text = match (&self.text, &batch.token_ids, &batch.attention_mask) {
            (Some((enc, _, _)), Some(ids), Some(mask)) => Some(enc.forward(ids, mask)?),
            (Some(_), _, _) => return Err(Error::Config("batch lacks text inputs".into())),
            _ => None,
        };
        let image = match (&self.image, &batch.images) {
            (Some((enc, _)), Some(images)) => Some(enc.forward(images)?),
            (Some(_), None) => return Err(Error::Config("batch lacks image inputs".into())),
            _ => None,
        };
        Ok(match (text, image) {
            (Some(t), Some(i)) => Tensor::cat(&[&t, &i], 1)?,
            (Some(t), None) => t,
            (None, Some(i)) => i,
            (None, None) => return Err(Error::Config("classifier has no encoder".into())),
        })
    }

    /// Logits; dropout is active only when `rng` is given.
    pub fn logits(&self, batch: &PreparedBatch, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let features = self.features(batch)?;
        match rng {
            Some(rng) => self.head.forward_train(&features, rng),
            None => self.head.forward(&features),
        }
    }

    /// Inference over a slice of samples in chunks of `batch_size`.
    pub fn predict(&self, samples: &[&Sample], batch_size: usize) -> Result<(Vec<Option<Prediction>>, Vec<(String, String)>)> {
        let mut out = vec![None; samples.len()];
        let mut failures = Vec::new();
        for (c, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
            let batch = self.prepare(chunk)?;
            failures.extend(batch.failures.iter().cloned());
            if batch.kept.is_empty() {
                continue;
            }
            let logits: Vec<Vec<f32>> = self.logits(&batch, None)?.to_vec2()?;
            for (&i, row) in batch.kept.iter().zip(logits) {
                let logits: Vec<f64> = row.into_iter().map(f64::from).collect();
                out[c * batch_size.max(1) + i] = Some(Prediction {
                    sample_id: chunk[i].id.clone(),
                    label: argmax(&logits),
                    logits,
                });
            }
        }
        Ok((out, failures))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        match self.tokenizer() {
            Some(TextTokenizer::Word(v)) => {
                let path = dir.join(WORD_VOCAB_FILE);
                std::fs::write(&path, v.to_json()?).map_err(|e| Error::io(&path, e))?;
            }
            Some(TextTokenizer::Pretrained { inner, .. }) => {
                inner
                    .save(dir.join(TOKENIZER_FILE), false)
                    .map_err(|e| Error::Config(format!("saving tokenizer: {e}")))?;
            }
            None => {}
        }
        self.meta().save(dir)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            family: self.family,
            arity: self.arity,
            text_checkpoint: self.text_checkpoint.clone(),
            image_checkpoint: self.image_checkpoint.clone(),
            text_architecture: self.text.as_ref().map(|(_, _, a)| a.clone()),
            image_architecture: self.image.as_ref().map(|(_, a)| a.clone()),
            head: Some(*self.head.config()),
            image_spec: self.image.as_ref().map(|_| self.image_spec),
            cleaning_rules: CLEANING_RULES_VERSION.to_string(),
            seed: self.seed,
        }
    }

    /// Rebuilds a classifier from a directory written by [`save`](Self::save).
    pub fn load(dir: &Path, meta: &CheckpointMeta) -> Result<Self> {
        let head = meta
            .head
            .ok_or_else(|| Error::Config("checkpoint sidecar lacks a head configuration".into()))?;
        let text = match &meta.text_architecture {
            Some(arch) => Some((arch.clone(), load_tokenizer(dir)?)),
            None => None,
        };
        let model = Self::assemble(
            meta.family,
            meta.arity,
            meta.seed,
            text,
            meta.image_architecture.clone(),
            head,
            meta.image_spec.unwrap_or_default(),
        )?;
        let tensors = read_safetensors(&dir.join(WEIGHTS_FILE))?;
        import_prefix(&model.varmap, "", &tensors, false)?;
        Ok(Self {
            text_checkpoint: meta.text_checkpoint.clone(),
            image_checkpoint: meta.image_checkpoint.clone(),
            ..model
        })
    }
}

fn load_tokenizer(dir: &Path) -> Result<TextTokenizer> {
    let vocab = dir.join(WORD_VOCAB_FILE);
    if vocab.is_file() {
        let text = std::fs::read_to_string(&vocab).map_err(|e| Error::io(&vocab, e))?;
        return Ok(TextTokenizer::Word(WordVocabulary::from_json(&text)?));
    }
    TextTokenizer::from_pretrained_dir(dir)
}
