//! Mini-batch training with cross-entropy and AdamW, best-validation-epoch
//! retention, and inference over held-out views.

use std::collections::HashSet;
use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetView, Sample};
use crate::error::{Error, Result};
use crate::metrics::{confusion, macro_report, MetricReport};
use crate::models::checkpoint::{CheckpointMeta, BASELINE_FILE, FORMAT_VERSION, TFIDF_FILE};
use crate::models::{
    fit_baseline, predict_baseline, softmax, BaselineModel, ModelFamily, ModelSettings, NeuralClassifier, Prediction,
};
use crate::preprocess::{clean_text, fit_tfidf, tfidf_transform, CleanText, TfidfVocabulary, CLEANING_RULES_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 10,
            learning_rate: 1e-5,
            batch_size: 16,
            seed: 0,
            validation_fraction: 0.1,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate assigned to `family`.
    pub fn for_family(family: ModelFamily) -> Self {
        let learning_rate = match family {
            ModelFamily::ImageOnly => 1e-3,
            ModelFamily::Mmic => 5e-6,
            _ => 1e-5,
        };
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub retained_epoch: usize,
    /// Training samples left out because their inputs could not be prepared.
    #[serde(default)]
    pub excluded_train: usize,
}

impl TrainingTrace {
    pub fn val_accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Earliest epoch with the highest validation accuracy.
pub fn select_best_epoch(trace: &TrainingTrace) -> Result<usize> {
    best_index(&trace.val_accuracies()).ok_or_else(|| Error::Validation("empty training trace".into()))
}

fn best_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Keeps the state captured at the first epoch reaching the best score.
#[derive(Debug)]
pub struct EarlyStopping<S> {
    best: Option<(usize, f64, S)>,
}

impl<S> Default for EarlyStopping<S> {
    fn default() -> Self {
        Self { best: None }
    }
}

impl<S> EarlyStopping<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one epoch; `capture` runs only on a strict improvement.
    pub fn observe(&mut self, epoch: usize, score: f64, capture: impl FnOnce() -> Result<S>) -> Result<bool> {
        let improved = self.best.as_ref().is_none_or(|(_, best, _)| score > *best);
        if improved {
            self.best = Some((epoch, score, capture()?));
        }
        Ok(improved)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, s, _)| *s)
    }

    pub fn into_best(self) -> Option<(usize, f64, S)> {
        self.best
    }
}

/// A fitted model of any family.
#[derive(Debug)]
pub enum TrainedModel {
    Baseline {
        family: ModelFamily,
        model: BaselineModel,
        vocabulary: TfidfVocabulary,
        seed: u64,
    },
    Neural(Box<NeuralClassifier>),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Baseline { family, .. } => *family,
            Self::Neural(n) => n.family(),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::Baseline { model, .. } => model.arity(),
            Self::Neural(n) => n.arity(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            Self::Neural(n) => n.save(dir),
            Self::Baseline {
                family,
                model,
                vocabulary,
                seed,
            } => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                vocabulary.save(&dir.join(TFIDF_FILE))?;
                let path = dir.join(BASELINE_FILE);
                std::fs::write(&path, model.to_json()?).map_err(|e| Error::io(&path, e))?;
                CheckpointMeta {
                    format_version: FORMAT_VERSION,
                    family: *family,
                    arity: model.arity(),
                    text_checkpoint: None,
                    image_checkpoint: None,
                    text_architecture: None,
                    image_architecture: None,
                    head: None,
                    image_spec: None,
                    cleaning_rules: CLEANING_RULES_VERSION.to_string(),
                    seed: *seed,
                }
                .save(dir)
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = CheckpointMeta::load(dir)?;
        if meta.cleaning_rules != CLEANING_RULES_VERSION {
            tracing::warn!(
                stored = %meta.cleaning_rules,
                current = CLEANING_RULES_VERSION,
                "checkpoint was trained with different cleaning rules"
            );
        }
        if meta.family.is_baseline() {
            let vocabulary = TfidfVocabulary::load(&dir.join(TFIDF_FILE))?;
            let path = dir.join(BASELINE_FILE);
            let json = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(Self::Baseline {
                family: meta.family,
                model: BaselineModel::from_json(&json)?,
                vocabulary,
                seed: meta.seed,
            })
        } else {
            Ok(Self::Neural(Box::new(NeuralClassifier::load(dir, &meta)?)))
        }
    }

    /// Scores a slice of samples; `None` marks a sample whose inputs could
    /// not be prepared, with the reason in the second vector.
    pub fn predict(&self, samples: &[&Sample], batch_size: usize) -> Result<Scored> {
        match self {
            Self::Baseline { model, vocabulary, .. } => {
                let preds = samples
                    .iter()
                    .map(|s| {
                        let x = tfidf_transform(vocabulary, &clean_text(&s.text));
                        predict_baseline(Some(model), &s.id, &x).map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((preds, Vec::new()))
            }
            Self::Neural(n) => neural_predict(n, samples, batch_size),
        }
    }
}

/// A sample left out of scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub sample_id: String,
    pub reason: String,
}

/// Predictions for the scorable samples of a view, in view order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub labels: Vec<usize>,
    pub excluded: Vec<Excluded>,
}

impl Evaluation {
    pub fn report(&self, arity: usize) -> Result<MetricReport> {
        let predicted: Vec<usize> = self.predictions.iter().map(|p| p.label).collect();
        let counts = confusion(&predicted, &self.labels, arity)?;
        let mut report = macro_report(&counts)?;
        report.excluded = self.excluded.len();
        Ok(report)
    }
}

/// Inference-only pass over `test`; parameters are never touched.
pub fn evaluate_model(model: &TrainedModel, test: &DatasetView, batch_size: usize) -> Result<Evaluation> {
    if test.arity() != model.arity() {
        return Err(Error::Validation(format!(
            "model arity {} does not match view arity {}",
            model.arity(),
            test.arity()
        )));
    }
    evaluate_with(model.family(), model.arity(), test, |xs| model.predict(xs, batch_size))
}

type Scored = (Vec<Option<Prediction>>, Vec<Excluded>);

fn neural_predict(model: &NeuralClassifier, samples: &[&Sample], batch_size: usize) -> Result<Scored> {
    let (preds, failures) = model.predict(samples, batch_size)?;
    let excluded = failures
        .into_iter()
        .map(|(sample_id, reason)| Excluded { sample_id, reason })
        .collect();
    Ok((preds, excluded))
}

fn evaluate_with(
    family: ModelFamily,
    arity: usize,
    test: &DatasetView,
    predict: impl FnOnce(&[&Sample]) -> Result<Scored>,
) -> Result<Evaluation> {
    let mut excluded = Vec::new();
    let mut usable: Vec<&Sample> = Vec::with_capacity(test.len());
    for s in test.iter() {
        if family.uses_image() && !s.has_image() {
            excluded.push(Excluded {
                sample_id: s.id.clone(),
                reason: "image missing".into(),
            });
        } else {
            usable.push(s);
        }
    }
    let (preds, failures) = predict(&usable)?;
    excluded.extend(failures);
    let mut predictions = Vec::with_capacity(preds.len());
    let mut labels = Vec::with_capacity(preds.len());
    for (s, p) in usable.iter().zip(preds) {
        if let Some(p) = p {
            labels.push(s.label(arity).expect("view invariant: every sample is labelled"));
            predictions.push(p);
        }
    }
    Ok(Evaluation {
        predictions,
        labels,
        excluded,
    })
}

/// Derives an independent stream seed from a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_views(train: &DatasetView, val: &DatasetView) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation views must be non-empty".into()));
    }
    if train.arity() != val.arity() {
        return Err(Error::Validation(format!(
            "arity mismatch: train {} vs validation {}",
            train.arity(),
            val.arity()
        )));
    }
    let ids: HashSet<&str> = train.ids().into_iter().collect();
    if let Some(dup) = val.ids().into_iter().find(|id| ids.contains(id)) {
        return Err(Error::Validation(format!("sample {dup} is in both train and validation")));
    }
    Ok(())
}

/// Trains one model of `family` and returns it at its best validation epoch.
pub fn train(
    family: ModelFamily,
    train: &DatasetView,
    val: &DatasetView,
    config: &TrainConfig,
    settings: &ModelSettings,
) -> Result<(TrainedModel, TrainingTrace)> {
    config.validate()?;
    check_views(train, val)?;
    if family.is_baseline() {
        train_baseline(family, train, val, config, settings)
    } else {
        train_neural(family, train, val, config, settings)
    }
}

fn accuracy_of(eval: &Evaluation) -> f64 {
    if eval.labels.is_empty() {
        return 0.0;
    }
    let correct = eval
        .predictions
        .iter()
        .zip(&eval.labels)
        .filter(|(p, &l)| p.label == l)
        .count();
    correct as f64 / eval.labels.len() as f64
}

fn train_baseline(
    family: ModelFamily,
    train: &DatasetView,
    val: &DatasetView,
    config: &TrainConfig,
    settings: &ModelSettings,
) -> Result<(TrainedModel, TrainingTrace)> {
    let kind = family.baseline_kind().expect("baseline family");
    let texts: Vec<CleanText> = train.iter().map(|s| clean_text(&s.text)).collect();
    let vocabulary = fit_tfidf(&texts)?;
    let features: Vec<_> = texts.iter().map(|t| tfidf_transform(&vocabulary, t)).collect();
    let labels = train.labels();
    let model = fit_baseline(kind, &features, &labels, train.arity(), &settings.baseline)?;
    let train_loss = features
        .iter()
        .zip(&labels)
        .map(|(x, &y)| -softmax(&model.scores(x))[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64;
    let trained = TrainedModel::Baseline {
        family,
        model,
        vocabulary,
        seed: config.seed,
    };
    let val_accuracy = accuracy_of(&evaluate_model(&trained, val, config.batch_size)?);
    tracing::info!(family = %family, epoch = 0, train_loss, val_accuracy, "epoch finished");
    let trace = TrainingTrace {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss,
            val_accuracy,
        }],
        retained_epoch: 0,
        excluded_train: 0,
    };
    Ok((trained, trace))
}

fn train_neural(
    family: ModelFamily,
    train: &DatasetView,
    val: &DatasetView,
    config: &TrainConfig,
    settings: &ModelSettings,
) -> Result<(TrainedModel, TrainingTrace)> {
    let arity = train.arity();
    let mut samples: Vec<&Sample> = train.iter().collect();
    let mut excluded_train = 0;
    if family.uses_image() {
        samples.retain(|s| s.has_image());
        excluded_train = train.len() - samples.len();
        if samples.is_empty() {
            return Err(Error::Validation("no training sample has a readable image".into()));
        }
    }
    let texts: Vec<CleanText> = samples.iter().map(|s| clean_text(&s.text)).collect();
    let model = NeuralClassifier::build(family, arity, settings, &texts, derive_seed(config.seed, 0))?;
    let mut optimizer = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut trace = TrainingTrace {
        excluded_train,
        ..TrainingTrace::default()
    };
    let mut stopper = EarlyStopping::new();
    let mut skipped: HashSet<String> = HashSet::new();
    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1 + 2 * epoch as u64)));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 + 2 * epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch_samples: Vec<&Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let batch = model.prepare(&batch_samples)?;
            for (id, reason) in &batch.failures {
                if skipped.insert(id.clone()) {
                    tracing::warn!(sample = %id, %reason, "training sample skipped");
                }
            }
            if batch.kept.is_empty() {
                continue;
            }
            let labels: Vec<u32> = batch
                .kept
                .iter()
                .map(|&i| batch_samples[i].label(arity).expect("labelled view") as u32)
                .collect();
            let targets = Tensor::from_vec(labels, batch.kept.len(), &Device::Cpu)?;
            let logits = model.logits(&batch, Some(&mut dropout_rng))?;
            let loss = candle_nn::loss::cross_entropy(&logits, &targets)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                trace.retained_epoch = stopper.best_epoch().unwrap_or(0);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    trace: Box::new(trace),
                });
            }
            optimizer.backward_step(&loss)?;
            loss_sum += value * batch.kept.len() as f64;
            seen += batch.kept.len();
        }
        let eval = evaluate_with(family, arity, val, |xs| neural_predict(&model, xs, config.batch_size))?;
        let val_accuracy = accuracy_of(&eval);
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        tracing::info!(family = %family, epoch, train_loss, val_accuracy, "epoch finished");
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });
        stopper.observe(epoch, val_accuracy, || model.snapshot())?;
    }
    let (best, _, snapshot) = stopper.into_best().expect("at least one epoch ran");
    model.restore(&snapshot)?;
    trace.retained_epoch = best;
    Ok((TrainedModel::Neural(Box::new(model)), trace))
}
