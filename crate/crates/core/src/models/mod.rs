//! The five model families: two TF-IDF baselines, the text-only and
//! image-only encoder classifiers, and the late-fusion multimodal model.

pub mod baseline;
pub mod checkpoint;
pub mod head;
pub mod image_encoder;
mod init;
pub mod network;
pub mod text_encoder;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baseline::{fit_baseline, predict_baseline, BaselineKind, BaselineModel, BaselineParams};
pub use head::{classify, ClassifierHead, HeadConfig};
pub use image_encoder::{ImageBackbone, ImageEncoder};
pub use network::{ModelSettings, NeuralClassifier};
pub use text_encoder::{TextBackbone, TextEncoder};

/// Width of the pooled text representation.
pub const TEXT_FEATURES: usize = 768;
/// Width of the pooled visual representation.
pub const IMAGE_FEATURES: usize = 2048;
/// Width of the concatenated representation.
pub const JOINT_FEATURES: usize = TEXT_FEATURES + IMAGE_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "NB")]
    NaiveBayes,
    #[serde(rename = "LR")]
    LogisticRegression,
    #[serde(rename = "TEXT_ONLY", alias = "BERT")]
    TextOnly,
    #[serde(rename = "IMAGE_ONLY", alias = "RESNET")]
    ImageOnly,
    #[serde(rename = "MMIC")]
    Mmic,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        Self::NaiveBayes,
        Self::LogisticRegression,
        Self::TextOnly,
        Self::ImageOnly,
        Self::Mmic,
    ];

    pub fn baseline_kind(self) -> Option<BaselineKind> {
        match self {
            Self::NaiveBayes => Some(BaselineKind::NaiveBayes),
            Self::LogisticRegression => Some(BaselineKind::LogisticRegression),
            _ => None,
        }
    }

    pub fn is_baseline(self) -> bool {
        self.baseline_kind().is_some()
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, Self::ImageOnly)
    }

    pub fn uses_image(self) -> bool {
        matches!(self, Self::ImageOnly | Self::Mmic)
    }

    /// Head input width for the neural families.
    pub fn feature_width(self) -> Option<usize> {
        match self {
            Self::TextOnly => Some(TEXT_FEATURES),
            Self::ImageOnly => Some(IMAGE_FEATURES),
            Self::Mmic => Some(JOINT_FEATURES),
            _ => None,
        }
    }

    /// Tag used in tables and on the command line.
    pub fn tag(self) -> &'static str {
        match self {
            Self::NaiveBayes => "NB",
            Self::LogisticRegression => "LR",
            Self::TextOnly => "TEXT_ONLY",
            Self::ImageOnly => "IMAGE_ONLY",
            Self::Mmic => "MMIC",
        }
    }

    /// Name used as the row label of result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::NaiveBayes => "NB",
            Self::LogisticRegression => "LR",
            Self::TextOnly => "BERT",
            Self::ImageOnly => "ResNet",
            Self::Mmic => "MMiC",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_uppercase()))
            .map_err(|_| Error::Config(format!("unknown model family `{s}`")))
    }
}

/// Output of a classifier for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub logits: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Text, visual and concatenated features for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub text_features: Vec<f32>,
    pub image_features: Vec<f32>,
    pub joint_features: Vec<f32>,
}

impl FeatureBundle {
    pub fn new(text_features: Vec<f32>, image_features: Vec<f32>) -> Result<Self> {
        let joint_features = fuse(&text_features, &image_features)?;
        Ok(Self {
            text_features,
            image_features,
            joint_features,
        })
    }
}

/// Concatenates a 768-wide text vector and a 2048-wide image vector.
pub fn fuse(text_features: &[f32], image_features: &[f32]) -> Result<Vec<f32>> {
    if text_features.len() != TEXT_FEATURES {
        return Err(Error::Dimension {
            context: "fuse text features",
            expected: TEXT_FEATURES,
            actual: text_features.len(),
        });
    }
    if image_features.len() != IMAGE_FEATURES {
        return Err(Error::Dimension {
            context: "fuse image features",
            expected: IMAGE_FEATURES,
            actual: image_features.len(),
        });
    }
    let mut joint = Vec::with_capacity(JOINT_FEATURES);
    joint.extend_from_slice(text_features);
    joint.extend_from_slice(image_features);
    Ok(joint)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_concatenates() {
        let joint = fuse(&[0.0; 768], &[1.0; 2048]).unwrap();
        assert_eq!(joint.len(), 2816);
        assert_eq!(joint.iter().sum::<f32>(), 2048.0);
        assert!(joint[..768].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_rejects_wrong_widths() {
        assert!(matches!(fuse(&[0.0; 767], &[0.0; 2048]), Err(Error::Dimension { .. })));
        assert!(matches!(fuse(&[0.0; 768], &[0.0; 2047]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn family_names_parse() {
        assert_eq!("mmic".parse::<ModelFamily>().unwrap(), ModelFamily::Mmic);
        assert_eq!("BERT".parse::<ModelFamily>().unwrap(), ModelFamily::TextOnly);
        assert_eq!("nb".parse::<ModelFamily>().unwrap(), ModelFamily::NaiveBayes);
        assert!("svm".parse::<ModelFamily>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn fuse_slices_back(text in proptest::collection::vec(-1e3f32..1e3, 768),
                            image in proptest::collection::vec(-1e3f32..1e3, 2048)) {
            let bundle = FeatureBundle::new(text.clone(), image.clone()).unwrap();
            proptest::prop_assert_eq!(&bundle.joint_features[..768], &text[..]);
            proptest::prop_assert_eq!(&bundle.joint_features[768..], &image[..]);
        }

        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50f64..50.0, 2..7)) {
            let p = softmax(&logits);
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            proptest::prop_assert_eq!(argmax(&p), argmax(&logits));
        }
    }
}
