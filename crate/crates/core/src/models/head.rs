use candle_core::{DType, Module, Tensor};
use candle_nn::{linear, Linear, VarBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Prediction};
use crate::error::{Error, Result};

/// Shape of the two-layer classification head; only `input_width` differs
/// between the text-only, image-only and fused classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_width: usize,
    pub hidden_width: usize,
    pub arity: usize,
    pub dropout: f32,
}

/// `affine -> ReLU -> dropout -> affine`, emitting one logit per label.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    hidden: Linear,
    output: Linear,
    config: HeadConfig,
}

impl ClassifierHead {
    pub fn new(config: HeadConfig, vb: VarBuilder) -> Result<Self> {
        if config.arity < 2 {
            return Err(Error::Config(format!("head arity must be >= 2, got {}", config.arity)));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        Ok(Self {
            hidden: linear(config.input_width, config.hidden_width, vb.pp("hidden"))?,
            output: linear(config.hidden_width, config.arity, vb.pp("output"))?,
            config,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        let width = x.dim(candle_core::D::Minus1)?;
        if width != self.config.input_width {
            return Err(Error::Dimension {
                context: "classifier head input",
                expected: self.config.input_width,
                actual: width,
            });
        }
        Ok(())
    }

    /// Inference-mode logits for a `(batch, input_width)` tensor.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_width(x)?;
        let h = self.hidden.forward(x)?.relu()?;
        Ok(self.output.forward(&h)?)
    }

    /// Training-mode logits: dropout masks are drawn from `rng`.
    pub fn forward_train(&self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        self.check_width(x)?;
        let h = self.hidden.forward(x)?.relu()?;
        let h = dropout(&h, self.config.dropout, rng)?;
        Ok(self.output.forward(&h)?)
    }
}

/// Inverted dropout with a mask drawn from a seeded generator.
pub(crate) fn dropout(x: &Tensor, p: f32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

/// Applies the head to one feature vector; ties between logits resolve to
/// the lowest label.
pub fn classify(features: &[f32], head: &ClassifierHead, sample_id: &str) -> Result<Prediction> {
    if features.len() != head.config.input_width {
        return Err(Error::Dimension {
            context: "classify features",
            expected: head.config.input_width,
            actual: features.len(),
        });
    }
    let device = candle_core::Device::Cpu;
    let dtype = head.hidden.weight().dtype();
    let x = Tensor::from_slice(features, (1, features.len()), &device)?.to_dtype(dtype)?;
    let logits: Vec<f64> = head.forward(&x)?.squeeze(0)?.to_dtype(DType::F64)?.to_vec1()?;
    Ok(Prediction {
        sample_id: sample_id.to_string(),
        label: argmax(&logits),
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use candle_nn::VarMap;
    use rand::SeedableRng;

    fn head(input: usize, hidden: usize, arity: usize, dtype: DType) -> (ClassifierHead, VarMap) {
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, dtype, &Device::Cpu);
        let h = ClassifierHead::new(
            HeadConfig {
                input_width: input,
                hidden_width: hidden,
                arity,
                dropout: 0.1,
            },
            vb,
        )
        .unwrap();
        (h, vm)
    }

    fn set(vm: &VarMap, name: &str, values: Vec<f32>, shape: (usize, usize)) {
        let data = vm.data().lock().unwrap();
        let t = Tensor::from_vec(values, shape, &Device::Cpu).unwrap();
        data[name].set(&t).unwrap();
    }

    fn set_bias(vm: &VarMap, name: &str, n: usize) {
        let data = vm.data().lock().unwrap();
        data[name].set(&Tensor::zeros(n, DType::F32, &Device::Cpu).unwrap()).unwrap();
    }

    #[test]
    fn output_width_equals_arity() {
        for arity in [2, 3, 6] {
            for width in [768, 2048, 2816] {
                let (h, _) = head(width, 16, arity, DType::F32);
                let x = Tensor::ones((4, width), DType::F32, &Device::Cpu).unwrap();
                assert_eq!(h.forward(&x).unwrap().dims(), &[4, arity]);
            }
        }
    }

    #[test]
    fn constructed_head_routes_argmax() {
        // hidden = identity on 3 features, output = identity: logits = relu(features)
        let (h, vm) = head(3, 3, 3, DType::F32);
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        set(&vm, "hidden.weight", eye.clone(), (3, 3));
        set(&vm, "output.weight", eye, (3, 3));
        set_bias(&vm, "hidden.bias", 3);
        set_bias(&vm, "output.bias", 3);
        let p = classify(&[0.1, 0.7, 0.3], &h, "s").unwrap();
        assert_eq!(p.label, 1);
        let p = classify(&[0.5, 0.2, 0.5], &h, "s").unwrap();
        assert_eq!(p.label, 0);
    }

    #[test]
    fn classify_rejects_wrong_width() {
        let (h, _) = head(8, 4, 2, DType::F32);
        assert!(matches!(classify(&[0.0; 7], &h, "s"), Err(Error::Dimension { .. })));
        let x = Tensor::ones((1, 9), DType::F32, &Device::Cpu).unwrap();
        assert!(h.forward(&x).is_err());
    }

    #[test]
    fn dropout_is_seeded_and_scaled() {
        let x = Tensor::ones((50, 40), DType::F32, &Device::Cpu).unwrap();
        let a = dropout(&x, 0.25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = dropout(&x, 0.25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-6));
        let dropped = a.iter().filter(|&&v| v == 0.0).count() as f64 / a.len() as f64;
        assert!((dropped - 0.25).abs() < 0.05);
    }
}
