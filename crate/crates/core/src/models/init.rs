//! Seeded parameter initialisation. The CPU backend's own generator cannot
//! be seeded, so every freshly created variable is overwritten here.

use candle_core::Tensor;
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Overwrites every variable in `varmap` whose name is accepted by `filter`.
/// Names are visited in sorted order so the result depends only on `seed`.
pub(crate) fn seeded_init(varmap: &VarMap, seed: u64, filter: impl Fn(&str) -> bool) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().filter(|n| filter(n)).collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let count: usize = dims.iter().product();
        let values = init_values(name, &dims, count, &mut rng);
        let t = Tensor::from_vec(values, dims.as_slice(), var.device())?.to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    Ok(())
}

fn init_values(name: &str, dims: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    let is_norm = name.contains("norm") || name.contains("LayerNorm");
    match leaf {
        "running_var" => vec![1.0; count],
        "running_mean" => vec![0.0; count],
        "weight" | "gamma" if is_norm => vec![1.0; count],
        "bias" | "beta" => vec![0.0; count],
        _ if name.contains("embeddings") => {
            let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
            (0..count).map(|_| normal.sample(rng)).collect()
        }
        _ if dims.len() == 4 => {
            let fan_in = dims[1] * dims[2] * dims[3];
            let bound = (6.0 / fan_in as f32).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        }
        _ => {
            let fan_in = dims.last().copied().unwrap_or(1).max(1);
            let bound = 1.0 / (fan_in as f32).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        }
    }
}

/// Variables that the optimiser must leave alone.
pub(crate) fn is_buffer(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarBuilder;

    fn build(seed: u64) -> VarMap {
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu);
        candle_nn::linear(4, 3, vb.pp("fc")).unwrap();
        candle_nn::embedding(10, 4, vb.pp("embeddings")).unwrap();
        seeded_init(&vm, seed, |_| true).unwrap();
        vm
    }

    fn values(vm: &VarMap, name: &str) -> Vec<f32> {
        let data = vm.data().lock().unwrap();
        data[name].flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build(7);
        let b = build(7);
        let c = build(8);
        assert_eq!(values(&a, "fc.weight"), values(&b, "fc.weight"));
        assert_ne!(values(&a, "fc.weight"), values(&c, "fc.weight"));
        assert!(values(&a, "fc.bias").iter().all(|&v| v == 0.0));
        assert!(values(&a, "fc.weight").iter().all(|v| v.abs() <= 0.5));
    }
}
