use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Init, ModelConfig};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

/// Deterministic parameter initialisation.
///
/// Draws come from a ChaCha8 stream seeded with `seed`, consumed in layout
/// order, so the same seed always yields bitwise-identical parameters.
pub fn init_parameters<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in config.param_layout() {
        let value = match spec.init {
            Init::ScaledNormal { fan_in, gain } => {
                let std = (gain / fan_in as f64).sqrt();
                Tensor::from_fn(&spec.shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(z * std)
                })
            }
            Init::Constant(v) => Tensor::full(&spec.shape, T::lit(v)),
            Init::Identity => {
                let n = spec.shape[1];
                Tensor::from_fn(&spec.shape, |k| if k / n == k % n { T::one() } else { T::zero() })
            }
        };
        store.insert(spec.name, value)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AttentionVariant;

    fn small() -> ModelConfig {
        ModelConfig {
            height: 32,
            width: 32,
            channel_div: 8,
            frames: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = init_parameters::<f32>(&small(), 42).unwrap();
        let b = init_parameters::<f32>(&small(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_parameters::<f32>(&small(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_and_attention_defaults() {
        let p = init_parameters::<f64>(&small(), 1).unwrap();
        assert!(p.get("In_Conv_1.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("LSTM.forget.bias").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("LSTM.input.bias").unwrap().data().iter().all(|&v| v == 0.0));
        for k in 1..=3 {
            let w = p.get(&format!("AttentionLayer_{k}.weight")).unwrap();
            assert!(w.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn st_paper_config_has_three_vectors_of_128() {
        let p = init_parameters::<f32>(&ModelConfig::paper(AttentionVariant::StAtt), 0).unwrap();
        for k in 1..=3 {
            assert_eq!(p.get(&format!("AttentionLayer_{k}.weight")).unwrap().shape(), &[128]);
        }
        let total = p.census() as f64 / 1e6;
        assert!((total - 13.5).abs() <= 0.1, "{total}");
    }

    #[test]
    fn stfc_maps_start_as_identity() {
        let cfg = ModelConfig {
            variant: AttentionVariant::StfcAtt,
            ..small()
        };
        let p = init_parameters::<f64>(&cfg, 1).unwrap();
        let w = p.get("AttentionLayer_1.weight").unwrap();
        assert_eq!(w.shape(), &[4, 4]);
        assert_eq!(w.data()[0], 1.0);
        assert_eq!(w.data()[1], 0.0);
        assert_eq!(w.data()[5], 1.0);
    }
}
