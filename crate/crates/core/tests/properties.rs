use proptest::prelude::*;

use seqlane::checkpoint::{decode_checkpoint, encode_checkpoint};
use seqlane::data::{augment, generate_sequence, AugmentOp, ChallengeMix, SceneSpec};
use seqlane::loss::{weighted_bce, LossConfig};
use seqlane::metrics::{average_precision, confusion, metrics, PrCurveConfig, ThresholdMode};
use seqlane::nn::init_parameters;
use seqlane::{AttentionVariant, LaneMask, ModelConfig, Tensor};

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = LaneMask> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |d| LaneMask::new(h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_cover_every_pixel(pred in mask_strategy(6, 7), gt in mask_strategy(6, 7)) {
        let c = confusion(&pred, &gt).unwrap();
        prop_assert_eq!(c.total(), 42);
        prop_assert_eq!(c.tp + c.fn_, gt.lane_pixels() as u64);
        prop_assert_eq!(c.tp + c.fp, pred.lane_pixels() as u64);
    }

    #[test]
    fn f1_is_symmetric(pred in mask_strategy(5, 5), gt in mask_strategy(5, 5)) {
        let a = metrics(&confusion(&pred, &gt).unwrap());
        let b = metrics(&confusion(&gt, &pred).unwrap());
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
        prop_assert_eq!(a.precision, b.recall);
    }

    #[test]
    fn quantile_ap_ignores_monotone_rescaling(
        gt in mask_strategy(4, 6),
        probs in proptest::collection::vec(0.0f64..1.0, 24),
        v in 1usize..30,
    ) {
        let cfg = PrCurveConfig { thresholds: v, mode: ThresholdMode::Quantile };
        let squashed: Vec<f64> = probs.iter().map(|p| p.powi(3)).collect();
        let a = average_precision(&probs, &gt, &cfg).unwrap();
        let b = average_precision(&squashed, &gt, &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn loss_gradient_is_antisymmetric_across_channels(
        gt in mask_strategy(3, 4),
        logits in proptest::collection::vec(-8.0f64..8.0, 24),
        wl in 0.1f64..10.0,
        wb in 0.1f64..10.0,
    ) {
        let t = Tensor::new(&[2, 3, 4], logits).unwrap();
        let (l, g) = weighted_bce(&t, &gt, &LossConfig::new(wl, wb).unwrap()).unwrap();
        prop_assert!(l >= 0.0);
        for k in 0..12 {
            prop_assert_eq!(g.data()[k], -g.data()[12 + k]);
        }
    }

    #[test]
    fn double_flip_is_identity(seed in 0u64..500) {
        let spec = SceneSpec::random(seed, 16, 32, 2, &ChallengeMix::default()).unwrap();
        let seq = generate_sequence(&spec).unwrap();
        let back = augment(&augment(&seq, AugmentOp::HFlip).unwrap(), AugmentOp::HFlip).unwrap();
        prop_assert_eq!(back.frames, seq.frames);
        prop_assert_eq!(back.mask, seq.mask);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), variant in 0usize..3) {
        let cfg = ModelConfig {
            variant: AttentionVariant::ALL[variant],
            frames: 2,
            height: 32,
            width: 32,
            channel_div: 16,
            ..ModelConfig::default()
        };
        let params = init_parameters::<f32>(&cfg, seed).unwrap();
        let (back, back_cfg) = decode_checkpoint(&encode_checkpoint(&params, &cfg)).unwrap();
        prop_assert_eq!(back, params);
        prop_assert_eq!(back_cfg, cfg);
    }
}
