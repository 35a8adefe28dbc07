use proptest::prelude::*;
use rand::Rng;

use wavecomm::distillation::{loss_percep, loss_recon, ssim, Generator, GeneratorConfig, PercepScope, SsimConfig};
use wavecomm::fusion::{warp_affine, AffinePose, FuseInput, SoftmaxFusion};
use wavecomm::perception::{detection_metric, BoxCells, DetectionTruth};
use wavecomm::tensorcore::{seeded_rng, Mode, Network, Tensor};
use wavecomm::wavelet::{dwt2, idwt2_lowpass};
use wavecomm::wirecodec::{
    comm_volume, pack_message, unpack_message, CommVolumeReport, MessageMeta, WireDtype,
};

fn fusion_inputs(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Vec<FuseInput> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let feat = Tensor::randn(&[c, h, w], &mut rng);
            let mask = if i == 0 { vec![true; h * w] } else { (0..h * w).map(|_| rng.gen_bool(0.6)).collect() };
            FuseInput { agent_id: (i * 7 % 11) as u16, feat, mask }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_is_a_convex_combination(seed in any::<u64>(), n in 1usize..5) {
        let (c, h, w) = (3, 5, 4);
        let inputs = fusion_inputs(seed, n, c, h, w);
        let fusion = SoftmaxFusion::new(c, &mut seeded_rng(seed ^ 1)).unwrap();
        let (out, _) = fusion.forward(&inputs).unwrap();
        for ch in 0..c {
            for cell in 0..h * w {
                let vals: Vec<f64> = inputs.iter().filter(|i| i.mask[cell]).map(|i| i.feat.channel(ch)[cell]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = out.channel(ch)[cell];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn fusion_ignores_input_order(seed in any::<u64>(), n in 2usize..5, rot in 0usize..4) {
        let inputs = fusion_inputs(seed, n, 2, 4, 4);
        let fusion = SoftmaxFusion::new(2, &mut seeded_rng(seed ^ 2)).unwrap();
        let mut shuffled = inputs.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let a = fusion.forward(&inputs).unwrap().0;
        let b = fusion.forward(&shuffled).unwrap().0;
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn ap_does_not_grow_with_iou_threshold(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let boxes: Vec<BoxCells> = (0..3)
            .map(|k| BoxCells::new(2 + 10 * k, rng.gen_range(0..20), rng.gen_range(2..8), rng.gen_range(2..8)))
            .collect();
        let truth = DetectionTruth::new(32, 32, boxes).unwrap();
        let logits = Tensor::randn(&[1, 16, 16], &mut rng).scale(3.0);
        let ap = detection_metric(&logits, &truth, 2, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap().unwrap();
        for pair in ap.windows(2) {
            prop_assert!(pair[0] >= pair[1], "{:?}", ap);
        }
        for v in ap {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn f16_quantization_is_monotone_and_idempotent(a in -70000.0f64..70000.0, b in -70000.0f64..70000.0) {
        let q = |v| WireDtype::F16.quantize(v);
        let (qa, qb) = (q(a), q(b));
        prop_assert_eq!(q(qa), qa);
        if a <= b {
            prop_assert!(qa <= qb);
        }
    }

    #[test]
    fn message_round_trip(seed in any::<u64>(), c in 1usize..6, h in 1usize..9, w in 1usize..9, f16 in any::<bool>()) {
        let mut rng = seeded_rng(seed);
        let ll = Tensor::randn(&[c, h, w], &mut rng).scale(10.0);
        let dtype = if f16 { WireDtype::F16 } else { WireDtype::F32 };
        let meta = MessageMeta { agent_id: rng.gen(), frame_id: rng.gen(), levels: 2, dtype, pose: [1.0, 0.0, 3.5, 0.0, 1.0, -2.0] };
        let bytes = pack_message(&ll, &meta).unwrap();
        let (back, meta2) = unpack_message(&bytes).unwrap();
        prop_assert_eq!(meta2, meta);
        for (x, y) in ll.data().iter().zip(back.data()) {
            prop_assert_eq!(dtype.quantize(*x), *y);
        }
        let report = CommVolumeReport::new(meta.agent_id, (h * w) as u64, c as u64, dtype.bits()).unwrap();
        prop_assert_eq!(report.bytes as usize, c * h * w * dtype.bits() as usize / 8);
        prop_assert!((report.log2_volume - (report.bytes as f64).log2()).abs() <= 1e-12);
    }

    #[test]
    fn losses_behave(seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut rng = seeded_rng(seed);
        let a = Tensor::uniform(&[2, 12, 12], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[2, 12, 12], 0.0, 1.0, &mut rng);
        prop_assert!(loss_recon(&a, &b).unwrap().0 >= 0.0);
        for scope in [PercepScope::Whole, PercepScope::PerChannel] {
            let base = loss_percep(&a, &b, scope).unwrap().0;
            prop_assert!((loss_percep(&a.scale(s), &b, scope).unwrap().0 - base).abs() <= 1e-12);
            prop_assert!((loss_percep(&a, &b.scale(s), scope).unwrap().0 - base).abs() <= 1e-12);
        }
        let cfg = SsimConfig::default();
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((ab - ssim(&b, &a, &cfg).unwrap()).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pipeline_preserves_feature_shape(seed in any::<u64>(), hb in 1usize..4, wb in 1usize..4, levels in 1usize..=3) {
        let s = 1 << levels;
        let (c, h, w) = (4, hb * s * 2, wb * s * 2);
        let mut rng = seeded_rng(seed);
        let feat = Tensor::randn(&[c, h, w], &mut rng);
        let pyr = dwt2(&feat, levels).unwrap();
        prop_assert_eq!(pyr.ll.shape(), &[c, h / s, w / s][..]);
        let restored = idwt2_lowpass(&pyr.ll, levels).unwrap();
        prop_assert_eq!(restored.shape(), feat.shape());
        let mut gen = Generator::new(GeneratorConfig { channels: c, width: 8, levels }, &mut rng).unwrap();
        let (fake, _) = gen.forward(&pyr.ll, Mode::Train).unwrap();
        prop_assert_eq!(fake.shape(), feat.shape());
        let (warped, mask, _) = warp_affine(&fake, &AffinePose::translation(1.0, -2.0), h, w).unwrap();
        prop_assert_eq!(warped.shape(), feat.shape());
        prop_assert_eq!(mask.len(), h * w);
    }
}

#[test]
fn comm_volume_steps_by_two_per_level() {
    for side in [64u64, 128, 256] {
        let base = comm_volume(side * side / 4, 64, 32).unwrap();
        for levels in 1..=3u32 {
            let cells = side * side / 4 / 4u64.pow(levels);
            let v = comm_volume(cells, 64, 16).unwrap();
            assert!((v - (base - 1.0 - 2.0 * levels as f64)).abs() <= 1e-12);
        }
    }
}
