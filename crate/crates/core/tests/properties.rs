mod common;

use proptest::prelude::*;

use common::checks::{features, hsic_cka, random_orthogonal};
use slad_core::cka::{linear_cka, FeatureMatrix};
use slad_core::lora::{lora_linear_forward, merge_weights, AdapterRef, LoraAdapter};
use slad_core::losses::{cross_entropy, kd_loss, kl_divergence, slad_loss, DistillConfig};
use slad_core::rng;
use slad_core::train::{block_mapping, MappingKind};
use slad_core::Tensor;

fn kind() -> impl Strategy<Value = MappingKind> {
    prop_oneof![Just(MappingKind::Even), Just(MappingKind::First), Just(MappingKind::Last)]
}

fn logits(seed: u64, label: &str, b: usize, c: usize, scale: f64) -> Tensor {
    Tensor::normal(&[b, c], scale, &mut rng::stream(seed, label))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mapping_is_strictly_increasing(k in kind(), n_t in 1usize..=64, frac in 0.0f64..1.0) {
        let n_s = 1 + ((n_t - 1) as f64 * frac) as usize;
        let m = block_mapping(k, n_s, n_t).unwrap();
        prop_assert_eq!(m.as_slice().len(), n_s);
        prop_assert!(m.as_slice().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(m.as_slice().iter().all(|&t| t < n_t));
    }

    #[test]
    fn deeper_student_is_rejected(k in kind(), n_t in 1usize..32, extra in 1usize..8) {
        prop_assert!(block_mapping(k, n_t + extra, n_t).is_err());
    }

    #[test]
    fn cka_is_symmetric_bounded_and_matches_gram_form(seed in 0u64..10_000, p in 2usize..12, q in 2usize..12) {
        let x = features(30, p, seed, "x");
        let y = features(30, q, seed, "y");
        let xy = linear_cka(&x, &y).unwrap();
        prop_assert!((xy - linear_cka(&y, &x).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&xy));
        prop_assert!((xy - hsic_cka(&x, &y)).abs() <= 1e-8);
    }

    #[test]
    fn cka_ignores_rotation_scale_and_shift(seed in 0u64..10_000, p in 2usize..10, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let x = features(40, p, seed, "x");
        let y = features(40, 5, seed, "y");
        let q = random_orthogonal(p, seed);
        let m = nalgebra::DMatrix::from_row_slice(40, p, x.data()) * q * scale;
        let moved: Vec<f64> = m.row_iter().flat_map(|r| r.iter().map(|v| v + shift).collect::<Vec<_>>()).collect();
        let moved = FeatureMatrix::new(40, p, moved).unwrap();
        prop_assert!((linear_cka(&moved, &y).unwrap() - linear_cka(&x, &y).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn uniform_logits_cost_log_c(c in 2usize..200, level in -20.0f64..20.0) {
        let ce = cross_entropy(&Tensor::full(&[2, c], level), &[0, c - 1]).unwrap().item();
        prop_assert!((ce - (c as f64).ln()).abs() <= 1e-10);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_itself(seed in 0u64..10_000, t in 0.25f64..8.0) {
        let p = logits(seed, "p", 3, 6, 3.0);
        let q = logits(seed, "q", 3, 6, 3.0);
        prop_assert!(kl_divergence(&p, &q, t).unwrap().item() >= -1e-15);
        prop_assert!(kl_divergence(&p, &p, t).unwrap().item().abs() <= 1e-12);
    }

    #[test]
    fn slad_minus_teacher_term_is_kd(seed in 0u64..10_000, t in 0.25f64..8.0, a_s in 0.0f64..4.0, a_kl in 0.1f64..4.0, a_t in 0.0f64..4.0) {
        let s = logits(seed, "s", 4, 5, 2.0);
        let te = logits(seed, "t", 4, 5, 2.0);
        let labels = [0, 1, 2, 4];
        let cfg = DistillConfig { temperature: t, alpha_s: a_s, alpha_t: a_t, alpha_kl: a_kl, ..DistillConfig::joint() };
        let no_teacher = DistillConfig { alpha_t: 0.0, ..cfg };
        prop_assert_eq!(
            slad_loss(&s, &te, &labels, &no_teacher).unwrap().item().to_bits(),
            kd_loss(&s, &te, &labels, &no_teacher).unwrap().item().to_bits()
        );
        let full = slad_loss(&s, &te, &labels, &cfg).unwrap().item();
        let parts = kd_loss(&s, &te, &labels, &cfg).unwrap().item() + a_t * cross_entropy(&te, &labels).unwrap().item();
        prop_assert!((full - parts).abs() <= 1e-12 * (1.0 + full.abs()));
    }

    #[test]
    fn merged_and_factored_forwards_agree(seed in 0u64..10_000, m in 1usize..24, n in 1usize..24, r in 1usize..8) {
        let r = r.min(m.min(n));
        let adapter = LoraAdapter::new(m, n, r, seed).unwrap();
        let b = Tensor::normal(&[r * n], 0.5, &mut rng::stream(seed, "b")).to_vec();
        adapter.b().data_mut().copy_from_slice(&b);
        let adapter = AdapterRef::Owned(adapter);
        let w0 = logits(seed, "w0", m, n, 0.5);
        let x = logits(seed, "x", 5, m, 1.0);
        let factored = lora_linear_forward(&x, &w0, &adapter, 1.0).unwrap().to_vec();
        let merged = x.matmul(&merge_weights(&w0, &adapter).unwrap()).unwrap().to_vec();
        for (a, b) in factored.iter().zip(&merged) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
