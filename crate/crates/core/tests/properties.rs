//! Property tests of the cross-module invariants.

use augmax::adversary::{generate_augmax, AttackConfig};
use augmax::augops::{apply_chain, apply_op, sample_chain, AugOp, OpKind, REGISTRY};
use augmax::diffcore::loss::per_sample_cross_entropy;
use augmax::mixer::{mix, MixParams};
use augmax::model::{build, loss_and_input_grad, ModelConfig};
use augmax::normlayers::NormLayer;
use augmax::robustbench::{mce, Cell, CorruptionKind, RobustnessReport};
use augmax::trainer::js_divergence;
use augmax::{NormKind, NormRoute, Tensor};
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f32..=1.0, c * h * w).prop_map(move |d| Tensor::new(vec![c, h, w], d).unwrap())
}

fn tiny_model(norm: NormKind, seed: u64) -> augmax::diffcore::Network {
    build(&ModelConfig {
        input_shape: [3, 8, 8],
        classes: 4,
        norm,
        widths: [4, 6, 6],
        seed,
    })
    .unwrap()
}

fn norm_kind() -> impl Strategy<Value = NormKind> {
    prop_oneof![Just(NormKind::Bn), Just(NormKind::In), Just(NormKind::Dubn), Just(NormKind::Dubin)]
}

fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, c).prop_map(|v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            vec![1.0 / v.len() as f64; v.len()]
        } else {
            v.into_iter().map(|x| x / s).collect()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ops_keep_range_shape_and_finiteness(x in image(3, 9, 11), k in 0usize..9, s in 1u8..=10, neg: bool) {
        let y = apply_op(&x, &AugOp::new(REGISTRY[k], s, neg).unwrap()).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn histogram_ops_fix_constant_images(v in 0.0f32..=1.0, s in 1u8..=10) {
        let x = Tensor::full(&[3, 6, 6], v);
        for kind in [OpKind::Autocontrast, OpKind::Equalize] {
            prop_assert_eq!(apply_op(&x, &AugOp::new(kind, s, false).unwrap()).unwrap(), x.clone());
        }
    }

    #[test]
    fn chain_sampling_is_pure(seed: u64, index: u64, x in image(3, 6, 6)) {
        let a = sample_chain(seed, index);
        prop_assert_eq!(&a, &sample_chain(seed, index));
        prop_assert!((1..=3).contains(&a.len()));
        prop_assert_eq!(apply_chain(&x, &a).unwrap(), apply_chain(&x, &a).unwrap());
    }

    #[test]
    fn mix_stays_in_range_without_clipping(
        x in image(2, 4, 4),
        cs in prop::collection::vec(image(2, 4, 4), 1..=4),
        m in 0.0f32..=1.0,
        p in prop::collection::vec(-20.0f32..20.0, 4),
    ) {
        let params = MixParams::new(m, p[..cs.len()].to_vec()).unwrap();
        let g = mix(&x, &cs, &params).unwrap();
        prop_assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mix_is_linear_in_each_input(
        x in image(1, 3, 3),
        y in image(1, 3, 3),
        cs in prop::collection::vec(image(1, 3, 3), 2),
        m in 0.0f32..=1.0,
        a in -2.0f32..2.0,
    ) {
        let params = MixParams::new(m, vec![0.3, -0.4]).unwrap();
        let comb = |u: &Tensor, v: &Tensor| {
            Tensor::new(u.shape().to_vec(), u.data().iter().zip(v.data()).map(|(p, q)| a * p + q).collect()).unwrap()
        };
        let lhs = mix(&comb(&x, &y), &cs, &params).unwrap();
        let zero = vec![Tensor::zeros(&[1, 3, 3]); 2];
        let rhs = comb(&mix(&x, &zero, &params).unwrap(), &mix(&y, &cs, &params).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
        let lhs = mix(&x, &[comb(&cs[0], &y), cs[1].clone()], &params).unwrap();
        let zx = Tensor::zeros(&[1, 3, 3]);
        let rhs = comb(&mix(&zx, &[cs[0].clone(), zx.clone()], &params).unwrap(), &mix(&x, &[y.clone(), cs[1].clone()], &params).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }

    #[test]
    fn attack_respects_constraints(seed: u64, n in 1usize..6, k in 1usize..6, label in 0usize..4, x in image(3, 8, 8)) {
        let model = tiny_model(NormKind::Dubin, seed);
        let chains = augmax::augops::sample_chains(seed, 3);
        let cfg = AttackConfig { n, k: k.min(n), alpha: 0.3, seed };
        let r = generate_augmax(&x, label, &model, &chains, &cfg).unwrap();
        prop_assert!(r.steps_taken >= 1 && r.steps_taken <= n);
        prop_assert!((0.0..=1.0).contains(&r.params.m()));
        let total: f32 = r.params.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert_eq!(r.loss_trace.len(), r.steps_taken);
    }

    #[test]
    fn norm_outputs_are_finite(kind in norm_kind(), data in prop::collection::vec(-10.0f32..=10.0, 2 * 4 * 9)) {
        let mut layer = NormLayer::new(kind, 4).unwrap();
        let x = Tensor::new(vec![2, 4, 3, 3], data).unwrap();
        for route in [NormRoute::Clean, NormRoute::Adversarial] {
            prop_assert!(layer.forward(&x, route, true).unwrap().0.data().iter().all(|v| v.is_finite()));
            prop_assert!(layer.forward_eval(&x, route).unwrap().0.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn dubin_routes_agree_when_statistics_agree(data in prop::collection::vec(-3.0f32..3.0, 2 * 4 * 4)) {
        let layer = NormLayer::new(NormKind::Dubin, 4).unwrap();
        let x = Tensor::new(vec![2, 4, 2, 2], data).unwrap();
        let clean = layer.forward_eval(&x, NormRoute::Clean).unwrap().0;
        let adv = layer.forward_eval(&x, NormRoute::Adversarial).unwrap().0;
        prop_assert_eq!(clean, adv);
    }

    #[test]
    fn instance_norm_ignores_channel_offsets(data in prop::collection::vec(-3.0f32..3.0, 2 * 2 * 9), shift in -4.0f32..4.0) {
        let layer = NormLayer::new(NormKind::In, 2).unwrap();
        let x = Tensor::new(vec![2, 2, 3, 3], data.clone()).unwrap();
        let shifted = Tensor::new(vec![2, 2, 3, 3], data.iter().enumerate().map(|(i, v)| v + shift * (i / 9) as f32).collect()).unwrap();
        let a = layer.forward_eval(&x, NormRoute::Clean).unwrap().0;
        let b = layer.forward_eval(&shifted, NormRoute::Clean).unwrap().0;
        prop_assert!(a.max_abs_diff(&b) <= 1e-3);
    }

    #[test]
    fn eval_queries_are_pure(kind in norm_kind(), seed: u64, x in image(3, 8, 8), label in 0usize..4) {
        let model = tiny_model(kind, seed);
        let before = model.clone();
        let batch = x.reshape(&[1, 3, 8, 8]).unwrap();
        let first = loss_and_input_grad(&model, &batch, &[label], NormRoute::Adversarial).unwrap();
        let second = loss_and_input_grad(&model, &batch, &[label], NormRoute::Adversarial).unwrap();
        prop_assert_eq!(first.0, second.0);
        prop_assert_eq!(first.1, second.1);
        prop_assert_eq!(model.params(), before.params());
        let stats = |m: &augmax::diffcore::Network| m.norm_layers().map(|(_, l)| l.stat_sets().into_iter().map(|(_, s)| s.clone()).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(stats(&model), stats(&before));
    }

    #[test]
    fn cross_entropy_bounds(c in 2usize..12, logits in prop::collection::vec(-30.0f32..30.0, 12), label in 0usize..12) {
        let label = label % c;
        let row = Tensor::new(vec![1, c], logits[..c].to_vec()).unwrap();
        prop_assert!(per_sample_cross_entropy(&row, &[label]).unwrap()[0] >= 0.0);
        let uniform = Tensor::full(&[1, c], logits[0]);
        let l = per_sample_cross_entropy(&uniform, &[label]).unwrap()[0];
        prop_assert!((l - (c as f64).ln()).abs() <= 1e-5);
    }

    #[test]
    fn js_is_bounded(p in simplex(6), q in simplex(6), r in simplex(6)) {
        let js = js_divergence(&p, &q, &r).unwrap();
        prop_assert!(js >= 0.0 && js <= 3f64.ln() + 1e-12);
    }

    #[test]
    fn mce_ignores_duplicated_severity(errors in prop::collection::vec(1.0f64..99.0, 18), dup in 1u8..=5) {
        // every severity of a kind carries the same error
        let report = |offset: usize, extra: bool| {
            let mut cells = Vec::new();
            for (i, kind) in CorruptionKind::ALL.into_iter().enumerate() {
                for severity in 1..=5u8 {
                    let accuracy = 100.0 - errors[offset + i];
                    cells.push(Cell { kind, severity, accuracy });
                    if extra && severity == dup {
                        cells.push(Cell { kind, severity, accuracy });
                    }
                }
            }
            RobustnessReport::from_cells(90.0, cells).unwrap()
        };
        let plain = mce(&report(0, false), &report(9, false)).unwrap();
        let duplicated = mce(&report(0, true), &report(9, true)).unwrap();
        prop_assert!((plain - duplicated).abs() <= 1e-9 * plain.max(1.0), "{plain} vs {duplicated}");
    }

    #[test]
    fn ra_is_mean_of_kind_means(accs in prop::collection::vec(0.0f64..=100.0, 45)) {
        let cells: Vec<Cell> = CorruptionKind::ALL
            .into_iter()
            .enumerate()
            .flat_map(|(i, kind)| (1..=5u8).map(move |s| (i, kind, s)))
            .map(|(i, kind, severity)| Cell { kind, severity, accuracy: accs[i * 5 + severity as usize - 1] })
            .collect();
        let r = RobustnessReport::from_cells(50.0, cells).unwrap();
        let want = accs.chunks(5).map(|c| c.iter().sum::<f64>() / 5.0).sum::<f64>() / 9.0;
        prop_assert!((r.ra - want).abs() <= 1e-9);
        prop_assert!((0.0..=100.0).contains(&r.ra));
    }
}

#[test]
fn training_ops_and_corruptions_are_disjoint() {
    let ops: Vec<&str> = REGISTRY.iter().map(|k| k.name()).collect();
    for kind in CorruptionKind::ALL {
        assert!(!ops.contains(&kind.name()), "{}", kind.name());
    }
}
