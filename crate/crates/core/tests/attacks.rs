mod common;

use atlab_core::attacks::{
    fgsm, pgd_attack, pgd_attack_traced, vertex_oracle, AttackExtras, Norm, PerturbationSpec,
};
use atlab_core::linalg::{dist2, norm_inf, sub};
use atlab_core::model::{forward_probs, ArchSpec};
use atlab_core::objectives::{input_losses, per_sample_cross_entropy, InputTarget, LossKind};
use common::*;
use proptest::prelude::*;

#[test]
fn zero_steps_without_start_is_identity() {
    let spec = &small_archs(3)[2];
    let p = jittered(spec, 1);
    let b = random_batch(&spec.input_shape, 3, 3, 2);
    let s = PerturbationSpec::linf(0.1, 0.01, 0, 0).without_random_start();
    assert_eq!(pgd_attack(&p, &b, &s, None).unwrap(), b.inputs);
}

#[test]
fn fgsm_equals_one_step_pgd_bitwise() {
    for spec in small_archs(3) {
        let p = jittered(&spec, 3);
        let b = random_batch(&spec.input_shape, 5, 3, 4);
        let s = PerturbationSpec::linf(8.0 / 255.0, 8.0 / 255.0, 1, 9).without_random_start();
        assert_eq!(fgsm(&p, &b, &s).unwrap(), pgd_attack(&p, &b, &s, None).unwrap());
    }
}

#[test]
fn fgsm_on_zero_model_is_identity() {
    let mut p = jittered(&ArchSpec::linear(4, 3, 0), 0);
    p.values.iter_mut().for_each(|v| *v = 0.0);
    let b = random_batch(&[4], 3, 3, 1);
    let s = PerturbationSpec::linf(0.1, 0.1, 1, 0);
    assert_eq!(fgsm(&p, &b, &s).unwrap(), b.inputs);
}

#[test]
fn kl_attack_requires_clean_probs() {
    let p = jittered(&ArchSpec::linear(4, 3, 0), 0);
    let b = random_batch(&[4], 3, 3, 1);
    let s = PerturbationSpec::linf(0.1, 0.02, 3, 0).with_loss(LossKind::KlVsClean);
    assert!(pgd_attack(&p, &b, &s, None).is_err());
    let clean = forward_probs(&p, &b.inputs).unwrap();
    assert!(pgd_attack(&p, &b, &s, Some(&clean)).is_ok());
}

#[test]
fn attacks_are_deterministic() {
    let spec = &small_archs(3)[1];
    let p = jittered(spec, 5);
    let b = random_batch(&spec.input_shape, 6, 3, 6);
    for norm in [Norm::Linf, Norm::L2] {
        let s = PerturbationSpec {
            norm,
            ..PerturbationSpec::linf(0.1, 0.03, 5, 77)
        };
        assert_eq!(pgd_attack(&p, &b, &s, None).unwrap(), pgd_attack(&p, &b, &s, None).unwrap());
    }
}

#[test]
fn pgd_reaches_vertex_oracle_on_linear_models() {
    let (d, c) = (6, 4);
    let mut worst: f64 = 1.0;
    for trial in 0..50 {
        let p = jittered(&ArchSpec::linear(d, c, trial), 100 + trial);
        let b = random_batch(&[d], 1, c, 200 + trial);
        let s = PerturbationSpec::linf(0.1, 0.025, 20, trial);
        let oracle = vertex_oracle(&p, &b, &s).unwrap();
        let adv = pgd_attack(&p, &b, &s, None).unwrap();
        let got = per_sample_cross_entropy(&forward_probs(&p, &adv).unwrap(), &b.labels, 0.0).unwrap()[0];
        assert!(got <= oracle.losses[0] + 1e-9);
        worst = worst.min(got / oracle.losses[0]);
    }
    assert!(worst >= 0.99, "{worst}");
}

#[test]
fn vertex_oracle_degenerate_cases() {
    let p = jittered(&ArchSpec::linear(3, 2, 0), 1);
    let b = random_batch(&[3], 2, 2, 2);
    let s = PerturbationSpec::linf(0.0, 0.01, 1, 0);
    let clean = per_sample_cross_entropy(&forward_probs(&p, &b.inputs).unwrap(), &b.labels, 0.0).unwrap();
    assert_eq!(vertex_oracle(&p, &b, &s).unwrap().losses, clean);

    let p = jittered(&ArchSpec::linear(1, 2, 0), 3);
    let b = random_batch(&[1], 1, 2, 4);
    let s = PerturbationSpec::linf(0.1, 0.01, 1, 0);
    let ends: Vec<f64> = [-0.1, 0.1].iter().map(|e| (b.inputs[0] + e).clamp(0.0, 1.0)).collect();
    let ce = per_sample_cross_entropy(&forward_probs(&p, &ends).unwrap(), &[b.labels[0]; 2], 0.0).unwrap();
    assert_eq!(vertex_oracle(&p, &b, &s).unwrap().losses[0], ce[0].max(ce[1]));

    let mlp = jittered(&ArchSpec::mlp(3, &[4], 2, 0), 1);
    assert!(vertex_oracle(&mlp, &b, &s).is_err());
}

#[test]
fn attack_loss_improves_on_average() {
    let c = 3;
    let spec = &small_archs(c)[1];
    for kind in [LossKind::Ce, LossKind::Cw] {
        let (mut clean_sum, mut adv_sum) = (0.0, 0.0);
        for trial in 0..100 {
            let p = jittered(spec, 300 + trial);
            let b = random_batch(&spec.input_shape, 1, c, 400 + trial);
            let s = PerturbationSpec::linf(0.05, 0.0125, 10, trial).with_loss(kind);
            let t = InputTarget::labels(&b.labels);
            clean_sum += input_losses(kind, &p, &b.inputs, &t).unwrap()[0];
            let adv = pgd_attack(&p, &b, &s, None).unwrap();
            adv_sum += input_losses(kind, &p, &adv, &t).unwrap()[0];
        }
        assert!(adv_sum >= clean_sum, "{kind:?}");
    }
}

fn feasible(x: &[f64], clean: &[f64], d: usize, s: &PerturbationSpec) -> bool {
    x.chunks(d).zip(clean.chunks(d)).all(|(a, b)| {
        let dist = match s.norm {
            Norm::Linf => norm_inf(&sub(a, b)),
            Norm::L2 => dist2(a, b),
        };
        dist <= s.epsilon + 1e-9 && a.iter().all(|v| (0.0..=1.0).contains(v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_iterate_is_feasible(
        seed in 0u64..1_000_000,
        l2 in any::<bool>(),
        eps in 0.001f64..0.5,
        ratio in 0.1f64..2.0,
        steps in 0usize..8,
        start in any::<bool>(),
        kind in 0usize..3,
    ) {
        let spec = &small_archs(3)[1];
        let p = jittered(spec, seed);
        let b = random_batch(&spec.input_shape, 3, 3, seed + 1);
        let clean = forward_probs(&p, &b.inputs).unwrap();
        let s = PerturbationSpec {
            norm: if l2 { Norm::L2 } else { Norm::Linf },
            epsilon: eps,
            step_size: eps * ratio,
            steps,
            random_start: start,
            loss_kind: [LossKind::Ce, LossKind::KlVsClean, LossKind::Cw][kind],
            seed,
        };
        let extras = AttackExtras { clean_probs: Some(&clean), te: None };
        let mut ok = true;
        let d = b.dim();
        pgd_attack_traced(&p, &b, &s, &extras, &mut |_, x| ok &= feasible(x, &b.inputs, d, &s)).unwrap();
        prop_assert!(ok);
    }
}
