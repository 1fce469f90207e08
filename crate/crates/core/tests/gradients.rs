mod common;

use atlab_core::model::{forward_probs, softmax_rows, ModelParameters};
use atlab_core::objectives::{
    composite_loss, grad_input, grad_params, input_losses, InputTarget, LossKind, ObjectiveConfig, ObjectiveKind,
};
use atlab_core::schedule::Schedule;
use common::*;

const KINDS: [ObjectiveKind; 6] = [
    ObjectiveKind::StandardCe,
    ObjectiveKind::PgdAt,
    ObjectiveKind::Trades,
    ObjectiveKind::Interpolated,
    ObjectiveKind::PgdAtTe,
    ObjectiveKind::TradesTe,
];

fn config(kind: ObjectiveKind, smoothing: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        beta: 3.0,
        gamma: Schedule::constant(0.4),
        te_weight: 2.0,
        te_ramp: Schedule::constant(1.0),
        label_smoothing: smoothing,
        ..ObjectiveConfig::new(kind, 10)
    }
}

fn reads(n: usize, c: usize, seed: u64) -> Vec<f64> {
    let mut rng = atlab_core::rng::Stream::new(seed);
    let z: Vec<f64> = (0..n * c).map(|_| rng.gaussian()).collect();
    softmax_rows(&z, c)
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let c = 3;
    for spec in small_archs(c) {
        let params = jittered(&spec, 11);
        assert!(params.len() <= 10_000);
        let batch = random_batch(&spec.input_shape, 4, c, 5);
        let adv = perturbed(&batch.inputs, 0.03, 6);
        let ens = reads(batch.len(), c, 7);
        for kind in KINDS {
            for smoothing in [0.0, 0.1] {
                let cfg = config(kind, smoothing);
                let g = grad_params(&cfg, &params, &batch, &adv, Some(&ens), 3, false).unwrap();
                let mut f = |v: &[f64]| {
                    let p = params.with_values(v.to_vec());
                    composite_loss(&cfg, &p, &batch, &adv, Some(&ens), 3).unwrap().total
                };
                let fd = fd_gradient(&mut f, &params.values, 1e-6);
                let err = rel_err(&g.total, &fd);
                assert!(err < 1e-4, "{} {:?} smoothing {smoothing}: {err:e}", spec.arch_tag(), kind);
            }
        }
    }
}

#[test]
fn component_gradients_match_finite_differences() {
    let c = 3;
    let spec = &small_archs(c)[1];
    let params = jittered(spec, 12);
    let batch = random_batch(&spec.input_shape, 5, c, 8);
    let adv = perturbed(&batch.inputs, 0.05, 9);
    let ens = reads(batch.len(), c, 10);
    let cfg = config(ObjectiveKind::TradesTe, 0.0);
    let comps = grad_params(&cfg, &params, &batch, &adv, Some(&ens), 0, true)
        .unwrap()
        .components
        .unwrap();
    let pick: [(&str, &dyn Fn(&atlab_core::objectives::LossBreakdown) -> f64, &Vec<f64>); 5] = [
        ("clean_ce", &|b| b.clean_ce, &comps.clean_ce),
        ("adv_ce", &|b| b.adv_ce, &comps.adv_ce),
        ("kl", &|b| b.kl_term, &comps.kl),
        ("te", &|b| b.te_term, &comps.te),
        ("residual", &|b| b.residual, &comps.residual),
    ];
    for (name, get, grad) in pick {
        let mut f = |v: &[f64]| {
            let p = params.with_values(v.to_vec());
            get(&composite_loss(&cfg, &p, &batch, &adv, Some(&ens), 0).unwrap())
        };
        let fd = fd_gradient(&mut f, &params.values, 1e-6);
        assert!(rel_err(grad, &fd) < 1e-4, "{name}");
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let c = 4;
    for spec in small_archs(c) {
        let params = jittered(&spec, 21);
        let batch = random_batch(&spec.input_shape, 3, c, 22);
        let clean = forward_probs(&params, &batch.inputs).unwrap();
        let x = perturbed(&batch.inputs, 0.05, 23);
        let ens = reads(batch.len(), c, 24);
        for kind in [LossKind::Ce, LossKind::KlVsClean, LossKind::Cw] {
            for te in [None, Some((ens.as_slice(), 1.5))] {
                let target = InputTarget {
                    labels: &batch.labels,
                    clean_probs: Some(&clean),
                    te,
                };
                let g = grad_input(kind, &params, &x, &target).unwrap();
                let mut f = |v: &[f64]| input_losses(kind, &params, v, &target).unwrap().iter().sum::<f64>();
                let fd = fd_gradient(&mut f, &x, 1e-6);
                let err = rel_err(&g.grad, &fd);
                assert!(err < 1e-4, "{} {kind:?} te={}: {err:e}", spec.arch_tag(), te.is_some());
            }
        }
    }
}

fn linear(d: usize, c: usize, seed: u64) -> ModelParameters {
    jittered(&atlab_core::model::ArchSpec::linear(d, c, 0), seed)
}

#[test]
fn linear_input_gradient_closed_form() {
    let (d, c) = (4, 3);
    let p = linear(d, c, 3);
    let batch = random_batch(&[d], 2, c, 4);
    let g = grad_input(LossKind::Ce, &p, &batch.inputs, &InputTarget::labels(&batch.labels)).unwrap();
    let probs = forward_probs(&p, &batch.inputs).unwrap();
    let w = &p.values[..c * d];
    for i in 0..batch.len() {
        for k in 0..d {
            let want: f64 = (0..c)
                .map(|j| w[j * d + k] * (probs[i * c + j] - if j == batch.labels[i] { 1.0 } else { 0.0 }))
                .sum();
            assert!((g.grad[i * d + k] - want).abs() < 1e-13);
        }
    }
}

#[test]
fn kl_input_gradient_vanishes_at_clean_point() {
    let c = 3;
    let spec = &small_archs(c)[2];
    let p = jittered(spec, 5);
    let batch = random_batch(&spec.input_shape, 2, c, 6);
    let clean = forward_probs(&p, &batch.inputs).unwrap();
    let target = InputTarget {
        clean_probs: Some(&clean),
        ..InputTarget::labels(&batch.labels)
    };
    let g = grad_input(LossKind::KlVsClean, &p, &batch.inputs, &target).unwrap();
    assert!(g.grad.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn symmetric_batch_has_zero_gradient_at_zero_weights() {
    let (d, c) = (3, 2);
    let mut p = linear(d, c, 0);
    p.values.iter_mut().for_each(|v| *v = 0.0);
    let x = [0.2, 0.7, 0.4];
    let mut batch = random_batch(&[d], 2, c, 0);
    batch.inputs = x.iter().chain(x.iter()).copied().collect();
    batch.labels = vec![0, 1];
    let cfg = ObjectiveConfig::new(ObjectiveKind::StandardCe, 1);
    let g = grad_params(&cfg, &p, &batch, &batch.inputs, None, 0, false).unwrap();
    assert!(g.total.iter().all(|v| v.abs() < 1e-15), "{:?}", g.total);
}

#[test]
fn objective_identities() {
    let c = 3;
    let spec = &small_archs(c)[1];
    let p = jittered(spec, 30);
    let batch = random_batch(&spec.input_shape, 6, c, 31);
    let adv = perturbed(&batch.inputs, 0.05, 32);
    let ens = reads(batch.len(), c, 33);
    let at = |kind, f: &dyn Fn(&mut ObjectiveConfig)| {
        let mut cfg = config(kind, 0.0);
        f(&mut cfg);
        grad_params(&cfg, &p, &batch, &adv, Some(&ens), 0, true).unwrap()
    };
    let pgd = at(ObjectiveKind::PgdAt, &|_| {});
    let std_ce = at(ObjectiveKind::StandardCe, &|_| {});

    let g0 = at(ObjectiveKind::Interpolated, &|c| c.gamma = Schedule::constant(0.0));
    assert_eq!(g0.breakdown.total, std_ce.breakdown.total);
    assert_eq!(g0.total, std_ce.total);
    let g1 = at(ObjectiveKind::Interpolated, &|c| c.gamma = Schedule::constant(1.0));
    assert_eq!(g1.breakdown.total, pgd.breakdown.total);
    assert_eq!(g1.total, pgd.total);

    let trades0 = at(ObjectiveKind::Trades, &|c| c.beta = 0.0);
    assert_eq!(trades0.breakdown.total, std_ce.breakdown.total);
    assert_eq!(trades0.total, std_ce.total);

    let te0 = at(ObjectiveKind::PgdAtTe, &|c| c.te_ramp = Schedule::constant(0.0));
    assert_eq!(te0.breakdown.total, pgd.breakdown.total);
    assert_eq!(te0.total, pgd.total);

    // Linearity of the interpolated gradient.
    let gamma = 0.3;
    let mid = at(ObjectiveKind::Interpolated, &|c| c.gamma = Schedule::constant(gamma));
    let comps = pgd.components.as_ref().unwrap();
    for i in 0..mid.total.len() {
        let want = (1.0 - gamma) * comps.clean_ce[i] + gamma * comps.adv_ce[i];
        assert!((mid.total[i] - want).abs() < 1e-10);
    }

    // Breakdowns reconstruct their totals.
    for kind in KINDS {
        let g = at(kind, &|_| {});
        assert!((g.breakdown.reconstruct(kind) - g.breakdown.total).abs() < 1e-8, "{kind:?}");
    }

    // With adv = clean, PGD-AT is standard training.
    let cfg = config(ObjectiveKind::PgdAt, 0.0);
    let same = grad_params(&cfg, &p, &batch, &batch.inputs, None, 0, false).unwrap();
    let cfg = config(ObjectiveKind::StandardCe, 0.0);
    let plain = grad_params(&cfg, &p, &batch, &batch.inputs, None, 0, false).unwrap();
    assert_eq!(same.breakdown.total, plain.breakdown.total);
    assert_eq!(same.total, plain.total);
}

#[test]
fn te_kinds_require_ensemble_reads() {
    let c = 2;
    let p = linear(3, c, 1);
    let batch = random_batch(&[3], 2, c, 2);
    for kind in [ObjectiveKind::PgdAtTe, ObjectiveKind::TradesTe] {
        let cfg = config(kind, 0.0);
        assert!(composite_loss(&cfg, &p, &batch, &batch.inputs, None, 0).is_err());
    }
}
