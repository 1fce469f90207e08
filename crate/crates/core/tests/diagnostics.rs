mod common;

use atlab_core::attacks::PerturbationSpec;
use atlab_core::diagnostics::{
    direction_sweep, direction_sweep_along, estimate_lipschitz, filter_normalized_direction, grad_norm_terms, per_sample_ce_grads,
    kendall_tau, lipschitz_on_grid, normalize_direction, per_sample_adv_loss, tau_b,
    theorem1_probe, DirectionSweep, InnerMax, Method, SweepLoss,
};
use atlab_core::data::{Dataset, Split};
use atlab_core::linalg::norm2;
use atlab_core::model::{forward_probs, ArchSpec};
use atlab_core::objectives::per_sample_cross_entropy;
use common::*;
use proptest::prelude::*;

fn brute_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let (mut ta, mut tb, mut tab, mut disc) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let (ea, eb) = (a[i] == a[j], b[i] == b[j]);
            ta += ea as u64;
            tb += eb as u64;
            tab += (ea && eb) as u64;
            if !ea && !eb && ((a[i] < a[j]) != (b[i] < b[j])) {
                disc += 1;
            }
        }
    }
    tau_b(n as u64, ta, tb, tab, disc)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn fast_tau_equals_brute_force(
        n in 2usize..=500,
        levels in 2u32..1000,
        seed in any::<u64>(),
    ) {
        let mut rng = atlab_core::rng::Stream::new(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.below(levels as usize) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.below(levels as usize) as f64).collect();
        prop_assert_eq!(kendall_tau(&a, &b).unwrap(), brute_tau(&a, &b));
    }

    #[test]
    fn tau_of_self_and_negation(v in proptest::collection::hash_set(-1_000_000i64..1_000_000, 2..300)) {
        let a: Vec<f64> = v.into_iter().map(|x| x as f64).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert_eq!(kendall_tau(&a, &a).unwrap(), Some(1.0));
        prop_assert_eq!(kendall_tau(&a, &neg).unwrap(), Some(-1.0));
    }
}

#[test]
fn sweep_at_zero_is_exact() {
    let c = 3;
    let spec = &small_archs(c)[2];
    let p = jittered(spec, 1);
    let b = random_batch(&spec.input_shape, 4, c, 2);
    let sweep = DirectionSweep {
        lambdas: vec![0.0, 0.01],
        seed: 3,
    };
    let kinds = [SweepLoss::PgdAt, SweepLoss::Trades, SweepLoss::CleanCe];
    let recs = direction_sweep(&p, &b, &sweep, &kinds, &PerturbationSpec::pgd10(4), 6.0).unwrap();
    for r in recs.iter().filter(|r| r.lambda == 0.0) {
        assert_eq!(r.l2_dist, 0.0, "{:?}", r.loss_kind);
        assert_eq!(r.cosine, Some(1.0));
    }
    assert!(recs.iter().filter(|r| r.lambda != 0.0).all(|r| r.l2_dist > 0.0));
}

#[test]
fn clean_sweep_on_linear_model_is_continuous() {
    let (d, c) = (5, 3);
    let p = jittered(&ArchSpec::linear(d, c, 0), 5);
    let b = random_batch(&[d], 8, c, 6);
    let dir = filter_normalized_direction(&p, 7);
    let lambdas: Vec<f64> = (0..=40).map(|k| k as f64 * 0.0025).collect();
    let recs = direction_sweep_along(&p, &b, &dir, &lambdas, &[SweepLoss::CleanCe], &PerturbationSpec::pgd10(0), 0.0)
        .unwrap();
    // The CE gradient of a linear-softmax model is smooth in the weights;
    // consecutive distances differ by at most a slope bound times the step.
    let slopes: Vec<f64> = recs
        .windows(2)
        .map(|w| (w[1].l2_dist - w[0].l2_dist).abs() / (w[1].lambda - w[0].lambda))
        .collect();
    let typical = slopes[0].max(1e-12);
    assert!(slopes.iter().all(|s| *s <= 10.0 * typical), "{slopes:?}");
}

#[test]
fn filter_normalization_matches_group_norms() {
    let spec = &small_archs(3)[2];
    let mut p = jittered(spec, 8);
    let zero = p.group_index("conv1.bias").unwrap();
    p.group_mut(zero).iter_mut().for_each(|v| *v = 0.0);
    let d = filter_normalized_direction(&p, 9);
    for (i, g) in p.groups.iter().enumerate() {
        let seg = &d[g.offset..g.offset + g.len];
        assert!((norm2(seg) - norm2(p.group(i))).abs() < 1e-12 * (1.0 + norm2(p.group(i))));
    }
    let mut ones = vec![1.0; p.len()];
    normalize_direction(&p, &mut ones);
    let g = &p.groups[zero];
    assert!(ones[g.offset..g.offset + g.len].iter().all(|v| *v == 0.0));
}

#[test]
fn grad_norms_degenerate_cases() {
    let c = 3;
    let spec = &small_archs(c)[1];
    let p = jittered(spec, 10);
    let b = random_batch(&spec.input_shape, 8, c, 11);
    let tiny = PerturbationSpec::linf(1e-9, 2.5e-10, 10, 1);
    let n = grad_norm_terms(&p, &b, Method::PgdAt, &tiny, 6.0).unwrap();
    assert!(n.residual <= 1e-3 * n.clean_ce);
    assert!(n.ratio().unwrap() <= 1e-3);
    let t = grad_norm_terms(&p, &b, Method::Trades, &PerturbationSpec::pgd10(1), 0.0).unwrap();
    assert_eq!(t.kl, 0.0);
    // The KL attack ignores beta, so the unweighted ratio does too.
    let t6 = grad_norm_terms(&p, &b, Method::Trades, &PerturbationSpec::pgd10(1), 6.0).unwrap();
    assert!((t6.kl - 6.0 * t6.kl_unweighted).abs() <= 1e-12 * t6.kl);
    assert_eq!(t6.kl_unweighted, t.kl_unweighted);
    assert_eq!(t.ratio(), t6.ratio());
    assert_eq!(t.ratio(), Some(t.kl_unweighted / t.clean_ce));
    for v in [n.clean_ce, n.adv, n.kl, n.residual, t.clean_ce, t.adv] {
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn lipschitz_estimates() {
    let (d, c) = (4, 3);
    let p = jittered(&ArchSpec::linear(d, c, 0), 12);
    let b = random_batch(&[d], 5, c, 13);
    let s = PerturbationSpec::linf(0.05, 0.0125, 10, 3);
    let k4 = estimate_lipschitz(&p, &b, &s, 4, 99).unwrap();
    let k8 = estimate_lipschitz(&p, &b, &s, 8, 99).unwrap();
    assert!(k8.k_hat >= k4.k_hat && k4.k_hat > 0.0);

    // Zero weights: softmax is uniform, so the weight gradient of sample i
    // is (p - e_y) x^T and its change is (p - e_y) (x' - x)^T, giving
    // ||p - e_y|| * ||x' - x||_2 / ||x' - x||_inf <= ||p - e_y|| sqrt(d).
    let mut z = p.clone();
    z.values.iter_mut().for_each(|v| *v = 0.0);
    let k = estimate_lipschitz(&z, &b, &s, 16, 1).unwrap().k_hat;
    let row = ((1.0 - 1.0 / c as f64).powi(2) + (c - 1) as f64 / (c * c) as f64).sqrt();
    assert!(k <= row * (d as f64).sqrt() + 1e-12 && k >= row - 1e-12, "{k} vs {row}");
}

#[test]
fn theorem1_degenerate_cases() {
    let (d, c) = (4, 3);
    let p = jittered(&ArchSpec::linear(d, c, 0), 14);
    let b = random_batch(&[d], 6, c, 15);
    let s = PerturbationSpec::linf(0.1, 0.025, 10, 0);
    let r = theorem1_probe(&p, &p, &b, &s, 0.0, InnerMax::Vertex).unwrap();
    assert!(r.rows.iter().all(|row| row.lhs == 0.0 && !row.violated));
    let q = jittered(&ArchSpec::linear(d, c, 0), 16);
    let tiny = PerturbationSpec::linf(1e-12, 1e-12, 5, 0).without_random_start();
    let r = theorem1_probe(&p, &q, &b, &tiny, 0.0, InnerMax::Pgd).unwrap();
    assert!(r.rows.iter().all(|row| row.lhs <= row.rhs + 1e-6));
}

#[test]
fn theorem1_exact_probe_has_no_violations() {
    let (d, c) = (3, 3);
    let s = PerturbationSpec::linf(0.1, 0.025, 10, 0);
    for pair in 0..10 {
        let p1 = jittered(&ArchSpec::linear(d, c, pair), 500 + pair);
        let mut p2 = p1.clone();
        let mut rng = atlab_core::rng::Stream::new(600 + pair);
        p2.values.iter_mut().for_each(|v| *v += 0.3 * rng.gaussian());
        let b = random_batch(&[d], 3, c, 700 + pair);
        let k = lipschitz_on_grid(&[&p1, &p2], &b, s.epsilon, 3).unwrap();
        let r = theorem1_probe(&p1, &p2, &b, &s, k, InnerMax::Vertex).unwrap();
        assert_eq!(r.violation_rate, 0.0, "{r:?}");
    }
}

#[test]
fn per_sample_adv_loss_properties() {
    let c = 3;
    let spec = &small_archs(c)[1];
    let p = jittered(spec, 17);
    let b = random_batch(&spec.input_shape, 20, c, 18);
    let ds = Dataset::new("t", b.inputs.clone(), b.labels.clone(), b.sample_shape.clone(), c, Split::Train).unwrap();
    let clean = per_sample_cross_entropy(&forward_probs(&p, &b.inputs).unwrap(), &b.labels, 0.0).unwrap();

    let tiny = PerturbationSpec::linf(1e-9, 2.5e-10, 10, 0);
    let l = per_sample_adv_loss(&p, &ds, &tiny).unwrap();
    assert_eq!(l.len(), 20);
    assert!(l.iter().zip(&clean).all(|(a, b)| (a - b).abs() < 1e-6));

    let s = PerturbationSpec::pgd10(3).without_random_start();
    let l = per_sample_adv_loss(&p, &ds, &s).unwrap();
    assert!(l.iter().zip(&clean).all(|(a, b)| *a >= b - 1e-9));

    // Reversing the dataset order (ids follow the samples) permutes nothing.
    let s = PerturbationSpec::pgd10(5);
    let base = per_sample_adv_loss(&p, &ds, &s).unwrap();
    let rev: Vec<usize> = (0..20).rev().collect();
    let mut shuffled = ds.subset(&rev);
    shuffled.sample_ids = rev.clone();
    let l = per_sample_adv_loss(&p, &shuffled, &s).unwrap();
    assert_eq!(l, base);
}

#[test]
fn clean_sweep_averages_per_sample_distances() {
    let (d, c) = (5, 3);
    let p = jittered(&ArchSpec::mlp(d, &[6], c, 0), 19);
    let b = random_batch(&[d], 7, c, 20);
    let dir = filter_normalized_direction(&p, 21);
    let lambda = 0.03;
    let rec = &direction_sweep_along(&p, &b, &dir, &[lambda], &[SweepLoss::CleanCe], &PerturbationSpec::pgd10(0), 0.0)
        .unwrap()[0];
    let shifted = p.shifted(lambda, &dir);
    let g0 = per_sample_ce_grads(&p, &b, &b.inputs).unwrap();
    let g1 = per_sample_ce_grads(&shifted, &b, &b.inputs).unwrap();
    let mean = g0
        .iter()
        .zip(&g1)
        .map(|(a, c)| a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum::<f64>()
        / 7.0;
    assert!((rec.l2_dist - mean).abs() <= 1e-12 * mean, "{} vs {mean}", rec.l2_dist);
}
