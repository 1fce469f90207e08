//! Quick built-in checks of the numerical core against independent
//! references: finite differences, brute-force counts and closed forms.
//! Runs in a second or two; the full test suites live in the crates' tests.

use atlab_core::attacks::{fgsm, pgd_attack, vertex_oracle, PerturbationSpec};
use atlab_core::complexity::{operator_spectral_norm, percentile};
use atlab_core::data::{corrupt_labels, make_synthetic, CorruptionSpec, Dataset, Split};
use atlab_core::diagnostics::kendall_tau;
use atlab_core::model::{forward_probs, init_model, ArchSpec, ModelParameters, WeightOperator};
use atlab_core::objectives::{composite_loss, grad_input, grad_params, input_losses, InputTarget, LossKind, ObjectiveConfig, ObjectiveKind};
use atlab_core::rng::Stream;
use atlab_core::trainer::EnsembleBuffer;
use atlab_core::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("objective gradients vs finite differences", objective_gradients),
        check("input gradients vs finite differences", input_gradients),
        check("one-step PGD equals FGSM", fgsm_equivalence),
        check("vertex search bounds PGD on linear models", vertex_bound),
        check("Kendall tau vs pair counting", kendall_pairs),
        check("spectral norm of a diagonal operator", spectral_diagonal),
        check("ensemble average of a constant prediction", ensemble_constant),
        check("label corruption count", corruption_count),
    ]
}

fn small_mlp() -> Result<ModelParameters> {
    init_model(&ArchSpec::mlp(4, &[6], 3, 11))
}

fn probe_data() -> Result<Dataset> {
    make_synthetic(3, 3, 4, 0.4, 5)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn objective_gradients() -> Result<(bool, String)> {
    let params = small_mlp()?;
    let ds = probe_data()?;
    let batch = ds.full_batch();
    let mut rng = Stream::new(3);
    let adv: Vec<f64> = batch.inputs.iter().map(|x| (x + 0.03 * (rng.uniform() - 0.5)).clamp(0.0, 1.0)).collect();
    let mut ens = Vec::new();
    for _ in 0..batch.len() {
        let r: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.1).collect();
        let s: f64 = r.iter().sum();
        ens.extend(r.iter().map(|v| v / s));
    }
    let mut worst: f64 = 0.0;
    for kind in [ObjectiveKind::PgdAt, ObjectiveKind::Trades, ObjectiveKind::Interpolated, ObjectiveKind::PgdAtTe, ObjectiveKind::TradesTe] {
        let mut cfg = ObjectiveConfig::new(kind, 10);
        cfg.te_weight = 2.0;
        let epoch = 7;
        let reads = kind.uses_ensemble().then_some(ens.as_slice());
        let g = grad_params(&cfg, &params, &batch, &adv, reads, epoch, false)?.total;
        let h = 1e-5;
        for i in (0..params.len()).step_by(7) {
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            let fd = (composite_loss(&cfg, &plus, &batch, &adv, reads, epoch)?.total
                - composite_loss(&cfg, &minus, &batch, &adv, reads, epoch)?.total)
                / (2.0 * h);
            worst = worst.max(rel_err(g[i], fd).min((g[i] - fd).abs() / 1e-6));
        }
    }
    Ok((worst < 1e-4, format!("worst relative error {worst:.2e}")))
}

fn input_gradients() -> Result<(bool, String)> {
    let params = small_mlp()?;
    let ds = probe_data()?;
    let target = InputTarget::labels(&ds.labels);
    let g = grad_input(LossKind::Ce, &params, &ds.inputs, &target)?.grad;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..ds.inputs.len() {
        let mut plus = ds.inputs.clone();
        plus[i] += h;
        let mut minus = ds.inputs.clone();
        minus[i] -= h;
        let fd = (input_losses(LossKind::Ce, &params, &plus, &target)?.iter().sum::<f64>()
            - input_losses(LossKind::Ce, &params, &minus, &target)?.iter().sum::<f64>())
            / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1e-3));
    }
    Ok((worst < 1e-5, format!("worst relative error {worst:.2e}")))
}

fn fgsm_equivalence() -> Result<(bool, String)> {
    let params = small_mlp()?;
    let batch = probe_data()?.full_batch();
    let spec = PerturbationSpec::linf(0.1, 0.1, 1, 0).without_random_start();
    let a = fgsm(&params, &batch, &spec)?;
    let b = pgd_attack(&params, &batch, &spec, None)?;
    Ok((a == b, "bitwise comparison".into()))
}

fn vertex_bound() -> Result<(bool, String)> {
    let params = init_model(&ArchSpec::linear(4, 3, 2))?;
    let batch = probe_data()?.full_batch();
    let spec = PerturbationSpec::linf(0.2, 0.05, 20, 1);
    let exact = vertex_oracle(&params, &batch, &spec)?.losses;
    let pgd = pgd_attack(&params, &batch, &spec, None)?;
    let found = input_losses(LossKind::Ce, &params, &pgd, &InputTarget::labels(&batch.labels))?;
    let gap = exact.iter().zip(&found).map(|(e, f)| e - f).fold(f64::INFINITY, f64::min);
    Ok((gap >= -1e-9, format!("smallest exact-minus-PGD gap {gap:.2e}")))
}

fn kendall_pairs() -> Result<(bool, String)> {
    let mut rng = Stream::new(9);
    let n = 60;
    let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 8.0).floor()).collect();
    let b: Vec<f64> = (0..n).map(|_| (rng.uniform() * 8.0).floor()).collect();
    let (mut conc, mut disc, mut ta, mut tb) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (da, db) = (a[i] - a[j], b[i] - b[j]);
            if da == 0.0 && db == 0.0 {
            } else if da == 0.0 {
                ta += 1.0;
            } else if db == 0.0 {
                tb += 1.0;
            } else if da * db > 0.0 {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    let reference = (conc - disc) / ((conc + disc + ta) * (conc + disc + tb) as f64).sqrt();
    let tau = kendall_tau(&a, &b)?.unwrap_or(f64::NAN);
    Ok(((tau - reference).abs() < 1e-12, format!("tau {tau:.6}, reference {reference:.6}")))
}

fn spectral_diagonal() -> Result<(bool, String)> {
    let op = WeightOperator::Dense { rows: 3, cols: 3 };
    let w = [0.5, 0.0, 0.0, 0.0, -3.0, 0.0, 0.0, 0.0, 2.0];
    let s = operator_spectral_norm(&op, &w, 1e-13, 20000);
    Ok(((s.value - 3.0).abs() < 1e-9, format!("estimate {:.12}", s.value)))
}

fn ensemble_constant() -> Result<(bool, String)> {
    let params = small_mlp()?;
    let ds = probe_data()?;
    let probs = forward_probs(&params, &ds.inputs)?;
    let mut buf = EnsembleBuffer::new(ds.len(), 3, 0.9)?;
    for epoch in 0..5 {
        buf.update(epoch, &ds.sample_ids, &probs)?;
    }
    // raw average after k updates is (1 - 0.9^k) * p; reads renormalize
    let scale = 1.0 - 0.9f64.powi(5);
    let raw_err = buf.row(0).iter().zip(&probs[..3]).map(|(r, p)| (r - scale * p).abs()).fold(0.0, f64::max);
    let read = buf.read(&ds.sample_ids)?.rows;
    let read_err = read.iter().zip(&probs).map(|(r, p)| (r - p).abs()).fold(0.0, f64::max);
    Ok((raw_err < 1e-14 && read_err < 1e-14, format!("raw error {raw_err:.1e}, read error {read_err:.1e}")))
}

fn corruption_count() -> Result<(bool, String)> {
    let ds = make_synthetic(10, 10, 3, 0.5, 1)?;
    let spec = CorruptionSpec::new(0.37, 4)?;
    let corrupted = corrupt_labels(&ds, &spec)?;
    let changed = ds.labels.iter().zip(&corrupted.labels).filter(|(a, b)| a != b).count();
    let ok = spec.resample_count(100) == 37 && changed <= 37 && corrupted.inputs == ds.inputs && corrupted.split == Split::Train;
    let median = percentile(&[1.0, 3.0, 2.0], 50.0);
    Ok((ok && median == 2.0, format!("{changed} of 37 resampled labels changed")))
}
