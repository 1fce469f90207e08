//! Gradient magnitude and stability probes, per-sample adversarial losses,
//! and Kendall's rank correlation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack_traced, vertex_oracle, AttackExtras, Norm, PerturbationSpec};
use crate::data::{Dataset, ExampleBatch};
use crate::error::{invalid, shape_err, Result};
use crate::linalg::{cosine, dist2, norm2, norm_inf, sub};
use crate::model::{forward_probs, ModelParameters};
use crate::objectives::{grad_params, LossKind, ObjectiveConfig, ObjectiveKind};
use crate::rng::{tags, Stream};
use crate::schedule::Schedule;

/// Training method whose loss terms are probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PgdAt,
    Trades,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PgdAt => "pgd_at",
            Method::Trades => "trades",
        }
    }
}

/// Fixed-weight objective used by the probes.
fn probe_objective(kind: ObjectiveKind, beta: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        beta,
        gamma: Schedule::constant(1.0),
        te_ramp: Schedule::constant(0.0),
        ..ObjectiveConfig::new(kind, 0)
    }
}

/// Adversarial inputs for `method` at `params`: CE-PGD for PGD-AT, KL-PGD
/// against the clean predictions for TRADES.
pub fn adversarial_inputs(
    params: &ModelParameters,
    batch: &ExampleBatch,
    method: Method,
    spec: &PerturbationSpec,
) -> Result<Vec<f64>> {
    let mut spec = spec.clone();
    let clean;
    let extras = match method {
        Method::PgdAt => AttackExtras::default(),
        Method::Trades => {
            spec.loss_kind = LossKind::KlVsClean;
            clean = forward_probs(params, &batch.inputs)?;
            AttackExtras {
                clean_probs: Some(&clean),
                te: None,
            }
        }
    };
    Ok(pgd_attack_traced(params, batch, &spec, &extras, &mut |_, _| {})?.inputs)
}

/// l2 norms of the parameter gradients of the batch-mean loss terms.
///
/// `adv` is the full objective (the adversarial CE for PGD-AT); `kl` is the
/// beta-weighted KL term of TRADES and `kl_unweighted` the bare KL;
/// `residual` is adversarial minus clean CE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub method: Method,
    pub clean_ce: f64,
    pub adv: f64,
    pub kl: f64,
    pub kl_unweighted: f64,
    pub residual: f64,
}

impl GradNorms {
    /// `residual / clean_ce` for PGD-AT, `kl_unweighted / clean_ce` for
    /// TRADES (independent of beta); `None` when the denominator vanishes.
    pub fn ratio(&self) -> Option<f64> {
        if self.clean_ce <= 1e-12 {
            return None;
        }
        Some(match self.method {
            Method::PgdAt => self.residual / self.clean_ce,
            Method::Trades => self.kl_unweighted / self.clean_ce,
        })
    }
}

/// Gradient norms on adversarial points generated fresh with `spec`.
pub fn grad_norm_terms(
    params: &ModelParameters,
    batch: &ExampleBatch,
    method: Method,
    spec: &PerturbationSpec,
    beta: f64,
) -> Result<GradNorms> {
    let adv = adversarial_inputs(params, batch, method, spec)?;
    grad_norm_terms_at(params, batch, &adv, method, beta)
}

/// [`grad_norm_terms`] with given adversarial points.
pub fn grad_norm_terms_at(
    params: &ModelParameters,
    batch: &ExampleBatch,
    adv_inputs: &[f64],
    method: Method,
    beta: f64,
) -> Result<GradNorms> {
    let kind = match method {
        Method::PgdAt => ObjectiveKind::PgdAt,
        Method::Trades => ObjectiveKind::Trades,
    };
    let g = grad_params(&probe_objective(kind, beta), params, batch, adv_inputs, None, 0, true)?;
    let comps = g.components.expect("components requested");
    let kl = norm2(&comps.kl);
    Ok(GradNorms {
        method,
        clean_ce: norm2(&comps.clean_ce),
        adv: norm2(&g.total),
        kl: beta.abs() * kl,
        kl_unweighted: kl,
        residual: norm2(&comps.residual),
    })
}

pub fn grad_ratio(
    params: &ModelParameters,
    batch: &ExampleBatch,
    method: Method,
    spec: &PerturbationSpec,
    beta: f64,
) -> Result<Option<f64>> {
    Ok(grad_norm_terms(params, batch, method, spec, beta)?.ratio())
}

/// Gaussian direction rescaled per parameter group so that each group has
/// the norm of the corresponding parameters.
pub fn filter_normalized_direction(params: &ModelParameters, seed: u64) -> Vec<f64> {
    let mut rng = Stream::derived(seed, &[tags::DIRECTION]);
    let mut d: Vec<f64> = (0..params.len()).map(|_| rng.gaussian()).collect();
    normalize_direction(params, &mut d);
    d
}

/// Rescales `direction` in place group by group to `||d_g|| = ||theta_g||`.
pub fn normalize_direction(params: &ModelParameters, direction: &mut [f64]) {
    assert_eq!(direction.len(), params.len());
    for (i, g) in params.groups.iter().enumerate() {
        let target = norm2(params.group(i));
        let seg = &mut direction[g.offset..g.offset + g.len];
        let len = norm2(seg);
        let s = if target == 0.0 || len == 0.0 { 0.0 } else { target / len };
        seg.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSweep {
    pub lambdas: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepLoss {
    PgdAt,
    Trades,
    CleanCe,
}

impl SweepLoss {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepLoss::PgdAt => "pgd_at",
            SweepLoss::Trades => "trades",
            SweepLoss::CleanCe => "clean_ce",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub loss_kind: SweepLoss,
    pub lambda: f64,
    pub l2_dist: f64,
    /// `None` when either gradient vanishes.
    pub cosine: Option<f64>,
    pub loss: f64,
}

/// Adversarial inputs for a sweep loss (the clean inputs for clean CE).
fn sweep_inputs(params: &ModelParameters, batch: &ExampleBatch, kind: SweepLoss, spec: &PerturbationSpec) -> Result<Vec<f64>> {
    match kind {
        SweepLoss::CleanCe => Ok(batch.inputs.clone()),
        SweepLoss::PgdAt => adversarial_inputs(params, batch, Method::PgdAt, spec),
        SweepLoss::Trades => adversarial_inputs(params, batch, Method::Trades, spec),
    }
}

fn sweep_objective(kind: SweepLoss, beta: f64) -> ObjectiveConfig {
    let objective = match kind {
        SweepLoss::CleanCe => ObjectiveKind::StandardCe,
        SweepLoss::PgdAt => ObjectiveKind::PgdAt,
        SweepLoss::Trades => ObjectiveKind::Trades,
    };
    probe_objective(objective, beta)
}

/// Parameter gradient of sample `i`'s loss given the batch's adversarial inputs.
fn sample_gradient(
    cfg: &ObjectiveConfig,
    params: &ModelParameters,
    batch: &ExampleBatch,
    adv: &[f64],
    i: usize,
) -> Result<Vec<f64>> {
    let d = batch.dim();
    let one = batch.select(&[i]);
    Ok(grad_params(cfg, params, &one, &adv[i * d..(i + 1) * d], None, 0, false)?.total)
}

/// Gradients of each loss at `theta + lambda * d` compared with those at
/// `theta`; adversarial points are regenerated at every shifted point with
/// the fixed seed of `spec`.
pub fn direction_sweep(
    params: &ModelParameters,
    batch: &ExampleBatch,
    sweep: &DirectionSweep,
    kinds: &[SweepLoss],
    spec: &PerturbationSpec,
    beta: f64,
) -> Result<Vec<SweepRecord>> {
    let d = filter_normalized_direction(params, sweep.seed);
    direction_sweep_along(params, batch, &d, &sweep.lambdas, kinds, spec, beta)
}

/// Like [`direction_sweep`] along a given direction. Distances and cosines
/// compare each sample's own loss gradient and are averaged over the batch;
/// `loss` is the batch-mean loss at the shifted point.
pub fn direction_sweep_along(
    params: &ModelParameters,
    batch: &ExampleBatch,
    direction: &[f64],
    lambdas: &[f64],
    kinds: &[SweepLoss],
    spec: &PerturbationSpec,
    beta: f64,
) -> Result<Vec<SweepRecord>> {
    if direction.len() != params.len() {
        return Err(shape_err!("direction has {} entries, model {}", direction.len(), params.len()));
    }
    let n = batch.len();
    let shifted: Vec<ModelParameters> = lambdas.iter().map(|&l| params.shifted(l, direction)).collect();
    let mut out = Vec::with_capacity(kinds.len() * lambdas.len());
    for &kind in kinds {
        let cfg = sweep_objective(kind, beta);
        let adv0 = sweep_inputs(params, batch, kind, spec)?;
        let advs = shifted.iter().map(|p| sweep_inputs(p, batch, kind, spec)).collect::<Result<Vec<_>>>()?;
        let mut dist = vec![0.0; lambdas.len()];
        let mut cos = vec![(0.0, 0usize); lambdas.len()];
        for i in 0..n {
            let g0 = sample_gradient(&cfg, params, batch, &adv0, i)?;
            for (k, (p, adv)) in shifted.iter().zip(&advs).enumerate() {
                let g = sample_gradient(&cfg, p, batch, adv, i)?;
                dist[k] += dist2(&g, &g0);
                if let Some(c) = cosine(&g, &g0) {
                    cos[k].0 += c;
                    cos[k].1 += 1;
                }
            }
        }
        for (k, (p, adv)) in shifted.iter().zip(&advs).enumerate() {
            let loss = grad_params(&cfg, p, batch, adv, None, 0, false)?.breakdown.total;
            out.push(SweepRecord {
                loss_kind: kind,
                lambda: lambdas[k],
                l2_dist: dist[k] / n as f64,
                cosine: (cos[k].1 > 0).then(|| cos[k].0 / cos[k].1 as f64),
                loss,
            });
        }
    }
    Ok(out)
}

/// Cosine similarity of two (e.g. successive-epoch) gradients; `None` for a
/// zero vector.
pub fn epoch_gradient_cosine(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(shape_err!("gradients of length {} and {}", a.len(), b.len()));
    }
    Ok(cosine(a, b))
}

/// Parameter gradient of the cross-entropy of each sample separately.
pub fn per_sample_ce_grads(params: &ModelParameters, batch: &ExampleBatch, inputs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let cfg = probe_objective(ObjectiveKind::StandardCe, 0.0);
    let d = batch.dim();
    (0..batch.len())
        .map(|i| {
            let one = batch.select(&[i]).with_inputs(inputs[i * d..(i + 1) * d].to_vec());
            Ok(grad_params(&cfg, params, &one, &one.inputs, None, 0, false)?.total)
        })
        .collect()
}

fn input_distance(norm: Norm, a: &[f64], b: &[f64]) -> f64 {
    match norm {
        Norm::Linf => norm_inf(&sub(a, b)),
        Norm::L2 => dist2(a, b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed gradient-difference to input-distance ratio.
    pub k_hat: f64,
    pub sample_count: usize,
    pub pairs: usize,
    pub spec: PerturbationSpec,
}

/// Lower estimate of the input-Lipschitz constant of the parameter gradient
/// of the cross-entropy over the perturbation sets of `batch`.
///
/// Each sample contributes `sample_count` uniform draws from its ball (draw
/// `j` depends only on `seed`, the sample id and `j`) and its PGD endpoint.
pub fn estimate_lipschitz(
    params: &ModelParameters,
    batch: &ExampleBatch,
    spec: &PerturbationSpec,
    sample_count: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if sample_count == 0 {
        return Err(invalid!("sample_count must be at least 1"));
    }
    let d = batch.dim();
    let base = per_sample_ce_grads(params, batch, &batch.inputs)?;
    let pgd = adversarial_inputs(params, batch, Method::PgdAt, spec)?;
    let mut k_hat: f64 = 0.0;
    let mut pairs = 0;
    for i in 0..batch.len() {
        let x = batch.sample(i);
        let mut points = Vec::with_capacity(sample_count + 1);
        for j in 0..sample_count {
            let mut rng = Stream::derived(seed, &[tags::LIPSCHITZ, batch.sample_ids[i] as u64, j as u64]);
            points.push(ball_draw(x, spec, &mut rng));
        }
        points.push(pgd[i * d..(i + 1) * d].to_vec());
        let one = batch.select(&[i]);
        for p in points {
            let g = &per_sample_ce_grads(params, &one, &p)?[0];
            let ratio = dist2(g, &base[i]) / input_distance(spec.norm, &p, x).max(1e-12);
            k_hat = k_hat.max(ratio);
            pairs += 1;
        }
    }
    Ok(LipschitzEstimate {
        k_hat,
        sample_count,
        pairs,
        spec: spec.clone(),
    })
}

fn ball_draw(x: &[f64], spec: &PerturbationSpec, rng: &mut Stream) -> Vec<f64> {
    let eps = spec.epsilon;
    let mut p: Vec<f64> = match spec.norm {
        Norm::Linf => x.iter().map(|&v| v + rng.uniform_in(-eps, eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = x.iter().map(|_| rng.gaussian()).collect();
            let len = norm2(&dir).max(1e-12);
            let r = eps * libm::pow(rng.uniform(), 1.0 / x.len() as f64);
            x.iter().zip(&dir).map(|(&v, &g)| v + r * g / len).collect()
        }
    };
    p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    p
}

/// Lipschitz estimate over a regular grid of the clipped l-inf box (corners
/// included) of every sample, maximized over several parameter snapshots.
/// The grid has `points_per_axis^d` points per sample.
pub fn lipschitz_on_grid(
    snapshots: &[&ModelParameters],
    batch: &ExampleBatch,
    epsilon: f64,
    points_per_axis: usize,
) -> Result<f64> {
    if points_per_axis < 2 {
        return Err(invalid!("a grid needs at least two points per axis"));
    }
    let d = batch.dim();
    let total = points_per_axis.checked_pow(d as u32).filter(|&t| t <= 1 << 20);
    let total = total.ok_or_else(|| invalid!("grid of {points_per_axis}^{d} points is too large"))?;
    let mut k: f64 = 0.0;
    for i in 0..batch.len() {
        let x = batch.sample(i);
        let one = batch.select(&[i]);
        let mut grid = Vec::with_capacity(total * d);
        for m in 0..total {
            let mut rest = m;
            for &xk in x {
                let t = (rest % points_per_axis) as f64 / (points_per_axis - 1) as f64;
                rest /= points_per_axis;
                grid.push((xk - epsilon + 2.0 * epsilon * t).clamp(0.0, 1.0));
            }
        }
        for params in snapshots {
            let base = &per_sample_ce_grads(params, &one, x)?[0];
            let rep = ExampleBatch {
                inputs: grid.clone(),
                labels: vec![one.labels[0]; total],
                sample_ids: (0..total).collect(),
                sample_shape: one.sample_shape.clone(),
                class_count: one.class_count,
            };
            let grads = per_sample_ce_grads(params, &rep, &grid)?;
            for (m, g) in grads.iter().enumerate() {
                let dist = norm_inf(&sub(&grid[m * d..(m + 1) * d], x));
                if dist > 0.0 {
                    k = k.max(dist2(g, base) / dist);
                }
            }
        }
    }
    Ok(k)
}

/// How the inner maximization of the probe is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMax {
    /// Exhaustive vertex search (linear models, l-inf only).
    Vertex,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Row {
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
    /// `lhs - rhs`; positive on violation.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub rows: Vec<Theorem1Row>,
    pub violation_rate: f64,
    pub k_hat: f64,
    pub note: String,
}

/// Checks `||grad J(theta1) - grad J(theta2)|| <= ||grad L(theta1) - grad
/// L(theta2)|| + 2 eps K` per sample, where `J` is the worst-case
/// cross-entropy over the perturbation set and `L` the clean one.
///
/// `k_hat` is an estimate from below of `K`, so a violation indicts the
/// estimate (or an inexact inner maximization), not the inequality.
pub fn theorem1_probe(
    params_1: &ModelParameters,
    params_2: &ModelParameters,
    batch: &ExampleBatch,
    spec: &PerturbationSpec,
    k_hat: f64,
    inner: InnerMax,
) -> Result<Theorem1Report> {
    if params_1.arch_tag() != params_2.arch_tag() {
        return Err(invalid!("snapshots have different architectures"));
    }
    let maximizer = |p: &ModelParameters| -> Result<Vec<f64>> {
        match inner {
            InnerMax::Vertex => Ok(vertex_oracle(p, batch, spec)?.maximizers),
            InnerMax::Pgd => adversarial_inputs(p, batch, Method::PgdAt, spec),
        }
    };
    let adv_1 = per_sample_ce_grads(params_1, batch, &maximizer(params_1)?)?;
    let adv_2 = per_sample_ce_grads(params_2, batch, &maximizer(params_2)?)?;
    let clean_1 = per_sample_ce_grads(params_1, batch, &batch.inputs)?;
    let clean_2 = per_sample_ce_grads(params_2, batch, &batch.inputs)?;
    let slack = 2.0 * spec.epsilon * k_hat;
    let rows: Vec<Theorem1Row> = (0..batch.len())
        .map(|i| {
            let lhs = dist2(&adv_1[i], &adv_2[i]);
            let rhs = dist2(&clean_1[i], &clean_2[i]) + slack;
            Theorem1Row {
                sample_id: batch.sample_ids[i],
                lhs,
                rhs,
                violated: lhs > rhs,
                margin: lhs - rhs,
            }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    let note = if violations == 0 {
        String::from("no violations")
    } else {
        String::from("violations indicate an underestimated K or an inexact inner maximum")
    };
    Ok(Theorem1Report {
        violation_rate: violations as f64 / rows.len().max(1) as f64,
        rows,
        k_hat,
        note,
    })
}

/// Per-sample adversarial cross-entropy, the maximum over the PGD iterates,
/// indexed by sample id.
pub fn per_sample_adv_loss(params: &ModelParameters, dataset: &Dataset, spec: &PerturbationSpec) -> Result<Vec<f64>> {
    let n = dataset.len();
    let mut out = vec![f64::NAN; n];
    let spec = spec.clone().with_loss(LossKind::Ce);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(crate::eval::EVAL_CHUNK) {
        let batch = dataset.batch(chunk);
        let outcome = pgd_attack_traced(params, &batch, &spec, &AttackExtras::default(), &mut |_, _| {})?;
        for (&id, &l) in batch.sample_ids.iter().zip(&outcome.max_losses) {
            if id >= n {
                return Err(invalid!("sample id {id} outside 0..{n}"));
            }
            out[id] = l;
        }
    }
    Ok(out)
}

/// Kendall's tau-b in O(n log n). `None` when either vector is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(shape_err!("vectors of length {} and {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(invalid!("Kendall's tau needs at least two observations"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(invalid!("Kendall's tau is undefined with NaN entries"));
    }
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let pairs = |run: u64| run * (run.saturating_sub(1)) / 2;

    // Ties in a, and joint ties in (a, b).
    let (mut ties_a, mut ties_ab) = (0u64, 0u64);
    let (mut run_a, mut run_ab) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        if a[i] == a[j] {
            run_a += 1;
            if b[i] == b[j] {
                run_ab += 1;
            } else {
                ties_ab += pairs(run_ab);
                run_ab = 1;
            }
        } else {
            ties_a += pairs(run_a);
            ties_ab += pairs(run_ab);
            run_a = 1;
            run_ab = 1;
        }
    }
    ties_a += pairs(run_a);
    ties_ab += pairs(run_ab);

    // Discordant pairs are the inversions of b in this order.
    let mut keys: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut scratch = vec![0.0; n];
    let swaps = merge_count(&mut keys, &mut scratch);

    let mut ties_b = 0u64;
    let mut run = 1u64;
    for w in keys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            ties_b += pairs(run);
            run = 1;
        }
    }
    ties_b += pairs(run);

    Ok(tau_b(n as u64, ties_a, ties_b, ties_ab, swaps))
}

/// Shared final formula, so that independent pair counts give identical
/// floating-point results.
pub fn tau_b(n: u64, ties_a: u64, ties_b: u64, ties_ab: u64, discordant: u64) -> Option<f64> {
    let n0 = n * (n - 1) / 2;
    if ties_a == n0 || ties_b == n0 {
        return None;
    }
    // concordant - discordant
    let s = n0 as i128 - ties_a as i128 - ties_b as i128 + ties_ab as i128 - 2 * discordant as i128;
    let denom = libm::sqrt((n0 - ties_a) as f64 * (n0 - ties_b) as f64);
    Some((s as f64 / denom).clamp(-1.0, 1.0))
}

fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_count(l, sl) + merge_count(r, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            scratch[k] = v[j];
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    swaps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]).unwrap(), None);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        // 6 pairs: one tied in a, one tied in b, 4 concordant -> 4 / sqrt(5 * 5)
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap().unwrap();
        assert!((t - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(epoch_gradient_cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), Some(1.0));
        assert_eq!(epoch_gradient_cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), Some(-1.0));
        assert_eq!(epoch_gradient_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), Some(0.0));
        assert_eq!(epoch_gradient_cosine(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), None);
    }
}
