//! Losses, composite training objectives and their gradients.
//!
//! All batch losses are means over the batch. Parameter gradients treat the
//! adversarial inputs as constants. Logarithms and divisions are clamped at
//! [`PROB_FLOOR`], and the gradients differentiate the clamped expressions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ExampleBatch;
use crate::error::{invalid, shape_err, Error, Result};
use crate::model::{forward_tape, softmax_rows, ModelParameters};
use crate::schedule::Schedule;

pub const PROB_FLOOR: f64 = 1e-12;

fn clamped_ln(p: f64) -> f64 {
    libm::log(if p > PROB_FLOOR { p } else { PROB_FLOOR })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    StandardCe,
    PgdAt,
    Trades,
    Interpolated,
    PgdAtTe,
    TradesTe,
}

impl ObjectiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::StandardCe => "standard_ce",
            ObjectiveKind::PgdAt => "pgd_at",
            ObjectiveKind::Trades => "trades",
            ObjectiveKind::Interpolated => "interpolated",
            ObjectiveKind::PgdAtTe => "pgd_at_te",
            ObjectiveKind::TradesTe => "trades_te",
        }
    }

    pub fn uses_ensemble(&self) -> bool {
        matches!(self, ObjectiveKind::PgdAtTe | ObjectiveKind::TradesTe)
    }

    /// TRADES-style kinds ascend the KL divergence in the inner maximization.
    pub fn uses_kl(&self) -> bool {
        matches!(self, ObjectiveKind::Trades | ObjectiveKind::TradesTe)
    }

    pub fn is_adversarial(&self) -> bool {
        *self != ObjectiveKind::StandardCe
    }
}

/// Scalar loss ascended by an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    KlVsClean,
    Cw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Weight of the adversarial term of the interpolated objective.
    pub gamma: Schedule,
    /// Peak weight `w` of the temporal-ensembling term.
    #[serde(default = "default_te_weight")]
    pub te_weight: f64,
    /// Multiplies `te_weight`; the effective weight is `te_weight * te_ramp(epoch)`.
    pub te_ramp: Schedule,
    #[serde(default = "default_te_momentum")]
    pub te_momentum: f64,
    #[serde(default)]
    pub label_smoothing: f64,
}

fn default_beta() -> f64 {
    6.0
}

fn default_te_weight() -> f64 {
    30.0
}

fn default_te_momentum() -> f64 {
    0.9
}

impl ObjectiveConfig {
    /// Defaults for a run of `epochs` epochs: beta 6, gamma ramping linearly
    /// over the first half, TE weight 30 on a Gaussian ramp over the first
    /// half, momentum 0.9.
    pub fn new(kind: ObjectiveKind, epochs: usize) -> Self {
        Self {
            kind,
            beta: default_beta(),
            gamma: Schedule::linear_ramp(epochs / 2),
            te_weight: default_te_weight(),
            te_ramp: Schedule::gaussian_ramp(epochs / 2, 1.0),
            te_momentum: default_te_momentum(),
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.te_weight >= 0.0) || !self.te_weight.is_finite() {
            return Err(invalid!("te_weight must be finite and non-negative, got {}", self.te_weight));
        }
        if !(0.0..1.0).contains(&self.te_momentum) {
            return Err(invalid!("te_momentum must lie in [0, 1), got {}", self.te_momentum));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(invalid!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        self.gamma.validate()?;
        self.te_ramp.validate()
    }

    pub fn gamma_at(&self, epoch: usize) -> f64 {
        self.gamma.value(epoch)
    }

    pub fn te_weight_at(&self, epoch: usize) -> f64 {
        self.te_weight * self.te_ramp.value(epoch)
    }
}

/// Loss components of one batch. `kl_term` and `te_term` are unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub clean_ce: f64,
    pub adv_ce: f64,
    pub kl_term: f64,
    pub te_term: f64,
    pub residual: f64,
    pub beta: f64,
    pub gamma: f64,
    pub te_weight: f64,
}

impl LossBreakdown {
    /// Recomputes the total of `kind` from the components.
    pub fn reconstruct(&self, kind: ObjectiveKind) -> f64 {
        match kind {
            ObjectiveKind::StandardCe => self.clean_ce,
            ObjectiveKind::PgdAt => self.adv_ce,
            ObjectiveKind::Trades => self.clean_ce + self.beta * self.kl_term,
            ObjectiveKind::Interpolated => (1.0 - self.gamma) * self.clean_ce + self.gamma * self.adv_ce,
            ObjectiveKind::PgdAtTe => self.adv_ce + self.te_weight * self.te_term,
            ObjectiveKind::TradesTe => self.clean_ce + self.beta * self.kl_term + self.te_weight * self.te_term,
        }
    }
}

fn check_rows(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(shape_err!("{what}: {} vs {} entries", a.len(), b.len()));
    }
    Ok(())
}

fn class_count(probs: &[f64], rows: usize) -> Result<usize> {
    if rows == 0 || probs.len() % rows != 0 || probs.len() / rows < 2 {
        return Err(shape_err!("{} values do not form {rows} rows of at least 2 classes", probs.len()));
    }
    Ok(probs.len() / rows)
}

fn check_labels(labels: &[usize], c: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= c) {
        Some(&label) => Err(Error::LabelOutOfRange { label, class_count: c }),
        None => Ok(()),
    }
}

/// Per-sample `-sum_c t_c log p_c` with smoothed targets.
pub fn per_sample_cross_entropy(probs: &[f64], labels: &[usize], smoothing: f64) -> Result<Vec<f64>> {
    let c = class_count(probs, labels.len())?;
    check_labels(labels, c)?;
    let off = smoothing / c as f64;
    Ok(probs
        .chunks_exact(c)
        .zip(labels)
        .map(|(row, &y)| {
            if smoothing == 0.0 {
                -clamped_ln(row[y])
            } else {
                -row.iter()
                    .enumerate()
                    .map(|(k, &p)| (if k == y { 1.0 - smoothing + off } else { off }) * clamped_ln(p))
                    .sum::<f64>()
            }
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean cross-entropy with targets `(1 - smoothing) * onehot + smoothing / C`.
pub fn cross_entropy(probs: &[f64], labels: &[usize], smoothing: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(invalid!("smoothing must lie in [0, 1), got {smoothing}"));
    }
    Ok(mean(&per_sample_cross_entropy(probs, labels, smoothing)?))
}

pub fn per_sample_kl(p: &[f64], q: &[f64], c: usize) -> Vec<f64> {
    p.chunks_exact(c)
        .zip(q.chunks_exact(c))
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (clamped_ln(pi) - clamped_ln(qi)))
                .sum()
        })
        .collect()
}

/// Mean of `sum_c p_c log(p_c / q_c)` over rows.
pub fn kl_divergence(p: &[f64], q: &[f64], rows: usize) -> Result<f64> {
    check_rows(p, q, "kl_divergence")?;
    let c = class_count(p, rows)?;
    Ok(mean(&per_sample_kl(p, q, c)))
}

pub fn per_sample_cw(logits: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    let c = class_count(logits, labels.len())?;
    check_labels(labels, c)?;
    Ok(logits
        .chunks_exact(c)
        .zip(labels)
        .map(|(z, &y)| runner_up(z, y).1 - z[y])
        .collect())
}

/// Mean of `max_{j != y} z_j - z_y`; attacks ascend it.
pub fn cw_margin_loss(logits: &[f64], labels: &[usize]) -> Result<f64> {
    Ok(mean(&per_sample_cw(logits, labels)?))
}

fn runner_up(z: &[f64], y: usize) -> (usize, f64) {
    let mut best = if y == 0 { 1 } else { 0 };
    for j in 0..z.len() {
        if j != y && z[j] > z[best] {
            best = j;
        }
    }
    (best, z[best])
}

pub fn per_sample_te(adv_probs: &[f64], reads: &[f64], c: usize) -> Vec<f64> {
    adv_probs
        .chunks_exact(c)
        .zip(reads.chunks_exact(c))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect()
}

/// Mean squared l2 distance between rows.
pub fn te_regularizer(adv_probs: &[f64], reads: &[f64], rows: usize) -> Result<f64> {
    check_rows(adv_probs, reads, "te_regularizer")?;
    let c = class_count(adv_probs, rows)?;
    Ok(mean(&per_sample_te(adv_probs, reads, c)))
}

// Logit-space derivatives of the per-sample terms, scaled by `coef` and
// accumulated into `out`.

fn add_ce_dlogits(probs: &[f64], labels: &[usize], smoothing: f64, coef: f64, out: &mut [f64]) {
    let c = probs.len() / labels.len();
    let off = smoothing / c as f64;
    for ((p, &y), o) in probs.chunks_exact(c).zip(labels).zip(out.chunks_exact_mut(c)) {
        // d/dz_k of -sum_c t_c log(max(p_c, floor)) = p_k * sum_{c live} t_c - [k live] t_k
        let target = |k: usize| if k == y { 1.0 - smoothing + off } else { off };
        let live_mass: f64 = (0..c).filter(|&k| p[k] > PROB_FLOOR).map(target).sum();
        for k in 0..c {
            let live = if p[k] > PROB_FLOOR { target(k) } else { 0.0 };
            o[k] += coef * (p[k] * live_mass - live);
        }
    }
}

fn add_kl_adv_dlogits(p: &[f64], q: &[f64], c: usize, coef: f64, out: &mut [f64]) {
    for ((pr, qr), o) in p.chunks_exact(c).zip(q.chunks_exact(c)).zip(out.chunks_exact_mut(c)) {
        let live_mass: f64 = (0..c).filter(|&k| qr[k] > PROB_FLOOR).map(|k| pr[k]).sum();
        for k in 0..c {
            let live = if qr[k] > PROB_FLOOR { pr[k] } else { 0.0 };
            o[k] += coef * (qr[k] * live_mass - live);
        }
    }
}

fn add_kl_clean_dlogits(p: &[f64], q: &[f64], c: usize, coef: f64, out: &mut [f64]) {
    let mut a = vec![0.0; c];
    for ((pr, qr), o) in p.chunks_exact(c).zip(q.chunks_exact(c)).zip(out.chunks_exact_mut(c)) {
        for k in 0..c {
            a[k] = if pr[k] > 0.0 {
                clamped_ln(pr[k]) + if pr[k] > PROB_FLOOR { 1.0 } else { 0.0 } - clamped_ln(qr[k])
            } else {
                0.0
            };
        }
        let avg: f64 = (0..c).map(|k| pr[k] * a[k]).sum();
        for k in 0..c {
            o[k] += coef * pr[k] * (a[k] - avg);
        }
    }
}

fn add_te_dlogits(q: &[f64], reads: &[f64], c: usize, coef: f64, out: &mut [f64]) {
    let mut g = vec![0.0; c];
    for ((qr, rr), o) in q.chunks_exact(c).zip(reads.chunks_exact(c)).zip(out.chunks_exact_mut(c)) {
        for k in 0..c {
            g[k] = 2.0 * (qr[k] - rr[k]);
        }
        let avg: f64 = (0..c).map(|k| qr[k] * g[k]).sum();
        for k in 0..c {
            o[k] += coef * qr[k] * (g[k] - avg);
        }
    }
}

fn add_cw_dlogits(logits: &[f64], labels: &[usize], coef: f64, out: &mut [f64]) {
    let c = logits.len() / labels.len();
    for ((z, &y), o) in logits.chunks_exact(c).zip(labels).zip(out.chunks_exact_mut(c)) {
        let (j, _) = runner_up(z, y);
        o[j] += coef;
        o[y] -= coef;
    }
}

/// Parameter gradients of the individual (unweighted) loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGrads {
    pub clean_ce: Vec<f64>,
    pub adv_ce: Vec<f64>,
    pub kl: Vec<f64>,
    pub te: Vec<f64>,
    /// `adv_ce - clean_ce`.
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub total: Vec<f64>,
    pub breakdown: LossBreakdown,
    pub components: Option<ComponentGrads>,
}

fn check_batch(params: &ModelParameters, batch: &ExampleBatch, adv_inputs: &[f64]) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if batch.dim() != params.input_dim() {
        return Err(shape_err!(
            "batch dimension {} does not match model input {}",
            batch.dim(),
            params.input_dim()
        ));
    }
    check_rows(&batch.inputs, adv_inputs, "adversarial inputs")?;
    check_labels(&batch.labels, params.class_count())
}

fn evaluate(
    config: &ObjectiveConfig,
    params: &ModelParameters,
    batch: &ExampleBatch,
    adv_inputs: &[f64],
    ensemble_reads: Option<&[f64]>,
    epoch: usize,
    gradient: bool,
    components: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>, Option<ComponentGrads>)> {
    check_batch(params, batch, adv_inputs)?;
    let n = batch.len();
    let c = params.class_count();
    let kind = config.kind;
    let reads = match (kind.uses_ensemble(), ensemble_reads) {
        (true, None) => return Err(invalid!("{} needs ensemble reads", kind.as_str())),
        (true, Some(r)) => {
            check_rows(r, &vec![0.0; n * c], "ensemble reads")?;
            Some(r)
        }
        _ => None,
    };

    let (clean_logits, clean_tape) = forward_tape(params, &batch.inputs)?;
    let clean_probs = softmax_rows(&clean_logits, c);
    let same = adv_inputs == batch.inputs.as_slice();
    let adv = if same {
        None
    } else {
        let (logits, tape) = forward_tape(params, adv_inputs)?;
        let probs = softmax_rows(&logits, c);
        Some((tape, probs))
    };
    let (adv_tape, adv_probs) = match &adv {
        Some((t, p)) => (t, p.as_slice()),
        None => (&clean_tape, clean_probs.as_slice()),
    };

    let s = config.label_smoothing;
    let clean_ce = mean(&per_sample_cross_entropy(&clean_probs, &batch.labels, s)?);
    let adv_ce = mean(&per_sample_cross_entropy(adv_probs, &batch.labels, s)?);
    let kl_term = mean(&per_sample_kl(&clean_probs, adv_probs, c));
    let te_term = reads.map_or(0.0, |r| mean(&per_sample_te(adv_probs, r, c)));
    let gamma = config.gamma_at(epoch);
    let te_weight = if kind.uses_ensemble() { config.te_weight_at(epoch) } else { 0.0 };
    let mut b = LossBreakdown {
        total: 0.0,
        clean_ce,
        adv_ce,
        kl_term,
        te_term,
        residual: adv_ce - clean_ce,
        beta: config.beta,
        gamma,
        te_weight,
    };
    // Skipping zero-weight terms keeps degenerate configurations bitwise
    // identical to the simpler objective they reduce to.
    b.total = match kind {
        ObjectiveKind::StandardCe => clean_ce,
        ObjectiveKind::PgdAt => adv_ce,
        ObjectiveKind::Trades | ObjectiveKind::TradesTe => {
            let mut t = clean_ce;
            if config.beta != 0.0 {
                t += config.beta * kl_term;
            }
            if te_weight != 0.0 {
                t += te_weight * te_term;
            }
            t
        }
        ObjectiveKind::Interpolated => {
            if gamma == 0.0 {
                clean_ce
            } else if gamma == 1.0 {
                adv_ce
            } else {
                (1.0 - gamma) * clean_ce + gamma * adv_ce
            }
        }
        ObjectiveKind::PgdAtTe => {
            if te_weight != 0.0 {
                adv_ce + te_weight * te_term
            } else {
                adv_ce
            }
        }
    };
    if !gradient {
        return Ok((b, None, None));
    }

    let inv = 1.0 / n as f64;
    let mut d_clean = vec![0.0; n * c];
    let mut d_adv = vec![0.0; n * c];
    let (mut use_clean, mut use_adv) = (false, false);
    match kind {
        ObjectiveKind::StandardCe => {
            add_ce_dlogits(&clean_probs, &batch.labels, s, inv, &mut d_clean);
            use_clean = true;
        }
        ObjectiveKind::PgdAt | ObjectiveKind::PgdAtTe => {
            add_ce_dlogits(adv_probs, &batch.labels, s, inv, &mut d_adv);
            use_adv = true;
        }
        ObjectiveKind::Trades | ObjectiveKind::TradesTe => {
            add_ce_dlogits(&clean_probs, &batch.labels, s, inv, &mut d_clean);
            use_clean = true;
            if config.beta != 0.0 {
                let coef = config.beta * inv;
                add_kl_clean_dlogits(&clean_probs, adv_probs, c, coef, &mut d_clean);
                add_kl_adv_dlogits(&clean_probs, adv_probs, c, coef, &mut d_adv);
                use_adv = true;
            }
        }
        ObjectiveKind::Interpolated => {
            if gamma != 1.0 {
                add_ce_dlogits(&clean_probs, &batch.labels, s, (1.0 - gamma) * inv, &mut d_clean);
                use_clean = true;
            }
            if gamma != 0.0 {
                add_ce_dlogits(adv_probs, &batch.labels, s, gamma * inv, &mut d_adv);
                use_adv = true;
            }
        }
    }
    if let (Some(r), true) = (reads, te_weight != 0.0) {
        add_te_dlogits(adv_probs, r, c, te_weight * inv, &mut d_adv);
        use_adv = true;
    }

    let mut grad = vec![0.0; params.len()];
    if same {
        if use_adv {
            d_clean.iter_mut().zip(&d_adv).for_each(|(a, b)| *a += b);
        }
        clean_tape.backward_into(params, &d_clean, false, &mut grad);
    } else {
        if use_clean {
            clean_tape.backward_into(params, &d_clean, false, &mut grad);
        }
        if use_adv {
            adv_tape.backward_into(params, &d_adv, false, &mut grad);
        }
    }

    let comps = if components {
        let zero = vec![0.0; n * c];
        let mut d = zero.clone();
        add_ce_dlogits(&clean_probs, &batch.labels, s, inv, &mut d);
        let clean_ce = clean_tape.backward(params, &d, false).0;
        let mut d = zero.clone();
        add_ce_dlogits(adv_probs, &batch.labels, s, inv, &mut d);
        let adv_ce = adv_tape.backward(params, &d, false).0;
        let (mut dc, mut da) = (zero.clone(), zero.clone());
        add_kl_clean_dlogits(&clean_probs, adv_probs, c, inv, &mut dc);
        add_kl_adv_dlogits(&clean_probs, adv_probs, c, inv, &mut da);
        let mut kl = clean_tape.backward(params, &dc, false).0;
        adv_tape.backward_into(params, &da, false, &mut kl);
        let te = match reads {
            Some(r) => {
                let mut d = zero;
                add_te_dlogits(adv_probs, r, c, inv, &mut d);
                adv_tape.backward(params, &d, false).0
            }
            None => vec![0.0; params.len()],
        };
        let residual = adv_ce.iter().zip(&clean_ce).map(|(a, b)| a - b).collect();
        Some(ComponentGrads {
            clean_ce,
            adv_ce,
            kl,
            te,
            residual,
        })
    } else {
        None
    };
    Ok((b, Some(grad), comps))
}

/// Loss components and total of `config.kind` on one batch.
///
/// `ensemble_reads` (normalized ensemble predictions aligned with the batch)
/// is required for the TE kinds.
pub fn composite_loss(
    config: &ObjectiveConfig,
    params: &ModelParameters,
    batch: &ExampleBatch,
    adv_inputs: &[f64],
    ensemble_reads: Option<&[f64]>,
    epoch: usize,
) -> Result<LossBreakdown> {
    Ok(evaluate(config, params, batch, adv_inputs, ensemble_reads, epoch, false, false)?.0)
}

/// Gradient of the composite total and, with `components`, of each term.
pub fn grad_params(
    config: &ObjectiveConfig,
    params: &ModelParameters,
    batch: &ExampleBatch,
    adv_inputs: &[f64],
    ensemble_reads: Option<&[f64]>,
    epoch: usize,
    components: bool,
) -> Result<ParamGradient> {
    let (breakdown, total, comps) =
        evaluate(config, params, batch, adv_inputs, ensemble_reads, epoch, true, components)?;
    Ok(ParamGradient {
        total: total.expect("gradient requested"),
        breakdown,
        components: comps,
    })
}

/// What an input-space loss is measured against.
#[derive(Debug, Clone, Copy)]
pub struct InputTarget<'a> {
    pub labels: &'a [usize],
    /// Reference clean probabilities for [`LossKind::KlVsClean`].
    pub clean_probs: Option<&'a [f64]>,
    /// Optional `weight * ||f(x) - reads||^2` term added to the loss.
    pub te: Option<(&'a [f64], f64)>,
}

impl<'a> InputTarget<'a> {
    pub fn labels(labels: &'a [usize]) -> Self {
        Self {
            labels,
            clean_probs: None,
            te: None,
        }
    }
}

/// Per-sample losses and their input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub losses: Vec<f64>,
    /// Row `i` is the gradient of `losses[i]` with respect to sample `i`.
    pub grad: Vec<f64>,
}

/// Per-sample loss values without gradients.
pub fn input_losses(
    kind: LossKind,
    params: &ModelParameters,
    inputs: &[f64],
    target: &InputTarget,
) -> Result<Vec<f64>> {
    let logits = crate::model::forward_logits(params, inputs)?;
    losses_from_logits(kind, params.class_count(), &logits, target)
}

fn losses_from_logits(kind: LossKind, c: usize, logits: &[f64], target: &InputTarget) -> Result<Vec<f64>> {
    let n = target.labels.len();
    if logits.len() != n * c {
        return Err(shape_err!("{} labels for {} logit rows", n, logits.len() / c));
    }
    let probs = softmax_rows(logits, c);
    let mut losses = match kind {
        LossKind::Ce => per_sample_cross_entropy(&probs, target.labels, 0.0)?,
        LossKind::Cw => per_sample_cw(logits, target.labels)?,
        LossKind::KlVsClean => {
            let p = target
                .clean_probs
                .ok_or_else(|| invalid!("KL attack needs clean probabilities"))?;
            check_rows(p, &probs, "clean probabilities")?;
            per_sample_kl(p, &probs, c)
        }
    };
    if let Some((reads, w)) = target.te {
        check_rows(reads, &probs, "ensemble reads")?;
        for (l, t) in losses.iter_mut().zip(per_sample_te(&probs, reads, c)) {
            *l += w * t;
        }
    }
    Ok(losses)
}

/// Input gradient of each sample's loss (the gradient of the summed loss).
///
/// For [`LossKind::KlVsClean`] the reference probabilities are constants.
pub fn grad_input(
    kind: LossKind,
    params: &ModelParameters,
    inputs: &[f64],
    target: &InputTarget,
) -> Result<InputGradient> {
    let c = params.class_count();
    let (logits, tape) = forward_tape(params, inputs)?;
    let losses = losses_from_logits(kind, c, &logits, target)?;
    let probs = softmax_rows(&logits, c);
    let mut d = vec![0.0; logits.len()];
    match kind {
        LossKind::Ce => add_ce_dlogits(&probs, target.labels, 0.0, 1.0, &mut d),
        LossKind::Cw => add_cw_dlogits(&logits, target.labels, 1.0, &mut d),
        LossKind::KlVsClean => add_kl_adv_dlogits(target.clean_probs.expect("checked above"), &probs, c, 1.0, &mut d),
    }
    if let Some((reads, w)) = target.te {
        add_te_dlogits(&probs, reads, c, w, &mut d);
    }
    let mut scratch = vec![0.0; params.len()];
    let grad = tape
        .backward_into(params, &d, true, &mut scratch)
        .expect("input gradient requested");
    Ok(InputGradient { losses, grad })
}
