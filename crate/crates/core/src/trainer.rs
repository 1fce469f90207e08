//! The training loop, SGD with momentum, and the temporal-ensembling buffer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack_traced, AttackExtras, PerturbationSpec};
use crate::data::{augment_batch, iterate_batches, AugmentationSpec, Dataset, ExampleBatch};
use crate::error::{invalid, shape_err, Error, Result};
use crate::eval::evaluate;
use crate::model::{argmax_rows, forward_logits, forward_probs, init_model, ArchSpec, GroupRole, ModelParameters};
use crate::objectives::{grad_params, ComponentGrads, LossBreakdown, LossKind, ObjectiveConfig};
use crate::rng::{derive_seed, tags};
use crate::schedule::Schedule;

/// Momentum buffers laid out like the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<f64>,
    /// Whether weight decay applies to each parameter (weights only).
    pub decay_mask: Vec<bool>,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, momentum: f64, weight_decay: f64) -> Self {
        let mut decay_mask = vec![false; params.len()];
        for g in &params.groups {
            let decays = !matches!(g.role, GroupRole::Bias | GroupRole::NormScale | GroupRole::NormShift);
            decay_mask[g.offset..g.offset + g.len].iter_mut().for_each(|m| *m = decays);
        }
        Self {
            momentum,
            weight_decay,
            buffers: vec![0.0; params.len()],
            decay_mask,
        }
    }
}

/// `buffer = momentum * buffer + grad + wd * param; param -= lr * buffer`.
pub fn sgd_step(params: &mut ModelParameters, state: &mut OptimizerState, grads: &[f64], lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.buffers.len() != params.len() {
        return Err(shape_err!(
            "{} parameters, {} gradients, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        ));
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for i in 0..grads.len() {
        let mut g = grads[i];
        if wd != 0.0 && state.decay_mask[i] {
            g += wd * params.values[i];
        }
        state.buffers[i] = mu * state.buffers[i] + g;
        params.values[i] -= lr * state.buffers[i];
    }
    Ok(())
}

/// Per-sample exponential moving average of predicted distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBuffer {
    pub class_count: usize,
    pub momentum: f64,
    pub raw: Vec<f64>,
    pub updates: Vec<u32>,
    last_epoch: Vec<Option<usize>>,
}

/// Normalized ensemble rows; `cold[i]` marks rows never updated, which read
/// as the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRead {
    pub rows: Vec<f64>,
    pub cold: Vec<bool>,
}

impl EnsembleBuffer {
    pub fn new(sample_count: usize, class_count: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(invalid!("ensemble momentum must lie in [0, 1), got {momentum}"));
        }
        Ok(Self {
            class_count,
            momentum,
            raw: vec![0.0; sample_count * class_count],
            updates: vec![0; sample_count],
            last_epoch: vec![None; sample_count],
        })
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        let c = self.class_count;
        &self.raw[id * c..(id + 1) * c]
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(i) => Err(invalid!("sample id {i} outside ensemble of {}", self.len())),
            None => Ok(()),
        }
    }

    /// `raw_i = eta * raw_i + (1 - eta) * probs_i`, at most once per sample
    /// and epoch.
    pub fn update(&mut self, epoch: usize, sample_ids: &[usize], probs: &[f64]) -> Result<()> {
        let c = self.class_count;
        if probs.len() != sample_ids.len() * c {
            return Err(shape_err!("{} probabilities for {} samples", probs.len(), sample_ids.len()));
        }
        self.check_ids(sample_ids)?;
        for (k, &id) in sample_ids.iter().enumerate() {
            if self.last_epoch[id] == Some(epoch) || sample_ids[..k].contains(&id) {
                return Err(Error::DuplicateSample(id));
            }
        }
        let eta = self.momentum;
        for (&id, p) in sample_ids.iter().zip(probs.chunks_exact(c)) {
            for (r, &q) in self.raw[id * c..(id + 1) * c].iter_mut().zip(p) {
                *r = eta * *r + (1.0 - eta) * q;
            }
            self.updates[id] += 1;
            self.last_epoch[id] = Some(epoch);
        }
        Ok(())
    }

    pub fn read(&self, sample_ids: &[usize]) -> Result<EnsembleRead> {
        self.check_ids(sample_ids)?;
        let c = self.class_count;
        let mut rows = Vec::with_capacity(sample_ids.len() * c);
        let mut cold = Vec::with_capacity(sample_ids.len());
        for &id in sample_ids {
            let r = self.row(id);
            let s: f64 = r.iter().sum();
            if self.updates[id] == 0 {
                rows.extend(core::iter::repeat_n(1.0 / c as f64, c));
                cold.push(true);
            } else {
                let s = s.max(1e-12);
                rows.extend(r.iter().map(|v| v / s));
                cold.push(false);
            }
        }
        Ok(EnsembleRead { rows, cold })
    }
}

pub fn update_ensemble(buffer: &mut EnsembleBuffer, epoch: usize, sample_ids: &[usize], probs: &[f64]) -> Result<()> {
    buffer.update(epoch, sample_ids, probs)
}

pub fn ensemble_read(buffer: &EnsembleBuffer, sample_ids: &[usize]) -> Result<EnsembleRead> {
    buffer.read(sample_ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Evaluate every `every` epochs and always at the last epoch; 0 disables.
    #[serde(default = "one")]
    pub every: usize,
    /// Attack used for robust accuracies and best-checkpoint selection.
    pub attack: PerturbationSpec,
    /// Limit on test samples evaluated (all when absent).
    #[serde(default)]
    pub test_samples: Option<usize>,
    /// When set, training accuracies of evaluated epochs are measured on this
    /// many training samples with the selection attack. Otherwise (and on
    /// other epochs) they are running averages over the epoch's batches,
    /// robust ones on the training attack's points.
    #[serde(default)]
    pub train_samples: Option<usize>,
}

fn one() -> usize {
    1
}

impl EvalConfig {
    pub fn new(attack: PerturbationSpec) -> Self {
        Self {
            every: 1,
            attack,
            test_samples: None,
            train_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub objective: ObjectiveConfig,
    /// Training attack; TRADES kinds switch its loss to the KL divergence.
    pub attack: PerturbationSpec,
    /// Whether the attacker also ascends the temporal-ensembling term.
    #[serde(default)]
    pub te_in_attack: bool,
    pub lr: Schedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Run seed for shuffling, augmentation and training attacks.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    pub eval: EvalConfig,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_batch_size() -> usize {
    128
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.objective.validate()?;
        self.attack.validate()?;
        self.eval.attack.validate()?;
        self.lr.validate()?;
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(invalid!("momentum must lie in [0, 1) and weight decay be non-negative"));
        }
        Ok(())
    }

    /// Seed of the training attack for one batch.
    pub fn attack_seed(&self, epoch: usize, iteration: usize) -> u64 {
        derive_seed(self.seed, &[tags::ATTACK, epoch as u64, iteration as u64])
    }

    pub fn shuffle_seed(&self) -> u64 {
        derive_seed(self.seed, &[tags::SHUFFLE])
    }

    pub fn augment_seed(&self, epoch: usize) -> u64 {
        derive_seed(self.seed, &[tags::AUGMENT, epoch as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_nat_acc: f64,
    pub train_rob_acc: f64,
    pub test_nat_acc: Option<f64>,
    pub test_rob_acc: Option<f64>,
    pub loss_total: f64,
    pub loss_clean_ce: f64,
    pub loss_adv_ce: f64,
    pub loss_kl: f64,
    pub loss_te: f64,
    pub gamma: f64,
    pub te_weight: f64,
}

impl HistoryRow {
    pub const COLUMNS: [&'static str; 13] = [
        "epoch",
        "lr",
        "train_nat_acc",
        "train_rob_acc",
        "test_nat_acc",
        "test_rob_acc",
        "loss_total",
        "loss_clean_ce",
        "loss_adv_ce",
        "loss_kl",
        "loss_te",
        "gamma",
        "te_weight",
    ];

    /// Column values in [`HistoryRow::COLUMNS`] order (`None` for epochs
    /// without evaluation).
    pub fn values(&self) -> [Option<f64>; 13] {
        [
            Some(self.epoch as f64),
            Some(self.lr),
            Some(self.train_nat_acc),
            Some(self.train_rob_acc),
            self.test_nat_acc,
            self.test_rob_acc,
            Some(self.loss_total),
            Some(self.loss_clean_ce),
            Some(self.loss_adv_ce),
            Some(self.loss_kl),
            Some(self.loss_te),
            Some(self.gamma),
            Some(self.te_weight),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub params: ModelParameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub history: Vec<HistoryRow>,
    pub best: Option<Snapshot>,
    pub final_params: ModelParameters,
    pub optimizer: OptimizerState,
    pub ensemble: Option<EnsembleBuffer>,
}

impl TrainResult {
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|s| s.epoch)
    }
}

/// What a hook sees after the gradient of one batch is computed and before
/// the parameters move.
pub struct IterationContext<'a> {
    pub epoch: usize,
    /// Global iteration counter, starting at 0.
    pub iteration: usize,
    pub params: &'a ModelParameters,
    pub batch: &'a ExampleBatch,
    pub adv_inputs: &'a [f64],
    pub gradient: &'a [f64],
    pub breakdown: &'a LossBreakdown,
    /// Present when [`TrainHooks::wants_components`] returns true.
    pub components: Option<&'a ComponentGrads>,
}

pub trait TrainHooks {
    fn wants_components(&self) -> bool {
        false
    }

    fn on_iteration(&mut self, _ctx: &IterationContext) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _row: &HistoryRow, _params: &ModelParameters) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

fn non_finite(epoch: usize, iteration: usize, detail: String) -> Error {
    Error::NonFinite {
        epoch,
        iteration,
        detail,
    }
}

/// Runs `config.epochs` epochs from a fresh initialization.
pub fn train(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset, hooks: &mut dyn TrainHooks) -> Result<TrainResult> {
    let params = init_model(&config.arch)?;
    train_from(config, params, train_set, test_set, hooks)
}

/// Runs the training loop from the given parameters.
pub fn train_from(
    config: &TrainConfig,
    mut params: ModelParameters,
    train_set: &Dataset,
    test_set: &Dataset,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainResult> {
    config.validate()?;
    if params.arch.arch_tag() != config.arch.arch_tag() {
        return Err(invalid!("parameters do not match the configured architecture"));
    }
    if train_set.dim() != params.input_dim() || train_set.class_count != params.class_count() {
        return Err(shape_err!("training data does not fit the model"));
    }
    let kind = config.objective.kind;
    let c = params.class_count();
    let mut opt = OptimizerState::new(&params, config.momentum, config.weight_decay);
    let mut ensemble = if kind.uses_ensemble() {
        Some(EnsembleBuffer::new(train_set.len(), c, config.objective.te_momentum)?)
    } else {
        None
    };
    let test_eval = match config.eval.test_samples {
        Some(n) => test_set.head(n),
        None => test_set.clone(),
    };
    let want_components = hooks.wants_components();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Snapshot)> = None;
    let mut iteration = 0;

    for epoch in 0..config.epochs {
        let lr = config.lr.value(epoch);
        let mut sums = LossBreakdown::default();
        let (mut nat_hits, mut rob_hits, mut seen) = (0usize, 0usize, 0usize);
        let mut batches = 0usize;
        for batch in iterate_batches(train_set, config.batch_size, config.shuffle_seed(), epoch)? {
            let batch = if config.augmentation.enabled {
                augment_batch(&batch, &config.augmentation, config.augment_seed(epoch))?
            } else {
                batch
            };
            let clean_probs = forward_probs(&params, &batch.inputs)?;
            let reads = match &ensemble {
                Some(e) => Some(e.read(&batch.sample_ids)?.rows),
                None => None,
            };
            let te_weight = config.objective.te_weight_at(epoch);
            let adv_inputs = if kind.is_adversarial() {
                let mut spec = config.attack.clone();
                spec.seed = config.attack_seed(epoch, iteration);
                if kind.uses_kl() {
                    spec.loss_kind = LossKind::KlVsClean;
                }
                let extras = AttackExtras {
                    clean_probs: Some(&clean_probs),
                    te: match (&reads, config.te_in_attack && te_weight != 0.0) {
                        (Some(r), true) => Some((r.as_slice(), te_weight)),
                        _ => None,
                    },
                };
                pgd_attack_traced(&params, &batch, &spec, &extras, &mut |_, _| {})?.inputs
            } else {
                batch.inputs.clone()
            };
            let g = grad_params(
                &config.objective,
                &params,
                &batch,
                &adv_inputs,
                reads.as_deref(),
                epoch,
                want_components,
            )?;
            if !g.breakdown.total.is_finite() {
                return Err(non_finite(epoch, iteration, format!("loss {:?}", g.breakdown)));
            }
            if let Some(i) = g.total.iter().position(|v| !v.is_finite()) {
                return Err(non_finite(epoch, iteration, format!("gradient entry {i}")));
            }
            hooks.on_iteration(&IterationContext {
                epoch,
                iteration,
                params: &params,
                batch: &batch,
                adv_inputs: &adv_inputs,
                gradient: &g.total,
                breakdown: &g.breakdown,
                components: g.components.as_ref(),
            })?;

            let nat = argmax_rows(&clean_probs, c);
            let rob = argmax_rows(&forward_logits(&params, &adv_inputs)?, c);
            nat_hits += nat.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            rob_hits += rob.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            seen += batch.len();
            if let Some(e) = ensemble.as_mut() {
                e.update(epoch, &batch.sample_ids, &clean_probs)?;
            }
            sgd_step(&mut params, &mut opt, &g.total, lr)?;
            let b = &g.breakdown;
            sums.total += b.total;
            sums.clean_ce += b.clean_ce;
            sums.adv_ce += b.adv_ce;
            sums.kl_term += b.kl_term;
            sums.te_term += b.te_term;
            batches += 1;
            iteration += 1;
        }

        let k = batches as f64;
        let mut row = HistoryRow {
            epoch,
            lr,
            train_nat_acc: nat_hits as f64 / seen as f64,
            train_rob_acc: rob_hits as f64 / seen as f64,
            test_nat_acc: None,
            test_rob_acc: None,
            loss_total: sums.total / k,
            loss_clean_ce: sums.clean_ce / k,
            loss_adv_ce: sums.adv_ce / k,
            loss_kl: sums.kl_term / k,
            loss_te: sums.te_term / k,
            gamma: config.objective.gamma_at(epoch),
            te_weight: if kind.uses_ensemble() { config.objective.te_weight_at(epoch) } else { 0.0 },
        };
        let last = epoch + 1 == config.epochs;
        let every = config.eval.every;
        if every > 0 && ((epoch + 1) % every == 0 || last) {
            if let Some(n) = config.eval.train_samples {
                let sub = train_set.head(n);
                row.train_nat_acc = evaluate(&params, &sub, None)?;
                row.train_rob_acc = evaluate(&params, &sub, Some(&config.eval.attack))?;
            }
            if !test_eval.is_empty() {
                let nat = evaluate(&params, &test_eval, None)?;
                let rob = evaluate(&params, &test_eval, Some(&config.eval.attack))?;
                row.test_nat_acc = Some(nat);
                row.test_rob_acc = Some(rob);
                if best.as_ref().is_none_or(|(acc, _)| rob > *acc) {
                    best = Some((
                        rob,
                        Snapshot {
                            epoch,
                            params: params.clone(),
                        },
                    ));
                }
            }
        }
        hooks.on_epoch_end(&row, &params)?;
        history.push(row);
    }

    Ok(TrainResult {
        history,
        best: best.map(|(_, s)| s),
        final_params: params,
        optimizer: opt,
        ensemble,
    })
}
