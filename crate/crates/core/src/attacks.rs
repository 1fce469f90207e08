//! Inner maximization: FGSM, projected gradient ascent under l-inf and l2
//! balls, and an exhaustive vertex search for linear-softmax models.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ExampleBatch;
use crate::error::{invalid, shape_err, Error, Result};
use crate::linalg::{norm2, sign};
use crate::model::{forward_probs, Family, ModelParameters};
use crate::objectives::{grad_input, input_losses, per_sample_cross_entropy, InputTarget, LossKind};
use crate::rng::{tags, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default = "yes")]
    pub random_start: bool,
    #[serde(default = "ce")]
    pub loss_kind: LossKind,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

fn ce() -> LossKind {
    LossKind::Ce
}

impl PerturbationSpec {
    /// l-inf PGD with cross-entropy and a random start.
    pub fn linf(epsilon: f64, step_size: f64, steps: usize, seed: u64) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
            step_size,
            steps,
            random_start: true,
            loss_kind: LossKind::Ce,
            seed,
        }
    }

    pub fn l2(epsilon: f64, step_size: f64, steps: usize, seed: u64) -> Self {
        Self {
            norm: Norm::L2,
            ..Self::linf(epsilon, step_size, steps, seed)
        }
    }

    /// The standard 8/255 budget with 10 steps of 2/255.
    pub fn pgd10(seed: u64) -> Self {
        Self::linf(8.0 / 255.0, 2.0 / 255.0, 10, seed)
    }

    pub fn with_loss(mut self, kind: LossKind) -> Self {
        self.loss_kind = kind;
        self
    }

    pub fn without_random_start(mut self) -> Self {
        self.random_start = false;
        self
    }

    /// A zero radius is accepted and yields the clean inputs.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(invalid!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid!("step size must be positive, got {}", self.step_size));
        }
        Ok(())
    }
}

/// Projects each sample of `x_adv` onto the intersection of the norm ball
/// around `x_clean` and the unit box.
///
/// The ball projection is applied first, then the box clip. For l-inf this
/// is the exact joint projection; for l2 the result is re-checked against
/// the ball and the pair repeated once if needed.
pub fn project(x_adv: &[f64], x_clean: &[f64], dim: usize, spec: &PerturbationSpec) -> Vec<f64> {
    let mut out = x_adv.to_vec();
    project_in_place(&mut out, x_clean, dim, spec.norm, spec.epsilon);
    out
}

fn project_in_place(x: &mut [f64], x_clean: &[f64], dim: usize, norm: Norm, eps: f64) {
    assert_eq!(x.len(), x_clean.len());
    match norm {
        Norm::Linf => {
            for (v, &c) in x.iter_mut().zip(x_clean) {
                *v = v.max(c - eps).min(c + eps).clamp(0.0, 1.0);
            }
        }
        Norm::L2 => {
            for (row, clean) in x.chunks_exact_mut(dim).zip(x_clean.chunks_exact(dim)) {
                for _ in 0..2 {
                    l2_ball(row, clean, eps);
                    row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                    if l2_dist(row, clean) <= eps {
                        break;
                    }
                }
            }
        }
    }
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dist2(a, b)
}

fn l2_ball(row: &mut [f64], clean: &[f64], eps: f64) {
    let dist = l2_dist(row, clean);
    if dist > eps {
        let s = eps / dist;
        for (v, &c) in row.iter_mut().zip(clean) {
            *v = c + (*v - c) * s;
        }
    }
}

fn random_start(x: &mut [f64], batch: &ExampleBatch, spec: &PerturbationSpec) {
    let dim = batch.dim();
    for (row, &id) in x.chunks_exact_mut(dim).zip(&batch.sample_ids) {
        let mut rng = Stream::derived(spec.seed, &[tags::ATTACK, id as u64]);
        match spec.norm {
            Norm::Linf => row
                .iter_mut()
                .for_each(|v| *v += rng.uniform_in(-spec.epsilon, spec.epsilon)),
            Norm::L2 => {
                let dir: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
                let len = norm2(&dir).max(1e-12);
                let radius = spec.epsilon * libm::pow(rng.uniform(), 1.0 / dim as f64);
                row.iter_mut().zip(&dir).for_each(|(v, d)| *v += radius * d / len);
            }
        }
    }
}

/// Inputs beyond the labels needed by some attack losses.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttackExtras<'a> {
    /// Clean-input probabilities, fixed across steps, for KL attacks.
    pub clean_probs: Option<&'a [f64]>,
    /// Ensemble reads and weight when the attacker also ascends the TE term.
    pub te: Option<(&'a [f64], f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// Final iterate.
    pub inputs: Vec<f64>,
    /// Per-sample loss at the final iterate.
    pub final_losses: Vec<f64>,
    /// Per-sample maximum of the attack loss over all iterates, the starting
    /// point included.
    pub max_losses: Vec<f64>,
}

/// Projected gradient ascent; `clean_probs` is required for KL attacks.
pub fn pgd_attack(
    params: &ModelParameters,
    batch: &ExampleBatch,
    spec: &PerturbationSpec,
    clean_probs: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let extras = AttackExtras {
        clean_probs,
        te: None,
    };
    Ok(pgd_attack_traced(params, batch, spec, &extras, &mut |_, _| {})?.inputs)
}

/// [`pgd_attack`] with extra loss terms and a hook called with every
/// iterate: step 0 is the starting point, step `t` the result of step `t`.
pub fn pgd_attack_traced(
    params: &ModelParameters,
    batch: &ExampleBatch,
    spec: &PerturbationSpec,
    extras: &AttackExtras,
    hook: &mut dyn FnMut(usize, &[f64]),
) -> Result<AttackOutcome> {
    spec.validate()?;
    if batch.dim() != params.input_dim() {
        return Err(shape_err!("batch dimension {} vs model input {}", batch.dim(), params.input_dim()));
    }
    if spec.loss_kind == LossKind::KlVsClean && extras.clean_probs.is_none() {
        return Err(invalid!("KL attacks need clean probabilities"));
    }
    let target = InputTarget {
        labels: &batch.labels,
        clean_probs: extras.clean_probs,
        te: extras.te,
    };
    let dim = batch.dim();
    let mut x = batch.inputs.clone();
    if spec.random_start && spec.epsilon > 0.0 {
        random_start(&mut x, batch, spec);
        project_in_place(&mut x, &batch.inputs, dim, spec.norm, spec.epsilon);
    }
    hook(0, &x);
    let mut max_losses: Option<Vec<f64>> = None;
    for t in 1..=spec.steps {
        let g = grad_input(spec.loss_kind, params, &x, &target)?;
        track_max(&mut max_losses, &g.losses);
        step(&mut x, &g.grad, dim, spec);
        project_in_place(&mut x, &batch.inputs, dim, spec.norm, spec.epsilon);
        hook(t, &x);
    }
    let final_losses = input_losses(spec.loss_kind, params, &x, &target)?;
    track_max(&mut max_losses, &final_losses);
    Ok(AttackOutcome {
        inputs: x,
        final_losses,
        max_losses: max_losses.expect("at least one evaluation"),
    })
}

fn track_max(acc: &mut Option<Vec<f64>>, losses: &[f64]) {
    match acc {
        None => *acc = Some(losses.to_vec()),
        Some(m) => m.iter_mut().zip(losses).for_each(|(a, &b)| {
            if b > *a {
                *a = b
            }
        }),
    }
}

fn step(x: &mut [f64], grad: &[f64], dim: usize, spec: &PerturbationSpec) {
    let a = spec.step_size;
    match spec.norm {
        Norm::Linf => x.iter_mut().zip(grad).for_each(|(v, &g)| *v += a * sign(g)),
        Norm::L2 => {
            for (row, g) in x.chunks_exact_mut(dim).zip(grad.chunks_exact(dim)) {
                let len = norm2(g).max(1e-12);
                row.iter_mut().zip(g).for_each(|(v, &gi)| *v += a * (gi / len));
            }
        }
    }
}

/// Single signed step of size epsilon on the cross-entropy, box-clipped.
pub fn fgsm(params: &ModelParameters, batch: &ExampleBatch, spec: &PerturbationSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let g = grad_input(LossKind::Ce, params, &batch.inputs, &InputTarget::labels(&batch.labels))?;
    let eps = spec.epsilon;
    Ok(batch
        .inputs
        .iter()
        .zip(&g.grad)
        .map(|(&x, &gi)| (x + eps * sign(gi)).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexMax {
    /// Exact per-sample maximum cross-entropy over the l-inf ball and box.
    pub losses: Vec<f64>,
    pub maximizers: Vec<f64>,
}

pub const VERTEX_ORACLE_MAX_DIM: usize = 12;

/// Exhaustive search over the clipped corners of the l-inf box.
///
/// The cross-entropy of a linear-softmax model is convex in the input, so
/// its maximum over the (box-clipped) l-inf ball sits at one of the corners.
pub fn vertex_oracle(params: &ModelParameters, batch: &ExampleBatch, spec: &PerturbationSpec) -> Result<VertexMax> {
    if params.arch.family != Family::Linear {
        return Err(Error::Unsupported("the vertex oracle needs a linear model".into()));
    }
    if spec.norm != Norm::Linf {
        return Err(Error::Unsupported("the vertex oracle covers l-inf balls only".into()));
    }
    let d = batch.dim();
    if d > VERTEX_ORACLE_MAX_DIM {
        return Err(invalid!("input dimension {d} exceeds {VERTEX_ORACLE_MAX_DIM}"));
    }
    let corners = 1usize << d;
    let eps = spec.epsilon;
    let mut losses = Vec::with_capacity(batch.len());
    let mut maximizers = Vec::with_capacity(batch.len() * d);
    let mut grid = vec![0.0; corners * d];
    for i in 0..batch.len() {
        let x = batch.sample(i);
        for (m, row) in grid.chunks_exact_mut(d).enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let s = if m >> k & 1 == 1 { eps } else { -eps };
                *v = (x[k] + s).clamp(0.0, 1.0);
            }
        }
        let probs = forward_probs(params, &grid)?;
        let ce = per_sample_cross_entropy(&probs, &vec![batch.labels[i]; corners], 0.0)?;
        let (best, &val) = ce
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
        losses.push(val);
        maximizers.extend_from_slice(&grid[best * d..(best + 1) * d]);
    }
    Ok(VertexMax { losses, maximizers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(norm: Norm, eps: f64) -> PerturbationSpec {
        PerturbationSpec {
            norm,
            ..PerturbationSpec::linf(eps, eps / 4.0, 10, 0)
        }
    }

    #[test]
    fn projection_examples() {
        let clean = vec![0.5; 4];
        let s = spec(Norm::Linf, 0.1);
        assert_eq!(project(&clean, &clean, 4, &s), clean);
        let adv: Vec<f64> = clean.iter().map(|v| v + 0.2).collect();
        let p = project(&adv, &clean, 4, &s);
        assert!(p.iter().all(|&v| (v - 0.6).abs() < 1e-15));

        let s = spec(Norm::L2, 0.1);
        let adv = vec![0.5 + 0.2, 0.5, 0.5, 0.5];
        let p = project(&adv, &clean, 4, &s);
        assert!((p[0] - 0.6).abs() < 1e-15);
        assert_eq!(&p[1..], &clean[1..]);
        // Feasible points are left alone.
        let inside = vec![0.52, 0.49, 0.5, 0.51];
        assert_eq!(project(&inside, &clean, 4, &s), inside);
    }

    #[test]
    fn projection_respects_box() {
        let clean = vec![0.0, 1.0];
        let adv = vec![-0.05, 1.05];
        let p = project(&adv, &clean, 2, &spec(Norm::Linf, 0.1));
        assert_eq!(p, vec![0.0, 1.0]);
    }
}
