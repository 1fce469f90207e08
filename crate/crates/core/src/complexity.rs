//! Complexity measures of trained models: margin-normalized norm products,
//! input-space curvature and weight-space flatness.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack, PerturbationSpec};
use crate::data::{Dataset, ExampleBatch};
use crate::diagnostics::filter_normalized_direction;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, gemm, norm2, Op};
use crate::model::{
    conv_apply, conv_apply_adjoint, forward_logits, forward_probs, GroupView, ModelParameters, WeightOperator,
};
use crate::objectives::{cross_entropy, grad_input, InputTarget, LossKind};
use crate::rng::{tags, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub value: f64,
    pub percentile: f64,
    pub sample_count: usize,
    /// Set when the margin is not positive; normalizing by it would flip
    /// the meaning of the measures.
    pub non_positive: bool,
}

pub const DEFAULT_MARGIN_PERCENTILE: f64 = 10.0;

/// Linear-interpolation percentile of a non-empty sample, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Per-sample true-class logit minus the best other logit.
pub fn margins(params: &ModelParameters, dataset: &Dataset) -> Result<Vec<f64>> {
    let c = params.class_count();
    let mut out = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(crate::eval::EVAL_CHUNK) {
        let b = dataset.batch(chunk);
        let z = forward_logits(params, &b.inputs)?;
        for (row, &y) in z.chunks_exact(c).zip(&b.labels) {
            let other = (0..c).filter(|&j| j != y).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            out.push(row[y] - other);
        }
    }
    Ok(out)
}

pub fn margin_percentile(params: &ModelParameters, dataset: &Dataset, q: f64) -> Result<MarginEstimate> {
    if !(q > 0.0 && q < 100.0) {
        return Err(invalid!("percentile must lie in (0, 100), got {q}"));
    }
    if dataset.is_empty() {
        return Err(invalid!("cannot take a margin over an empty dataset"));
    }
    let m = margins(params, dataset)?;
    let value = percentile(&m, q);
    Ok(MarginEstimate {
        value,
        percentile: q,
        sample_count: m.len(),
        non_positive: value <= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const POWER_TOLERANCE: f64 = 1e-13;
pub const POWER_MAX_ITERATIONS: usize = 20_000;

fn apply(op: &WeightOperator, w: &[f64], x: &[f64]) -> Vec<f64> {
    match *op {
        WeightOperator::Dense { rows, cols } => {
            let mut y = vec![0.0; rows];
            gemm(Op::N, Op::N, rows, 1, cols, 1.0, w, x, 0.0, &mut y);
            y
        }
        WeightOperator::Conv(g) => conv_apply(&g, w, x),
    }
}

fn apply_adjoint(op: &WeightOperator, w: &[f64], y: &[f64]) -> Vec<f64> {
    match *op {
        WeightOperator::Dense { rows, cols } => {
            let mut x = vec![0.0; cols];
            gemm(Op::T, Op::N, cols, 1, rows, 1.0, w, y, 0.0, &mut x);
            x
        }
        WeightOperator::Conv(g) => conv_apply_adjoint(&g, w, y),
    }
}

fn input_len(op: &WeightOperator) -> usize {
    match op {
        WeightOperator::Dense { cols, .. } => *cols,
        WeightOperator::Conv(g) => g.in_len(),
    }
}

/// Largest singular value of a weight group's linear operator by power
/// iteration on `A^T A`. Convolutions are treated as the operator at the
/// configured input size, applied implicitly.
pub fn layer_spectral_norm(group: &GroupView) -> Result<SpectralNorm> {
    let op = group
        .operator
        .ok_or_else(|| Error::Unsupported(alloc::format!("group {} is not a weight", group.name)))?;
    Ok(operator_spectral_norm(&op, group.values, POWER_TOLERANCE, POWER_MAX_ITERATIONS))
}

pub fn operator_spectral_norm(op: &WeightOperator, w: &[f64], tol: f64, max_iterations: usize) -> SpectralNorm {
    let n = input_len(op);
    let mut rng = Stream::derived(0, &[tags::POWER, n as u64]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let len = norm2(&v);
    v.iter_mut().for_each(|x| *x /= len);
    let mut sigma = 0.0;
    for it in 1..=max_iterations {
        let av = apply(op, w, &v);
        let next_sigma = norm2(&av);
        if next_sigma == 0.0 {
            return SpectralNorm {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let mut u = apply_adjoint(op, w, &av);
        let len = norm2(&u);
        u.iter_mut().for_each(|x| *x /= len);
        v = u;
        if (next_sigma - sigma).abs() <= tol * next_sigma {
            return SpectralNorm {
                value: next_sigma,
                iterations: it,
                converged: true,
            };
        }
        sigma = next_sigma;
    }
    SpectralNorm {
        value: sigma,
        iterations: max_iterations,
        converged: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub name: alloc::string::String,
    pub spectral: SpectralNorm,
    pub l1: f64,
}

/// Spectral and entrywise l1 norms of every weight group (biases and
/// normalization parameters are excluded).
pub fn layer_norms(params: &ModelParameters) -> Result<Vec<LayerNorms>> {
    params
        .group_views()
        .iter()
        .filter(|g| g.role.is_weight())
        .map(|g| {
            Ok(LayerNorms {
                name: g.name.into(),
                spectral: layer_spectral_norm(g)?,
                l1: g.l1,
            })
        })
        .collect()
}

fn normalized(value: f64, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::Undefined(alloc::format!("margin {margin} is not positive")));
    }
    Ok(value / margin)
}

/// `prod_i ||W_i||_2 / margin`.
pub fn spectral_complexity(layers: &[LayerNorms], margin: f64) -> Result<f64> {
    normalized(layers.iter().map(|l| l.spectral.value).product(), margin)
}

/// `sum_i ||W_i||_1 / margin`.
pub fn l1_complexity(layers: &[LayerNorms], margin: f64) -> Result<f64> {
    normalized(layers.iter().map(|l| l.l1).sum(), margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const HVP_STEP: f64 = 1e-4;

/// Dominant (largest-magnitude) eigenvalue of the Hessian of a scalar
/// function at `x`, from its gradient `grad`, by power iteration with
/// central-difference Hessian-vector products.
pub fn dominant_hessian_eigenvalue(
    grad: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    h: f64,
    tol: f64,
    max_iterations: usize,
    seed: u64,
) -> Result<EigenEstimate> {
    let n = x.len();
    let mut rng = Stream::derived(seed, &[tags::POWER]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let len = norm2(&v);
    v.iter_mut().for_each(|a| *a /= len);
    let mut lambda = 0.0;
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for it in 1..=max_iterations {
        for k in 0..n {
            plus[k] = x[k] + h * v[k];
            minus[k] = x[k] - h * v[k];
        }
        let gp = grad(&plus)?;
        let gm = grad(&minus)?;
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let next = dot(&v, &hv);
        let len = norm2(&hv);
        if len == 0.0 {
            return Ok(EigenEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        v = hv.iter().map(|a| a / len).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            return Ok(EigenEstimate {
                value: next,
                iterations: it,
                converged: true,
            });
        }
        lambda = next;
    }
    Ok(EigenEstimate {
        value: lambda,
        iterations: max_iterations,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub values: Vec<f64>,
}

impl MeanEstimate {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            libm::sqrt(var / n)
        } else {
            0.0
        };
        Self { mean, stderr, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimate {
    pub estimate: MeanEstimate,
    pub all_converged: bool,
}

/// Batch mean of the per-sample dominant eigenvalue of the input Hessian of
/// the cross-entropy.
pub fn input_curvature(params: &ModelParameters, batch: &ExampleBatch) -> Result<CurvatureEstimate> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let mut values = Vec::with_capacity(batch.len());
    let mut all_converged = true;
    for i in 0..batch.len() {
        let labels = [batch.labels[i]];
        let mut g = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(grad_input(LossKind::Ce, params, x, &InputTarget::labels(&labels))?.grad)
        };
        let e = dominant_hessian_eigenvalue(&mut g, batch.sample(i), HVP_STEP, 1e-9, 2000, batch.sample_ids[i] as u64)?;
        all_converged &= e.converged;
        values.push(e.value);
    }
    Ok(CurvatureEstimate {
        estimate: MeanEstimate::of(values),
        all_converged,
    })
}

/// Mean adversarial cross-entropy on `dataset` under `spec`.
pub fn adversarial_loss(params: &ModelParameters, dataset: &Dataset, spec: &PerturbationSpec) -> Result<f64> {
    let batch = dataset.full_batch();
    let adv = pgd_attack(params, &batch, spec, None)?;
    cross_entropy(&forward_probs(params, &adv)?, &batch.labels, 0.0)
}

/// Mean over directions and `lambdas` of `|J(theta + lambda d) - J(theta)|`,
/// with `J` the adversarial loss under `spec` (fixed attack seed) and `d` a
/// filter-normalized direction per seed. The standard error is across
/// directions.
pub fn weight_flatness(
    params: &ModelParameters,
    dataset: &Dataset,
    spec: &PerturbationSpec,
    direction_seeds: &[u64],
    lambdas: &[f64],
) -> Result<MeanEstimate> {
    if direction_seeds.is_empty() || lambdas.is_empty() {
        return Err(invalid!("weight flatness needs at least one direction and one lambda"));
    }
    let base = adversarial_loss(params, dataset, spec)?;
    let mut per_direction = Vec::with_capacity(direction_seeds.len());
    for &seed in direction_seeds {
        let d = filter_normalized_direction(params, seed);
        let mut acc = 0.0;
        for &lambda in lambdas {
            if lambda != 0.0 {
                acc += (adversarial_loss(&params.shifted(lambda, &d), dataset, spec)? - base).abs();
            }
        }
        per_direction.push(acc / lambdas.len() as f64);
    }
    Ok(MeanEstimate::of(per_direction))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityConfig {
    #[serde(default = "default_q")]
    pub margin_percentile: f64,
    /// Training samples used for curvature and flatness.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    pub attack: PerturbationSpec,
    #[serde(default = "default_seeds")]
    pub direction_seeds: Vec<u64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn default_q() -> f64 {
    DEFAULT_MARGIN_PERCENTILE
}

fn default_probe_samples() -> usize {
    64
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

fn default_lambdas() -> Vec<f64> {
    vec![-0.05, -0.025, 0.025, 0.05]
}

impl ComplexityConfig {
    pub fn new(attack: PerturbationSpec) -> Self {
        Self {
            margin_percentile: default_q(),
            probe_samples: default_probe_samples(),
            attack,
            direction_seeds: default_seeds(),
            lambdas: default_lambdas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub margin: MarginEstimate,
    /// `None` when the margin is not positive.
    pub spectral_complexity: Option<f64>,
    pub l1_complexity: Option<f64>,
    pub input_curvature: CurvatureEstimate,
    pub weight_flatness: MeanEstimate,
    pub layers: Vec<LayerNorms>,
    pub config: ComplexityConfig,
}

pub fn complexity_report(params: &ModelParameters, train: &Dataset, config: &ComplexityConfig) -> Result<ComplexityReport> {
    let margin = margin_percentile(params, train, config.margin_percentile)?;
    let layers = layer_norms(params)?;
    let probe = train.head(config.probe_samples);
    Ok(ComplexityReport {
        spectral_complexity: spectral_complexity(&layers, margin.value).ok(),
        l1_complexity: l1_complexity(&layers, margin.value).ok(),
        input_curvature: input_curvature(params, &probe.full_batch())?,
        weight_flatness: weight_flatness(params, &probe, &config.attack, &config.direction_seeds, &config.lambdas)?,
        margin,
        layers,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ArchSpec};

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 50.0), 2.5);
        assert_eq!(percentile(&[5.0; 7], 10.0), 5.0);
    }

    #[test]
    fn spectral_examples() {
        let op = WeightOperator::Dense { rows: 2, cols: 2 };
        let s = operator_spectral_norm(&op, &[3.0, 0.0, 0.0, -5.0], POWER_TOLERANCE, POWER_MAX_ITERATIONS);
        assert!((s.value - 5.0).abs() < 1e-9 && s.converged);
        let (c, sn) = (0.6, 0.8);
        let s = operator_spectral_norm(&op, &[c, -sn, sn, c], POWER_TOLERANCE, POWER_MAX_ITERATIONS);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_layer_complexities() {
        let mut p = init_model(&ArchSpec::linear(3, 3, 0).without_bias()).unwrap();
        p.values = vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0];
        let layers = layer_norms(&p).unwrap();
        assert!((spectral_complexity(&layers, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((l1_complexity(&layers, 2.0).unwrap() - 3.0).abs() < 1e-15);
        assert!(spectral_complexity(&layers, 0.0).is_err());
    }

    #[test]
    fn quadratic_curvature() {
        // f(x) = 0.5 x^T A x with A = diag(1, -4, 2)
        let a = [1.0, -4.0, 2.0];
        let mut g = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().zip(&a).map(|(x, a)| a * x).collect()) };
        let e = dominant_hessian_eigenvalue(&mut g, &[0.3, 0.1, 0.2], HVP_STEP, 1e-12, 5000, 1).unwrap();
        assert!((e.value + 4.0).abs() < 1e-6, "{e:?}");
    }
}
