// Shared fixtures for the integration tests.
#![allow(dead_code)]

use atlab_core::data::ExampleBatch;
use atlab_core::model::{init_model, ArchSpec, ModelParameters};
use atlab_core::rng::Stream;

pub fn small_archs(c: usize) -> Vec<ArchSpec> {
    vec![
        ArchSpec::linear(5, c, 1),
        ArchSpec::mlp(5, &[7, 6], c, 2),
        ArchSpec::convnet([2, 5, 5], &[3, 4], 6, c, 3),
        ArchSpec::resnet_small([2, 4, 4], &[2, 3], 1, c, 4),
    ]
}

/// Initialized parameters with every entry (biases included) jittered so
/// that no activation sits exactly on a ReLU kink.
pub fn jittered(spec: &ArchSpec, seed: u64) -> ModelParameters {
    let mut p = init_model(spec).unwrap();
    let mut rng = Stream::new(seed);
    for v in &mut p.values {
        *v += 0.1 * rng.gaussian();
    }
    p
}

pub fn random_batch(shape: &[usize], n: usize, c: usize, seed: u64) -> ExampleBatch {
    let d: usize = shape.iter().product();
    let mut rng = Stream::new(seed);
    ExampleBatch {
        inputs: (0..n * d).map(|_| rng.uniform_in(0.05, 0.95)).collect(),
        labels: (0..n).map(|i| i % c).collect(),
        sample_ids: (0..n).collect(),
        sample_shape: shape.to_vec(),
        class_count: c,
    }
}

pub fn perturbed(x: &[f64], scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = Stream::new(seed);
    x.iter().map(|v| (v + rng.uniform_in(-scale, scale)).clamp(0.0, 1.0)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
