use atlab_core::data::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Logistic regression fitted by Newton's method (small ridge for
/// stability), the reference classifier for separable blobs.
fn newton_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let d = x.ncols();
    let mut w = DVector::zeros(d);
    for _ in 0..50 {
        let p = (x * &w).map(|z| 1.0 / (1.0 + (-z).exp()));
        let g = x.transpose() * (&p - y) + 1e-6 * &w;
        let s = p.map(|v| v * (1.0 - v));
        let mut h = DMatrix::identity(d, d) * 1e-6;
        for i in 0..x.nrows() {
            let r = x.row(i);
            h += s[i] * r.transpose() * r;
        }
        let step = h.lu().solve(&g).expect("Hessian is regularized");
        w -= &step;
        if step.norm() < 1e-10 {
            break;
        }
    }
    w
}

#[test]
fn well_separated_blobs_are_linearly_classifiable() {
    for seed in [1, 2, 3] {
        let ds = make_synthetic_with(&BlobSpec {
            class_count: 2,
            per_class: 100,
            dim: 5,
            separation: 0.9,
            noise_std: 0.05,
            seed,
        })
        .unwrap();
        let n = ds.len();
        let x = DMatrix::from_fn(n, 6, |i, j| if j == 5 { 1.0 } else { ds.sample(i)[j] });
        let y = DVector::from_iterator(n, ds.labels.iter().map(|&l| l as f64));
        let w = newton_logistic(&x, &y);
        let correct = (0..n).filter(|&i| ((x.row(i) * &w)[0] > 0.0) == (ds.labels[i] == 1)).count();
        let acc = correct as f64 / n as f64;
        assert!(acc > 0.95, "seed {seed}: {acc}");
    }
}

#[test]
fn full_corruption_changes_a_binomial_fraction() {
    let ds = make_synthetic(10, 1000, 2, 0.5, 4).unwrap();
    let out = corrupt_labels(&ds, &CorruptionSpec::new(1.0, 7).unwrap()).unwrap();
    let n = ds.len() as f64;
    let changed = ds.labels.iter().zip(&out.labels).filter(|(a, b)| a != b).count() as f64;
    let (p, sd) = (0.9, (n * 0.9 * 0.1).sqrt());
    assert!((changed - n * p).abs() <= 3.0 * sd, "{changed}");
    assert_eq!(out.inputs, ds.inputs);
    assert_eq!(out.sample_ids, ds.sample_ids);
}

fn images(h: usize, w: usize, seed: u64) -> ExampleBatch {
    make_synthetic_images(&ImageSpec {
        class_count: 3,
        per_class: 2,
        channels: 3,
        height: h,
        width: w,
        noise_std: 0.1,
        mix_max: 0.3,
        prototype_seed: 5,
        seed,
    })
    .unwrap()
    .full_batch()
}

/// Crop of the zero-padded image at offset `(dy, dx)`, optionally mirrored.
fn reference_crop(img: &[f64], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize, flip: bool) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                let (py, px) = (y + dy, sx + dx);
                if py >= pad && py < pad + h && px >= pad && px < pad + w {
                    out[ch * h * w + y * w + x] = img[ch * h * w + (py - pad) * w + (px - pad)];
                }
            }
        }
    }
    out
}

#[test]
fn crops_are_padded_windows_at_enumerable_offsets() {
    let (c, h, w, pad) = (3, 32, 32, 4);
    let b = images(h, w, 1);
    let spec = AugmentationSpec {
        crop_padding: pad,
        flip_probability: 0.5,
        enabled: true,
    };
    let out = augment_batch(&b, &spec, 17).unwrap();
    for s in 0..b.len() {
        let found = (0..=2 * pad).any(|dy| {
            (0..=2 * pad).any(|dx| {
                [false, true]
                    .iter()
                    .any(|&f| reference_crop(b.sample(s), c, h, w, pad, dy, dx, f) == out.sample(s))
            })
        });
        assert!(found, "sample {s} matches no crop");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corruption_resamples_exactly_floor_rate_n(rate in 0.0f64..=1.0, per_class in 1usize..40, seed in any::<u64>()) {
        let ds = make_synthetic(3, per_class, 2, 0.5, seed).unwrap();
        let spec = CorruptionSpec::new(rate, seed ^ 1).unwrap();
        let (out, chosen) = corrupt_labels_tracked(&ds, &spec).unwrap();
        let n = ds.len();
        prop_assert_eq!(chosen.len(), (rate * n as f64 + 1e-9).floor() as usize);
        let mut sorted = chosen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), chosen.len());
        for i in 0..n {
            if !chosen.contains(&i) {
                prop_assert_eq!(out.labels[i], ds.labels[i]);
            }
            prop_assert!(out.labels[i] < 3);
        }
    }

    #[test]
    fn augmentation_preserves_pairing_and_range(seed in any::<u64>(), pad in 0usize..4, flip in 0.0f64..=1.0) {
        let b = images(6, 7, seed);
        let spec = AugmentationSpec { crop_padding: pad, flip_probability: flip, enabled: true };
        let out = augment_batch(&b, &spec, seed).unwrap();
        prop_assert_eq!(&out.labels, &b.labels);
        prop_assert_eq!(&out.sample_ids, &b.sample_ids);
        prop_assert!(out.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
