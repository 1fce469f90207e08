use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn atlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = atlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn config(dir: &Path, kind: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
[data]
train = {{ source = "blobs", class_count = 3, per_class = 12, dim = 4, separation = 0.5, noise_std = 0.1, seed = 1 }}
test = {{ source = "blobs", class_count = 3, per_class = 6, dim = 4, separation = 0.5, noise_std = 0.1, seed = 2 }}
corruption = {{ noise_rate = 0.2, seed = 3 }}

[model]
family = "mlp"
input_shape = [4]
class_count = 3
widths = [8]

[objective]
kind = "{kind}"

[attack]
norm = "linf"
epsilon = 0.05
step_size = 0.02
steps = 3

[optim]
lr = {{ kind = "piecewise", base = 0.1, milestones = [3] }}
batch_size = 8
epochs = 4
seed = 5

[eval]
every = 1
attack = {{ norm = "linf", epsilon = 0.05, step_size = 0.02, steps = 3 }}
suite = ["pgd10", "cw_pgd"]

[out]
dir = "run"
"#
    );
    let path = dir.join(format!("{kind}.toml"));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_evaluate_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "pgd_at");
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--quiet"]);
    let run = tmp.path().join("run");
    for f in ["config.json", "history.csv", "curves.csv", "summary.json", "checkpoints/best/manifest.json", "checkpoints/final/manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
    assert!(history.starts_with("epoch,lr,train_nat_acc,train_rob_acc,test_nat_acc,test_rob_acc,loss_total,"));

    // a second run of the same config is byte-identical
    let again = tmp.path().join("again");
    ok(&["train", "--config", cfg, "--quiet", "--out", again.to_str().unwrap()]);
    for f in ["history.csv", "curves.csv", "checkpoints/final/manifest.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let rep = tmp.path().join("rep");
    let md = ok(&["report", "--run", run.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(md.contains("cw_pgd"));
    let csv = fs::read_to_string(rep.join("report.csv")).unwrap();
    let metrics: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(metrics, ["natural", "pgd10", "cw_pgd"]);
    assert!(csv.starts_with("method,metric,best,final,diff\n"));
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!((f[0] - f[1] - f[2]).abs() < 1e-9, "{line}");
    }
    assert!(rep.join("run_curves.csv").exists());

    let ev = tmp.path().join("ev");
    let ev2 = tmp.path().join("ev2");
    for d in [&ev, &ev2] {
        ok(&["evaluate", "--run", run.to_str().unwrap(), "--suite", "pgd10", "--out", d.to_str().unwrap()]);
    }
    assert_eq!(fs::read(ev.join("report.csv")).unwrap(), fs::read(ev2.join("report.csv")).unwrap());

    let best = run.join("checkpoints/best");
    let last = run.join("checkpoints/final");
    let diag = tmp.path().join("diag");
    ok(&[
        "diagnose", "--run", run.to_str().unwrap(), "--ckpt", best.to_str().unwrap(), "--ckpt", last.to_str().unwrap(),
        "--samples", "16", "--out", diag.to_str().unwrap(),
    ]);
    for f in ["grad_norms.csv", "sweep.csv", "theorem1.csv", "sample_losses.csv", "tau.txt"] {
        assert!(diag.join(f).exists(), "{f} missing");
    }
    let tau: f64 = fs::read_to_string(diag.join("tau.txt")).unwrap().trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&tau));
    assert_eq!(fs::read_to_string(diag.join("sample_losses.csv")).unwrap().lines().count(), 37);

    let cx = tmp.path().join("cx");
    ok(&["complexity", "--run", run.to_str().unwrap(), "--ckpt", last.to_str().unwrap(), "--samples", "4", "--out", cx.to_str().unwrap()]);
    let text = fs::read_to_string(cx.join("complexity.csv")).unwrap();
    assert!(text.starts_with("run_id,gamma_margin,spectral_complexity,l1_complexity,input_curvature,"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn corrupt_checkpoint_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "trades");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--quiet"]);
    let final_dir = tmp.path().join("run/checkpoints/final");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(final_dir.join("manifest.json")).unwrap()).unwrap();
    let file = final_dir.join(manifest["arrays"][0]["file"].as_str().unwrap());
    let mut bytes = fs::read(&file).unwrap();
    bytes.truncate(bytes.len() - 8);
    fs::write(&file, bytes).unwrap();
    let out = atlab(&["evaluate", "--run", tmp.path().join("run").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("corrupt"), "{err}");
}

#[test]
fn corrupt_writes_a_packed_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = atlab_core::data::make_synthetic(4, 25, 3, 0.5, 1).unwrap();
    let mut ds32 = ds.clone();
    ds32.inputs.iter_mut().for_each(|v| *v = *v as f32 as f64);
    let src = tmp.path().join("src");
    atlab::dataset::save_dataset(&ds32, &src, atlab::dataset::Dtype::F32).unwrap();
    let dst = tmp.path().join("dst");
    ok(&["corrupt", "--data", src.to_str().unwrap(), "--rate", "0.4", "--seed", "3", "--out", dst.to_str().unwrap()]);
    let back = atlab::dataset::load_dataset(&dst).unwrap();
    assert_eq!(back.inputs, ds32.inputs);
    let changed = back.labels.iter().zip(&ds32.labels).filter(|(a, b)| a != b).count();
    assert!(changed <= 40 && changed > 0);
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[model]\nfamily = 3\n").unwrap();
    assert!(!atlab(&["train", "--config", bad.to_str().unwrap()]).status.success());
    assert!(!atlab(&["train", "--config", tmp.path().join("missing.toml").to_str().unwrap()]).status.success());
    assert!(!atlab(&["frobnicate"]).status.success());
    assert!(!atlab(&["selftest", "--device", "gpu"]).status.success());
    let out = ok(&["selftest"]);
    assert!(out.contains("self-checks passed"));
}
