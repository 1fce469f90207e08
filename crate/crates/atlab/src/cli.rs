//! Command-line surface.

use std::path::{Path, PathBuf};

use atlab_core::complexity::{complexity_report, ComplexityConfig};
use atlab_core::diagnostics::{
    direction_sweep, estimate_lipschitz, grad_norm_terms, kendall_tau, per_sample_adv_loss, theorem1_probe, DirectionSweep,
    InnerMax, Method, SweepLoss,
};
use atlab_core::model::ModelParameters;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::{ExperimentConfig, ResolvedConfig};
use crate::dataset::{load_dataset, save_dataset, Manifest, MANIFEST};
use crate::error::{read_json, write, AppError, Result};
use crate::output::{complexity_csv, emit_curves, grad_norms_csv, sample_losses_csv, sweep_csv, theorem1_csv};
use crate::run::{run_training, write_report, ProgressHook, RunDir};
use crate::suite::{run_suite, AttackSuite};

#[derive(Debug, Parser)]
#[command(name = "atlab", version, about = "Adversarial training experiments: train, evaluate, diagnose")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compute device; only `cpu` is available.
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

/// Where the data (and architecture) for a subcommand comes from.
#[derive(Debug, Args)]
pub struct Source {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config file into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Write a copy of a packed dataset with corrupted labels.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate best and final checkpoints against an attack suite.
    Evaluate {
        #[command(flatten)]
        source: Source,
        /// Checkpoint directories: best, then final (defaults to the run's).
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        /// Packed test set overriding the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated attack names.
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient-norm, sweep, per-sample-loss and pairwise snapshot diagnostics.
    Diagnose {
        #[command(flatten)]
        source: Source,
        /// One or two checkpoint directories.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        /// Training samples used by the gradient probes.
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Margin-normalized norm measures, curvature and flatness of snapshots.
    Complexity {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Best/final/diff table and learning-curve data for run directories.
    Report {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in oracle checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn check_device(common: &Common) -> Result<()> {
    if common.device != "cpu" {
        return Err(AppError::Usage(format!("device {:?} is not available (only cpu)", common.device)));
    }
    Ok(())
}

fn out_dir(common: &Common, fallback: Option<&Path>) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .ok_or_else(|| AppError::Usage("--out is required".into()))
}

fn resolve_source(source: &Source, seed: Option<u64>) -> Result<ResolvedConfig> {
    match (&source.run, &source.config) {
        (Some(run), None) => Ok(RunDir::open(run)?.config),
        (None, Some(cfg)) => ExperimentConfig::from_file(cfg)?.resolve(seed),
        _ => Err(AppError::Usage("give exactly one of --run and --config".into())),
    }
}

struct Snap {
    name: String,
    epoch: usize,
    params: ModelParameters,
}

fn snapshots(ckpts: &[PathBuf], source: &Source, config: &ResolvedConfig) -> Result<Vec<Snap>> {
    let dirs: Vec<PathBuf> = if ckpts.is_empty() {
        match &source.run {
            Some(run) => vec![run.join("checkpoints/best"), run.join("checkpoints/final")],
            None => return Err(AppError::Usage("--ckpt is required without --run".into())),
        }
    } else {
        ckpts.to_vec()
    };
    dirs.iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let c = load_checkpoint(d, Some(&config.train.arch))?;
            Ok(Snap {
                name,
                epoch: c.epoch,
                params: c.params,
            })
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, common, quiet } => {
            check_device(&common)?;
            let resolved = ExperimentConfig::from_file(&config)?.resolve(common.seed)?;
            let dir = out_dir(&common, resolved.out.as_deref())?;
            let result = if quiet {
                run_training(&resolved, &dir, &mut atlab_core::trainer::NoHooks)?
            } else {
                run_training(&resolved, &dir, &mut ProgressHook { sink: std::io::stderr() })?
            };
            println!(
                "wrote {} ({} epochs, best epoch {})",
                dir.display(),
                result.history.len(),
                result.best_epoch().map_or("-".into(), |e| e.to_string())
            );
        }
        Command::Corrupt { data, rate, common } => {
            check_device(&common)?;
            let dir = out_dir(&common, None)?;
            let manifest: Manifest = read_json(&data.join(MANIFEST))?;
            let ds = load_dataset(&data)?;
            let spec = atlab_core::data::CorruptionSpec::new(rate, common.seed.unwrap_or(0))?;
            let mut corrupted = atlab_core::data::corrupt_labels(&ds, &spec)?;
            corrupted.name = format!("{}-corrupt{rate}", ds.name);
            save_dataset(&corrupted, &dir, manifest.dtype)?;
            println!("wrote {} ({} of {} labels resampled)", dir.display(), spec.resample_count(ds.len()), ds.len());
        }
        Command::Evaluate { source, ckpt, data, suite, common } => {
            check_device(&common)?;
            let config = resolve_source(&source, common.seed)?;
            let snaps = snapshots(&ckpt, &source, &config)?;
            let (best, last) = match snaps.as_slice() {
                [one] => (&one.params, &one.params),
                [b, f] => (&b.params, &f.params),
                _ => return Err(AppError::Usage("give one or two checkpoints".into())),
            };
            let test = match data {
                Some(d) => load_dataset(&d)?,
                None => config.data.load()?.1,
            };
            let names = suite.unwrap_or_else(|| config.suite.clone());
            let suite = AttackSuite::from_names(&names, common.seed.unwrap_or(config.train.seed))?;
            let rows = run_suite(config.train.objective.kind.as_str(), best, last, &test, &suite)?;
            let dir = out_dir(&common, source.run.as_deref())?;
            write_report(&dir, &rows)?;
            print!("{}", crate::suite::report_markdown(&rows));
        }
        Command::Diagnose { source, ckpt, samples, common } => {
            check_device(&common)?;
            let config = resolve_source(&source, common.seed)?;
            let snaps = snapshots(&ckpt, &source, &config)?;
            if snaps.len() > 2 {
                return Err(AppError::Usage("give one or two checkpoints".into()));
            }
            let dir = out_dir(&common, None)?;
            let (train, _) = config.data.load()?;
            let probe = train.head(samples);
            let batch = probe.full_batch();
            let seed = common.seed.unwrap_or(config.train.seed);
            let spec = atlab_core::attacks::PerturbationSpec { seed, ..config.train.attack.clone() };
            let beta = config.train.objective.beta;
            let mut norms = Vec::new();
            for snap in &snaps {
                for method in [Method::PgdAt, Method::Trades] {
                    norms.push((snap.epoch, grad_norm_terms(&snap.params, &batch, method, &spec, beta)?));
                }
            }
            write(&dir.join("grad_norms.csv"), grad_norms_csv(&norms)?)?;
            let sweep = DirectionSweep {
                lambdas: vec![-0.05, -0.025, 0.0, 0.025, 0.05],
                seed,
            };
            let records = direction_sweep(&snaps[0].params, &batch, &sweep, &[SweepLoss::PgdAt, SweepLoss::Trades, SweepLoss::CleanCe], &spec, beta)?;
            write(&dir.join("sweep.csv"), sweep_csv(&records)?)?;
            let losses: Vec<Vec<f64>> = snaps
                .iter()
                .map(|s| per_sample_adv_loss(&s.params, &train, &spec))
                .collect::<atlab_core::Result<_>>()?;
            write(&dir.join("sample_losses.csv"), sample_losses_csv(&losses[0])?)?;
            if let [s1, s2] = snaps.as_slice() {
                let (p1, p2) = (&s1.params, &s2.params);
                let k = estimate_lipschitz(p1, &batch, &spec, 4, seed)?
                    .k_hat
                    .max(estimate_lipschitz(p2, &batch, &spec, 4, seed)?.k_hat);
                let report = theorem1_probe(p1, p2, &batch, &spec, k, InnerMax::Pgd)?;
                write(&dir.join("theorem1.csv"), theorem1_csv(&report)?)?;
                let tau = kendall_tau(&losses[0], &losses[1])?;
                write(&dir.join("tau.txt"), format!("{}\n", tau.map_or("nan".into(), |t| t.to_string())))?;
                println!("tau {}", tau.map_or("undefined".into(), |t| format!("{t:.4}")));
            }
            println!("wrote diagnostics to {}", dir.display());
        }
        Command::Complexity { source, ckpt, samples, common } => {
            check_device(&common)?;
            let config = resolve_source(&source, common.seed)?;
            let snaps = snapshots(&ckpt, &source, &config)?;
            let (train, _) = config.data.load()?;
            let mut cfg = ComplexityConfig::new(config.train.eval.attack.clone());
            cfg.probe_samples = samples;
            let rows = snaps
                .iter()
                .map(|s| Ok((s.name.clone(), complexity_report(&s.params, &train, &cfg)?)))
                .collect::<Result<Vec<_>>>()?;
            let dir = out_dir(&common, None)?;
            write(&dir.join("complexity.csv"), complexity_csv(&rows)?)?;
            println!("wrote {}", dir.join("complexity.csv").display());
        }
        Command::Report { run, suite, common } => {
            check_device(&common)?;
            let dir = out_dir(&common, (run.len() == 1).then(|| run[0].as_path()))?;
            let mut rows = Vec::new();
            for path in &run {
                let r = RunDir::open(path)?;
                let names = suite.clone().unwrap_or_else(|| r.config.suite.clone());
                let s = AttackSuite::from_names(&names, common.seed.unwrap_or(r.config.train.seed))?;
                rows.extend(r.report(&s)?);
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
                write(&dir.join(format!("{name}_curves.csv")), emit_curves(&r.history()?, None)?)?;
            }
            write_report(&dir, &rows)?;
            print!("{}", crate::suite::report_markdown(&rows));
        }
        Command::Selftest { common } => {
            check_device(&common)?;
            let results = crate::selftest::run_all();
            let mut failed = 0;
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "ok" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(AppError::Usage(format!("{failed} of {} self-checks failed", results.len())));
            }
            println!("all {} self-checks passed", results.len());
        }
    }
    Ok(())
}
