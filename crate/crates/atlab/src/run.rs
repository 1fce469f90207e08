//! Run directories: what `train` writes and what the other subcommands read.
//!
//! ```text
//! <run>/config.json          resolved config
//! <run>/history.csv          one row per epoch
//! <run>/curves.csv           long-format learning curves
//! <run>/summary.json         best/final epochs and config hash
//! <run>/checkpoints/best/    highest robust test accuracy
//! <run>/checkpoints/final/
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use atlab_core::data::Dataset;
use atlab_core::model::ModelParameters;
use atlab_core::trainer::{train, HistoryRow, TrainHooks, TrainResult};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, load_checkpoint, save_checkpoint};
use crate::config::ResolvedConfig;
use crate::error::{read_json, write, write_json, Result};
use crate::output::{emit_curves, history_csv};
use crate::suite::{report_csv, report_markdown, run_suite, AttackSuite, ReportRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_test_rob_acc: Option<f64>,
    pub final_test_nat_acc: Option<f64>,
    pub final_test_rob_acc: Option<f64>,
    pub config_hash: String,
}

/// Prints one progress line per epoch to the given sink.
pub struct ProgressHook<W: Write> {
    pub sink: W,
}

impl<W: Write> TrainHooks for ProgressHook<W> {
    fn on_epoch_end(&mut self, r: &HistoryRow, _params: &ModelParameters) -> atlab_core::Result<()> {
        let acc = |v: Option<f64>| v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into());
        // progress output is best effort
        let _ = writeln!(
            self.sink,
            "epoch {:>4}  lr {:.4}  loss {:.4}  train {:.2}/{:.2}  test {}/{}",
            r.epoch,
            r.lr,
            r.loss_total,
            100.0 * r.train_nat_acc,
            100.0 * r.train_rob_acc,
            acc(r.test_nat_acc),
            acc(r.test_rob_acc),
        );
        Ok(())
    }
}

pub fn run_training(config: &ResolvedConfig, dir: &Path, hooks: &mut dyn TrainHooks) -> Result<TrainResult> {
    let (train_set, test_set) = config.data.load()?;
    let result = train(&config.train, &train_set, &test_set, hooks)?;
    write_run(config, dir, &result)?;
    Ok(result)
}

pub fn write_run(config: &ResolvedConfig, dir: &Path, result: &TrainResult) -> Result<()> {
    let hash = config_hash(config);
    write_json(&dir.join("config.json"), config)?;
    write(&dir.join("history.csv"), history_csv(&result.history)?)?;
    write(&dir.join("curves.csv"), emit_curves(&result.history, None)?)?;
    let final_epoch = result.history.last().map_or(0, |r| r.epoch);
    save_checkpoint(&dir.join("checkpoints/final"), &result.final_params, final_epoch, Some(&result.optimizer), Some(&hash))?;
    let (best_params, best_epoch) = match &result.best {
        Some(s) => (&s.params, s.epoch),
        None => (&result.final_params, final_epoch),
    };
    save_checkpoint(&dir.join("checkpoints/best"), best_params, best_epoch, None, Some(&hash))?;
    let last = result.history.last();
    let summary = Summary {
        method: config.train.objective.kind.as_str().into(),
        epochs: config.train.epochs,
        best_epoch: result.best_epoch(),
        best_test_rob_acc: result
            .best_epoch()
            .and_then(|e| result.history.iter().find(|r| r.epoch == e))
            .and_then(|r| r.test_rob_acc),
        final_test_nat_acc: last.and_then(|r| r.test_nat_acc),
        final_test_rob_acc: last.and_then(|r| r.test_rob_acc),
        config_hash: hash,
    };
    write_json(&dir.join("summary.json"), &summary)
}

/// A finished run read back from disk.
pub struct RunDir {
    pub path: PathBuf,
    pub config: ResolvedConfig,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            config: read_json(&path.join("config.json"))?,
        })
    }

    pub fn method(&self) -> &'static str {
        self.config.train.objective.kind.as_str()
    }

    pub fn checkpoint(&self, which: &str) -> Result<ModelParameters> {
        Ok(load_checkpoint(&self.path.join("checkpoints").join(which), Some(&self.config.train.arch))?.params)
    }

    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        self.config.data.load()
    }

    pub fn history(&self) -> Result<Vec<HistoryRow>> {
        let path = self.path.join("history.csv");
        let text = String::from_utf8(crate::error::read(&path)?)
            .map_err(|_| crate::error::format_err(&path, "history is not UTF-8"))?;
        crate::output::parse_history_csv(&text)
    }

    /// Best/final suite evaluation on the run's test split.
    pub fn report(&self, suite: &AttackSuite) -> Result<Vec<ReportRow>> {
        let (_, test) = self.datasets()?;
        run_suite(self.method(), &self.checkpoint("best")?, &self.checkpoint("final")?, &test, suite)
    }
}

pub fn write_report(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    write(&dir.join("report.csv"), report_csv(rows)?)?;
    write(&dir.join("report.md"), report_markdown(rows))
}
