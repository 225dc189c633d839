use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::fit::{fit, BEST_CHECKPOINT, TRAINING_LOG};
use crate::data::{stratified_folds, Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::model;
use crate::planner::PlanConfig;
use crate::rng::{derive_seed, seeded};

/// Per-fold outcome. Paths are relative to the cross-validation directory so
/// reports from identical runs in different locations are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub best_epoch: Option<usize>,
    pub best_selection_score: f64,
    pub final_ema_dice: Option<f64>,
    pub final_ema_domain_acc: Option<f64>,
    pub checkpoint: String,
    pub training_log: String,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    pub dir: PathBuf,
    pub split: FoldSplit,
    pub folds: Vec<FoldReport>,
}

impl CrossvalResult {
    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.folds.iter().map(|f| self.dir.join(&f.checkpoint)).collect()
    }

    pub fn training_logs(&self) -> Vec<PathBuf> {
        self.folds.iter().map(|f| self.dir.join(&f.training_log)).collect()
    }
}

pub fn fold_dir_name(fold: usize) -> String {
    format!("fold_{fold}")
}

pub const FOLD_REPORT: &str = "fold_report.json";
pub const CROSSVAL_SUMMARY: &str = "crossval_summary.json";

/// Trains one model per fold of a domain-stratified `k`-fold split, each
/// validated on its held-out fold. Up to `jobs` folds train concurrently;
/// every fold is seeded independently, so results do not depend on `jobs`.
pub fn run_crossval(dataset: &Dataset, plan: &PlanConfig, k: usize, seed: u64, out_dir: &Path, jobs: usize) -> Result<CrossvalResult> {
    plan.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let split = stratified_folds(&dataset.domains(), k, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldReport>>>> = Mutex::new((0..k).map(|_| None).collect());
    let worker = || loop {
        let fold = next.fetch_add(1, Ordering::SeqCst);
        if fold >= k {
            break;
        }
        let r = run_fold(dataset, plan, &split, fold, seed, out_dir);
        if r.is_err() {
            // Let the other workers stop early.
            next.store(k, Ordering::SeqCst);
        }
        results.lock().expect("no poisoned workers")[fold] = Some(r);
    };
    let jobs = jobs.clamp(1, k);
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut folds = Vec::with_capacity(k);
    for (i, r) in results.into_inner().expect("no poisoned workers").into_iter().enumerate() {
        match r {
            Some(r) => folds.push(r?),
            None => return Err(Error::InvalidConfig(format!("fold {i} did not run"))),
        }
    }
    let summary = serde_json::json!({ "k": k, "seed": seed, "assignments": split.assignments, "folds": folds });
    let p = out_dir.join(CROSSVAL_SUMMARY);
    fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(CrossvalResult { dir: out_dir.to_path_buf(), split, folds })
}

fn run_fold(dataset: &Dataset, plan: &PlanConfig, split: &FoldSplit, fold: usize, seed: u64, out_dir: &Path) -> Result<FoldReport> {
    let train = dataset.subset(&split.train_indices(fold));
    let val = dataset.subset(&split.fold_indices(fold));
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig(format!("fold {fold} has an empty train or validation set")));
    }
    let name = fold_dir_name(fold);
    let dir = out_dir.join(&name);
    log::info!("fold {fold}: {} train / {} val", train.len(), val.len());
    let params = model::build(plan, &mut seeded(seed, &[10, fold as u64]))?;
    let meta = serde_json::json!({ "fold": fold, "seed": seed });
    let (_, fit) = fit(params, plan, &train, &val, derive_seed(seed, &[12, fold as u64]), &dir, meta)?;
    let ids = |d: &Dataset| d.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    let report = FoldReport {
        fold,
        train_ids: ids(&train),
        val_ids: ids(&val),
        best_epoch: fit.best_epoch,
        best_selection_score: fit.best_selection_score,
        final_ema_dice: fit.final_ema_dice,
        final_ema_domain_acc: fit.final_ema_domain_acc,
        checkpoint: format!("{name}/{BEST_CHECKPOINT}"),
        training_log: format!("{name}/{TRAINING_LOG}"),
    };
    let p = dir.join(FOLD_REPORT);
    fs::write(&p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
