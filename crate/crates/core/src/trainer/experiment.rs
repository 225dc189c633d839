use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::crossval::{run_crossval, CrossvalResult};
use crate::data::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::{write_report, Aggregation, MetricsReport, OverlapCounts};
use crate::inference::{ensemble, InferenceConfig, Network};
use crate::planner::PlanConfig;
use crate::rng::seeded;

#[derive(Debug, Clone)]
pub enum ExperimentProtocol {
    /// Train on `source`, evaluate on the disjoint `eval` set. Domain accuracy
    /// is measured on `seen_holdout`, which holds unseen images from the
    /// source domains (domain indices follow `source`).
    CrossDomain { source: DatasetManifest, eval: DatasetManifest, seen_holdout: Option<DatasetManifest> },
    /// Hold out `per_domain` random images of every domain, train on the rest.
    InDomainHoldout { manifest: DatasetManifest, per_domain: usize },
    /// Train on everything; report training curves only.
    FullTrain { manifest: DatasetManifest },
}

impl ExperimentProtocol {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentProtocol::CrossDomain { .. } => "cross_domain",
            ExperimentProtocol::InDomainHoldout { .. } => "in_domain_holdout",
            ExperimentProtocol::FullTrain { .. } => "full_train",
        }
    }
}

pub const DEFAULT_HOLDOUT_PER_DOMAIN: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub k: usize,
    pub seed: u64,
    pub jobs: usize,
    pub inference: InferenceConfig,
    pub threshold: Option<f64>,
    pub aggregation: Aggregation,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            k: 5,
            seed: 0,
            jobs: 1,
            inference: InferenceConfig::default(),
            threshold: None,
            aggregation: Aggregation::PerImage,
        }
    }
}

pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub crossval: CrossvalResult,
}

/// Splits `per_domain` random samples of each domain off as a hold-out set.
pub fn holdout_split(manifest: &DatasetManifest, per_domain: usize, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let mut held = Vec::new();
    for d in 0..manifest.num_domains() {
        let mut members: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.samples[i].domain == d).collect();
        if members.len() <= per_domain {
            return Err(Error::InvalidConfig(format!(
                "domain {} has {} samples; cannot hold out {per_domain} and still train",
                manifest.domains[d],
                members.len()
            )));
        }
        members.shuffle(&mut seeded(seed, &[20, d as u64]));
        held.extend_from_slice(&members[..per_domain]);
    }
    held.sort_unstable();
    let rest: Vec<usize> = (0..manifest.len()).filter(|i| held.binary_search(i).is_err()).collect();
    Ok((manifest.subset(&rest), manifest.subset(&held)))
}

fn check_disjoint(a: &DatasetManifest, b: &DatasetManifest, what: &str) -> Result<()> {
    let shared: BTreeSet<_> = a.image_set().intersection(&b.image_set()).cloned().collect();
    if let Some(p) = shared.iter().next() {
        return Err(Error::Overlap(format!("{} images shared between training and {what}, e.g. {}", shared.len(), p.display())));
    }
    Ok(())
}

/// Ensemble prediction on every image of `data`; returns the report and the
/// domain accuracy of the averaged domain encodings when the models have them.
pub fn evaluate_ensemble(models: &[Network], data: &Dataset, settings: &ExperimentSettings) -> Result<(MetricsReport, Option<f64>)> {
    let mut items = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    let mut have_domains = false;
    for s in &data.samples {
        let pred = ensemble(models, &s.image, &settings.inference)?;
        let counts = OverlapCounts::of(&pred.to_mask(settings.threshold), &s.mask)?;
        items.push((s.id.clone(), data.domain_names[s.domain].clone(), counts));
        if let Some(d) = pred.predicted_domain() {
            have_domains = true;
            correct += (d == s.domain) as usize;
        }
    }
    let acc = (have_domains && !data.is_empty()).then(|| correct as f64 / data.len() as f64);
    Ok((MetricsReport::from_counts(&items, settings.aggregation), acc))
}

pub fn load_networks(cv: &CrossvalResult) -> Result<Vec<Network>> {
    cv.checkpoints().iter().map(|p| Network::load(p)).collect()
}

/// Runs a protocol end to end under `out_dir`: cross-validation in
/// `crossval/`, the report in `report/`.
pub fn run_experiment(
    protocol: &ExperimentProtocol,
    plan: &PlanConfig,
    settings: &ExperimentSettings,
    out_dir: &Path,
) -> Result<ExperimentOutcome> {
    let (train_m, eval_m, acc_m) = match protocol {
        ExperimentProtocol::CrossDomain { source, eval, seen_holdout } => {
            check_disjoint(source, eval, "evaluation")?;
            if let Some(h) = seen_holdout {
                check_disjoint(source, h, "seen-domain hold-out")?;
                if h.domains != source.domains {
                    return Err(Error::InvalidManifest("seen-domain hold-out must use the source domain list".into()));
                }
            }
            (source.clone(), Some(eval.clone()), seen_holdout.clone())
        }
        ExperimentProtocol::InDomainHoldout { manifest, per_domain } => {
            let (train, held) = holdout_split(manifest, *per_domain, settings.seed)?;
            (train, Some(held.clone()), Some(held))
        }
        ExperimentProtocol::FullTrain { manifest } => (manifest.clone(), None, None),
    };
    let mut plan = plan.clone();
    if plan.num_domains != train_m.num_domains() {
        log::warn!("plan has {} domains, training manifest {}; using the manifest", plan.num_domains, train_m.num_domains());
        plan.num_domains = train_m.num_domains();
        plan.validate()?;
    }
    let train = Dataset::load(&train_m)?;
    let cv = run_crossval(&train, &plan, settings.k, settings.seed, &out_dir.join("crossval"), settings.jobs)?;
    let logs: Vec<String> = cv.folds.iter().map(|f| format!("crossval/{}", f.training_log)).collect();

    let mut report = match &eval_m {
        Some(m) => {
            let nets = load_networks(&cv)?;
            let (report, _) = evaluate_ensemble(&nets, &Dataset::load(m)?, settings)?;
            let mut report = report.with_meta("eval_domains", &m.domains);
            if let (Some(h), true) = (&acc_m, plan.dcac_enabled) {
                let (_, acc) = evaluate_ensemble(&nets, &Dataset::load(h)?, settings)?;
                report.summary.domain_accuracy = acc;
            }
            report
        }
        None => MetricsReport::from_rows(Vec::new()),
    };
    report = report
        .with_meta("kind", protocol.kind())
        .with_meta("source_domains", &train_m.domains)
        .with_meta("dcac", plan.dcac_enabled)
        .with_meta("k", settings.k)
        .with_meta("seed", settings.seed)
        .with_meta("training_logs", logs);
    write_report(&report, &out_dir.join("report"))?;
    Ok(ExperimentOutcome { report, crossval: cv })
}
