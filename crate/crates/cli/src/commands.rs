use std::fs;
use std::path::{Path, PathBuf};

use dcac_core::data::{load_manifest, synth_generate, Dataset, DatasetManifest, ImageData, MaskData, SynthSpec};
use dcac_core::eval::{write_report, MetricsReport, OverlapCounts};
use dcac_core::inference::{ensemble, InferenceConfig, Network};
use dcac_core::model;
use dcac_core::planner::{compute_fingerprint, plan, PlanConfig};
use dcac_core::rng::{derive_seed, seeded};
use dcac_core::trainer::{fit, run_crossval, run_experiment, ExperimentProtocol, ExperimentSettings, CROSSVAL_SUMMARY};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::run_dir::write_resolved;

pub const PLAN_FILE: &str = "plan.json";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const PREDICTIONS_INDEX: &str = "predictions.json";

pub fn dispatch(command: &Command, run: &Path) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(command, a, run),
        Command::Plan(a) => plan_cmd(command, a, run),
        Command::Train(a) => train(command, a, run),
        Command::Crossval(a) => crossval(command, a, run),
        Command::Infer(a) => infer(command, a, run),
        Command::Eval(a) => eval(command, a, run),
        Command::Experiment(a) => experiment(command, a, run),
    }
}

fn resolved(command: &Command, run: &Path, extra: serde_json::Value) -> CliResult<()> {
    write_resolved(run, &json!({ "command": command, "resolved": extra }))
}

/// Loads a saved plan or plans from the manifest's fingerprint.
fn resolve_plan(flags: &PlanFlags, manifest: &DatasetManifest, seed: Option<u64>) -> CliResult<PlanConfig> {
    match &flags.plan {
        Some(path) => {
            let mut p = PlanConfig::load(path)?;
            if p.num_domains != manifest.num_domains() {
                return Err(CliError::Usage(format!(
                    "plan {} expects {} domains but the manifest has {}",
                    path.display(),
                    p.num_domains,
                    manifest.num_domains()
                )));
            }
            if let Some(s) = seed {
                p.seed = s;
            }
            Ok(p)
        }
        None => Ok(plan(&compute_fingerprint(manifest)?, &flags.overrides(seed))?),
    }
}

fn synth(command: &Command, a: &SynthArgs, run: &Path) -> CliResult<()> {
    let spec = SynthSpec::new(a.domains, a.per_domain, a.size);
    spec.validate()?;
    resolved(command, run, json!({ "spec": spec }))?;
    let m = synth_generate(&spec, a.seed, &run.join("data"))?;
    println!("wrote {} samples from {} domains to {}", m.len(), m.num_domains(), run.join("data/manifest.json").display());
    Ok(())
}

fn plan_cmd(command: &Command, a: &PlanArgs, run: &Path) -> CliResult<()> {
    let m = load_manifest(&a.manifest)?;
    let fp = compute_fingerprint(&m)?;
    let p = resolve_plan(&a.plan, &m, a.seed)?;
    resolved(command, run, json!({ "fingerprint": fp, "plan": p }))?;
    p.save(&run.join(PLAN_FILE))?;
    println!(
        "patch {} depth {} channels {:?} dcac {}; plan written to {}",
        p.patch_size,
        p.depth,
        p.channels(),
        p.dcac_enabled,
        run.join(PLAN_FILE).display()
    );
    Ok(())
}

fn train(command: &Command, a: &TrainArgs, run: &Path) -> CliResult<()> {
    let m = load_manifest(&a.manifest)?;
    let p = resolve_plan(&a.plan, &m, Some(a.seed))?;
    resolved(command, run, json!({ "plan": p }))?;
    p.save(&run.join(PLAN_FILE))?;
    let train = Dataset::load(&m)?;
    let val = match &a.val_manifest {
        Some(v) => {
            let vm = load_manifest(v)?;
            if vm.domains != m.domains {
                return Err(CliError::Usage("validation manifest must list the same domains as the training manifest".into()));
            }
            Dataset::load(&vm)?
        }
        None => train.clone(),
    };
    let params = model::build(&p, &mut seeded(a.seed, &[10]))?;
    let (_, r) = fit(params, &p, &train, &val, derive_seed(a.seed, &[12]), run, json!({ "seed": a.seed }))?;
    println!(
        "best epoch {} selection score {:.4}; checkpoint {}",
        r.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        r.best_selection_score,
        r.best_checkpoint.display()
    );
    Ok(())
}

fn crossval(command: &Command, a: &CrossvalArgs, run: &Path) -> CliResult<()> {
    let m = load_manifest(&a.manifest)?;
    let p = resolve_plan(&a.plan, &m, Some(a.seed))?;
    resolved(command, run, json!({ "plan": p }))?;
    p.save(&run.join(PLAN_FILE))?;
    let data = Dataset::load(&m)?;
    let cv = run_crossval(&data, &p, a.k, a.seed, &run.join("crossval"), a.jobs)?;
    for f in &cv.folds {
        println!(
            "fold {}: {} train / {} val, best epoch {}, selection score {:.4}",
            f.fold,
            f.train_ids.len(),
            f.val_ids.len(),
            f.best_epoch.map_or("-".to_string(), |e| e.to_string()),
            f.best_selection_score
        );
    }
    println!("checkpoints under {}", cv.dir.display());
    Ok(())
}

fn crossval_checkpoints(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let summary_path = dir.join(CROSSVAL_SUMMARY);
    let text = fs::read_to_string(&summary_path).map_err(|e| CliError::io(&summary_path, e))?;
    let summary: serde_json::Value = serde_json::from_str(&text)?;
    let folds = summary["folds"].as_array().ok_or_else(|| CliError::Usage(format!("{} lists no folds", summary_path.display())))?;
    folds
        .iter()
        .map(|f| {
            f["checkpoint"]
                .as_str()
                .map(|c| dir.join(c))
                .ok_or_else(|| CliError::Usage(format!("{} has a fold without a checkpoint", summary_path.display())))
        })
        .collect()
}

fn check_threshold(t: Option<f64>) -> CliResult<()> {
    match t {
        Some(t) if !(0.0..=1.0).contains(&t) => Err(CliError::Usage(format!("threshold {t} outside [0, 1]"))),
        _ => Ok(()),
    }
}

fn inference_config(no_tta: bool) -> InferenceConfig {
    if no_tta {
        InferenceConfig::without_tta()
    } else {
        InferenceConfig::default()
    }
}

#[derive(Serialize)]
struct PredictionEntry {
    id: String,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    probabilities: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_domain: Option<usize>,
}

fn infer(command: &Command, a: &InferArgs, run: &Path) -> CliResult<()> {
    check_threshold(a.threshold)?;
    let checkpoints = match &a.crossval {
        Some(dir) => crossval_checkpoints(dir)?,
        None => a.checkpoints.clone(),
    };
    let nets = checkpoints.iter().map(|c| Network::load(c)).collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<(String, PathBuf)> = match &a.manifest {
        Some(m) => DatasetManifest::read(m)?.samples.iter().map(|s| (s.id(), s.image.clone())).collect(),
        None => a.images.iter().map(|p| (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), p.clone())).collect(),
    };
    let cfg = inference_config(a.no_tta);
    resolved(command, run, json!({ "checkpoints": checkpoints, "inference": cfg }))?;
    let out = run.join(PREDICTIONS_DIR);
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let classes: Vec<String> = match nets[0].plan.num_classes {
        2 => vec!["background".into(), "foreground".into()],
        c => (0..c).map(|i| format!("class_{i}")).collect(),
    };
    let mut index = Vec::with_capacity(inputs.len());
    for (id, path) in &inputs {
        let image = ImageData::read_png(path)?;
        let pred = ensemble(&nets, &image, &cfg)?;
        let mask = format!("{id}.png");
        pred.to_mask(a.threshold).write_png(&out.join(&mask))?;
        let probabilities = if a.save_probs {
            let name = format!("{id}.probs.bin");
            pred.write_binary(&out.join(&name), &classes)?;
            Some(name)
        } else {
            None
        };
        index.push(PredictionEntry { id: id.clone(), mask, probabilities, predicted_domain: pred.predicted_domain() });
    }
    let p = out.join(PREDICTIONS_INDEX);
    fs::write(&p, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| CliError::io(&p, e))?;
    println!("predicted {} images with a {}-model ensemble into {}", index.len(), nets.len(), out.display());
    Ok(())
}

fn eval(command: &Command, a: &EvalArgs, run: &Path) -> CliResult<()> {
    let m = DatasetManifest::read(&a.manifest)?;
    m.check_structure()?;
    resolved(command, run, json!({}))?;
    let mut items = Vec::with_capacity(m.len());
    for s in &m.samples {
        let truth = MaskData::read_png(&s.mask)?;
        let pred = MaskData::read_png(&a.predictions.join(format!("{}.png", s.id())))?;
        items.push((s.id(), m.domains[s.domain].clone(), OverlapCounts::of(&pred, &truth)?));
    }
    let report = MetricsReport::from_counts(&items, a.aggregation.into());
    write_report(&report, &run.join("report"))?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    let s = &report.summary;
    println!("{} images: dice {:.4} jaccard {:.4} seg_score {:.4}", s.count, s.mean.dice, s.mean.jaccard, s.mean.seg_score);
    for (d, m) in &s.per_domain {
        println!("  {d}: seg_score {:.4}", m.seg_score);
    }
    if let Some(acc) = s.domain_accuracy {
        println!("domain accuracy {acc:.4}");
    }
}

fn experiment(command: &Command, a: &ExperimentArgs, run: &Path) -> CliResult<()> {
    check_threshold(a.threshold)?;
    let need = |p: &Option<PathBuf>, flag: &str| -> CliResult<DatasetManifest> {
        let p = p.as_ref().ok_or_else(|| CliError::Usage(format!("--{flag} is required for this protocol")))?;
        Ok(load_manifest(p)?)
    };
    let protocol = match a.protocol {
        ProtocolArg::CrossDomain => ExperimentProtocol::CrossDomain {
            source: need(&a.source, "source")?,
            eval: need(&a.eval_manifest, "eval")?,
            seen_holdout: a.seen_holdout.as_ref().map(|p| load_manifest(p)).transpose()?,
        },
        ProtocolArg::InDomainHoldout => {
            ExperimentProtocol::InDomainHoldout { manifest: need(&a.manifest, "manifest")?, per_domain: a.holdout_per_domain }
        }
        ProtocolArg::FullTrain => ExperimentProtocol::FullTrain { manifest: need(&a.manifest, "manifest")? },
    };
    let planning = match &protocol {
        ExperimentProtocol::CrossDomain { source, .. } => source,
        ExperimentProtocol::InDomainHoldout { manifest, .. } | ExperimentProtocol::FullTrain { manifest } => manifest,
    };
    let p = resolve_plan(&a.plan, planning, Some(a.seed))?;
    let settings = ExperimentSettings {
        k: a.k,
        seed: a.seed,
        jobs: a.jobs,
        inference: inference_config(a.no_tta),
        threshold: a.threshold,
        aggregation: a.aggregation.into(),
    };
    resolved(command, run, json!({ "plan": p, "settings": settings }))?;
    p.save(&run.join(PLAN_FILE))?;
    let out = run_experiment(&protocol, &p, &settings, run)?;
    if out.report.rows.is_empty() {
        println!("trained {} folds; training logs under {}", out.crossval.folds.len(), out.crossval.dir.display());
    } else {
        print_summary(&out.report);
    }
    println!("report written to {}", run.join("report").display());
    Ok(())
}
