use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use voxelpaint_core::masks::{build_samples, MaskError, TrainingSample};
use voxelpaint_core::metrics::{aggregate_stats, evaluate_case, region_max, render_table, CaseMetrics, Summary};
use voxelpaint_core::rng::{derive_seed, seeded};
use voxelpaint_core::synthetic::synthetic_case;
use voxelpaint_core::train::{
    infer_case, kfold_split, prepare_sample, train_fold, Ensemble, FoldPlan, FoldResult, InferInput, Predictor,
};
use voxelpaint_core::unet::load_checkpoint;
use voxelpaint_core::volume::write_nifti;
use voxelpaint_core::{MaskRole, UNetModel};

use crate::config::RunConfig;
use crate::dataset::*;
use crate::failure::{Failure, MissingInput};

fn write_volume(vol: &voxelpaint_core::Volume, path: &Path) -> Result<()> {
    write_nifti(vol, path).with_context(|| format!("writing {}", path.display()))
}

fn write_mask(mask: &voxelpaint_core::MaskVolume, path: &Path) -> Result<()> {
    write_volume(&mask.to_volume(), path)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_sample(out: &Path, s: &TrainingSample) -> Result<String> {
    let id = s.sample_id();
    let dir = out.join(&id);
    fs::create_dir_all(&dir)?;
    write_volume(&s.t1n, &output_path(&dir, &id, T1N))?;
    write_volume(&s.t1n_voided, &output_path(&dir, &id, T1N_VOIDED))?;
    write_mask(&s.healthy, &output_path(&dir, &id, MASK_HEALTHY))?;
    write_mask(&s.unhealthy, &output_path(&dir, &id, MASK_UNHEALTHY))?;
    write_mask(&s.combined, &output_path(&dir, &id, MASK))?;
    Ok(id)
}

enum CaseOutcome {
    Done(ManifestCase, Vec<ManifestSample>),
    Skipped(Skipped),
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let params = cfg.prepare.masks;
    params.validate().map_err(|e| Failure::InvalidConfig(e.to_string()))?;
    let cases = discover(&cfg.prepare.input, T1N)?;
    if cases.is_empty() {
        return Err(Failure::InvalidData(format!("no {{case}}{T1N} volumes in {}", cfg.prepare.input.display())).into());
    }
    let outcomes: Vec<Result<CaseOutcome>> = cases
        .par_iter()
        .map(|(case_id, dir)| {
            let seed = derive_seed(cfg.seed, case_id);
            let t1n = read_volume(&require(dir, case_id, T1N)?)?;
            let tumor = read_mask(&require(dir, case_id, MASK_UNHEALTHY)?, MaskRole::Unhealthy)?;
            let samples = match build_samples(case_id, &t1n, &tumor, &params, &mut seeded(seed)) {
                Ok(s) => s,
                Err(MaskError::Volume(e)) => return Err(Failure::InvalidData(format!("{case_id}: {e}")).into()),
                Err(e) => {
                    return Ok(CaseOutcome::Skipped(Skipped {
                        case_id: case_id.clone(),
                        reason: e.to_string(),
                    }))
                }
            };
            let mut entries = Vec::with_capacity(samples.len());
            for s in &samples {
                let id = write_sample(&cfg.out.join(case_id), s)?;
                entries.push(ManifestSample {
                    dir: format!("{case_id}/{id}"),
                    id,
                    case_id: case_id.clone(),
                    variant: s.variant,
                });
            }
            Ok(CaseOutcome::Done(
                ManifestCase {
                    case_id: case_id.clone(),
                    seed,
                },
                entries,
            ))
        })
        .collect();

    let mut manifest = Manifest {
        seed: cfg.seed,
        masks: params,
        cases: Vec::new(),
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    for outcome in outcomes {
        match outcome? {
            CaseOutcome::Done(case, samples) => {
                manifest.cases.push(case);
                manifest.samples.extend(samples);
            }
            CaseOutcome::Skipped(s) => {
                eprintln!("warning: skipping case {}: {}", s.case_id, s.reason);
                manifest.skipped.push(s);
            }
        }
    }
    write_json(&manifest, &cfg.out.join(MANIFEST))?;
    eprintln!(
        "prepared {} samples from {} cases ({} skipped)",
        manifest.samples.len(),
        manifest.cases.len(),
        manifest.skipped.len()
    );
    Ok(())
}

fn load_sample(data: &Path, entry: &ManifestSample) -> Result<TrainingSample> {
    let dir = data.join(&entry.dir);
    let id = &entry.id;
    let t1n = read_volume(&require(&dir, id, T1N)?)?;
    let healthy = read_mask(&require(&dir, id, MASK_HEALTHY)?, MaskRole::Healthy)?;
    let unhealthy = read_mask(&require(&dir, id, MASK_UNHEALTHY)?, MaskRole::Unhealthy)?;
    TrainingSample::assemble(&entry.case_id, entry.variant, t1n, healthy, unhealthy)
        .map_err(|e| Failure::InvalidData(format!("{id}: {e}")).into())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    plan: &'a FoldPlan,
    folds: &'a [FoldResult],
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let config = cfg.train.to_train_config(cfg.seed);
    config.validate()?;
    let manifest = read_manifest(&cfg.train.data)?;
    if manifest.samples.is_empty() {
        return Err(Failure::InvalidData("manifest lists no samples".into()).into());
    }
    let prepared = manifest
        .samples
        .par_iter()
        .map(|entry| {
            let s = load_sample(&cfg.train.data, entry)?;
            Ok(prepare_sample(&s, config.crop, config.loss_region)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut case_ids: Vec<String> = prepared.iter().map(|s| s.case_id.clone()).collect();
    case_ids.sort();
    case_ids.dedup();
    let plan = kfold_split(&case_ids, config.folds, config.seed)?;

    let log_path = cfg.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut results = Vec::with_capacity(plan.k());
    for fold in 0..plan.k() {
        let ckpt = cfg.out.join(format!("fold{fold}.vxpt"));
        let mut log_err = None;
        let outcome = train_fold(&config, &prepared, &plan, fold, Some(&ckpt), &mut |r| {
            let line = serde_json::to_string(r).expect("epoch record serializes");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = log_err {
            return Err(e).context("writing training log");
        }
        let r = &outcome.result;
        eprintln!(
            "fold {fold}: best epoch {} with validation loss {:.6}",
            r.best_epoch, r.best_val_loss
        );
        results.push(outcome.result);
    }
    write_json(
        &TrainSummary {
            plan: &plan,
            folds: &results,
        },
        &cfg.out.join("train_result.json"),
    )?;
    Ok(())
}

pub fn infer(cfg: &RunConfig) -> Result<()> {
    let icfg = &cfg.infer;
    if icfg.checkpoints.is_empty() {
        return Err(Failure::InvalidConfig("infer.checkpoints is empty".into()).into());
    }
    let mut models: Vec<UNetModel<f32>> = Vec::with_capacity(icfg.checkpoints.len());
    for path in &icfg.checkpoints {
        if !path.is_file() {
            return Err(MissingInput(path.clone()).into());
        }
        let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        models.push(model);
    }
    let predictor: Box<dyn Predictor + Sync> = if models.len() == 1 {
        Box::new(models.pop().expect("one model"))
    } else {
        Box::new(Ensemble(models))
    };
    let cases = discover(&icfg.input, T1N_VOIDED)?;
    if cases.is_empty() {
        return Err(Failure::InvalidData(format!("no {{id}}{T1N_VOIDED} volumes in {}", icfg.input.display())).into());
    }
    fs::create_dir_all(&cfg.out)?;
    for (id, dir) in &cases {
        let voided = read_volume(&require(dir, id, T1N_VOIDED)?)?;
        let mask = read_mask(&require(dir, id, MASK)?, MaskRole::Combined)?;
        let out = infer_case(predictor.as_ref(), &voided, &mask, InferInput::Voided, icfg.crop)
            .with_context(|| format!("inferring {id}"))?;
        write_volume(&out, &output_path(&cfg.out, id, INFERENCE))?;
    }
    eprintln!("wrote {} inferences to {}", cases.len(), cfg.out.display());
    Ok(())
}

fn evaluate_one(id: &str, gt_dir: &Path, pred_dir: &Path, suffix: &str) -> Result<CaseMetrics> {
    let gt = read_volume(&require(gt_dir, id, T1N)?)?;
    let healthy = read_mask(&require(gt_dir, id, MASK_HEALTHY)?, MaskRole::Healthy)?;
    let region = match find(gt_dir, id, MASK_UNHEALTHY) {
        Some(p) => healthy.union(&read_mask(&p, MaskRole::Unhealthy)?)?,
        None => healthy.clone(),
    };
    let pred = read_volume(&require(pred_dir, id, suffix)?)?;
    let max = region_max(&gt, &region).map_err(|e| Failure::InvalidData(format!("{id}: {e}")))?;
    evaluate_case(&pred, &gt, &healthy, max, id).map_err(|e| Failure::InvalidData(format!("{id}: {e}")).into())
}

fn csv_number(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let ecfg = &cfg.evaluate;
    let cases = discover(&ecfg.ground_truth, T1N)?;
    if cases.is_empty() {
        return Err(Failure::InvalidData(format!("no {{id}}{T1N} volumes in {}", ecfg.ground_truth.display())).into());
    }
    let preds = discover(&ecfg.predictions, &ecfg.pred_suffix)?;
    let metrics = cases
        .par_iter()
        .map(|(id, gt_dir)| {
            let pred_dir = preds
                .iter()
                .find(|(p, _)| p == id)
                .map(|(_, d)| d.clone())
                .unwrap_or_else(|| ecfg.predictions.clone());
            evaluate_one(id, gt_dir, &pred_dir, &ecfg.pred_suffix)
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&cfg.out)?;
    let mut csv = String::from("case,ssim,psnr,mse,rmse,region_voxels\n");
    for m in &metrics {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.case_id,
            csv_number(m.ssim),
            csv_number(m.psnr),
            csv_number(m.mse),
            csv_number(m.rmse),
            m.region_voxels
        ));
    }
    let csv_path = cfg.out.join("metrics.csv");
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let summary = aggregate_stats(&metrics)?;
    write_json(&summary, &cfg.out.join("summary.json"))?;
    eprintln!("evaluated {} cases", metrics.len());
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let path = &cfg.report.summary;
    if !path.is_file() {
        return Err(MissingInput(path.clone()).into());
    }
    let text = fs::read_to_string(path)?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| Failure::InvalidData(format!("{}: {e}", path.display())))?;
    let table = format!("{}\n{}", cfg.report.title, render_table(&summary));
    print!("{table}");
    fs::create_dir_all(&cfg.out)?;
    let out = cfg.out.join("report.txt");
    fs::write(&out, table).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn synth(out: &Path, cases: usize, dims: [usize; 3], seed: u64) -> Result<()> {
    if cases == 0 || dims.contains(&0) {
        return Err(Failure::InvalidConfig("synth needs at least one case and positive dims".into()).into());
    }
    fs::create_dir_all(out)?;
    for i in 0..cases {
        let id = format!("case-{i:03}");
        let c = synthetic_case(&id, dims, seed);
        write_volume(&c.t1n, &output_path(out, &id, T1N))?;
        write_mask(&c.tumor, &output_path(out, &id, MASK_UNHEALTHY))?;
    }
    eprintln!("wrote {cases} synthetic cases to {}", out.display());
    Ok(())
}
