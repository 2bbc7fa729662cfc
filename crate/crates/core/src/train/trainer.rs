use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{normalize_two_stage, FoldPlan, TrainError};
use crate::masks::TrainingSample;
use crate::metrics::{composite_loss, composite_loss_value, LossWeights};
use crate::rng::derived_rng;
use crate::ssim::SsimParams;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError};
use crate::unet::{save_checkpoint, CheckpointMeta, UNetConfig, UNetModel, SPATIAL_MULTIPLE};
use crate::volume::{crop_mask, crop_volume, CropSpec};

/// Voxels the MAE term is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossRegion {
    /// Everything outside the unhealthy mask.
    #[default]
    NonTumor,
    /// The healthy inpainting mask only.
    HealthyMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub folds: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub loss_region: LossRegion,
    pub ssim: SsimParams,
    /// Samples whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub crop: [usize; 3],
    pub model: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            folds: 5,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            loss_region: LossRegion::NonTumor,
            ssim: SsimParams::signed_unit(),
            batch_size: 1,
            seed: 0,
            crop: [208, 208, 144],
            model: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.crop.iter().any(|&c| c == 0 || c % SPATIAL_MULTIPLE != 0) {
            return bad(format!("crop {:?} must be positive multiples of {SPATIAL_MULTIPLE}", self.crop));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        self.loss.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// A training sample cropped and normalized into network tensors.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub sample_id: String,
    pub case_id: String,
    pub voided: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub target: Tensor<f32>,
    /// MAE region in crop frame.
    pub region: Vec<bool>,
}

/// Normalizes the voided input and the ground truth (each by its own
/// maximum), then center-crops everything to `crop`.
pub fn prepare_sample(sample: &TrainingSample, crop: [usize; 3], region: LossRegion) -> Result<PreparedSample, TrainError> {
    let spec = CropSpec::centered(sample.t1n.dims(), crop)?;
    let (voided, _) = normalize_two_stage(&sample.t1n_voided)?;
    let (target, _) = normalize_two_stage(&sample.t1n)?;
    let region_mask = match region {
        LossRegion::NonTumor => sample.unhealthy.complement(),
        LossRegion::HealthyMask => sample.healthy.clone(),
    };
    Ok(PreparedSample {
        sample_id: sample.sample_id(),
        case_id: sample.case_id.clone(),
        voided: crop_volume(&voided, &spec)?.to_tensor(),
        mask: crop_mask(&sample.combined, &spec)?.to_tensor(),
        target: crop_volume(&target, &spec)?.to_tensor(),
        region: crop_mask(&region_mask, &spec)?.bits().to_vec(),
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: Option<PathBuf>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

pub struct FoldOutcome {
    pub result: FoldResult,
    pub best_model: UNetModel<f32>,
    pub final_model: UNetModel<f32>,
}

fn sample_loss(
    model: &UNetModel<f32>,
    sample: &PreparedSample,
    config: &TrainConfig,
    rng: &mut crate::rng::Rng,
) -> Result<(f32, Vec<Tensor<f32>>), TrainError> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, true);
    let v = tape.constant(sample.voided.clone());
    let m = tape.constant(sample.mask.clone());
    let out = model.forward_on_tape(&mut tape, &params, v, m, true, rng)?;
    let loss = composite_loss(&mut tape, out, &sample.target, &sample.region, &config.loss, &config.ssim)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    Ok((value, params.iter().map(|&p| grads.take(p)).collect()))
}

/// Mean eval-mode composite loss over `samples`.
pub fn validation_loss(model: &UNetModel<f32>, samples: &[&PreparedSample], config: &TrainConfig) -> Result<f64, TrainError> {
    let mut rng = derived_rng(config.seed, "eval");
    let mut total = 0.0;
    for s in samples {
        let pred = model.forward(&s.voided, &s.mask, false, &mut rng)?;
        total += f64::from(composite_loss_value(&pred, &s.target, &s.region, &config.loss, &config.ssim)?);
    }
    Ok(total / samples.len() as f64)
}

/// Trains one fold from a fresh initialization.
///
/// Samples whose case id is in fold `fold` validate, the rest train. When
/// `checkpoint` is given, the model is saved there every time the validation
/// loss strictly improves. `on_epoch` sees each record as it is produced.
pub fn train_fold(
    config: &TrainConfig,
    samples: &[PreparedSample],
    plan: &FoldPlan,
    fold: usize,
    checkpoint: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FoldOutcome, TrainError> {
    config.validate()?;
    if fold >= plan.k() {
        return Err(TrainError::InvalidConfig(format!("fold {fold} out of range for {} folds", plan.k())));
    }
    let val_ids = plan.validation_ids(fold);
    let (val, train): (Vec<&PreparedSample>, Vec<&PreparedSample>) =
        samples.iter().partition(|s| val_ids.contains(&s.case_id.as_str()));
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit { fold });
    }

    let label = |what: &str| format!("fold{fold}/{what}");
    let mut model = UNetModel::<f32>::build(config.model, &mut derived_rng(config.seed, &label("init")))?;
    let mut adam = Adam::new(config.adam, &model.tensors());
    let mut order_rng = derived_rng(config.seed, &label("order"));
    let mut dropout_rng = derived_rng(config.seed, &label("dropout"));

    let mut best: Option<(usize, f64, UNetModel<f32>)> = None;
    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Tensor<f32>>> = None;
            for &i in batch {
                let sample = train[i];
                let (loss, grads) = sample_loss(&model, sample, config, &mut dropout_rng).map_err(|e| match e {
                    TrainError::Tensor(TensorError::NonFiniteLoss(v)) => TrainError::NonFinite {
                        fold,
                        epoch,
                        sample: sample.sample_id.clone(),
                        value: v,
                    },
                    other => other,
                })?;
                epoch_loss += f64::from(loss);
                acc = Some(match acc {
                    None => grads,
                    Some(mut a) => {
                        for (t, g) in a.iter_mut().zip(&grads) {
                            for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                        a
                    }
                });
            }
            let mut grads = acc.expect("batches are non-empty");
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f32;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= inv);
                }
            }
            let mut tensors = model.tensors();
            adam.step(&mut tensors, &grads)?;
            model.set_tensors(tensors)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = validation_loss(&model, &val, config)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite {
                fold,
                epoch,
                sample: "validation".into(),
                value: val_loss,
            });
        }
        train_losses.push(train_loss);
        val_losses.push(val_loss);

        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            if let Some(path) = checkpoint {
                let meta = CheckpointMeta {
                    config: config.model,
                    epoch,
                    fold,
                    val_loss,
                    seed: config.seed,
                };
                save_checkpoint(&model, &meta, path)?;
            }
            best = Some((epoch, val_loss, model.clone()));
        }
        on_epoch(&EpochRecord {
            fold,
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let (best_epoch, best_val_loss, best_model) = best.expect("at least one epoch");
    Ok(FoldOutcome {
        result: FoldResult {
            fold,
            best_epoch,
            best_val_loss,
            checkpoint: checkpoint.map(Path::to_path_buf),
            train_losses,
            val_losses,
        },
        best_model,
        final_model: model,
    })
}
