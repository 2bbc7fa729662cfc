use super::{denormalize_value, normalize_two_stage, TrainError};
use crate::masks::void_image;
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::unet::UNetModel;
use crate::volume::{crop_mask, crop_volume, stitch, CropSpec, MaskVolume, Volume};

/// Maps a normalized `[1, 1, d, h, w]` voided image and mask to a prediction
/// of the same shape.
pub trait Predictor {
    fn predict(&self, voided: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>, TrainError>;
}

impl Predictor for UNetModel<f32> {
    fn predict(&self, voided: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        // eval mode never draws from the generator
        Ok(self.forward(voided, mask, false, &mut seeded(0))?)
    }
}

/// Voxel-wise mean of several models.
pub struct Ensemble(pub Vec<UNetModel<f32>>);

impl Predictor for Ensemble {
    fn predict(&self, voided: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        let (first, rest) = self
            .0
            .split_first()
            .ok_or_else(|| TrainError::InvalidConfig("ensemble has no models".into()))?;
        let mut sum = first.predict(voided, mask)?;
        for m in rest {
            let p = m.predict(voided, mask)?;
            for (a, b) in sum.data_mut().iter_mut().zip(p.data()) {
                *a += b;
            }
        }
        let inv = 1.0 / self.0.len() as f32;
        Ok(sum.map(|v| v * inv))
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Tensor<f32>, &Tensor<f32>) -> Tensor<f32>,
{
    fn predict(&self, voided: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        Ok((self.0)(voided, mask))
    }
}

/// Whether the image passed to [`infer_case`] still needs voiding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferInput {
    Full,
    Voided,
}

/// Inpaints `image` under `mask`.
///
/// The voided image is normalized by its own maximum, center-cropped with the
/// mask, predicted, clamped to `[-1, 1]`, mapped back to intensities and
/// stitched into `image`. Voxels outside the mask are never modified. Every
/// mask voxel must lie inside the crop.
pub fn infer_case<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Volume,
    mask: &MaskVolume,
    input: InferInput,
    crop: [usize; 3],
) -> Result<Volume, TrainError> {
    if image.dims() != mask.dims() {
        return Err(TrainError::Volume(crate::volume::VolumeError::Misaligned {
            op: "infer_case",
            left: image.dims(),
            right: mask.dims(),
        }));
    }
    let spec = CropSpec::centered(image.dims(), crop)?;
    let local_mask = crop_mask(mask, &spec)?;
    if local_mask.count() != mask.count() {
        return Err(TrainError::MaskOutsideCrop {
            outside: mask.count() - local_mask.count(),
        });
    }
    if mask.is_empty() {
        return Ok(image.clone());
    }
    let voided = match input {
        InferInput::Full => void_image(image, mask)?,
        InferInput::Voided => image.clone(),
    };
    let (norm, max) = normalize_two_stage(&voided)?;
    let x = crop_volume(&norm, &spec)?.to_tensor();
    let m = local_mask.to_tensor();
    let pred = predictor.predict(&x, &m)?;
    if pred.shape() != x.shape() {
        return Err(TrainError::InvalidConfig(format!(
            "prediction shape {:?} differs from input {:?}",
            pred.shape(),
            x.shape()
        )));
    }
    let values = pred.data().iter().map(|&v| denormalize_value(v.clamp(-1.0, 1.0), max)).collect();
    let prediction = Volume::new(crop, values)?;
    Ok(stitch(image, &prediction, &local_mask, &spec)?)
}
