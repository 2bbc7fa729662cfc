use super::TrainError;
use crate::volume::{Domain, Volume};

/// Maps `[0, max]` onto `[-1, 1]` via `v / max` then `2v − 1`, returning the
/// scaled volume and `max`.
pub fn normalize_two_stage(volume: &Volume) -> Result<(Volume, f32), TrainError> {
    let max = volume.max();
    if !(max.is_finite() && max > 0.0) {
        return Err(TrainError::Normalization(format!("volume maximum {max} is not positive")));
    }
    if let Some(&v) = volume.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(TrainError::Normalization(format!("voxel {v} is outside [0, max]")));
    }
    let data = volume.data().iter().map(|&v| 2.0 * (v / max) - 1.0).collect();
    let mut out = volume.with_data(data)?;
    out.set_domain(Domain::SignedUnit, Some(max));
    Ok((out, max))
}

/// Inverse of [`normalize_two_stage`] for a single value.
pub fn denormalize_value(v: f32, max: f32) -> f32 {
    (v + 1.0) / 2.0 * max
}

/// Inverse of [`normalize_two_stage`]; the result is tagged raw.
pub fn denormalize(volume: &Volume, max: f32) -> Result<Volume, TrainError> {
    let data = volume.data().iter().map(|&v| denormalize_value(v, max)).collect();
    let mut out = volume.with_data(data)?;
    out.set_domain(Domain::Raw, None);
    Ok(out)
}
