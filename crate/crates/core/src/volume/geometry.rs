//! Center cropping and stitching predictions back into full volumes.

use serde::{Deserialize, Serialize};

use super::{MaskVolume, Volume, VolumeError};

/// Placement of a cropped sub-volume inside its source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub source: [usize; 3],
    pub target: [usize; 3],
    pub start: [usize; 3],
}

impl CropSpec {
    /// Centered placement; odd margins put the extra voxel at the high end.
    pub fn centered(source: [usize; 3], target: [usize; 3]) -> Result<Self, VolumeError> {
        if (0..3).any(|a| target[a] > source[a]) {
            return Err(VolumeError::CropTooLarge {
                source_dims: source,
                target,
            });
        }
        if target.contains(&0) {
            return Err(VolumeError::EmptyDims(target));
        }
        let start = [0, 1, 2].map(|a| (source[a] - target[a]) / 2);
        Ok(Self { source, target, start })
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if (0..3).any(|a| self.start[a] + self.target[a] > self.source[a]) {
            return Err(VolumeError::InvalidCrop(format!(
                "start {:?} + target {:?} exceeds source {:?}",
                self.start, self.target, self.source
            )));
        }
        Ok(())
    }

    /// Source-frame flat index of a target-frame voxel.
    fn source_index(&self, x: usize, y: usize, z: usize) -> usize {
        let [sx, sy, _] = self.source;
        (x + self.start[0]) + sx * ((y + self.start[1]) + sy * (z + self.start[2]))
    }
}

fn crop_buffer<T: Copy>(data: &[T], spec: &CropSpec) -> Vec<T> {
    let [tx, ty, tz] = spec.target;
    let mut out = Vec::with_capacity(tx * ty * tz);
    for z in 0..tz {
        for y in 0..ty {
            let s = spec.source_index(0, y, z);
            out.extend_from_slice(&data[s..s + tx]);
        }
    }
    out
}

fn check_source(op: &'static str, dims: [usize; 3], spec: &CropSpec) -> Result<(), VolumeError> {
    spec.validate()?;
    if dims != spec.source {
        return Err(VolumeError::Misaligned {
            op,
            left: dims,
            right: spec.source,
        });
    }
    Ok(())
}

pub fn crop_volume(volume: &Volume, spec: &CropSpec) -> Result<Volume, VolumeError> {
    check_source("crop", volume.dims(), spec)?;
    let mut out = Volume::new(spec.target, crop_buffer(volume.data(), spec))?;
    out.set_domain(volume.domain(), volume.max_intensity());
    Ok(out)
}

pub fn crop_mask(mask: &MaskVolume, spec: &CropSpec) -> Result<MaskVolume, VolumeError> {
    check_source("crop_mask", mask.dims(), spec)?;
    MaskVolume::new(spec.target, crop_buffer(mask.bits(), spec), mask.role())
}

/// Crops the centered `target` region and returns the spec to undo it.
pub fn crop_center(volume: &Volume, target: [usize; 3]) -> Result<(Volume, CropSpec), VolumeError> {
    let spec = CropSpec::centered(volume.dims(), target)?;
    Ok((crop_volume(volume, &spec)?, spec))
}

/// Writes the whole `patch` into a copy of `original` at the spec offsets.
pub fn paste(original: &Volume, patch: &Volume, spec: &CropSpec) -> Result<Volume, VolumeError> {
    check_source("paste", original.dims(), spec)?;
    if patch.dims() != spec.target {
        return Err(VolumeError::Misaligned {
            op: "paste",
            left: patch.dims(),
            right: spec.target,
        });
    }
    let mut out = original.clone();
    let [tx, ty, tz] = spec.target;
    for z in 0..tz {
        for y in 0..ty {
            let s = spec.source_index(0, y, z);
            let p = tx * (y + ty * z);
            out.data_mut()[s..s + tx].copy_from_slice(&patch.data()[p..p + tx]);
        }
    }
    Ok(out)
}

/// Replaces the voxels of `original` under `mask` (crop frame) with the
/// corresponding `prediction` voxels. Every other voxel is copied unchanged.
pub fn stitch(original: &Volume, prediction: &Volume, mask: &MaskVolume, spec: &CropSpec) -> Result<Volume, VolumeError> {
    check_source("stitch", original.dims(), spec)?;
    for (what, dims) in [("stitch prediction", prediction.dims()), ("stitch mask", mask.dims())] {
        if dims != spec.target {
            return Err(VolumeError::Misaligned {
                op: what,
                left: dims,
                right: spec.target,
            });
        }
    }
    let mut out = original.clone();
    let [tx, ty, tz] = spec.target;
    for z in 0..tz {
        for y in 0..ty {
            for x in 0..tx {
                let local = x + tx * (y + ty * z);
                if mask.bits()[local] {
                    out.data_mut()[spec.source_index(x, y, z)] = prediction.data()[local];
                }
            }
        }
    }
    Ok(out)
}
