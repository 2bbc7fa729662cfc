//! Training-sample construction: healthy-mask placement, augmentation and
//! voiding.
//!
//! A healthy mask is the tumor's own shape moved to a random spot inside the
//! brain that stays clear of the tumor grown by a safety margin. When no spot
//! is found the shape is eroded one step and the search repeats.

mod augment;
mod morphology;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{MaskRole, MaskVolume, Volume, VolumeError};

pub use augment::{augment_mask, augment_mask_with, mirror, rotate, AugmentDraw};
pub use morphology::{dilate, erode};

/// Healthy masks generated per scan.
pub const MASKS_PER_SCAN: usize = 5;

/// Value written into occluded voxels.
pub const VOID_FILL: f32 = 0.0;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("brain mask is empty")]
    EmptyBrain,
    #[error("tumor mask is empty")]
    EmptyTumor,
    #[error("tumor mask extends outside the brain mask")]
    TumorOutsideBrain,
    #[error("no valid healthy-mask placement after {attempts} attempts and {erosions} erosion steps")]
    PlacementFailed { attempts: usize, erosions: usize },
    #[error("invalid mask parameters: {0}")]
    InvalidParams(String),
    #[error("healthy and unhealthy masks overlap")]
    Overlap,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskGenParams {
    /// Dilation radius (voxels) of the exclusion zone around the tumor.
    pub margin: usize,
    /// Healthy-mask volume relative to the tumor volume.
    pub volume_fraction: f64,
    pub max_attempts: usize,
}

impl Default for MaskGenParams {
    fn default() -> Self {
        Self {
            margin: 4,
            volume_fraction: 1.0,
            max_attempts: 100,
        }
    }
}

impl MaskGenParams {
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.max_attempts == 0 {
            return Err(MaskError::InvalidParams("max_attempts must be at least 1".into()));
        }
        if !(self.volume_fraction.is_finite() && self.volume_fraction > 0.0) {
            return Err(MaskError::InvalidParams(format!(
                "volume_fraction must be positive, got {}",
                self.volume_fraction
            )));
        }
        Ok(())
    }
}

/// Voxels with positive intensity.
pub fn brain_mask(t1n: &Volume) -> MaskVolume {
    MaskVolume::new(t1n.dims(), t1n.data().iter().map(|&v| v > 0.0).collect(), MaskRole::Region)
        .expect("dims come from a valid volume")
}

/// Tumor grown by the separation margin.
pub fn exclusion_zone(tumor: &MaskVolume, margin: usize) -> MaskVolume {
    dilate(tumor, margin)
}

/// Set voxels of a mask relative to a small local box.
#[derive(Clone, Debug)]
struct Shape {
    extent: [usize; 3],
    offsets: Vec<[usize; 3]>,
}

impl Shape {
    fn of(mask: &MaskVolume) -> Option<Self> {
        let (lo, hi) = mask.bounding_box()?;
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let mut offsets = Vec::new();
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    if mask.get(x, y, z) {
                        offsets.push([x - lo[0], y - lo[1], z - lo[2]]);
                    }
                }
            }
        }
        Some(Self { extent, offsets })
    }

    fn to_mask(&self, dims: [usize; 3]) -> MaskVolume {
        let mut m = MaskVolume::empty(dims, MaskRole::Region).expect("positive dims");
        for o in &self.offsets {
            m.set(o[0], o[1], o[2], true);
        }
        m
    }

    /// Nearest-neighbour rescale of the local box by `factor` per axis.
    fn scaled(&self, factor: f64) -> Option<Self> {
        if factor == 1.0 {
            return Some(self.clone());
        }
        let local = self.to_mask(self.extent);
        let extent = self.extent.map(|e| ((e as f64 * factor).round() as usize).max(1));
        let mut offsets = Vec::new();
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    let src = [x, y, z]
                        .iter()
                        .enumerate()
                        .map(|(a, &p)| (((p as f64 + 0.5) / factor).floor() as usize).min(self.extent[a] - 1))
                        .collect::<Vec<_>>();
                    if local.get(src[0], src[1], src[2]) {
                        offsets.push([x, y, z]);
                    }
                }
            }
        }
        (!offsets.is_empty()).then_some(Self { extent, offsets })
    }

    fn eroded(&self) -> Option<Self> {
        let local = self.to_mask(self.extent);
        Shape::of(&erode(&local, 1))
    }

    fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.extent[a] <= dims[a])
    }
}

fn try_place<R: Rng + ?Sized>(shape: &Shape, allowed: &MaskVolume, rng: &mut R) -> Option<MaskVolume> {
    let dims = allowed.dims();
    let origin: Vec<usize> = (0..3).map(|a| rng.random_range(0..=dims[a] - shape.extent[a])).collect();
    let ok = shape
        .offsets
        .iter()
        .all(|o| allowed.get(origin[0] + o[0], origin[1] + o[1], origin[2] + o[2]));
    ok.then(|| {
        let mut m = MaskVolume::empty(dims, MaskRole::Healthy).expect("positive dims");
        for o in &shape.offsets {
            m.set(origin[0] + o[0], origin[1] + o[1], origin[2] + o[2], true);
        }
        m
    })
}

fn check_inputs(brain: &MaskVolume, tumor: &MaskVolume, params: &MaskGenParams) -> Result<(), MaskError> {
    params.validate()?;
    if brain.is_empty() {
        return Err(MaskError::EmptyBrain);
    }
    if tumor.is_empty() {
        return Err(MaskError::EmptyTumor);
    }
    if !tumor.is_subset_of(brain)? {
        return Err(MaskError::TumorOutsideBrain);
    }
    Ok(())
}

/// Draws one healthy mask shaped like the tumor, inside `brain` and clear of
/// the tumor dilated by `params.margin`.
pub fn sample_healthy_mask<R: Rng + ?Sized>(
    brain: &MaskVolume,
    tumor: &MaskVolume,
    params: &MaskGenParams,
    rng: &mut R,
) -> Result<MaskVolume, MaskError> {
    check_inputs(brain, tumor, params)?;
    let allowed = brain.difference(&exclusion_zone(tumor, params.margin))?;
    let failed = |erosions| MaskError::PlacementFailed {
        attempts: params.max_attempts,
        erosions,
    };
    if allowed.is_empty() {
        return Err(failed(0));
    }
    let shape = Shape::of(tumor).ok_or(MaskError::EmptyTumor)?;
    let mut shape = shape.scaled(params.volume_fraction.cbrt()).ok_or_else(|| failed(0))?;
    let mut erosions = 0;
    loop {
        if shape.fits(allowed.dims()) {
            for _ in 0..params.max_attempts {
                if let Some(m) = try_place(&shape, &allowed, rng) {
                    return Ok(m);
                }
            }
        }
        shape = shape.eroded().ok_or_else(|| failed(erosions))?;
        erosions += 1;
    }
}

/// Five augmented healthy masks for one scan. Each augmented mask is clipped
/// to the brain; a result that is empty or touches the exclusion zone is
/// redrawn, and redraws count against `params.max_attempts` per mask.
pub fn generate_mask_set<R: Rng + ?Sized>(
    brain: &MaskVolume,
    tumor: &MaskVolume,
    params: &MaskGenParams,
    rng: &mut R,
) -> Result<Vec<MaskVolume>, MaskError> {
    check_inputs(brain, tumor, params)?;
    let forbidden = exclusion_zone(tumor, params.margin);
    let mut masks = Vec::with_capacity(MASKS_PER_SCAN);
    while masks.len() < MASKS_PER_SCAN {
        let mut accepted = None;
        for _ in 0..params.max_attempts {
            let base = sample_healthy_mask(brain, tumor, params, rng)?;
            let m = augment_mask(&base, rng).intersect(brain)?.with_role(MaskRole::Healthy);
            if !m.is_empty() && m.is_disjoint(&forbidden)? {
                accepted = Some(m);
                break;
            }
        }
        masks.push(accepted.ok_or(MaskError::PlacementFailed {
            attempts: params.max_attempts,
            erosions: 0,
        })?);
    }
    Ok(masks)
}

/// `t1n` with every voxel of `mask` replaced by [`VOID_FILL`].
pub fn void_image(t1n: &Volume, mask: &MaskVolume) -> Result<Volume, MaskError> {
    if t1n.dims() != mask.dims() {
        return Err(VolumeError::Misaligned {
            op: "void_image",
            left: t1n.dims(),
            right: mask.dims(),
        }
        .into());
    }
    let data = t1n
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { VOID_FILL } else { v })
        .collect();
    Ok(t1n.with_data(data)?)
}

/// The five components of one training sample.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub case_id: String,
    pub variant: usize,
    pub t1n: Volume,
    pub t1n_voided: Volume,
    pub healthy: MaskVolume,
    pub unhealthy: MaskVolume,
    pub combined: MaskVolume,
}

impl TrainingSample {
    pub fn assemble(
        case_id: impl Into<String>,
        variant: usize,
        t1n: Volume,
        healthy: MaskVolume,
        unhealthy: MaskVolume,
    ) -> Result<Self, MaskError> {
        if !healthy.is_disjoint(&unhealthy)? {
            return Err(MaskError::Overlap);
        }
        let combined = healthy.union(&unhealthy)?.with_role(MaskRole::Combined);
        let t1n_voided = void_image(&t1n, &combined)?;
        Ok(Self {
            case_id: case_id.into(),
            variant,
            t1n,
            t1n_voided,
            healthy: healthy.with_role(MaskRole::Healthy),
            unhealthy: unhealthy.with_role(MaskRole::Unhealthy),
            combined,
        })
    }

    /// `{case}-v{variant}`.
    pub fn sample_id(&self) -> String {
        format!("{}-v{}", self.case_id, self.variant)
    }
}

/// All five samples of one scan.
pub fn build_samples<R: Rng + ?Sized>(
    case_id: &str,
    t1n: &Volume,
    tumor: &MaskVolume,
    params: &MaskGenParams,
    rng: &mut R,
) -> Result<Vec<TrainingSample>, MaskError> {
    let brain = brain_mask(t1n).union(tumor)?;
    let masks = generate_mask_set(&brain, tumor, params, rng)?;
    masks
        .into_iter()
        .enumerate()
        .map(|(k, h)| TrainingSample::assemble(case_id, k, t1n.clone(), h, tumor.clone()))
        .collect()
}
