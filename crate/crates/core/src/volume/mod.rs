//! Scalar and binary volumes, their file formats, and crop/stitch geometry.
//!
//! Voxels are stored x-fastest: the flat index of `(x, y, z)` is
//! `x + dx * (y + dy * z)`. This matches NIfTI on-disk order and maps onto a
//! `[1, 1, dz, dy, dx]` tensor without reordering.

mod geometry;
mod nifti;
mod raw;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use geometry::{crop_center, crop_mask, crop_volume, paste, stitch, CropSpec};
pub use nifti::{encode_nifti, parse_nifti, read_mask_nifti, read_nifti, write_nifti, NiftiError, NIFTI_HEADER_SIZE};
pub use raw::{read_raw, write_raw, RawMeta};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dims {0:?} must all be positive")]
    EmptyDims([usize; 3]),
    #[error("{len} voxels do not fill dims {dims:?}")]
    VoxelCount { dims: [usize; 3], len: usize },
    #[error("{op}: dims {left:?} and {right:?} are not aligned")]
    Misaligned {
        op: &'static str,
        left: [usize; 3],
        right: [usize; 3],
    },
    #[error("crop target {target:?} exceeds source {source_dims:?}")]
    CropTooLarge {
        source_dims: [usize; 3],
        target: [usize; 3],
    },
    #[error("invalid crop spec: {0}")]
    InvalidCrop(String),
    #[error("{domain:?} volume has voxel {value} outside its range")]
    OutOfDomain { domain: Domain, value: f32 },
    #[error("sidecar metadata: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Intensity domain of a volume's voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Scanner intensities.
    Raw,
    /// Scaled into `[0, 1]`.
    Unit,
    /// Scaled into `[-1, 1]`.
    SignedUnit,
}

impl Domain {
    fn range(self) -> Option<(f32, f32)> {
        match self {
            Domain::Raw => None,
            Domain::Unit => Some((0.0, 1.0)),
            Domain::SignedUnit => Some((-1.0, 1.0)),
        }
    }
}

pub(crate) fn check_dims(dims: [usize; 3], len: usize) -> Result<(), VolumeError> {
    if dims.contains(&0) {
        return Err(VolumeError::EmptyDims(dims));
    }
    if dims.iter().product::<usize>() != len {
        return Err(VolumeError::VoxelCount { dims, len });
    }
    Ok(())
}

/// Dense scalar 3D field.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
    domain: Domain,
    max_intensity: Option<f32>,
    /// Original NIfTI header, kept so orientation fields survive a rewrite.
    header: Option<Box<[u8; NIFTI_HEADER_SIZE]>>,
}

impl Volume {
    /// Raw-domain volume.
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self, VolumeError> {
        check_dims(dims, data.len())?;
        Ok(Self {
            dims,
            data,
            domain: Domain::Raw,
            max_intensity: None,
            header: None,
        })
    }

    /// Volume in a given domain; voxels must lie in that domain's range.
    pub fn with_domain(dims: [usize; 3], data: Vec<f32>, domain: Domain) -> Result<Self, VolumeError> {
        let mut v = Self::new(dims, data)?;
        if let Some((lo, hi)) = domain.range() {
            if let Some(&bad) = v.data.iter().find(|x| !(lo..=hi).contains(*x)) {
                return Err(VolumeError::OutOfDomain { domain, value: bad });
            }
        }
        v.domain = domain;
        Ok(v)
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Result<Self, VolumeError> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self, VolumeError> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Maximum recorded by normalization, used to invert it.
    pub fn max_intensity(&self) -> Option<f32> {
        self.max_intensity
    }

    pub(crate) fn set_domain(&mut self, domain: Domain, max_intensity: Option<f32>) {
        self.domain = domain;
        self.max_intensity = max_intensity;
    }

    pub fn header(&self) -> Option<&[u8; NIFTI_HEADER_SIZE]> {
        self.header.as_deref()
    }

    pub(crate) fn set_header(&mut self, header: Option<Box<[u8; NIFTI_HEADER_SIZE]>>) {
        self.header = header;
    }

    /// Copies geometry metadata (header) from another volume.
    pub fn with_header_of(mut self, other: &Volume) -> Self {
        self.header = other.header.clone();
        self
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Same voxels and domain, new buffer contents.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self, VolumeError> {
        check_dims(self.dims, data.len())?;
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    /// View as a `[1, 1, dz, dy, dx]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [dx, dy, dz] = self.dims;
        Tensor::new(vec![1, 1, dz, dy, dx], self.data.clone()).expect("dims match voxel count")
    }
}

/// Role a binary mask plays in a training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRole {
    Healthy,
    Unhealthy,
    Combined,
    /// Any other region (brain extent, evaluation region).
    Region,
}

/// Binary 3D field aligned to a volume grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskVolume {
    dims: [usize; 3],
    bits: Vec<bool>,
    role: MaskRole,
}

impl MaskVolume {
    pub fn new(dims: [usize; 3], bits: Vec<bool>, role: MaskRole) -> Result<Self, VolumeError> {
        check_dims(dims, bits.len())?;
        Ok(Self { dims, bits, role })
    }

    pub fn empty(dims: [usize; 3], role: MaskRole) -> Result<Self, VolumeError> {
        Self::new(dims, vec![false; dims.iter().product()], role)
    }

    pub fn from_fn(
        dims: [usize; 3],
        role: MaskRole,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self, VolumeError> {
        let mut bits = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, bits, role)
    }

    /// Nonzero voxels of `volume` become set.
    pub fn from_volume(volume: &Volume, role: MaskRole) -> Self {
        Self {
            dims: volume.dims,
            bits: volume.data.iter().map(|&v| v != 0.0).collect(),
            role,
        }
    }

    /// `{0, 1}`-valued raw volume.
    pub fn to_volume(&self) -> Volume {
        Volume::new(self.dims, self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .expect("mask dims are valid")
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        self.to_volume().to_tensor()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn with_role(mut self, role: MaskRole) -> Self {
        self.role = role;
        self
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn aligned(&self, other: &MaskVolume, op: &'static str) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::Misaligned {
                op,
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &MaskVolume, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<Self, VolumeError> {
        self.aligned(other, op)?;
        Ok(Self {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
            role: self.role,
        })
    }

    pub fn union(&self, other: &MaskVolume) -> Result<Self, VolumeError> {
        self.zip_with(other, "union", |a, b| a || b)
    }

    pub fn intersect(&self, other: &MaskVolume) -> Result<Self, VolumeError> {
        self.zip_with(other, "intersect", |a, b| a && b)
    }

    /// Voxels set here but not in `other`.
    pub fn difference(&self, other: &MaskVolume) -> Result<Self, VolumeError> {
        self.zip_with(other, "difference", |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            bits: self.bits.iter().map(|&b| !b).collect(),
            role: self.role,
        }
    }

    pub fn is_disjoint(&self, other: &MaskVolume) -> Result<bool, VolumeError> {
        self.aligned(other, "is_disjoint")?;
        Ok(!self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b))
    }

    /// True when every set voxel here is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskVolume) -> Result<bool, VolumeError> {
        self.aligned(other, "is_subset_of")?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    /// Inclusive-exclusive bounding box `(lo, hi)` of set voxels.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = self.dims;
        let mut hi = [0; 3];
        let mut any = false;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.get(x, y, z) {
                        any = true;
                        for (a, v) in [x, y, z].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v + 1);
                        }
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }
}
