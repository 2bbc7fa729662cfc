//! Minimal single-file NIfTI-1 (`n+1`) reader and writer.
//!
//! Only the fields that affect voxel values are interpreted: `dim`,
//! `datatype`, `bitpix`, `vox_offset`, `scl_slope` and `scl_inter`. The rest
//! of the header is kept verbatim and written back unchanged.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use super::{MaskRole, MaskVolume, Volume};

pub const NIFTI_HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

// Byte offsets into the 348-byte header.
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("file holds {0} bytes, shorter than a NIfTI-1 header")]
    TooShort(usize),
    #[error("sizeof_hdr is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("magic {0:?} is not single-file NIfTI-1 (\"n+1\")")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bitpix {bitpix} does not match datatype {datatype}")]
    BitpixMismatch { datatype: i16, bitpix: i16 },
    #[error("invalid dims: {0}")]
    BadDims(String),
    #[error("voxel data truncated: need {needed} bytes after offset {offset}, file has {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("cannot write an empty volume with dims {0:?}")]
    EmptyVolume([usize; 3]),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NiftiError {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            NiftiError::TooShort(_) => "nifti.too_short",
            NiftiError::BadHeaderSize(_) => "nifti.bad_header_size",
            NiftiError::BadMagic(_) => "nifti.bad_magic",
            NiftiError::UnsupportedDatatype(_) => "nifti.unsupported_datatype",
            NiftiError::BitpixMismatch { .. } => "nifti.bitpix_mismatch",
            NiftiError::BadDims(_) => "nifti.bad_dims",
            NiftiError::Truncated { .. } => "nifti.truncated",
            NiftiError::EmptyVolume(_) => "nifti.empty_volume",
            NiftiError::Io { .. } => "nifti.io",
        }
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn put_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_bytes(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an in-memory NIfTI-1 file.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(NiftiError::TooShort(bytes.len()));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != NIFTI_HEADER_SIZE as i32 {
        return Err(NiftiError::BadHeaderSize(sizeof_hdr));
    }
    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }

    let ndim = i16_at(bytes, OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::BadDims(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let e = i16_at(bytes, OFF_DIM + 2 * i);
        if e < 1 {
            return Err(NiftiError::BadDims(format!("dim[{i}] = {e}")));
        }
        if i <= 3 {
            dims[i - 1] = e as usize;
        } else if e != 1 {
            return Err(NiftiError::BadDims(format!(
                "dim[{i}] = {e}; only single-frame volumes are supported"
            )));
        }
    }

    let datatype = i16_at(bytes, OFF_DATATYPE);
    let bitpix = i16_at(bytes, OFF_BITPIX);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };
    if bitpix as usize != 8 * width {
        return Err(NiftiError::BitpixMismatch { datatype, bitpix });
    }

    let vox_offset = f32_at(bytes, OFF_VOX_OFFSET);
    if !(vox_offset >= NIFTI_HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(NiftiError::BadDims(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let count: usize = dims.iter().product();
    let needed = count * width;
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(NiftiError::Truncated {
            offset,
            needed,
            available,
        });
    }
    let payload = &bytes[offset..offset + needed];
    let mut data: Vec<f32> = match datatype {
        DT_UINT8 => payload.iter().map(|&v| f32::from(v)).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };

    let slope = f32_at(bytes, OFF_SCL_SLOPE);
    let inter = f32_at(bytes, OFF_SCL_INTER);
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        data.iter_mut().for_each(|v| *v = slope * *v + inter);
    }

    let mut volume = Volume::new(dims, data).map_err(|e| NiftiError::BadDims(e.to_string()))?;
    let header: [u8; NIFTI_HEADER_SIZE] = bytes[..NIFTI_HEADER_SIZE].try_into().unwrap();
    volume.set_header(Some(Box::new(header)));
    Ok(volume)
}

/// Reads a `.nii` or `.nii.gz` file (compression is detected from content).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    parse_nifti(&load_bytes(path)?)
}

/// Reads a NIfTI file as a binary mask; nonzero voxels are set.
pub fn read_mask_nifti(path: impl AsRef<Path>, role: MaskRole) -> Result<MaskVolume, NiftiError> {
    Ok(MaskVolume::from_volume(&read_nifti(path)?, role))
}

fn default_header() -> [u8; NIFTI_HEADER_SIZE] {
    let mut h = [0u8; NIFTI_HEADER_SIZE];
    h[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    // pixdim[0] is qfac; unit spacing elsewhere
    for i in 0..4 {
        put_f32(&mut h, OFF_PIXDIM + 4 * i, 1.0);
    }
    h
}

/// Serializes a volume as float32 NIfTI-1 with identity scaling.
pub fn encode_nifti(volume: &Volume) -> Result<Vec<u8>, NiftiError> {
    let dims = volume.dims();
    if dims.contains(&0) || volume.is_empty() {
        return Err(NiftiError::EmptyVolume(dims));
    }
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::BadDims(format!("{dims:?} exceeds the int16 extent limit")));
    }
    let mut h = volume.header().copied().unwrap_or_else(default_header);
    h[0..4].copy_from_slice(&(NIFTI_HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, OFF_DIM, 3);
    for (i, &d) in dims.iter().enumerate() {
        put_i16(&mut h, OFF_DIM + 2 * (i + 1), d as i16);
    }
    for i in 4..8 {
        put_i16(&mut h, OFF_DIM + 2 * i, 1);
    }
    put_i16(&mut h, OFF_DATATYPE, DT_FLOAT32);
    put_i16(&mut h, OFF_BITPIX, 32);
    put_f32(&mut h, OFF_VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut h, OFF_SCL_SLOPE, 1.0);
    put_f32(&mut h, OFF_SCL_INTER, 0.0);
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);

    let mut out = Vec::with_capacity(DEFAULT_VOX_OFFSET + 4 * volume.len());
    out.extend_from_slice(&h);
    // empty extension block
    out.extend_from_slice(&[0u8; DEFAULT_VOX_OFFSET - NIFTI_HEADER_SIZE]);
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes float32 NIfTI-1; gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = encode_nifti(volume)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    if gz {
        let mut enc = GzEncoder::new(&mut file, Compression::default());
        enc.write_all(&bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
    } else {
        file.write_all(&bytes).map_err(io_err(path))?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Builds a NIfTI-1 byte image with arbitrary datatype and scaling.
    pub(crate) fn handmade(dims: [i16; 3], datatype: i16, bitpix: i16, slope: f32, inter: f32, payload: &[u8]) -> Vec<u8> {
        let mut h = default_header();
        put_i16(&mut h, OFF_DIM, 3);
        for (i, d) in dims.iter().enumerate() {
            put_i16(&mut h, OFF_DIM + 2 * (i + 1), *d);
        }
        put_i16(&mut h, OFF_DATATYPE, datatype);
        put_i16(&mut h, OFF_BITPIX, bitpix);
        put_f32(&mut h, OFF_VOX_OFFSET, 352.0);
        put_f32(&mut h, OFF_SCL_SLOPE, slope);
        put_f32(&mut h, OFF_SCL_INTER, inter);
        h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
        let mut out = h.to_vec();
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn int16_scaling_is_applied() {
        let bytes = handmade([1, 1, 1], DT_INT16, 16, 2.0, 1.0, &3i16.to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.data(), &[7.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let bytes = handmade([2, 1, 1], DT_UINT8, 8, 0.0, 5.0, &[3, 250]);
        assert_eq!(parse_nifti(&bytes).unwrap().data(), &[3.0, 250.0]);
    }

    #[test]
    fn malformed_headers_map_to_distinct_errors() {
        let good = handmade([2, 2, 2], DT_FLOAT32, 32, 1.0, 0.0, &[0u8; 32]);
        assert!(parse_nifti(&good).is_ok());

        let mut b = good.clone();
        b[0..4].copy_from_slice(&540i32.to_le_bytes());
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.bad_header_size");

        let mut b = good.clone();
        b[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"ni1\0");
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.bad_magic");

        let b = handmade([2, 2, 2], 64, 64, 1.0, 0.0, &[0u8; 64]);
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.unsupported_datatype");

        let b = handmade([2, 2, 2], DT_FLOAT32, 16, 1.0, 0.0, &[0u8; 32]);
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.bitpix_mismatch");

        let b = handmade([2, 0, 2], DT_FLOAT32, 32, 1.0, 0.0, &[]);
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.bad_dims");

        let b = &good[..good.len() - 1];
        assert_eq!(parse_nifti(b).unwrap_err().code(), "nifti.truncated");

        assert_eq!(parse_nifti(&good[..100]).unwrap_err().code(), "nifti.too_short");
    }

    #[test]
    fn multi_frame_rejected() {
        let mut b = handmade([1, 1, 1], DT_UINT8, 8, 1.0, 0.0, &[1, 2]);
        put_i16(&mut b, OFF_DIM, 4);
        put_i16(&mut b, OFF_DIM + 8, 2);
        assert_eq!(parse_nifti(&b).unwrap_err().code(), "nifti.bad_dims");
    }

    #[test]
    fn brats_dims_encode_into_header() {
        let v = Volume::filled([240, 240, 155], 0.0).unwrap();
        let bytes = encode_nifti(&v).unwrap();
        assert_eq!(i16_at(&bytes, OFF_DIM), 3);
        assert_eq!(i16_at(&bytes, OFF_DIM + 2), 240);
        assert_eq!(i16_at(&bytes, OFF_DIM + 4), 240);
        assert_eq!(i16_at(&bytes, OFF_DIM + 6), 155);
        assert_eq!(bytes.len(), 352 + 4 * 240 * 240 * 155);
    }

    #[test]
    fn passthrough_fields_survive_rewrite() {
        let mut b = handmade([2, 1, 1], DT_UINT8, 8, 1.0, 0.0, &[1, 2]);
        // sform_code and a descrip string
        put_i16(&mut b, 254, 1);
        b[148..155].copy_from_slice(b"subject");
        let v = parse_nifti(&b).unwrap();
        let out = encode_nifti(&v).unwrap();
        assert_eq!(i16_at(&out, 254), 1);
        assert_eq!(&out[148..155], b"subject");
        assert_eq!(i16_at(&out, OFF_DATATYPE), DT_FLOAT32);
    }
}
