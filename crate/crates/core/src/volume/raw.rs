//! Raw sidecar format: `<stem>.vraw` holds `u32` dx, dy, dz followed by
//! little-endian `f32` voxels (x fastest); `<stem>.vjson` holds the dims,
//! intensity domain and recorded maximum.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Domain, Volume, VolumeError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeta {
    pub dims: [usize; 3],
    pub domain: Domain,
    pub max_intensity: Option<f32>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_raw(volume: &Volume, stem: impl AsRef<Path>) -> Result<(), VolumeError> {
    let stem = stem.as_ref();
    let mut bytes = Vec::with_capacity(12 + 4 * volume.len());
    for d in volume.dims() {
        let d = u32::try_from(d).map_err(|_| VolumeError::Sidecar(format!("extent {d} exceeds u32")))?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(with_ext(stem, "vraw"), bytes)?;
    let meta = RawMeta {
        dims: volume.dims(),
        domain: volume.domain(),
        max_intensity: volume.max_intensity(),
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| VolumeError::Sidecar(e.to_string()))?;
    fs::write(with_ext(stem, "vjson"), json)?;
    Ok(())
}

pub fn read_raw(stem: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    let stem = stem.as_ref();
    let bytes = fs::read(with_ext(stem, "vraw"))?;
    if bytes.len() < 12 {
        return Err(VolumeError::Sidecar(format!("{} bytes is too short for a .vraw header", bytes.len())));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    }
    let body = &bytes[12..];
    if body.len() != 4 * dims.iter().product::<usize>() {
        return Err(VolumeError::Sidecar(format!(
            "payload of {} bytes does not match dims {dims:?}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let meta: RawMeta = serde_json::from_slice(&fs::read(with_ext(stem, "vjson"))?)
        .map_err(|e| VolumeError::Sidecar(e.to_string()))?;
    if meta.dims != dims {
        return Err(VolumeError::Sidecar(format!(
            "sidecar dims {:?} disagree with payload dims {dims:?}",
            meta.dims
        )));
    }
    let mut volume = Volume::with_domain(dims, data, meta.domain)?;
    volume.set_domain(meta.domain, meta.max_intensity);
    Ok(volume)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_domain_and_max() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Volume::from_fn([3, 2, 2], |x, y, z| (x + y + z) as f32 / 4.0).unwrap();
        v.set_domain(Domain::Unit, Some(812.5));
        let stem = dir.path().join("case");
        write_raw(&v, &stem).unwrap();
        let back = read_raw(&stem).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(back.domain(), Domain::Unit);
        assert_eq!(back.max_intensity(), Some(812.5));
    }

    #[test]
    fn mismatched_sidecar_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("case");
        write_raw(&Volume::filled([2, 2, 2], 1.0).unwrap(), &stem).unwrap();
        fs::write(
            with_ext(&stem, "vjson"),
            r#"{"dims":[2,2,3],"domain":"raw","max_intensity":null}"#,
        )
        .unwrap();
        assert!(read_raw(&stem).is_err());
    }
}
