//! File naming and discovery for case and sample directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use voxelpaint_core::masks::MaskGenParams;
use voxelpaint_core::volume::{read_mask_nifti, read_nifti};
use voxelpaint_core::{MaskRole, MaskVolume, Volume};

use crate::failure::MissingInput;

pub const T1N: &str = "-t1n";
pub const T1N_VOIDED: &str = "-t1n-voided";
pub const MASK_HEALTHY: &str = "-mask-healthy";
pub const MASK_UNHEALTHY: &str = "-mask-unhealthy";
pub const MASK: &str = "-mask";
pub const INFERENCE: &str = "-t1n-inference";

pub const MANIFEST: &str = "manifest.json";

/// `{dir}/{id}{suffix}.nii.gz`.
pub fn output_path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}{suffix}.nii.gz"))
}

/// Existing `{id}{suffix}.nii.gz` or `.nii` in `dir`.
pub fn find(dir: &Path, id: &str, suffix: &str) -> Option<PathBuf> {
    ["nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{id}{suffix}.{ext}")))
        .find(|p| p.is_file())
}

pub fn require(dir: &Path, id: &str, suffix: &str) -> Result<PathBuf> {
    find(dir, id, suffix).ok_or_else(|| MissingInput(dir.join(format!("{id}{suffix}.nii[.gz]"))).into())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    read_nifti(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_mask(path: &Path, role: MaskRole) -> Result<MaskVolume> {
    read_mask_nifti(path, role).with_context(|| format!("reading {}", path.display()))
}

pub fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(MissingInput(dir.to_path_buf()).into());
    }
    Ok(())
}

/// Directories searched by [`discover`]: `dir` and its subdirectories up
/// to two levels down.
const DISCOVER_DEPTH: usize = 2;

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Ids of every `{id}{suffix}.nii[.gz]` under `dir`, sorted, with the
/// directory each was found in. The shallowest match of an id wins.
pub fn discover(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    require_dir(dir)?;
    let mut level = vec![dir.to_path_buf()];
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    for depth in 0..=DISCOVER_DEPTH {
        let mut next = Vec::new();
        for d in &level {
            let mut names: Vec<String> = fs::read_dir(d)?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect();
            names.sort();
            for name in names {
                let stem = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"));
                if let Some(id) = stem.and_then(|s| s.strip_suffix(suffix)) {
                    if !id.is_empty() && !found.iter().any(|(f, _)| f == id) {
                        found.push((id.to_string(), d.clone()));
                    }
                }
            }
            if depth < DISCOVER_DEPTH {
                next.extend(subdirs(d)?);
            }
        }
        level = next;
    }
    found.sort();
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub case_id: String,
    pub variant: usize,
    /// Relative to the manifest.
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub case_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub case_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub masks: MaskGenParams,
    pub cases: Vec<ManifestCase>,
    pub samples: Vec<ManifestSample>,
    pub skipped: Vec<Skipped>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(MissingInput(path).into());
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
