//! Small synthetic scans for tests, benchmarks and smoke runs.
//!
//! A case is an ellipsoidal "brain" with smoothly varying intensity on a zero
//! background, plus a brighter ellipsoidal tumor somewhere inside it.

use rand::Rng;

use crate::rng::derived_rng;
use crate::volume::{MaskRole, MaskVolume, Volume};

#[derive(Clone, Debug)]
pub struct SyntheticCase {
    pub case_id: String,
    pub t1n: Volume,
    pub tumor: MaskVolume,
}

fn ellipsoid(dims: [usize; 3], centre: [f64; 3], radii: [f64; 3], role: MaskRole) -> MaskVolume {
    MaskVolume::from_fn(dims, role, |x, y, z| {
        let p = [x, y, z];
        (0..3).map(|a| ((p[a] as f64 - centre[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0
    })
    .expect("positive dims")
}

/// Deterministic synthetic case for `(seed, case_id)`.
pub fn synthetic_case(case_id: &str, dims: [usize; 3], seed: u64) -> SyntheticCase {
    let mut rng = derived_rng(seed, &format!("synthetic/{case_id}"));
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let brain_r = dims.map(|d| d as f64 * 0.45);
    let brain = ellipsoid(dims, centre, brain_r, MaskRole::Region);

    let tumor_r = dims.map(|d| (d as f64 * 0.12).max(1.0));
    let tumor_centre: [f64; 3] = std::array::from_fn(|a| {
        let span = brain_r[a] * 0.35;
        centre[a] + rng.random_range(-span..=span)
    });
    let tumor = ellipsoid(dims, tumor_centre, tumor_r, MaskRole::Unhealthy)
        .intersect(&brain)
        .expect("aligned");

    let freq: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.5));
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let level = rng.random_range(300.0..500.0);
    let t1n = Volume::from_fn(dims, |x, y, z| {
        let i = brain.index(x, y, z);
        if !brain.bits()[i] {
            return 0.0;
        }
        let p = [x, y, z];
        let texture: f64 = (0..3)
            .map(|a| (freq[a] * std::f64::consts::TAU * p[a] as f64 / dims[a] as f64 + phase[a]).sin())
            .sum();
        let v = level + 60.0 * texture + if tumor.bits()[i] { 250.0 } else { 0.0 };
        v.max(1.0) as f32
    })
    .expect("positive dims");

    SyntheticCase {
        case_id: case_id.to_string(),
        t1n,
        tumor,
    }
}
