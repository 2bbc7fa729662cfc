use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ssim::{ssim3d, SsimParams};
use crate::volume::{MaskVolume, Volume};

/// Scores of one case, computed on intensities scaled by `1 / max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub ssim: f64,
    /// `+inf` when `mse == 0`; see `psnr_infinite`.
    pub psnr: f64,
    pub psnr_infinite: bool,
    pub mse: f64,
    pub rmse: f64,
    pub region_voxels: usize,
}

/// Peak signal-to-noise ratio for unit peak; `+inf` at zero error.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Largest voxel of `gt` inside `region`.
pub fn region_max(gt: &Volume, region: &MaskVolume) -> Result<f32, MetricsError> {
    check_aligned(gt.dims(), region.dims())?;
    gt.data()
        .iter()
        .zip(region.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .reduce(f32::max)
        .ok_or(MetricsError::EmptyRegion)
}

fn check_aligned(a: [usize; 3], b: [usize; 3]) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::Misaligned { left: a, right: b });
    }
    Ok(())
}

/// Bounding box of `mask`, grown symmetrically (then shifted inside the
/// grid) until every side is at least `min_side`.
pub fn evaluation_box(mask: &MaskVolume, min_side: usize) -> Option<([usize; 3], [usize; 3])> {
    let (mut lo, mut hi) = mask.bounding_box()?;
    let dims = mask.dims();
    for a in 0..3 {
        let want = min_side.min(dims[a]);
        let side = hi[a] - lo[a];
        if side < want {
            let grow = want - side;
            let new_lo = lo[a].saturating_sub(grow / 2);
            let new_lo = new_lo.min(dims[a] - want);
            lo[a] = new_lo;
            hi[a] = new_lo + want;
        }
    }
    Some((lo, hi))
}

fn extract(v: &[f64], dims: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]));
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            let row = dims[0] * (y + dims[1] * z);
            out.extend_from_slice(&v[row + lo[0]..row + hi[0]]);
        }
    }
    out
}

/// SSIM, PSNR, MSE and RMSE of `pred` against `gt`.
///
/// Both volumes are divided by `gt_max`. MSE (and so PSNR and RMSE) uses
/// exactly the voxels of `healthy`; SSIM uses unit dynamic range over the
/// bounding box of `healthy`, widened to the window size when smaller.
pub fn evaluate_case(
    pred: &Volume,
    gt: &Volume,
    healthy: &MaskVolume,
    gt_max: f32,
    case_id: &str,
) -> Result<CaseMetrics, MetricsError> {
    check_aligned(pred.dims(), gt.dims())?;
    check_aligned(gt.dims(), healthy.dims())?;
    if !(gt_max.is_finite() && gt_max > 0.0) {
        return Err(MetricsError::InvalidMax(gt_max));
    }
    let inv = 1.0 / f64::from(gt_max);
    let p: Vec<f64> = pred.data().iter().map(|&v| f64::from(v) * inv).collect();
    let g: Vec<f64> = gt.data().iter().map(|&v| f64::from(v) * inv).collect();

    let mut sq = 0.0;
    let mut count = 0usize;
    for ((a, b), &m) in p.iter().zip(&g).zip(healthy.bits()) {
        if m {
            sq += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    let mse = sq / count as f64;

    let params = SsimParams::unit();
    let (lo, hi) = evaluation_box(healthy, params.window).ok_or(MetricsError::EmptyRegion)?;
    let dims = gt.dims();
    let bx = extract(&p, dims, lo, hi);
    let by = extract(&g, dims, lo, hi);
    let ssim = ssim3d(&bx, &by, [hi[2] - lo[2], hi[1] - lo[1], hi[0] - lo[0]], &params)?;

    let psnr_value = psnr(mse);
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        ssim,
        psnr: psnr_value,
        psnr_infinite: psnr_value.is_infinite(),
        mse,
        rmse: mse.sqrt(),
        region_voxels: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::MaskRole;

    fn gt() -> Volume {
        Volume::from_fn([10, 10, 10], |x, y, z| 0.2 + 0.05 * ((x + 2 * y + 3 * z) % 7) as f32).unwrap()
    }

    fn region() -> MaskVolume {
        MaskVolume::from_fn([10, 10, 10], MaskRole::Healthy, |x, y, z| x >= 2 && x < 6 && y >= 3 && y < 8 && z < 4).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gt();
        let m = evaluate_case(&g, &g, &region(), 1.0, "c").unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.ssim, 1.0);
        assert!(m.psnr_infinite && m.psnr.is_infinite());
        assert_eq!(m.region_voxels, 80);
    }

    #[test]
    fn uniform_error() {
        // offset 0.2 over max 2 is a scaled error of 0.1
        let g = gt();
        let p = g.with_data(g.data().iter().map(|v| v + 0.2).collect()).unwrap();
        let m = evaluate_case(&p, &g, &region(), 2.0, "c").unwrap();
        assert!((m.mse - 0.01).abs() < 1e-7);
        assert!((m.psnr - 20.0).abs() < 1e-5);
        assert!((m.rmse - 0.1).abs() < 1e-7);
        assert!(!m.psnr_infinite);
    }

    #[test]
    fn mse_ignores_voxels_outside_region() {
        let g = gt();
        let r = region();
        let p = g
            .with_data(g.data().iter().zip(r.bits()).map(|(&v, &m)| if m { v + 0.1 } else { 5.0 }).collect())
            .unwrap();
        let q = g
            .with_data(g.data().iter().zip(r.bits()).map(|(&v, &m)| if m { v + 0.1 } else { -3.0 }).collect())
            .unwrap();
        let a = evaluate_case(&p, &g, &r, 1.0, "c").unwrap();
        let b = evaluate_case(&q, &g, &r, 1.0, "c").unwrap();
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.psnr, b.psnr);
        assert_eq!(a.rmse, b.rmse);
    }

    #[test]
    fn box_grows_to_window() {
        let mut m = MaskVolume::empty([10, 10, 10], MaskRole::Healthy).unwrap();
        m.set(0, 9, 4, true);
        let (lo, hi) = evaluation_box(&m, 7).unwrap();
        assert_eq!(lo, [0, 3, 1]);
        assert_eq!(hi, [7, 10, 8]);
    }

    #[test]
    fn empty_region_and_bad_max_rejected() {
        let g = gt();
        let empty = MaskVolume::empty([10, 10, 10], MaskRole::Healthy).unwrap();
        assert!(matches!(evaluate_case(&g, &g, &empty, 1.0, "c"), Err(MetricsError::EmptyRegion)));
        assert!(matches!(evaluate_case(&g, &g, &region(), 0.0, "c"), Err(MetricsError::InvalidMax(_))));
    }
}
