use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CaseMetrics, MetricsError};

/// Five-number description of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

/// Linear interpolation between order statistics at rank `q · (n − 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SummaryStats {
    /// Mean, population standard deviation and interpolated quartiles.
    pub fn of(values: &[f64]) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::NoCases);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            std: var.sqrt(),
            p25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            p75: quantile(&sorted, 0.75),
        })
    }

    fn rows(&self) -> [f64; 5] {
        [self.mean, self.std, self.p25, self.median, self.p75]
    }
}

/// Aggregate over a validation run, laid out MSE, PSNR, SSIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    #[serde(default)]
    pub cases: usize,
    pub mse: SummaryStats,
    /// Absent when every case had zero error.
    pub psnr: Option<SummaryStats>,
    pub ssim: SummaryStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<SummaryStats>,
    /// Cases left out of the PSNR statistics because their MSE was zero.
    #[serde(default)]
    pub psnr_infinite: usize,
}

/// Summary statistics in case-id order.
pub fn aggregate_stats(cases: &[CaseMetrics]) -> Result<Summary, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::NoCases);
    }
    let mut ordered: Vec<&CaseMetrics> = cases.iter().collect();
    ordered.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let col = |f: fn(&CaseMetrics) -> f64| ordered.iter().map(|c| f(c)).collect::<Vec<_>>();
    let finite_psnr: Vec<f64> = ordered.iter().filter(|c| !c.psnr_infinite).map(|c| c.psnr).collect();
    Ok(Summary {
        cases: cases.len(),
        mse: SummaryStats::of(&col(|c| c.mse))?,
        psnr: (!finite_psnr.is_empty()).then(|| SummaryStats::of(&finite_psnr)).transpose()?,
        ssim: SummaryStats::of(&col(|c| c.ssim))?,
        rmse: Some(SummaryStats::of(&col(|c| c.rmse))?),
        psnr_infinite: cases.len() - finite_psnr.len(),
    })
}

/// Shortest round-trip form when it has at most ten significant digits,
/// otherwise nine significant digits.
pub fn format_stat(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v}");
    let digits = s.trim_start_matches('-').replace('.', "");
    let significant = digits.trim_start_matches('0').len();
    if significant <= 10 {
        return s;
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const TABLE_ROWS: [&str; 5] = ["Mean", "Standard deviation", "25 quantile", "Median", "75 quantile"];

/// Plain-text table: one row per statistic, columns MSE, PSNR, SSIM.
pub fn render_table(summary: &Summary) -> String {
    let none = "-".to_string();
    let mse = summary.mse.rows();
    let psnr = summary.psnr.map(|p| p.rows());
    let ssim = summary.ssim.rows();
    let mut out = String::new();
    let _ = writeln!(out, "{:<20}{:>16}{:>16}{:>16}", "", "MSE", "PSNR", "SSIM");
    for (i, label) in TABLE_ROWS.iter().enumerate() {
        let p = psnr.map(|r| format_stat(r[i])).unwrap_or_else(|| none.clone());
        let _ = writeln!(
            out,
            "{:<20}{:>16}{:>16}{:>16}",
            label,
            format_stat(mse[i]),
            p,
            format_stat(ssim[i])
        );
    }
    if summary.psnr_infinite > 0 {
        let _ = writeln!(out, "({} case(s) with zero error excluded from PSNR)", summary.psnr_infinite);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, mse: f64, ssim: f64) -> CaseMetrics {
        let psnr = super::super::psnr(mse);
        CaseMetrics {
            case_id: id.into(),
            ssim,
            psnr,
            psnr_infinite: psnr.is_infinite(),
            mse,
            rmse: mse.sqrt(),
            region_voxels: 1,
        }
    }

    #[test]
    fn quartiles_interpolate() {
        let s = SummaryStats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.p25, 1.75);
        assert_eq!(s.p75, 3.25);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_case() {
        let s = SummaryStats::of(&[0.7]).unwrap();
        assert_eq!((s.mean, s.std, s.p25, s.median, s.p75), (0.7, 0.0, 0.7, 0.7, 0.7));
        assert!(matches!(SummaryStats::of(&[]), Err(MetricsError::NoCases)));
    }

    #[test]
    fn infinite_psnr_counted_separately() {
        let s = aggregate_stats(&[case("b", 0.0, 1.0), case("a", 0.01, 0.9)]).unwrap();
        assert_eq!(s.psnr_infinite, 1);
        assert!((s.psnr.unwrap().mean - 20.0).abs() < 1e-12);
        assert_eq!(s.cases, 2);
        let json = serde_json::to_string(&s).unwrap();
        let (m, p, q) = (json.find("\"mse\"").unwrap(), json.find("\"psnr\"").unwrap(), json.find("\"ssim\"").unwrap());
        assert!(m < p && p < q);
    }

    #[test]
    fn formatting() {
        assert_eq!(format_stat(0.87300897), "0.87300897");
        assert_eq!(format_stat(21.7267790), "21.726779");
        assert_eq!(format_stat(0.1 + 0.2), "0.3");
        assert_eq!(format_stat(2.0f64.sqrt()), "1.41421356");
        assert_eq!(format_stat(f64::INFINITY), "inf");
    }
}
