//! Structural similarity over 3D volumes.
//!
//! Local statistics come from a separable Gaussian window evaluated at every
//! position where the window fits entirely inside the volume (no padding).
//! The index is the mean of the local SSIM map over those positions.
//! Gradients are propagated through the local means and second moments,
//! using the adjoint of the same separable filter.

use serde::{Deserialize, Serialize};

use crate::tensor::{Element, TensorError};

const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Window edge length in voxels; must be odd.
    pub window: usize,
    /// Standard deviation of the Gaussian window.
    pub sigma: f64,
    /// Dynamic range `L` of the data.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            sigma: 1.5,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Parameters for data in `[-1, 1]`.
    pub fn signed_unit() -> Self {
        Self {
            dynamic_range: 2.0,
            ..Self::default()
        }
    }

    pub fn unit() -> Self {
        Self::default()
    }

    pub fn c1(&self) -> f64 {
        (K1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (K2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1D Gaussian taps; the 3D window is their outer product and
    /// therefore also sums to one.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - r;
                (-x * x / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), TensorError> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "ssim3d",
                reason: format!("window size {} must be odd", self.window),
            });
        }
        if !(self.sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "ssim3d",
                reason: "sigma and dynamic range must be positive".into(),
            });
        }
        if dims.iter().any(|&e| e < self.window) {
            return Err(TensorError::InvalidShape {
                op: "ssim3d",
                reason: format!(
                    "volume {dims:?} is smaller than the {}³ window",
                    self.window
                ),
            });
        }
        Ok(())
    }
}

/// Valid-mode correlation along one axis of a `[d, h, w]` volume.
fn correlate_axis<T: Element>(src: &[T], dims: [usize; 3], axis: usize, taps: &[T]) -> (Vec<T>, [usize; 3]) {
    let k = taps.len();
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] - k + 1;
    let [d, h, w] = dims;
    let [od, oh, ow] = out_dims;
    let stride = [h * w, w, 1][axis];
    let mut out = vec![T::zero(); od * oh * ow];
    let mut i = 0;
    for z in 0..od {
        for y in 0..oh {
            for x in 0..ow {
                let base = (z * h + y) * w + x;
                let mut s = T::zero();
                for (t, &c) in taps.iter().enumerate() {
                    s = s + c * src[base + t * stride];
                }
                out[i] = s;
                i += 1;
            }
        }
    }
    debug_assert_eq!(d * h * w, src.len());
    (out, out_dims)
}

/// Adjoint of [`correlate_axis`]: scatters back onto the larger grid.
fn correlate_axis_adjoint<T: Element>(
    grad: &[T],
    out_dims: [usize; 3],
    axis: usize,
    taps: &[T],
) -> (Vec<T>, [usize; 3]) {
    let k = taps.len();
    let mut dims = out_dims;
    dims[axis] = out_dims[axis] + k - 1;
    let [_, h, w] = dims;
    let [od, oh, ow] = out_dims;
    let stride = [h * w, w, 1][axis];
    let mut src = vec![T::zero(); dims.iter().product()];
    let mut i = 0;
    for z in 0..od {
        for y in 0..oh {
            for x in 0..ow {
                let base = (z * h + y) * w + x;
                let g = grad[i];
                for (t, &c) in taps.iter().enumerate() {
                    src[base + t * stride] = src[base + t * stride] + c * g;
                }
                i += 1;
            }
        }
    }
    (src, dims)
}

fn filter<T: Element>(src: &[T], dims: [usize; 3], taps: &[T]) -> (Vec<T>, [usize; 3]) {
    let (a, da) = correlate_axis(src, dims, 2, taps);
    let (b, db) = correlate_axis(&a, da, 1, taps);
    correlate_axis(&b, db, 0, taps)
}

fn filter_adjoint<T: Element>(grad: &[T], out_dims: [usize; 3], taps: &[T]) -> Vec<T> {
    let (a, da) = correlate_axis_adjoint(grad, out_dims, 0, taps);
    let (b, db) = correlate_axis_adjoint(&a, da, 1, taps);
    correlate_axis_adjoint(&b, db, 2, taps).0
}

/// Local first and second moments at every valid window position.
struct LocalStats<T> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    e_xx: Vec<T>,
    e_yy: Vec<T>,
    e_xy: Vec<T>,
    dims: [usize; 3],
}

impl<T: Element> LocalStats<T> {
    fn compute(x: &[T], y: &[T], dims: [usize; 3], taps: &[T]) -> Self {
        let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
        let (mu_x, out_dims) = filter(x, dims, taps);
        Self {
            mu_x,
            mu_y: filter(y, dims, taps).0,
            e_xx: filter(&xx, dims, taps).0,
            e_yy: filter(&yy, dims, taps).0,
            e_xy: filter(&xy, dims, taps).0,
            dims: out_dims,
        }
    }
}

/// Numerator and denominator factors of the local index at one position.
#[inline]
fn local_terms<T: Element>(mx: T, my: T, exx: T, eyy: T, exy: T, c1: T, c2: T) -> [T; 4] {
    let two = T::lit(2.0);
    let a1 = two * (mx * my) + c1;
    let a2 = two * (exy - mx * my) + c2;
    let b1 = mx * mx + my * my + c1;
    let b2 = (exx - mx * mx) + (eyy - my * my) + c2;
    [a1, a2, b1, b2]
}

fn check_inputs<T>(x: &[T], y: &[T], dims: [usize; 3], params: &SsimParams) -> Result<(), TensorError> {
    let n: usize = dims.iter().product();
    if x.len() != n || y.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "ssim3d",
            expected: dims.to_vec(),
            actual: vec![x.len(), y.len()],
        });
    }
    params.validate(dims)
}

/// Mean SSIM of two `[d, h, w]` volumes.
pub fn ssim3d<T: Element>(x: &[T], y: &[T], dims: [usize; 3], params: &SsimParams) -> Result<T, TensorError> {
    check_inputs(x, y, dims, params)?;
    let taps: Vec<T> = params.taps().into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(params.c1()), T::lit(params.c2()));
    let s = LocalStats::compute(x, y, dims, &taps);
    let count = s.mu_x.len();
    let total: T = (0..count)
        .map(|i| {
            let [a1, a2, b1, b2] = local_terms(s.mu_x[i], s.mu_y[i], s.e_xx[i], s.e_yy[i], s.e_xy[i], c1, c2);
            (a1 * a2) / (b1 * b2)
        })
        .sum();
    Ok(total / T::lit(count as f64))
}

/// Mean SSIM and its gradients with respect to both inputs.
pub fn ssim3d_with_grad<T: Element>(
    x: &[T],
    y: &[T],
    dims: [usize; 3],
    params: &SsimParams,
) -> Result<(T, Vec<T>, Vec<T>), TensorError> {
    check_inputs(x, y, dims, params)?;
    let taps: Vec<T> = params.taps().into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(params.c1()), T::lit(params.c2()));
    let two = T::lit(2.0);
    let s = LocalStats::compute(x, y, dims, &taps);
    let count = s.mu_x.len();
    let inv_count = T::lit(count as f64).recip();

    // Partials of the averaged index with respect to each local statistic.
    let mut g_mx = vec![T::zero(); count];
    let mut g_my = vec![T::zero(); count];
    let mut g_exx = vec![T::zero(); count];
    let mut g_eyy = vec![T::zero(); count];
    let mut g_exy = vec![T::zero(); count];
    let mut total = T::zero();
    for i in 0..count {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let [a1, a2, b1, b2] = local_terms(mx, my, s.e_xx[i], s.e_yy[i], s.e_xy[i], c1, c2);
        let num = a1 * a2;
        let den = b1 * b2;
        let v = num / den;
        total = total + v;
        let inv_den = den.recip() * inv_count;
        // d num / d mx = 2 my a2 - 2 my a1 ; d den / d mx = 2 mx b2 - 2 mx b1
        let dn_mx = two * my * (a2 - a1);
        let dd_mx = two * mx * (b2 - b1);
        let dn_my = two * mx * (a2 - a1);
        let dd_my = two * my * (b2 - b1);
        g_mx[i] = (dn_mx - v * dd_mx) * inv_den;
        g_my[i] = (dn_my - v * dd_my) * inv_den;
        g_exx[i] = -v * b1 * inv_den;
        g_eyy[i] = -v * b1 * inv_den;
        g_exy[i] = two * a1 * inv_den;
    }

    let back = |g: &[T]| filter_adjoint(g, s.dims, &taps);
    let (bmx, bmy, bxx, byy, bxy) = (back(&g_mx), back(&g_my), back(&g_exx), back(&g_eyy), back(&g_exy));
    let gx = (0..x.len())
        .map(|j| bmx[j] + two * x[j] * bxx[j] + y[j] * bxy[j])
        .collect();
    let gy = (0..y.len())
        .map(|j| bmy[j] + two * y[j] * byy[j] + x[j] * bxy[j])
        .collect();
    Ok((total * inv_count, gx, gy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_follow_dynamic_range() {
        let p = SsimParams::signed_unit();
        assert!((p.c1() - 4e-4).abs() < 1e-18);
        assert!((p.c2() - 36e-4).abs() < 1e-18);
        let s: f64 = SsimParams::default().taps().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn even_window_and_small_volume_rejected() {
        let p = SsimParams {
            window: 6,
            ..SsimParams::default()
        };
        assert!(p.validate([8, 8, 8]).is_err());
        assert!(SsimParams::default().validate([8, 6, 8]).is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        // <F a, b> = <a, F^T b>
        let dims = [9, 8, 10];
        let taps: Vec<f64> = SsimParams::default().taps();
        let a: Vec<f64> = (0..720).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
        let (fa, od) = filter(&a, dims, &taps);
        let b: Vec<f64> = (0..fa.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let ftb = filter_adjoint(&b, od, &taps);
        let lhs: f64 = fa.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&ftb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
