//! Instance normalization over the spatial voxels of each `(n, c)` pair.

use super::Element;

/// Forward result plus the statistics the backward pass needs.
#[derive(Clone, Debug)]
pub(crate) struct InstanceNormOut<T> {
    pub output: Vec<T>,
    /// Normalized input before the affine transform.
    pub xhat: Vec<T>,
    /// `1 / sqrt(var + eps)` per `(n, c)`.
    pub inv_std: Vec<T>,
}

pub(crate) fn instance_norm_forward<T: Element>(
    input: &[T],
    [n, c, d, h, w]: [usize; 5],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> InstanceNormOut<T> {
    let vol = d * h * w;
    let count = T::lit(vol as f64);
    let mut output = vec![T::zero(); input.len()];
    let mut xhat = vec![T::zero(); input.len()];
    let mut inv_std = Vec::with_capacity(n * c);
    for (i, ((src, dst), xh)) in input
        .chunks(vol)
        .zip(output.chunks_mut(vol))
        .zip(xhat.chunks_mut(vol))
        .enumerate()
    {
        let ch = i % c;
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let is = (var + eps).sqrt().recip();
        for ((o, x), &v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
            *x = (v - mean) * is;
            *o = gamma[ch] * *x + beta[ch];
        }
        inv_std.push(is);
    }
    InstanceNormOut {
        output,
        xhat,
        inv_std,
    }
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn instance_norm_backward<T: Element>(
    grad_out: &[T],
    [_, c, d, h, w]: [usize; 5],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let vol = d * h * w;
    let count = T::lit(vol as f64);
    let mut dx = vec![T::zero(); grad_out.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, ((g, xh), out)) in grad_out
        .chunks(vol)
        .zip(xhat.chunks(vol))
        .zip(dx.chunks_mut(vol))
        .enumerate()
    {
        let ch = i % c;
        let sum_g = g.iter().copied().sum::<T>();
        let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        dgamma[ch] = dgamma[ch] + sum_gx;
        dbeta[ch] = dbeta[ch] + sum_g;
        let mean_g = sum_g / count;
        let mean_gx = sum_gx / count;
        let scale = gamma[ch] * inv_std[i];
        for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
            *o = scale * (gv - mean_g - xv * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}
