//! Stride-1 3D convolution with symmetric zero padding.
//!
//! Input channels are copied into a zero-padded buffer. An output voxel
//! `(d, h, w)` is then evaluated at flat index `d*sd + h*sh + w` of the padded
//! grid, and each kernel tap becomes a single axpy over a contiguous span
//! shifted by a constant offset. Positions in that span that do not map to
//! an output voxel are computed and discarded, which keeps the inner loops
//! free of bounds logic.

use rayon::prelude::*;

use super::{Element, TensorError};

/// Geometry shared by the forward and backward kernels.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    padded: [usize; 3],
    pad: usize,
}

impl Geometry {
    fn new(
        input_dims: [usize; 5],
        weight_dims: [usize; 5],
        padding: usize,
    ) -> Result<Self, TensorError> {
        let [n, cin, d, h, w] = input_dims;
        let [cout, wcin, kd, kh, kw] = weight_dims;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                expected: vec![cout, cin, kd, kh, kw],
                actual: weight_dims.to_vec(),
            });
        }
        let input = [d, h, w];
        let kernel = [kd, kh, kw];
        let mut output = [0; 3];
        let mut padded = [0; 3];
        for a in 0..3 {
            padded[a] = input[a] + 2 * padding;
            if kernel[a] == 0 || kernel[a] > padded[a] {
                return Err(TensorError::InvalidShape {
                    op: "conv3d",
                    reason: format!(
                        "kernel {kernel:?} does not fit padded input {:?}",
                        padded
                    ),
                });
            }
            output[a] = padded[a] - kernel[a] + 1;
        }
        Ok(Self {
            n,
            cin,
            cout,
            input,
            kernel,
            output,
            padded,
            pad: padding,
        })
    }

    fn strides(&self) -> (usize, usize) {
        (self.padded[1] * self.padded[2], self.padded[2])
    }

    fn padded_len(&self) -> usize {
        self.padded.iter().product()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Number of padded-grid positions spanned by the output voxels.
    fn span(&self) -> usize {
        let (sd, sh) = self.strides();
        (self.output[0] - 1) * sd + (self.output[1] - 1) * sh + self.output[2]
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn tap_offsets(&self) -> Vec<usize> {
        let (sd, sh) = self.strides();
        let mut offsets = Vec::with_capacity(self.taps());
        for kd in 0..self.kernel[0] {
            for kh in 0..self.kernel[1] {
                for kw in 0..self.kernel[2] {
                    offsets.push(kd * sd + kh * sh + kw);
                }
            }
        }
        offsets
    }

    fn output_dims(&self) -> [usize; 5] {
        [self.n, self.cout, self.output[0], self.output[1], self.output[2]]
    }

    /// Copies every `(n, c)` volume into the interior of a zeroed padded grid.
    fn pad_input<T: Element>(&self, input: &[T], channels: usize) -> Vec<T> {
        let plen = self.padded_len();
        let ilen = self.in_len();
        let (sd, sh) = self.strides();
        let p = self.pad;
        let [d, h, w] = self.input;
        let mut out = vec![T::zero(); self.n * channels * plen];
        out.chunks_mut(plen)
            .zip(input.chunks(ilen))
            .for_each(|(dst, src)| {
                for z in 0..d {
                    for y in 0..h {
                        let s = (z * h + y) * w;
                        let t = (z + p) * sd + (y + p) * sh + p;
                        dst[t..t + w].copy_from_slice(&src[s..s + w]);
                    }
                }
            });
        out
    }

    /// Scatters an output-shaped volume into span layout.
    fn spread_output<T: Element>(&self, src: &[T], dst: &mut [T]) {
        let (sd, sh) = self.strides();
        let [od, oh, ow] = self.output;
        for z in 0..od {
            for y in 0..oh {
                let s = (z * oh + y) * ow;
                let t = z * sd + y * sh;
                dst[t..t + ow].copy_from_slice(&src[s..s + ow]);
            }
        }
    }

    fn gather_output<T: Element>(&self, src: &[T], dst: &mut [T]) {
        let (sd, sh) = self.strides();
        let [od, oh, ow] = self.output;
        for z in 0..od {
            for y in 0..oh {
                let s = z * sd + y * sh;
                let t = (z * oh + y) * ow;
                dst[t..t + ow].copy_from_slice(&src[s..s + ow]);
            }
        }
    }
}

#[inline]
fn axpy<T: Element>(acc: &mut [T], a: T, x: &[T]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y = *y + a * v;
    }
}

#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn check_lengths<T>(
    input: &[T],
    input_dims: [usize; 5],
    weight: &[T],
    weight_dims: [usize; 5],
    bias: &[T],
) -> Result<(), TensorError> {
    if input.len() != input_dims.iter().product::<usize>() {
        return Err(TensorError::BufferLength {
            shape: input_dims.to_vec(),
            len: input.len(),
        });
    }
    if weight.len() != weight_dims.iter().product::<usize>() {
        return Err(TensorError::BufferLength {
            shape: weight_dims.to_vec(),
            len: weight.len(),
        });
    }
    if bias.len() != weight_dims[0] {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            expected: vec![weight_dims[0]],
            actual: vec![bias.len()],
        });
    }
    Ok(())
}

/// Returns the output buffer and its `[n, cout, d', h', w']` shape.
pub fn conv3d_forward<T: Element>(
    input: &[T],
    input_dims: [usize; 5],
    weight: &[T],
    weight_dims: [usize; 5],
    bias: &[T],
    padding: usize,
) -> Result<(Vec<T>, [usize; 5]), TensorError> {
    check_lengths(input, input_dims, weight, weight_dims, bias)?;
    let g = Geometry::new(input_dims, weight_dims, padding)?;
    let xpad = g.pad_input(input, g.cin);
    let plen = g.padded_len();
    let span = g.span();
    let taps = g.taps();
    let offsets = g.tap_offsets();
    let olen = g.out_len();

    let mut out = vec![T::zero(); g.n * g.cout * olen];
    out.par_chunks_mut(olen)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, co) = (idx / g.cout, idx % g.cout);
            let mut acc = vec![T::zero(); span];
            for ci in 0..g.cin {
                let x = &xpad[(n * g.cin + ci) * plen..][..plen];
                let wk = &weight[(co * g.cin + ci) * taps..][..taps];
                for (&wv, &off) in wk.iter().zip(&offsets) {
                    axpy(&mut acc, wv, &x[off..off + span]);
                }
            }
            g.gather_output(&acc, dst);
            let b = bias[co];
            dst.iter_mut().for_each(|v| *v = *v + b);
        });
    Ok((out, g.output_dims()))
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct Conv3dGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv3d_backward<T: Element>(
    input: &[T],
    input_dims: [usize; 5],
    weight: &[T],
    weight_dims: [usize; 5],
    padding: usize,
    grad_output: &[T],
) -> Result<Conv3dGrads<T>, TensorError> {
    let g = Geometry::new(input_dims, weight_dims, padding)?;
    let olen = g.out_len();
    if grad_output.len() != g.n * g.cout * olen {
        return Err(TensorError::BufferLength {
            shape: g.output_dims().to_vec(),
            len: grad_output.len(),
        });
    }
    let plen = g.padded_len();
    let span = g.span();
    let taps = g.taps();
    let offsets = g.tap_offsets();
    let xpad = g.pad_input(input, g.cin);

    // Output gradient in span layout; non-output positions stay zero, which
    // makes them drop out of both the weight and input reductions.
    let mut gspan = vec![T::zero(); g.n * g.cout * span];
    gspan
        .chunks_mut(span)
        .zip(grad_output.chunks(olen))
        .for_each(|(dst, src)| g.spread_output(src, dst));

    let bias: Vec<T> = (0..g.cout)
        .map(|co| {
            (0..g.n)
                .map(|n| grad_output[(n * g.cout + co) * olen..][..olen].iter().copied().sum::<T>())
                .sum()
        })
        .collect();

    let mut gweight = vec![T::zero(); weight.len()];
    gweight
        .par_chunks_mut(g.cin * taps)
        .enumerate()
        .for_each(|(co, dst)| {
            for n in 0..g.n {
                let gs = &gspan[(n * g.cout + co) * span..][..span];
                for ci in 0..g.cin {
                    let x = &xpad[(n * g.cin + ci) * plen..][..plen];
                    for (t, &off) in offsets.iter().enumerate() {
                        dst[ci * taps + t] = dst[ci * taps + t] + dot(gs, &x[off..off + span]);
                    }
                }
            }
        });

    let ilen = g.in_len();
    let (sd, sh) = g.strides();
    let p = g.pad;
    let [d, h, w] = g.input;
    let mut ginput = vec![T::zero(); g.n * g.cin * ilen];
    ginput
        .par_chunks_mut(ilen)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, ci) = (idx / g.cin, idx % g.cin);
            let mut acc = vec![T::zero(); plen];
            for co in 0..g.cout {
                let gs = &gspan[(n * g.cout + co) * span..][..span];
                let wk = &weight[(co * g.cin + ci) * taps..][..taps];
                for (&wv, &off) in wk.iter().zip(&offsets) {
                    axpy(&mut acc[off..off + span], wv, gs);
                }
            }
            for z in 0..d {
                for y in 0..h {
                    let s = (z + p) * sd + (y + p) * sh + p;
                    let t = (z * h + y) * w;
                    dst[t..t + w].copy_from_slice(&acc[s..s + w]);
                }
            }
        });

    Ok(Conv3dGrads {
        input: ginput,
        weight: gweight,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-nested-loop reference.
    fn naive(
        x: &[f64],
        [n, cin, d, h, w]: [usize; 5],
        k: &[f64],
        [cout, _, kd, kh, kw]: [usize; 5],
        b: &[f64],
        p: usize,
    ) -> Vec<f64> {
        let (od, oh, ow) = (d + 2 * p - kd + 1, h + 2 * p - kh + 1, w + 2 * p - kw + 1);
        let mut out = vec![0.0; n * cout * od * oh * ow];
        for bn in 0..n {
            for co in 0..cout {
                for z in 0..od {
                    for y in 0..oh {
                        for xw in 0..ow {
                            let mut s = b[co];
                            for ci in 0..cin {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for c in 0..kw {
                                            let iz = (z + a) as isize - p as isize;
                                            let iy = (y + bb) as isize - p as isize;
                                            let ix = (xw + c) as isize - p as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let xi = (((bn * cin + ci) * d + iz as usize) * h
                                                + iy as usize)
                                                * w
                                                + ix as usize;
                                            let ki = (((co * cin + ci) * kd + a) * kh + bb) * kw + c;
                                            s += x[xi] * k[ki];
                                        }
                                    }
                                }
                            }
                            out[(((bn * cout + co) * od + z) * oh + y) * ow + xw] = s;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_cube_gives_27_center_and_8_corner() {
        let x = vec![1.0f64; 27];
        let k = vec![1.0f64; 27];
        let (out, dims) = conv3d_forward(&x, [1, 1, 3, 3, 3], &k, [1, 1, 3, 3, 3], &[0.0], 1).unwrap();
        assert_eq!(dims, [1, 1, 3, 3, 3]);
        assert_eq!(out[13], 27.0);
        for corner in [0, 2, 6, 8, 18, 20, 24, 26] {
            assert_eq!(out[corner], 8.0);
        }
        assert_eq!(out, naive(&x, [1, 1, 3, 3, 3], &k, [1, 1, 3, 3, 3], &[0.0], 1));
    }

    #[test]
    fn non_cubic_kernel_and_padding_match_naive() {
        let dims = [2, 3, 4, 5, 6];
        let wd = [2, 3, 3, 1, 3];
        let x: Vec<f64> = (0..dims.iter().product()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..wd.iter().product()).map(|i| ((i * 7) % 5) as f64 * 0.25 - 0.5).collect();
        let b = [0.5, -1.0];
        for p in 0..3 {
            let (out, _) = conv3d_forward(&x, dims, &k, wd, &b, p).unwrap();
            assert_eq!(out, naive(&x, dims, &k, wd, &b, p), "padding {p}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let err = conv3d_forward(&[0.0f32; 16], [1, 2, 2, 2, 2], &[0.0; 27], [1, 1, 3, 3, 3], &[0.0], 1);
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
    }
}
