//! 2×2×2 max pooling and nearest-neighbour ×2 upsampling.

use super::{Element, TensorError};

/// Returns pooled values and, for each output voxel, the flat input index of
/// its window maximum (first in scan order on ties).
pub fn maxpool3d_forward<T: Element>(
    input: &[T],
    [n, c, d, h, w]: [usize; 5],
) -> Result<(Vec<T>, Vec<usize>, [usize; 5]), TensorError> {
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidShape {
            op: "maxpool3d",
            reason: format!("spatial dims {:?} must each be divisible by 2", [d, h, w]),
        });
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut values = Vec::with_capacity(n * c * od * oh * ow);
    let mut argmax = Vec::with_capacity(values.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * x;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * x + dx;
                                if input[i] > input[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    values.push(input[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((values, argmax, [n, c, od, oh, ow]))
}

pub fn upsample3d_forward<T: Element>(
    input: &[T],
    [n, c, d, h, w]: [usize; 5],
) -> (Vec<T>, [usize; 5]) {
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                let row = base + ((z / 2) * h + y / 2) * w;
                for x in 0..ow {
                    out.push(input[row + x / 2]);
                }
            }
        }
    }
    (out, [n, c, od, oh, ow])
}

/// Each input voxel receives the sum of its eight replicas' gradients.
pub(crate) fn upsample3d_backward<T: Element>(grad_out: &[T], [n, c, d, h, w]: [usize; 5]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![T::zero(); n * c * d * h * w];
    for nc in 0..n * c {
        let ibase = nc * d * h * w;
        let obase = nc * 8 * d * h * w;
        for z in 0..2 * d {
            for y in 0..oh {
                let row = ibase + ((z / 2) * h + y / 2) * w;
                let orow = obase + (z * oh + y) * ow;
                for x in 0..ow {
                    g[row + x / 2] = g[row + x / 2] + grad_out[orow + x];
                }
            }
        }
    }
    g
}
