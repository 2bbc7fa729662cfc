//! Box (Chebyshev) dilation and erosion of binary masks.

use crate::volume::MaskVolume;

/// One-axis running filter: `grow` ORs over a `2r+1` window, otherwise ANDs
/// with out-of-bounds treated as unset.
fn sweep(bits: &[bool], dims: [usize; 3], axis: usize, r: usize, grow: bool) -> Vec<bool> {
    let [dx, dy, _] = dims;
    let stride = [1, dx, dx * dy][axis];
    let n = dims[axis];
    let mut out = vec![false; bits.len()];
    let lines: Vec<usize> = (0..bits.len()).filter(|&i| (i / stride) % n == 0).collect();
    for start in lines {
        // prefix counts along the line make each window O(1)
        let mut prefix = vec![0usize; n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] + usize::from(bits[start + k * stride]);
        }
        for k in 0..n {
            let lo = k.saturating_sub(r);
            let hi = (k + r + 1).min(n);
            let set = prefix[hi] - prefix[lo];
            out[start + k * stride] = if grow {
                set > 0
            } else {
                k >= r && k + r < n && set == 2 * r + 1
            };
        }
    }
    out
}

fn separable(mask: &MaskVolume, r: usize, grow: bool) -> MaskVolume {
    if r == 0 {
        return mask.clone();
    }
    let dims = mask.dims();
    let mut bits = mask.bits().to_vec();
    for axis in 0..3 {
        bits = sweep(&bits, dims, axis, r, grow);
    }
    MaskVolume::new(dims, bits, mask.role()).expect("dims unchanged")
}

/// Sets every voxel within Chebyshev distance `r` of a set voxel.
pub fn dilate(mask: &MaskVolume, r: usize) -> MaskVolume {
    separable(mask, r, true)
}

/// Keeps voxels whose whole `(2r+1)³` neighbourhood is set and inside the grid.
pub fn erode(mask: &MaskVolume, r: usize) -> MaskVolume {
    separable(mask, r, false)
}
