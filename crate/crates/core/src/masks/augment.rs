//! Mirror and rotation augmentation of binary masks.

use rand::Rng;

use crate::volume::MaskVolume;

/// One draw of the augmentation parameters. Angles are in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub mirror: [bool; 3],
    pub theta_xy: f64,
    pub theta_yz: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        mirror: [false; 3],
        theta_xy: 0.0,
        theta_yz: 0.0,
    };

    /// Three fair mirror coins, then two angles uniform on `[0, 360)`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mirror = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        let theta_xy = rng.random_range(0.0..360.0);
        let theta_yz = rng.random_range(0.0..360.0);
        Self {
            mirror,
            theta_xy,
            theta_yz,
        }
    }
}

/// `(cos, sin)` with quarter turns snapped to exact values.
fn cos_sin(deg: f64) -> (f64, f64) {
    let turns = deg / 90.0;
    if turns == turns.round() {
        return match (turns as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let r = deg.to_radians();
    (r.cos(), r.sin())
}

pub fn mirror(mask: &MaskVolume, axis: usize) -> MaskVolume {
    let dims = mask.dims();
    MaskVolume::from_fn(dims, mask.role(), |x, y, z| {
        let mut p = [x, y, z];
        p[axis] = dims[axis] - 1 - p[axis];
        mask.get(p[0], p[1], p[2])
    })
    .expect("dims unchanged")
}

/// Rotates by `deg` in the plane of axes `(a, b)` about the grid centre.
/// Each output voxel takes its nearest source voxel under the inverse map;
/// sources outside the grid read as unset.
pub fn rotate(mask: &MaskVolume, a: usize, b: usize, deg: f64) -> MaskVolume {
    let (c, s) = cos_sin(deg);
    if (c, s) == (1.0, 0.0) {
        return mask.clone();
    }
    let dims = mask.dims();
    let ca = (dims[a] as f64 - 1.0) / 2.0;
    let cb = (dims[b] as f64 - 1.0) / 2.0;
    MaskVolume::from_fn(dims, mask.role(), |x, y, z| {
        let p = [x, y, z];
        let u = p[a] as f64 - ca;
        let v = p[b] as f64 - cb;
        let su = (c * u + s * v + ca).round();
        let sv = (-s * u + c * v + cb).round();
        if su < 0.0 || sv < 0.0 || su >= dims[a] as f64 || sv >= dims[b] as f64 {
            return false;
        }
        let mut q = p;
        q[a] = su as usize;
        q[b] = sv as usize;
        mask.get(q[0], q[1], q[2])
    })
    .expect("dims unchanged")
}

/// Applies mirrors (x, y, z), then the XY rotation, then the YZ rotation.
pub fn augment_mask_with(mask: &MaskVolume, draw: &AugmentDraw) -> MaskVolume {
    let mut out = mask.clone();
    for (axis, &flip) in draw.mirror.iter().enumerate() {
        if flip {
            out = mirror(&out, axis);
        }
    }
    out = rotate(&out, 0, 1, draw.theta_xy);
    rotate(&out, 1, 2, draw.theta_yz)
}

pub fn augment_mask<R: Rng + ?Sized>(mask: &MaskVolume, rng: &mut R) -> MaskVolume {
    augment_mask_with(mask, &AugmentDraw::sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::MaskRole;

    fn l_shape(n: usize) -> MaskVolume {
        MaskVolume::from_fn([n, n, n], MaskRole::Healthy, |x, y, z| {
            z == 1 && ((x == 1 && y < 5) || (y == 1 && x < 3))
        })
        .unwrap()
    }

    #[test]
    fn identity_draw_is_identity() {
        let m = l_shape(8);
        assert_eq!(augment_mask_with(&m, &AugmentDraw::IDENTITY), m);
    }

    #[test]
    fn quarter_turn_xy_matches_index_map() {
        let n = 8;
        let m = l_shape(n);
        let r = rotate(&m, 0, 1, 90.0);
        let expect = MaskVolume::from_fn([n, n, n], MaskRole::Healthy, |x, y, z| m.get(y, n - 1 - x, z)).unwrap();
        assert_eq!(r, expect);
        assert_eq!(r.count(), m.count());
    }

    #[test]
    fn four_quarter_turns_return() {
        let m = l_shape(7);
        let mut r = m.clone();
        for _ in 0..4 {
            r = rotate(&r, 1, 2, 90.0);
        }
        assert_eq!(r, m);
    }

    #[test]
    fn oblique_rotation_keeps_mask_binary_and_in_grid() {
        let m = l_shape(9);
        let r = rotate(&m, 0, 1, 45.0);
        assert!(!r.is_empty());
        assert_eq!(r.dims(), m.dims());
    }
}
