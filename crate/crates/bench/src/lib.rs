//! Input fixtures shared by the kernel benchmarks in `benches/`.

use rand::Rng;
use voxelpaint_core::rng::seeded;
use voxelpaint_core::Tensor;

/// `len` values drawn uniformly from `[-1, 1)`.
pub fn uniform(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = seeded(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A `[1, 1, d, h, w]` tensor with uniform entries.
pub fn volume_tensor(dims: [usize; 3], seed: u64) -> Tensor<f32> {
    let [d, h, w] = dims;
    Tensor::new(vec![1, 1, d, h, w], uniform(d * h * w, seed)).expect("shape matches buffer")
}

/// A `[1, 1, d, h, w]` binary mask with roughly `fraction` of voxels set.
pub fn mask_tensor(dims: [usize; 3], fraction: f64, seed: u64) -> Tensor<f32> {
    let mut rng = seeded(seed);
    let [d, h, w] = dims;
    let data = (0..d * h * w).map(|_| rng.random_bool(fraction) as u8 as f32).collect();
    Tensor::new(vec![1, 1, d, h, w], data).expect("shape matches buffer")
}
