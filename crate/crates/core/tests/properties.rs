use proptest::prelude::*;
use rand::Rng;
use voxelpaint_core::masks::{build_samples, dilate, mirror, rotate, MaskGenParams, VOID_FILL};
use voxelpaint_core::metrics::{evaluate_case, psnr};
use voxelpaint_core::rng::{derived_rng, seeded};
use voxelpaint_core::ssim::ssim3d;
use voxelpaint_core::synthetic::synthetic_case;
use voxelpaint_core::tensor::{conv3d_forward, Adam, AdamConfig};
use voxelpaint_core::train::{denormalize, infer_case, kfold_split, normalize_two_stage, FnPredictor, InferInput};
use voxelpaint_core::unet::{decode_checkpoint, encode_checkpoint, CheckpointMeta};
use voxelpaint_core::volume::{crop_center, encode_nifti, paste, parse_nifti};
use voxelpaint_core::{MaskRole, MaskVolume, SsimParams, Tape, Tensor, UNetConfig, UNetModel, Volume};

fn random_volume(dims: [usize; 3], seed: u64, lo: f32, hi: f32) -> Volume {
    let mut rng = seeded(seed);
    Volume::from_fn(dims, |_, _, _| rng.random_range(lo..hi)).unwrap()
}

fn random_mask(dims: [usize; 3], seed: u64, p: f64) -> MaskVolume {
    let mut rng = seeded(seed);
    MaskVolume::from_fn(dims, MaskRole::Healthy, |_, _, _| rng.random_bool(p)).unwrap()
}

fn dims3(max: usize) -> impl Strategy<Value = [usize; 3]> {
    [1..=max, 1..=max, 1..=max]
}

fn naive_conv(x: &[f32], [n, cin, d, h, w]: [usize; 5], wt: &[f32], cout: usize, b: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; n * cout * d * h * w];
    for bn in 0..n {
        for co in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = b[co] as f64;
                        for ci in 0..cin {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (iz, iy, ix) = (z + kz, y + ky, xx + kx);
                                        if iz == 0 || iy == 0 || ix == 0 || iz > d || iy > h || ix > w {
                                            continue;
                                        }
                                        let xi = (((bn * cin + ci) * d + iz - 1) * h + iy - 1) * w + ix - 1;
                                        let wi = (((co * cin + ci) * 3 + kz) * 3 + ky) * 3 + kx;
                                        s += x[xi] as f64 * wt[wi] as f64;
                                    }
                                }
                            }
                        }
                        out[(((bn * cout + co) * d + z) * h + y) * w + xx] = s;
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv3d_matches_nested_loops(
        n in 1usize..=2, cin in 1usize..=4, cout in 1usize..=4,
        d in 1usize..=8, h in 1usize..=8, w in 1usize..=8, seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let dims = [n, cin, d, h, w];
        let x: Vec<f32> = (0..n * cin * d * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt: Vec<f32> = (0..cout * cin * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (got, _) = conv3d_forward(&x, dims, &wt, [cout, cin, 3, 3, 3], &b, 1).unwrap();
        let want = naive_conv(&x, dims, &wt, cout, &b);
        for (g, o) in got.iter().zip(&want) {
            prop_assert!((*g as f64 - o).abs() <= 1e-5);
        }
    }

    #[test]
    fn identical_graphs_are_bit_identical(seed in any::<u64>()) {
        let run = || {
            let mut rng = seeded(seed);
            let mut tape = Tape::<f32>::new();
            let x = tape.param(Tensor::from_fn(vec![1, 2, 4, 4, 4], |_| rng.random_range(-1.0..1.0)));
            let w = tape.param(Tensor::from_fn(vec![3, 2, 3, 3, 3], |_| rng.random_range(-0.5..0.5)));
            let b = tape.param(Tensor::zeros(vec![3]));
            let g = tape.param(Tensor::full(vec![3], 1.0));
            let be = tape.param(Tensor::zeros(vec![3]));
            let y = tape.conv3d(x, w, b, 1).unwrap();
            let y = tape.instance_norm(y, g, be, 1e-5).unwrap();
            let y = tape.relu(y);
            let y = tape.maxpool3d(y).unwrap();
            let l = tape.mean(y).unwrap();
            let grads = tape.backward(l).unwrap();
            (tape.value(l).clone(), grads.wrt(x), grads.wrt(w))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn instance_norm_standardizes_each_channel(seed in any::<u64>(), scale in 0.5f64..20.0, shift in -50.0f64..50.0) {
        let mut rng = seeded(seed);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 3, 4, 5, 6], |_| shift + scale * rng.random_range(-1.0..1.0)));
        let g = tape.constant(Tensor::full(vec![3], 1.0));
        let b = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.instance_norm(x, g, b, 1e-5).unwrap();
        for chunk in tape.value(y).data().chunks(120) {
            let mean = chunk.iter().sum::<f64>() / 120.0;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 120.0;
            prop_assert!(mean.abs() <= 1e-5);
            prop_assert!((var - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn upsample_then_maxpool_is_identity(c in 1usize..=3, d in 1usize..=4, h in 1usize..=4, w in 1usize..=4, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let x = Tensor::<f32>::from_fn(vec![1, c, d, h, w], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let up = tape.upsample3d(v).unwrap();
        let back = tape.maxpool3d(up).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }

    #[test]
    fn adam_with_zero_gradient_is_stationary(seed in any::<u64>(), lr in 1e-5f64..1e-1, steps in 1usize..50) {
        let mut rng = seeded(seed);
        let mut params = vec![Tensor::<f32>::from_fn(vec![7], |_| rng.random_range(-3.0..3.0))];
        let before = params.clone();
        let config = AdamConfig { lr, ..AdamConfig::default() };
        let mut adam = Adam::new(config, &params);
        let zeros = vec![Tensor::zeros(vec![7])];
        for _ in 0..steps {
            adam.step(&mut params, &zeros).unwrap();
        }
        prop_assert_eq!(params, before);
    }

    #[test]
    fn crop_then_paste_restores_region(source in dims3(9), seed in any::<u64>()) {
        let target = [source[0].div_ceil(2), source[1], source[2].max(2) - 1];
        let vol = random_volume(source, seed, -10.0, 10.0);
        let (crop, spec) = crop_center(&vol, target).unwrap();
        let blank = Volume::filled(source, 0.0).unwrap();
        let back = paste(&blank, &crop, &spec).unwrap();
        for z in 0..source[2] {
            for y in 0..source[1] {
                for x in 0..source[0] {
                    let p = [x, y, z];
                    let inside = (0..3).all(|a| p[a] >= spec.start[a] && p[a] < spec.start[a] + target[a]);
                    let want = if inside { vol.get(x, y, z) } else { 0.0 };
                    prop_assert_eq!(back.get(x, y, z).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn nifti_round_trip_is_bit_exact(dims in dims3(6), bits in prop::collection::vec(any::<u32>(), 216)) {
        let n = dims.iter().product::<usize>();
        let data: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b)).collect();
        let vol = Volume::new(dims, data).unwrap();
        let back = parse_nifti(&encode_nifti(&vol).unwrap()).unwrap();
        prop_assert_eq!(back.dims(), dims);
        prop_assert!(back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mirror_is_an_involution(dims in dims3(7), seed in any::<u64>(), axis in 0usize..3) {
        let m = random_mask(dims, seed, 0.5);
        prop_assert_eq!(mirror(&mirror(&m, axis), axis), m);
    }

    #[test]
    fn quarter_rotations_compose(n in 1usize..=9, seed in any::<u64>(), a in 0u32..4, b in 0u32..4, plane in 0usize..2) {
        let (p, q) = [(0, 1), (1, 2)][plane];
        let m = random_mask([n, n, n], seed, 0.4);
        let (ta, tb) = (90.0 * a as f64, 90.0 * b as f64);
        let composed = rotate(&rotate(&m, p, q, ta), p, q, tb);
        prop_assert_eq!(composed, rotate(&m, p, q, ta + tb));
        prop_assert_eq!(rotate(&m, p, q, 0.0), m);
    }

    #[test]
    fn ssim_is_bounded_and_peaks_at_identity(seed in any::<u64>(), idx in 0usize..512, bump in 0.05f64..0.5) {
        let mut rng = seeded(seed);
        let a: Vec<f64> = (0..512).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..512).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = SsimParams::unit();
        let s = ssim3d(&a, &b, [8, 8, 8], &p).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, ssim3d(&b, &a, [8, 8, 8], &p).unwrap());
        let mut c = a.clone();
        c[idx] = if c[idx] > 0.5 { c[idx] - bump } else { c[idx] + bump };
        prop_assert!(ssim3d(&a, &c, [8, 8, 8], &p).unwrap() < 1.0);
        prop_assert_eq!(ssim3d(&a, &a, [8, 8, 8], &p).unwrap(), 1.0);
    }

    #[test]
    fn full_mask_mae_is_plain_mae(seed in any::<u64>(), len in 1usize..200) {
        let mut rng = seeded(seed);
        let pred = Tensor::<f64>::from_fn(vec![len], |_| rng.random_range(-1.0..1.0));
        let target = Tensor::<f64>::from_fn(vec![len], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let p = tape.constant(pred.clone());
        let l = tape.masked_mae(p, &target, &vec![true; len]).unwrap();
        let plain = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;
        prop_assert!((tape.value(l).data()[0] - plain).abs() <= 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse(a in 1e-9f64..10.0, b in 1e-9f64..10.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(psnr(lo) > psnr(hi));
    }

    #[test]
    fn mse_ignores_predictions_outside_healthy_mask(seed in any::<u64>()) {
        let dims = [9, 8, 10];
        let gt = random_volume(dims, seed, 0.0, 100.0);
        let healthy = random_mask(dims, seed ^ 1, 0.3);
        let pred = random_volume(dims, seed ^ 2, 0.0, 100.0);
        let noise = random_volume(dims, seed ^ 3, 0.0, 100.0);
        let mixed: Vec<f32> = (0..pred.len())
            .map(|i| if healthy.bits()[i] { pred.data()[i] } else { noise.data()[i] })
            .collect();
        let other = pred.with_data(mixed).unwrap();
        let a = evaluate_case(&pred, &gt, &healthy, 100.0, "c").unwrap();
        let b = evaluate_case(&other, &gt, &healthy, 100.0, "c").unwrap();
        prop_assert_eq!(a.mse, b.mse);
        prop_assert_eq!(a.psnr, b.psnr);
        prop_assert_eq!(a.rmse, b.rmse);
        prop_assert!((a.rmse * a.rmse - a.mse).abs() <= 1e-12 * a.mse.max(1.0));
    }

    #[test]
    fn folds_partition_ids(count in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= count);
        let ids: Vec<String> = (0..count).map(|i| format!("id-{i:03}")).collect();
        let plan = kfold_split(&ids, k, seed).unwrap();
        let mut all: Vec<&str> = (0..k).flat_map(|f| plan.validation_ids(f)).collect();
        all.sort();
        prop_assert_eq!(all.len(), count);
        all.dedup();
        prop_assert_eq!(all.len(), count);
        let sizes: Vec<usize> = (0..k).map(|f| plan.validation_ids(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            prop_assert_eq!(plan.training_ids(f).len() + plan.validation_ids(f).len(), count);
        }
    }

    #[test]
    fn normalization_inverts(dims in dims3(6), seed in any::<u64>(), top in 1.0f32..5000.0) {
        let vol = random_volume(dims, seed, 0.0, top);
        prop_assume!(vol.data().iter().any(|&v| v > 0.0));
        let (norm, max) = normalize_two_stage(&vol).unwrap();
        let back = denormalize(&norm, max).unwrap();
        for (a, b) in vol.data().iter().zip(back.data()) {
            prop_assert!(((a - b) as f64).abs() <= 1e-6 * max as f64);
        }
    }

    #[test]
    fn inference_only_touches_the_mask(seed in any::<u64>()) {
        let dims = [10, 9, 8];
        let image = random_volume(dims, seed, 1.0, 500.0);
        let mut rng = seeded(seed ^ 5);
        let mask = MaskVolume::from_fn(dims, MaskRole::Combined, |x, y, _| {
            (1..9).contains(&x) && y < 8 && rng.random_bool(0.3)
        }).unwrap();
        let predictor = FnPredictor(|v: &Tensor<f32>, _: &Tensor<f32>| v.map(|x| 0.5 - x));
        let out = infer_case(&predictor, &image, &mask, InferInput::Full, [8, 8, 8]).unwrap();
        for i in 0..image.len() {
            if !mask.bits()[i] {
                prop_assert_eq!(out.data()[i].to_bits(), image.data()[i].to_bits());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generated_samples_respect_mask_contracts(seed in any::<u64>()) {
        let case = synthetic_case("p", [28, 28, 28], seed);
        let params = MaskGenParams { margin: 3, ..MaskGenParams::default() };
        let samples = build_samples("p", &case.t1n, &case.tumor, &params, &mut derived_rng(seed, "p")).unwrap();
        let again = build_samples("p", &case.t1n, &case.tumor, &params, &mut derived_rng(seed, "p")).unwrap();
        prop_assert_eq!(samples.len(), 5);
        for (s, t) in samples.iter().zip(&again) {
            prop_assert!(s.healthy.is_disjoint(&dilate(&s.unhealthy, params.margin)).unwrap());
            let union = s.healthy.union(&s.unhealthy).unwrap();
            prop_assert_eq!(s.combined.bits(), union.bits());
            for i in 0..s.t1n.len() {
                let v = s.t1n_voided.data()[i];
                if s.combined.bits()[i] {
                    prop_assert_eq!(v, VOID_FILL);
                } else {
                    prop_assert_eq!(v.to_bits(), s.t1n.data()[i].to_bits());
                }
            }
            prop_assert_eq!(&s.healthy, &t.healthy);
            prop_assert_eq!(s.t1n_voided.data(), t.t1n_voided.data());
        }
    }

    #[test]
    fn unet_preserves_spatial_shape_and_is_pure_in_eval(seed in any::<u64>(), k in 1usize..=2, j in 1usize..=2) {
        let config = UNetConfig { base_channels: 2, ..UNetConfig::default() };
        let model = UNetModel::<f32>::build(config, &mut seeded(seed)).unwrap();
        let shape = vec![1, 1, 8 * k, 8 * j, 8];
        let mut rng = seeded(seed ^ 9);
        let x = Tensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
        let m = Tensor::from_fn(shape.clone(), |i| (i % 3 == 0) as u8 as f32);
        let a = model.forward(&x, &m, false, &mut seeded(1)).unwrap();
        let b = model.forward(&x, &m, false, &mut seeded(2)).unwrap();
        prop_assert_eq!(a.shape(), &shape[..]);
        prop_assert_eq!(&a, &b);
        let meta = CheckpointMeta { config, epoch: 1, fold: 0, val_loss: 0.5, seed };
        let (back, meta_back) = decode_checkpoint(&encode_checkpoint(&model, &meta).unwrap(), None).unwrap();
        prop_assert_eq!(back, model);
        prop_assert_eq!(meta_back, meta);
    }
}
