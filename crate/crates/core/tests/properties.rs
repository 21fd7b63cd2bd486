use proptest::prelude::*;

use riconv_core::calib::{lbp_min_rotation, Calibrator, CalibratorKind};
use riconv_core::data::{
    read_idx_images, read_idx_labels, read_sweep_csv, write_idx_images, write_idx_labels, write_sweep_csv, SweepRecord,
    SweepResult,
};
use riconv_core::gemm::matmul;
use riconv_core::nn::{relu, KernelSpec, RiConv};
use riconv_core::polar::{blend, ring_shift, rot90, rotate_image, rotate_tensor, PolarPatch, RotationSpec};
use riconv_core::tensor::{decode_tensors, encode_tensors};
use riconv_core::train::{lr_at, TrainConfig};
use riconv_core::Tensor;

fn kind() -> impl Strategy<Value = CalibratorKind> {
    prop::sample::select(CalibratorKind::CALIBRATED.to_vec())
}

fn patch() -> impl Strategy<Value = PolarPatch<f64>> {
    (prop::sample::select(vec![3usize, 5, 7]), 1usize..4).prop_flat_map(|(k, c)| {
        prop::collection::vec(-1.0f64..1.0, c * k * k).prop_map(move |v| PolarPatch::new(k, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn four_quarter_turns_are_the_identity(side in 1usize..9, seed in any::<u64>()) {
        let plane: Vec<u64> = (0..side * side).map(|i| seed.wrapping_mul(i as u64 + 1)).collect();
        let once = rot90(&plane, side, 1);
        prop_assert_eq!(rot90(&once, side, 3), plane.clone());
        prop_assert_eq!(rot90(&plane, side, 4), plane);
    }

    #[test]
    fn quarter_turn_rotation_is_lossless(v in prop::collection::vec(0.0f64..1.0, 36), turns in 0usize..4) {
        let spec = RotationSpec::new(90.0 * turns as f64);
        prop_assert_eq!(rotate_image(&v, 6, 6, spec).unwrap(), rot90(&v, 6, turns));
    }

    #[test]
    fn calibration_ignores_applicable_ring_shifts(p in patch(), kind in kind(), shift in 0isize..8) {
        let shift = if kind == CalibratorKind::Sb { shift & !1 } else { shift };
        let cal = Calibrator::<f64>::new(kind, p.k()).unwrap();
        let a = cal.calibrate(&p).unwrap().calibrated;
        let b = cal.calibrate(&p.rotated(shift)).unwrap().calibrated;
        let d = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-9, "{} shift {}: {}", kind, shift, d);
    }

    #[test]
    fn calibrating_twice_changes_nothing_for_discrete_kinds(p in patch()) {
        for kind in [CalibratorKind::St, CalibratorKind::Max] {
            let cal = Calibrator::<f64>::new(kind, p.k()).unwrap();
            let once = cal.calibrate(&p).unwrap().calibrated;
            prop_assert_eq!(cal.calibrate(&once).unwrap().calibrated, once.clone());
        }
    }

    #[test]
    fn lbp_minimum_is_shared_by_all_rotations(code in any::<u8>(), r in 0u32..8) {
        let (min, moves) = lbp_min_rotation(code);
        prop_assert!(moves < 8);
        prop_assert_eq!(code.rotate_left(moves as u32), min);
        prop_assert_eq!(lbp_min_rotation(code.rotate_left(r)).0, min);
        prop_assert!((0..8).all(|i| code.rotate_left(i) >= min));
    }

    #[test]
    fn integer_ring_shifts_compose(ring in prop::collection::vec(-5.0f64..5.0, 8), a in -8i32..8, b in -8i32..8) {
        let two = ring_shift(&ring_shift(&ring, f64::from(a)), f64::from(b));
        prop_assert_eq!(two, ring_shift(&ring, f64::from(a + b)));
    }

    #[test]
    fn blend_stays_between_its_ends(a in -10.0f64..10.0, b in -10.0f64..10.0, f in 0.0f64..1.0) {
        let v = blend(a, b, f);
        prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
        prop_assert_eq!(blend(a, b, 0.0), a);
    }

    #[test]
    fn schedule_never_increases(lr in 1e-6f64..1.0, decay in 0.01f64..=1.0, interval in 1usize..20, e in 0usize..200) {
        let cfg = TrainConfig { lr, lr_decay: decay, lr_interval: interval, ..TrainConfig::default() };
        prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        prop_assert!(lr_at(e, &cfg) <= lr);
    }

    #[test]
    fn matmul_matches_the_naive_product(m in 1usize..9, k in 1usize..9, n in 1usize..40, seed in any::<u64>()) {
        let val = |i: usize| ((seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40) as f64) / 1e7 - 0.8;
        let a: Vec<f64> = (0..m * k).map(val).collect();
        let b: Vec<f64> = (0..k * n).map(|i| val(i + 1000)).collect();
        let c = matmul(&a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i * k + t] * b[t * n + j];
                }
                prop_assert_eq!(c[i * n + j], s);
            }
        }
    }

    #[test]
    fn relu_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let t = Tensor::from_vec((1, 1, 1, v.len()), v).unwrap();
        let once = relu(&t);
        prop_assert_eq!(relu(&once), once.clone());
        prop_assert!(once.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn tensors_survive_encoding(v in prop::collection::vec(any::<f32>(), 1..40)) {
        let t = Tensor::from_vec((1, 1, 1, v.len()), v).unwrap();
        let (manifest, bytes) = encode_tensors(&[("w", &t)]);
        let back = decode_tensors::<f32>(&manifest, &bytes).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].0, "w");
        let same = back[0].1.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn idx_files_round_trip(rows in 1usize..6, cols in 1usize..6, n in 1usize..5, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..n * rows * cols).map(|i| seed.wrapping_add((i * 37) as u8)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        write_idx_images(&ip, rows, cols, &pixels).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        prop_assert_eq!(read_idx_images(&ip).unwrap(), (n, rows, cols, pixels));
        prop_assert_eq!(read_idx_labels(&lp).unwrap(), labels);
    }

    #[test]
    fn sweep_csv_round_trips(acc in prop::collection::vec(0u32..=1_000_000, 1..36)) {
        let records: Vec<SweepRecord> = acc
            .iter()
            .enumerate()
            .map(|(i, &a)| SweepRecord { angle_deg: i as f64 * 10.0, n_samples: 1000, accuracy: f64::from(a) / 1e6 })
            .collect();
        let result = SweepResult { records, model: "gd".into(), seed: 3 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sweep_csv(&result, &path).unwrap();
        prop_assert_eq!(read_sweep_csv(&path).unwrap(), result.records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn riconv_layers_commute_with_quarter_turns(
        kind in kind(),
        k in prop::sample::select(vec![3usize, 5]),
        x in prop::collection::vec(0.0f64..1.0, 2 * 64),
        w in prop::collection::vec(-1.0f64..1.0, 3 * 2 * 25),
    ) {
        let spec = KernelSpec::new(k, 2, 3, 1, w[..3 * 2 * k * k].to_vec(), vec![0.1, -0.2, 0.3]).unwrap();
        let layer = RiConv::new(spec, kind).unwrap();
        let x = Tensor::from_vec((1, 2, 8, 8), x).unwrap();
        let q = RotationSpec::new(90.0);
        let a = layer.forward(&rotate_tensor(&x, q).unwrap()).unwrap();
        let b = rotate_tensor(&layer.forward(&x).unwrap(), q).unwrap();
        let d = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-10, "{} K={}: {}", kind, k, d);
    }
}
