use c2f_core::checkpoint;
use c2f_core::data::pnm::quantize;
use c2f_core::data::{resize_sample, round_to_stride, synth_sample, SynthParams};
use c2f_core::losses::{weight_map, WeightRule};
use c2f_core::metrics::{score, GrayMap, SegmentationPair};
use c2f_core::nn::{Param, ParamStore};
use c2f_core::{Rng, Shape, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Shape, seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| scale * rng.normal())
}

fn mask(shape: Shape, seed: u64, density: f64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| if rng.next_f64() < density { 1.0 } else { 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_padded_conv_keeps_spatial_size(
        half in 0usize..4, dilation in 1usize..5, h in 1usize..13, w in 1usize..13, seed: u64,
    ) {
        let k = 2 * half + 1;
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(tensor(Shape::new(1, 2, h, w), seed, 1.0));
        let wt = tape.leaf(tensor(Shape::new(3, 2, k, k), seed ^ 1, 1.0));
        let y = tape.conv2d(x, wt, None, 1, dilation).unwrap();
        prop_assert_eq!(tape.shape(y), Shape::new(1, 3, h, w));
        prop_assert!(tape.value(y).all_finite());
    }

    #[test]
    fn identical_seeds_draw_identical_sequences(seed: u64) {
        let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
        for _ in 0..32 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn weight_map_bounds_and_flat_regions(
        h in 1usize..20, w in 1usize..20, half in 0usize..5, lambda in 0.5f64..8.0, density in 0.0f64..1.0, seed: u64,
    ) {
        let kernel = 2 * half + 1;
        let g = mask(Shape::new(1, 1, h, w), seed, density);
        let wm = weight_map(&g, WeightRule { lambda, kernel }).unwrap().0;
        for y in 0..h {
            for x in 0..w {
                let v = wm.at(0, 0, y, x);
                prop_assert!((1.0..=1.0 + lambda + 1e-12).contains(&v), "{}", v);
                let (y0, y1) = (y.saturating_sub(half), (y + half + 1).min(h));
                let (x0, x1) = (x.saturating_sub(half), (x + half + 1).min(w));
                let label = g.at(0, 0, y, x);
                let flat = (y0..y1).all(|yy| (x0..x1).all(|xx| g.at(0, 0, yy, xx) == label));
                if flat {
                    prop_assert_eq!(v, 1.0);
                }
            }
        }
    }

    #[test]
    fn losses_are_bounded(h in 1usize..12, w in 1usize..12, scale in 0.1f64..20.0, density in 0.0f64..1.0, seed: u64) {
        let shape = Shape::new(2, 1, h, w);
        let g = mask(shape, seed, density);
        let wm = weight_map(&g, WeightRule { lambda: 5.0, kernel: 3 }).unwrap().0;
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(tensor(shape, seed ^ 2, scale));
        let bce = tape.weighted_bce(logits, &g, &wm).unwrap();
        let iou = tape.weighted_iou(logits, &g, &wm).unwrap();
        let (bce, iou) = (tape.value(bce).data()[0], tape.value(iou).data()[0]);
        prop_assert!(bce >= 0.0 && bce.is_finite());
        prop_assert!((0.0..1.0).contains(&iou), "{}", iou);
    }

    #[test]
    fn blend_stays_between_its_inputs(h in 1usize..10, w in 1usize..10, seed: u64) {
        let shape = Shape::new(2, 3, h, w);
        let mut tape = Tape::<f64>::new();
        let raw = tape.leaf(tensor(shape, seed, 4.0));
        let att = tape.sigmoid(raw);
        let a = tape.leaf(tensor(shape, seed ^ 3, 2.0));
        let b = tape.leaf(tensor(shape, seed ^ 4, 2.0));
        let y = tape.blend(att, a, b).unwrap();
        let (a, b, y) = (tape.value(a).data(), tape.value(b).data(), tape.value(y).data());
        for i in 0..y.len() {
            prop_assert!(y[i] >= a[i].min(b[i]) && y[i] <= a[i].max(b[i]));
        }
    }

    #[test]
    fn resize_stays_inside_input_range(h in 1usize..10, w in 1usize..10, oh in 1usize..20, ow in 1usize..20, seed: u64) {
        let x = tensor(Shape::new(1, 2, h, w), seed, 1.0);
        let (lo, hi) = x.data().iter().fold((f64::MAX, f64::MIN), |(l, u), &v| (l.min(v), u.max(v)));
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(x);
        let y = tape.resize(xv, oh, ow).unwrap();
        prop_assert_eq!(tape.shape(y), Shape::new(1, 2, oh, ow));
        prop_assert!(tape.value(y).data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn metric_scores_lie_in_unit_interval(h in 2usize..16, w in 2usize..16, density in 0.0f64..1.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let gt = GrayMap::from_fn(h, w, |_, _| if rng.next_f64() < density { 1.0 } else { 0.0 });
        let pred = GrayMap::from_fn(h, w, |_, _| rng.next_f64());
        let s = score(&SegmentationPair::new(&pred, &gt).unwrap());
        for v in [s.mae, s.s_alpha, s.e_phi_mean, s.e_phi_max, s.f_w] {
            prop_assert!((0.0..=1.0).contains(&v), "{:?}", s);
        }
    }

    #[test]
    fn perfect_prediction_scores_one(h in 2usize..16, w in 2usize..16, seed: u64) {
        let mut rng = Rng::new(seed);
        let mut data: Vec<f64> = (0..h * w).map(|_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 }).collect();
        // Keep both classes present.
        data[0] = 1.0;
        data[h * w - 1] = 0.0;
        let gt = GrayMap::new(h, w, data).unwrap();
        let s = score(&SegmentationPair::new(&gt, &gt).unwrap());
        prop_assert_eq!(s.mae, 0.0);
        for v in [s.s_alpha, s.e_phi_max, s.f_w] {
            prop_assert!((v - 1.0).abs() < 1e-6, "{:?}", s);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        params in prop::collection::btree_map(
            "[a-z][a-z0-9_.]{0,15}",
            (prop::collection::vec(1usize..4, 1..5), any::<u64>()),
            1..6,
        ),
    ) {
        let mut store = ParamStore::<f32>::new();
        for (name, (dims, seed)) in &params {
            let mut rng = Rng::new(*seed);
            let n: usize = dims.iter().product();
            // Any finite bit pattern, subnormals and -0.0 included.
            let data = (0..n)
                .map(|_| loop {
                    let v = f32::from_bits(rng.next_u64() as u32);
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            store.insert(name.clone(), Param { dims: dims.clone(), data, trainable: true });
        }
        let bytes = checkpoint::encode(&store).unwrap();
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
        for ((na, pa), (nb, pb)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(&pa.dims, &pb.dims);
            let bits = |p: &Param<f32>| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(pa), bits(pb));
        }
        let (name, p) = store.iter().next().map(|(n, p)| (n.clone(), p.clone())).unwrap();
        let mut bad = p;
        bad.data[0] = f32::NAN;
        store.insert(name, bad);
        prop_assert!(checkpoint::encode(&store).is_err());
    }

    #[test]
    fn quantize_inverts_byte_scaling(b: u8, v in -2.0f64..3.0) {
        prop_assert_eq!(quantize(b as f64 / 255.0), b);
        let q = quantize(v);
        prop_assert!((q as f64 / 255.0 - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn stride_rounding_is_nearest_multiple(v in 0.0f64..1000.0) {
        let r = round_to_stride(v);
        prop_assert!(r % 32 == 0 && r >= 32);
        if v >= 16.0 {
            prop_assert!((r as f64 - v).abs() <= 16.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn resized_masks_stay_binary(seed: u64, scale in 0.5f64..1.5) {
        let s = synth_sample(&SynthParams { seed, count: 1, size: 64, contrast: 0.1, max_objects: 3 }, 0);
        let r = resize_sample(&s, scale);
        prop_assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(r.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
