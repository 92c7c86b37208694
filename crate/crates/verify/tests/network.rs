use c2f_core::checkpoint::{self, CheckpointError};
use c2f_core::network::{predict, Network};
use c2f_core::nn::{Mode, ParamStore, Session};
use c2f_core::{Error, NetworkConfig, NetworkParams, Shape, Tensor, Variant};
use c2f_verify::cases::{random, tiny_config};
use c2f_verify::compose;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn feature_strides_at_64() {
    let net = Network::new(tiny_config(Variant::Full));
    let mut store: ParamStore<f32> = net.init(1);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(1, 3, 64, 64), 1.0, 2).cast());
    let out = net.forward(&mut s, x).unwrap();
    let sides: Vec<(usize, usize, usize)> = out.features.0.iter().map(|&f| {
        let sh = s.tape.shape(f);
        (sh.c, sh.h, sh.w)
    }).collect();
    assert_eq!(sides, vec![(8, 32, 32), (12, 16, 16), (16, 8, 8), (24, 4, 4), (32, 2, 2)]);
    assert_eq!(s.tape.shape(out.logits), Shape::new(1, 1, 8, 8));
}

#[test]
fn default_backbone_at_352() {
    let net = Network::new(NetworkConfig::default());
    let mut store: ParamStore<f32> = net.init(1);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(Tensor::full(Shape::new(1, 3, 352, 352), 0.5));
    let f = net.backbone.forward(&mut s, x).unwrap();
    let f5 = s.tape.shape(f.0[4]);
    assert_eq!((f5.c, f5.h, f5.w), (64, 11, 11));
}

#[test]
fn input_not_divisible_by_32_is_rejected() {
    let mut p = NetworkParams::init(tiny_config(Variant::Full), 1);
    let err = p.logits(&Tensor::zeros(Shape::new(1, 3, 48, 64))).unwrap_err();
    assert!(matches!(err, Error::InputSize { h: 48, w: 64, multiple: 32 }));
}

#[test]
fn variant_names_parse_and_reject() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("basic+everything".parse::<Variant>().is_err());
}

#[test]
fn basic_with_zero_weights_outputs_head_bias() {
    let net = Network::new(tiny_config(Variant::Basic));
    let mut store: ParamStore<f64> = net.init(3);
    for (name, p) in store.iter_mut() {
        if name.ends_with(".weight") || name.ends_with(".bias") || name.ends_with(".beta") {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    store.get_mut("head.bias").unwrap().data[0] = 0.37;
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(2, 3, 64, 64), 1.0, 4));
    let out = net.forward(&mut s, x).unwrap();
    assert!(s.value(out.logits).data().iter().all(|&v| v == 0.37));
}

#[test]
fn logits_are_a_function_of_f3_f4_f5_alone() {
    let net = Network::new(tiny_config(Variant::Full));
    let mut store: ParamStore<f64> = net.init(5);
    let image = random(Shape::new(1, 3, 64, 64), 1.0, 6);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(image);
    let out = net.forward(&mut s, x).unwrap();
    let [_, _, f3, f4, f5] = out.features.0.map(|f| compose::arr(s.value(f)));
    let logits = s.value(out.logits).clone();
    drop(s);
    // The decoder never sees f1 or f2.
    let want = compose::decoder(&store, &net, &f3, &f4, &f5);
    assert!(max_diff(logits.data(), &want.data) < 1e-9);
}

#[test]
fn init_and_eval_forward_are_deterministic() {
    for v in Variant::ALL {
        let a = NetworkParams::init(tiny_config(v), 11);
        let b = NetworkParams::init(tiny_config(v), 11);
        assert_eq!(a, b);
        let image = random(Shape::new(2, 3, 64, 64), 1.0, 12).cast::<f32>();
        let (mut a, mut b) = (a, b);
        let (la, lb) = (a.logits(&image).unwrap(), b.logits(&image).unwrap());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&la), bits(&lb), "{v}");
        assert_eq!(bits(&la), bits(&a.logits(&image).unwrap()), "{v}: second call differs");
    }
}

#[test]
fn predict_zero_logits_is_one_half() {
    let p = predict(&Tensor::<f32>::zeros(Shape::new(1, 1, 8, 8)), 64, 64);
    assert_eq!(p.shape(), Shape::new(1, 1, 64, 64));
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn predict_matches_per_pixel_oracle() {
    let logits = random(Shape::new(1, 1, 8, 8), 3.0, 13);
    let want = c2f_oracle::sigmoid(&c2f_oracle::bilinear_resize(&compose::arr(&logits), 64, 64));
    let got = predict(&logits, 64, 64);
    assert!(max_diff(got.data(), &want.data) < 1e-12);
    assert!(got.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn checkpoint_round_trip_and_reload() {
    let params = NetworkParams::init(tiny_config(Variant::Full), 14);
    let bytes = checkpoint::encode(&params.store).unwrap();
    let loaded = NetworkParams::from_store(checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(checkpoint::encode(&loaded.store).unwrap(), bytes);
}

#[test]
fn every_variant_is_recovered_from_a_checkpoint() {
    for v in Variant::ALL {
        let params = NetworkParams::init(tiny_config(v), 15);
        let store = checkpoint::decode(&checkpoint::encode(&params.store).unwrap()).unwrap();
        assert_eq!(NetworkConfig::infer_from(&store).unwrap(), tiny_config(v));
    }
}

#[test]
fn other_channel_config_is_a_manifest_error() {
    let params = NetworkParams::init(tiny_config(Variant::Full), 16);
    let mut other = tiny_config(Variant::Full);
    other.rfb_channels = 8;
    match NetworkParams::from_store_with(other, params.store) {
        Err(CheckpointError::ShapeManifest { name, expected, found }) => {
            assert_ne!(expected, found);
            assert!(name.starts_with("acfm1") || name.starts_with("dgcm") || name.starts_with("rfb") || name.starts_with("head"), "{name}");
        }
        other => panic!("expected a shape-manifest error, got {other:?}"),
    }
}
