use c2f_core::blocks::{Acfm, Attention, AttentionConfig, Dgcm, Msca, Rfb};
use c2f_core::nn::{Mode, ParamStore, Session};
use c2f_core::ops::norm::BN_EPS;
use c2f_core::{Error, Rng, Shape, Tensor};
use c2f_verify::cases::random;
use c2f_verify::compose;

fn cfg(use_bn: bool) -> AttentionConfig {
    AttentionConfig { reduction: 4, use_bn, conv_substitute: false }
}

fn zero_weights(store: &mut ParamStore<f64>) {
    for (name, p) in store.iter_mut() {
        if name.ends_with(".weight") || name.ends_with(".bias") || name.ends_with(".beta") {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Random affine parameters and running statistics for eval-mode checks.
fn perturb(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = Rng::new(seed);
    for (name, p) in store.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with("running_mean") {
            p.data.iter_mut().for_each(|v| *v = 0.2 * rng.normal());
        } else if name.ends_with(".gamma") || name.ends_with("running_var") {
            p.data.iter_mut().for_each(|v| *v = rng.uniform(0.5, 1.5));
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn msca_with_zero_weights_is_one_half() {
    let m = Msca::new("m", 8, 4, true);
    let mut store = ParamStore::new();
    m.init(&mut store, &mut Rng::new(1));
    zero_weights(&mut store);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(2, 8, 5, 5), 3.0, 2));
    let a = m.forward(&mut s, x).unwrap();
    assert!(s.value(a).data().iter().all(|&v| v == 0.5));
}

#[test]
fn attention_stays_inside_unit_interval() {
    for (k, sub) in [false, true].into_iter().enumerate() {
        let att = Attention::new("a", 6, AttentionConfig { conv_substitute: sub, ..cfg(true) });
        let mut store = ParamStore::<f32>::new();
        att.init(&mut store, &mut Rng::new(k as u64));
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.input(random(Shape::new(1, 6, 6, 6), 1.0, 3).cast());
        let a = att.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(a), Shape::new(1, 6, 6, 6));
        assert!(s.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0), "substitute {sub}");
    }
}

#[test]
fn msca_on_constant_input_matches_scalar_pipeline() {
    let (c, hidden) = (4, 2);
    let m = Msca::new("m", c, 2, false);
    let mut store = ParamStore::<f64>::new();
    m.init(&mut store, &mut Rng::new(8));
    perturb(&mut store, 9);
    let v = [0.3, -1.2, 0.7, 2.0];
    let x = Tensor::from_fn(Shape::new(1, c, 3, 5), |_, ch, _, _| v[ch]);
    let mut s = Session::new(&mut store, Mode::Eval);
    let xv = s.input(x);
    let a = m.forward(&mut s, xv).unwrap();
    let got = s.value(a).clone();
    drop(s);

    // Hand evaluation on the channel vector: both branches see the same vector.
    let p = |n: &str| store.get(n).unwrap().data.clone();
    let branch = |b: &str| -> Vec<f64> {
        let (w1, b1, w2, b2) = (p(&format!("m.{b}1.weight")), p(&format!("m.{b}1.bias")), p(&format!("m.{b}2.weight")), p(&format!("m.{b}2.bias")));
        let h: Vec<f64> = (0..hidden).map(|j| (b1[j] + (0..c).map(|i| w1[j * c + i] * v[i]).sum::<f64>()).max(0.0)).collect();
        (0..c).map(|o| b2[o] + (0..hidden).map(|j| w2[o * hidden + j] * h[j]).sum::<f64>()).collect()
    };
    let (l, g) = (branch("local"), branch("global"));
    for ch in 0..c {
        let want = 1.0 / (1.0 + (-(l[ch] + g[ch])).exp());
        for y in 0..3 {
            for x in 0..5 {
                assert!((got.at(0, ch, y, x) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn msca_channel_mismatch_is_shape_error() {
    let m = Msca::new("m", 4, 4, true);
    let mut store = ParamStore::<f32>::new();
    m.init(&mut store, &mut Rng::new(1));
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(Tensor::zeros(Shape::new(1, 3, 2, 2)));
    assert!(matches!(m.forward(&mut s, x), Err(Error::Shape { .. })));
}

#[test]
fn acfm_equal_inputs_pass_through() {
    let a = Acfm::new("a", 3, cfg(true));
    let mut store = ParamStore::<f64>::new();
    a.init(&mut store, &mut Rng::new(4));
    // Constant planes upsample to themselves.
    let levels = [0.25, -2.0, 7.5];
    let fa = Tensor::from_fn(Shape::new(1, 3, 4, 6), |_, c, _, _| levels[c]);
    let fb = Tensor::from_fn(Shape::new(1, 3, 2, 3), |_, c, _, _| levels[c]);
    let mut s = Session::new(&mut store, Mode::Eval);
    let (va, vb) = (s.input(fa.clone()), s.input(fb));
    let out = a.forward(&mut s, va, vb).unwrap();
    assert_eq!(s.value(out.blend).data(), fa.data());
}

#[test]
fn acfm_with_zero_attention_weights_averages() {
    let a = Acfm::new("a", 4, cfg(true));
    let mut store = ParamStore::<f64>::new();
    a.init(&mut store, &mut Rng::new(5));
    zero_weights(&mut store);
    let fa = random(Shape::new(1, 4, 6, 4), 1.0, 6);
    let fb = random(Shape::new(1, 4, 3, 2), 1.0, 7);
    let up = c2f_oracle::upsample(&compose::arr(&fb), 2);
    let mut s = Session::new(&mut store, Mode::Eval);
    let (va, vb) = (s.input(fa.clone()), s.input(fb));
    let out = a.forward(&mut s, va, vb).unwrap();
    let want: Vec<f64> = fa.data().iter().zip(&up.data).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    assert!(max_diff(s.value(out.blend).data(), &want) < 1e-12);
}

#[test]
fn acfm_rejects_non_half_input() {
    let a = Acfm::new("a", 2, cfg(true));
    let mut store = ParamStore::<f32>::new();
    a.init(&mut store, &mut Rng::new(1));
    let mut s = Session::new(&mut store, Mode::Eval);
    let fa = s.input(Tensor::zeros(Shape::new(1, 2, 8, 8)));
    let fb = s.input(Tensor::zeros(Shape::new(1, 2, 3, 4)));
    assert!(matches!(a.forward(&mut s, fa, fb), Err(Error::Shape { .. })));
}

#[test]
fn acfm_matches_recomposition() {
    let a = Acfm::new("a", 4, cfg(true));
    let mut store = ParamStore::<f64>::new();
    a.init(&mut store, &mut Rng::new(10));
    perturb(&mut store, 11);
    let fa = random(Shape::new(2, 4, 6, 8), 1.0, 12);
    let fb = random(Shape::new(2, 4, 3, 4), 1.0, 13);
    let (fused, blend, att) = compose::acfm(&store, &a, &compose::arr(&fa), &compose::arr(&fb));
    let mut s = Session::new(&mut store, Mode::Eval);
    let (va, vb) = (s.input(fa), s.input(fb));
    let out = a.forward(&mut s, va, vb).unwrap();
    assert!(max_diff(s.value(out.attention).data(), &att.data) < 1e-12);
    assert!(max_diff(s.value(out.blend).data(), &blend.data) < 1e-12);
    assert!(max_diff(s.value(out.fused).data(), &fused.data) < 1e-5);
}

#[test]
fn dgcm_preserves_shape() {
    let d = Dgcm::new("d", 16, cfg(true));
    let mut store = ParamStore::<f32>::new();
    d.init(&mut store, &mut Rng::new(1));
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(1, 16, 8, 8), 1.0, 2).cast());
    let y = d.forward(&mut s, x).unwrap();
    assert_eq!(s.tape.shape(y), Shape::new(1, 16, 8, 8));
}

#[test]
fn dgcm_residual_isolation() {
    let d = Dgcm::new("d", 3, cfg(true));
    let mut store = ParamStore::<f64>::new();
    d.init(&mut store, &mut Rng::new(3));
    zero_weights(&mut store);
    let f = random(Shape::new(1, 3, 4, 6), 1.0, 4);

    let run = |store: &mut ParamStore<f64>| {
        let mut s = Session::new(store, Mode::Eval);
        let x = s.input(f.clone());
        let y = d.forward(&mut s, x).unwrap();
        s.value(y).clone()
    };
    assert!(run(&mut store).data().iter().all(|&v| v == 0.0));

    // conv_out as a centre-tap identity: F' is F times the eval-mode
    // normalization scale 1 / sqrt(1 + eps) of fresh running statistics.
    let w = &mut store.get_mut("d.out.conv.weight").unwrap().data;
    for c in 0..3 {
        w[(c * 3 + c) * 9 + 4] = 1.0;
    }
    let scale = 1.0 / (1.0 + BN_EPS).sqrt();
    let want: Vec<f64> = f.data().iter().map(|v| v * scale).collect();
    assert!(max_diff(run(&mut store).data(), &want) < 1e-12);
}

#[test]
fn dgcm_odd_size_asks_for_padding() {
    let d = Dgcm::new("d", 2, cfg(true));
    let mut store = ParamStore::<f32>::new();
    d.init(&mut store, &mut Rng::new(1));
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(Tensor::zeros(Shape::new(1, 2, 5, 4)));
    let err = d.forward(&mut s, x).unwrap_err();
    assert!(err.to_string().contains("pad"), "{err}");
}

#[test]
fn dgcm_matches_recomposition() {
    for use_bn in [true, false] {
        let d = Dgcm::new("d", 4, cfg(use_bn));
        let mut store = ParamStore::<f64>::new();
        d.init(&mut store, &mut Rng::new(20));
        perturb(&mut store, 21);
        let f = random(Shape::new(2, 4, 6, 8), 1.0, 22);
        let want = compose::dgcm(&store, &d, &compose::arr(&f));
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.input(f);
        let y = d.forward(&mut s, x).unwrap();
        assert!(max_diff(s.value(y).data(), &want.data) < 1e-5);
    }
}

#[test]
fn rfb_shape_and_zero_weights() {
    let r = Rfb::new("r", 32, 64);
    let mut store = ParamStore::<f32>::new();
    r.init(&mut store, &mut Rng::new(1));
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(1, 32, 16, 16), 1.0, 2).cast());
    let y = r.forward(&mut s, x).unwrap();
    assert_eq!(s.tape.shape(y), Shape::new(1, 64, 16, 16));
    drop(s);

    let mut store64 = store.cast::<f64>();
    zero_weights(&mut store64);
    let mut s = Session::new(&mut store64, Mode::Eval);
    let x = s.input(random(Shape::new(1, 32, 16, 16), 1.0, 3));
    let y = r.forward(&mut s, x).unwrap();
    assert!(s.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rfb_impulse_support_fits_the_window() {
    let r = Rfb::new("r", 2, 3);
    let mut store = ParamStore::<f64>::new();
    r.init(&mut store, &mut Rng::new(5));
    // Zero offsets so that a zero input maps to zero.
    for (name, p) in store.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (side, centre) = (41, 20);
    let mut x = Tensor::zeros(Shape::new(1, 2, side, side));
    x.set(0, 0, centre, centre, 1.0);
    x.set(0, 1, centre, centre, -1.0);
    let want = compose::rfb(&store, &r, &compose::arr(&x));
    let mut s = Session::new(&mut store, Mode::Eval);
    let xv = s.input(x);
    let y = r.forward(&mut s, xv).unwrap();
    let y = s.value(y);
    assert!(max_diff(y.data(), &want.data) < 1e-9);
    let mut radius = 0;
    for c in 0..3 {
        for yy in 0..side {
            for xx in 0..side {
                if y.at(0, c, yy, xx) != 0.0 {
                    radius = radius.max(yy.abs_diff(centre)).max(xx.abs_diff(centre));
                }
            }
        }
    }
    assert!(radius > 0, "impulse produced no response");
    assert!(radius <= 13, "response reaches {radius} pixels from the impulse");
}

#[test]
fn rfb_matches_recomposition() {
    let r = Rfb::new("r", 3, 4);
    let mut store = ParamStore::<f64>::new();
    r.init(&mut store, &mut Rng::new(30));
    perturb(&mut store, 31);
    let x = random(Shape::new(2, 3, 9, 7), 1.0, 32);
    let want = compose::rfb(&store, &r, &compose::arr(&x));
    let mut s = Session::new(&mut store, Mode::Eval);
    let xv = s.input(x);
    let y = r.forward(&mut s, xv).unwrap();
    assert!(max_diff(s.value(y).data(), &want.data) < 1e-5);
}

#[test]
fn msca_conv_substitute_zero_weights() {
    let a = Attention::new("a", 3, AttentionConfig { conv_substitute: true, ..cfg(true) });
    let mut store = ParamStore::<f64>::new();
    a.init(&mut store, &mut Rng::new(1));
    zero_weights(&mut store);
    let mut s = Session::new(&mut store, Mode::Eval);
    let x = s.input(random(Shape::new(1, 3, 4, 4), 2.0, 2));
    let y = a.forward(&mut s, x).unwrap();
    assert!(s.value(y).data().iter().all(|&v| v == 0.5));
}
