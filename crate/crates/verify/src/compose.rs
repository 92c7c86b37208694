//! Eval-mode re-evaluation of blocks and networks from the naive oracle
//! primitives. Only layer names and hyper-parameters are taken from the
//! core structs; every number is recomputed here.

use c2f_core::blocks::{Acfm, Attention, Dgcm, Msca, Rfb};
use c2f_core::network::Network;
use c2f_core::nn::{Conv, ConvBn, ParamStore};
use c2f_core::ops::norm::BN_EPS;
use c2f_core::{Shape, Tensor};
use c2f_oracle as o;
use c2f_oracle::Arr;

pub fn arr(t: &Tensor<f64>) -> Arr {
    let s = t.shape();
    Arr::new(s.n, s.c, s.h, s.w, t.data().to_vec())
}

pub fn tensor(a: &Arr) -> Tensor<f64> {
    Tensor::from_vec(Shape::new(a.n, a.c, a.h, a.w), a.data.clone()).expect("array dims match data")
}

fn data<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    &store.get(name).unwrap_or_else(|| panic!("missing parameter {name}")).data
}

pub fn conv(store: &ParamStore<f64>, c: &Conv, x: &Arr) -> Arr {
    let w = Arr::new(c.out_c, c.in_c, c.k, c.k, data(store, &c.weight_name()).to_vec());
    o::conv2d(x, &w, Some(data(store, &c.bias_name())), c.stride, c.dilation)
}

pub fn conv_bn(store: &ParamStore<f64>, layer: &ConvBn, x: &Arr) -> Arr {
    let mut y = conv(store, &layer.conv, x);
    if let Some(bn) = &layer.bn {
        let f = |k: &str| data(store, &format!("{}.{k}", bn.name));
        y = o::batch_norm_eval(&y, f("gamma"), f("beta"), f("running_mean"), f("running_var"), BN_EPS);
    }
    if layer.relu {
        y = o::relu(&y);
    }
    y
}

pub fn msca(store: &ParamStore<f64>, m: &Msca, x: &Arr) -> Arr {
    let mut local = x.clone();
    for layer in &m.local {
        local = conv_bn(store, layer, &local);
    }
    let mut global = o::global_avg_pool(x);
    for layer in &m.global {
        global = conv_bn(store, layer, &global);
    }
    o::sigmoid(&o::add_broadcast(&local, &global))
}

pub fn attention(store: &ParamStore<f64>, a: &Attention, x: &Arr) -> Arr {
    match a {
        Attention::Msca(m) => msca(store, m, x),
        Attention::Conv(c) => o::sigmoid(&conv(store, c, x)),
    }
}

pub fn rfb(store: &ParamStore<f64>, r: &Rfb, x: &Arr) -> Arr {
    let outs: Vec<Arr> = r
        .branches
        .iter()
        .map(|branch| branch.iter().fold(x.clone(), |y, layer| conv_bn(store, layer, &y)))
        .collect();
    let refs: Vec<&Arr> = outs.iter().collect();
    let merged = conv_bn(store, &r.merge, &o::concat(&refs));
    let short = conv_bn(store, &r.shortcut, x);
    o::relu(&o::add(&merged, &short))
}

/// `(fused, blend, attention)`.
pub fn acfm(store: &ParamStore<f64>, a: &Acfm, fa: &Arr, fb: &Arr) -> (Arr, Arr, Arr) {
    let up = o::upsample(fb, 2);
    let att = attention(store, &a.attention, &o::add(fa, &up));
    let mut blend = fa.clone();
    for i in 0..blend.data.len() {
        let m = att.data[i];
        blend.data[i] = m * fa.data[i] + (1.0 - m) * up.data[i];
    }
    (conv_bn(store, &a.fuse, &blend), blend, att)
}

pub fn dgcm(store: &ParamStore<f64>, d: &Dgcm, f: &Arr) -> Arr {
    let fc = conv_bn(store, &d.conv_c, f);
    let fcm = o::mul(&fc, &attention(store, &d.att_c, &fc));
    let fp = conv_bn(store, &d.conv_p, &o::avg_pool(f, 2, 2));
    let fpm = o::mul(&fp, &attention(store, &d.att_p, &fp));
    let cpm = conv_bn(store, &d.merge, &o::add(&fcm, &o::upsample(&fpm, 2)));
    conv_bn(store, &d.out, &o::add(f, &cpm))
}

/// Backbone features `f1..f5`.
pub fn backbone(store: &ParamStore<f64>, net: &Network, image: &Arr) -> Vec<Arr> {
    let mut x = image.clone();
    let mut feats = Vec::new();
    for stage in &net.backbone.stages {
        for layer in stage {
            x = conv_bn(store, layer, &x);
        }
        feats.push(x.clone());
    }
    feats
}

/// Stride-8 logits for any variant.
pub fn network(store: &ParamStore<f64>, net: &Network, image: &Arr) -> Arr {
    let f = backbone(store, net, image);
    decoder(store, net, &f[2], &f[3], &f[4])
}

/// Everything after the backbone, fed only `f3`, `f4`, `f5`.
pub fn decoder(store: &ParamStore<f64>, net: &Network, f3: &Arr, f4: &Arr, f5: &Arr) -> Arr {
    let r3 = rfb(store, &net.rfb[0], f3);
    let r4 = rfb(store, &net.rfb[1], f4);
    let r5 = rfb(store, &net.rfb[2], f5);
    let top = match (&net.acfm, &net.dgcm) {
        (None, None) => o::add(&o::add(&r3, &o::upsample(&r4, 2)), &o::upsample(&r5, 4)),
        (fusers, refiners) => {
            let fuse = |i: usize, hi: &Arr, lo: &Arr| match fusers {
                Some(a) => acfm(store, &a[i], hi, lo).0,
                None => o::add(hi, &o::upsample(lo, 2)),
            };
            let refine = |i: usize, x: Arr| match refiners {
                Some(d) => dgcm(store, &d[i], &x),
                None => x,
            };
            let d1 = refine(0, fuse(0, &r4, &r5));
            refine(1, fuse(1, &r3, &d1))
        }
    };
    conv(store, &net.head, &top)
}

