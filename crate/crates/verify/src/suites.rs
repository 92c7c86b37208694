//! Self-check suites. Each returns an [`Outcome`] with a one-line summary.

use c2f_core::blocks::{Acfm, AttentionConfig};
use c2f_core::losses::{total_loss, weight_map, WeightRule};
use c2f_core::metrics::{self, gaussian_blur, GrayMap, SegmentationPair};
use c2f_core::network::Network;
use c2f_core::nn::{Mode, ParamStore, Session};
use c2f_core::{Rng, Shape, Tape, Tensor, Variant};
use c2f_oracle as o;

use crate::cases::{all_cases, random, random_mask, tiny_config};
use crate::compose;
use crate::gradcheck::GradCheck;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn from_failures(failures: Vec<String>, ok: String) -> Self {
        if failures.is_empty() {
            Outcome { passed: true, detail: ok }
        } else {
            let n = failures.len();
            let mut detail = failures.into_iter().take(3).collect::<Vec<_>>().join("; ");
            if n > 3 {
                detail.push_str(&format!("; {} more", n - 3));
            }
            Outcome { passed: false, detail }
        }
    }
}

pub const SUITES: [&str; 7] = [
    "gradcheck",
    "conv-oracle",
    "edt-oracle",
    "metric-oracle",
    "loss-identities",
    "acfm-convexity",
    "composition-oracle",
];

pub fn run(name: &str) -> Option<Outcome> {
    Some(match name {
        "gradcheck" => gradients(),
        "conv-oracle" => kernels(),
        "edt-oracle" => distance_transform(),
        "metric-oracle" => metric_references(),
        "loss-identities" => loss_identities(),
        "acfm-convexity" => acfm_convexity(1000),
        "composition-oracle" => composition(),
        _ => return None,
    })
}

/// Every gradient case with the default tolerances.
pub fn gradients() -> Outcome {
    let opts = GradCheck::default();
    let mut failures = Vec::new();
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    let cases = all_cases();
    for case in &cases {
        match (case.run)(&opts) {
            Ok(r) => {
                compared += r.compared;
                worst = worst.max(r.worst);
                if !r.passed() {
                    failures.push(r.to_string());
                }
            }
            Err(e) => failures.push(format!("{}: {e}", case.name)),
        }
    }
    Outcome::from_failures(
        failures,
        format!("{} cases, {compared} elements, worst relative error {worst:.2e}", cases.len()),
    )
}

fn close(failures: &mut Vec<String>, what: &str, got: f64, want: f64, tol: f64) {
    if !((got - want).abs() < tol) {
        failures.push(format!("{what}: got {got}, expected {want}"));
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared arrays differ in length");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

const KERNEL_TOL: f64 = 1e-5;

/// conv2d, avg_pool, bilinear resize and the Gaussian blur against direct
/// summation, in both precisions, on random inputs up to 16x16.
pub fn kernels() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut note = |what: String, d: f64| {
        worst = worst.max(d);
        if !(d < KERNEL_TOL) {
            failures.push(format!("{what}: max abs diff {d:.3e}"));
        }
    };

    // Fixed case: 2x3x8x8 input, four 3x3 filters, dilation 3.
    let x = random(Shape::new(2, 3, 8, 8), 1.0, 1);
    let w = random(Shape::new(4, 3, 3, 3), 1.0, 2);
    let b = random(Shape::new(1, 4, 1, 1), 1.0, 3);
    note("conv 2x3x8x8 dilation 3".into(), conv_diff(&x, &w, Some(&b), 1, 3));

    for trial in 0..60 {
        let (n, ci, co) = (range(&mut rng, 1, 2), range(&mut rng, 1, 3), range(&mut rng, 1, 4));
        let (h, wd) = (range(&mut rng, 1, 16), range(&mut rng, 1, 16));
        let k = [1, 3, 5][rng.below(3)];
        let (stride, dilation) = (range(&mut rng, 1, 2), range(&mut rng, 1, 3));
        let x = random(Shape::new(n, ci, h, wd), 1.0, 100 + trial);
        let w = random(Shape::new(co, ci, k, k), 0.5, 200 + trial);
        let b = random(Shape::new(1, co, 1, 1), 0.5, 300 + trial);
        note(format!("conv trial {trial}"), conv_diff(&x, &w, Some(&b), stride, dilation));
    }

    for trial in 0..60 {
        let (h, wd) = (range(&mut rng, 2, 16), range(&mut rng, 2, 16));
        let x = random(Shape::new(2, 2, h, wd), 1.0, 400 + trial);
        let (k, stride) = match rng.below(3) {
            0 => (2, 2),
            1 => ([1, 3, 5, 31][rng.below(4)], 1),
            _ => (3, 2),
        };
        if k == stride && (h % k != 0 || wd % k != 0) {
            continue;
        }
        for d in pool_diff(&x, k, stride) {
            note(format!("avg_pool k{k} s{stride} trial {trial}"), d);
        }
    }

    for trial in 0..40 {
        let (h, wd) = (range(&mut rng, 1, 8), range(&mut rng, 1, 8));
        let x = random(Shape::new(1, 2, h, wd), 1.0, 500 + trial);
        let (oh, ow) = if trial % 2 == 0 { (2 * h, 2 * wd) } else { (range(&mut rng, 1, 16), range(&mut rng, 1, 16)) };
        for d in resize_diff(&x, oh, ow) {
            note(format!("resize {h}x{wd} to {oh}x{ow}"), d);
        }
    }

    for trial in 0..20 {
        let (h, wd) = (range(&mut rng, 1, 16), range(&mut rng, 1, 16));
        let mut r = Rng::new(600 + trial);
        let x: Vec<f64> = (0..h * wd).map(|_| r.next_f64()).collect();
        let d = max_diff(&gaussian_blur(&x, h, wd, 7, 5.0), &o::gaussian_blur(&x, h, wd, 7, 5.0));
        note(format!("gaussian {h}x{wd}"), d);
    }

    Outcome::from_failures(failures, format!("conv, pool, resize, gaussian: worst max abs diff {worst:.2e}"))
}

fn conv_diff(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, dilation: usize) -> f64 {
    let ws = w.shape();
    let expect = o::conv2d(
        &compose::arr(x),
        &o::Arr::new(ws.n, ws.c, ws.h, ws.w, w.data().to_vec()),
        b.map(|b| b.data()),
        stride,
        dilation,
    );
    let mut worst: f64 = 0.0;
    for f32_path in [false, true] {
        let got: Vec<f64> = if f32_path {
            let mut t = Tape::<f32>::new();
            let (xv, wv) = (t.leaf(x.cast()), t.leaf(w.cast()));
            let bv = b.map(|b| t.leaf(b.cast()));
            let y = t.conv2d(xv, wv, bv, stride, dilation).expect("valid conv");
            t.value(y).data().iter().map(|&v| v as f64).collect()
        } else {
            let mut t = Tape::<f64>::new();
            let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
            let bv = b.map(|b| t.leaf(b.clone()));
            let y = t.conv2d(xv, wv, bv, stride, dilation).expect("valid conv");
            t.value(y).data().to_vec()
        };
        worst = worst.max(max_diff(&got, &expect.data));
    }
    worst
}

fn pool_diff(x: &Tensor<f64>, k: usize, stride: usize) -> Vec<f64> {
    let expect = o::avg_pool(&compose::arr(x), k, stride);
    let mut t = Tape::<f64>::new();
    let v = t.leaf(x.clone());
    let Ok(y) = t.avg_pool(v, k, stride) else {
        return vec![];
    };
    let mut t32 = Tape::<f32>::new();
    let v32 = t32.leaf(x.cast());
    let y32 = t32.avg_pool(v32, k, stride).expect("same geometry");
    let got32: Vec<f64> = t32.value(y32).data().iter().map(|&v| v as f64).collect();
    vec![max_diff(t.value(y).data(), &expect.data), max_diff(&got32, &expect.data)]
}

fn resize_diff(x: &Tensor<f64>, oh: usize, ow: usize) -> Vec<f64> {
    let expect = o::bilinear_resize(&compose::arr(x), oh, ow);
    let mut t = Tape::<f64>::new();
    let v = t.leaf(x.clone());
    let y = t.resize(v, oh, ow).expect("valid resize");
    let mut t32 = Tape::<f32>::new();
    let v32 = t32.leaf(x.cast());
    let y32 = t32.resize(v32, oh, ow).expect("valid resize");
    let got32: Vec<f64> = t32.value(y32).data().iter().map(|&v| v as f64).collect();
    vec![max_diff(t.value(y).data(), &expect.data), max_diff(&got32, &expect.data)]
}

/// 200 random masks up to 16x16 against brute-force nearest-foreground search.
pub fn distance_transform() -> Outcome {
    let mut rng = Rng::new(77);
    let mut failures = Vec::new();
    for trial in 0..200 {
        let (h, w) = (range(&mut rng, 1, 16), range(&mut rng, 1, 16));
        let density = rng.uniform(0.01, 0.6);
        let mut mask: Vec<bool> = (0..h * w).map(|_| rng.next_f64() < density).collect();
        if !mask.iter().any(|&m| m) {
            let i = rng.below(h * w);
            mask[i] = true;
        }
        let field = metrics::distance_transform(&mask, h, w).expect("mask has foreground");
        let brute = o::distance_transform(&mask, h, w);
        for (i, &(d, _)) in brute.iter().enumerate() {
            let (r, c) = field.nearest[i];
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let via_index = ((r as f64 - y).powi(2) + (c as f64 - x).powi(2)).sqrt();
            if !mask[r * w + c] || (field.dist[i] - d).abs() >= 1e-9 || (via_index - d).abs() >= 1e-9 {
                failures.push(format!("trial {trial} ({h}x{w}) pixel {i}: got {} at {:?}, brute force {d}", field.dist[i], (r, c)));
                break;
            }
        }
    }
    Outcome::from_failures(failures, "200 masks up to 16x16 match brute force".into())
}

fn random_pair(rng: &mut Rng, h: usize, w: usize, degenerate: bool) -> (Vec<f64>, Vec<f64>) {
    let quantized = rng.next_f64() < 0.5;
    let pred: Vec<f64> = (0..h * w)
        .map(|_| {
            let v = rng.next_f64();
            if quantized { (v * 255.0).round() / 255.0 } else { v }
        })
        .collect();
    let mut gt: Vec<f64> = (0..h * w).map(|_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 }).collect();
    if degenerate {
        let fill = if rng.next_f64() < 0.5 { 1.0 } else { 0.0 };
        gt.iter_mut().for_each(|g| *g = fill);
    } else {
        gt[0] = 1.0;
        gt[h * w - 1] = 0.0;
    }
    (pred, gt)
}

fn pair(pred: &[f64], gt: &[f64], h: usize, w: usize) -> SegmentationPair {
    let p = GrayMap::new(h, w, pred.to_vec()).expect("sized");
    let g = GrayMap::new(h, w, gt.to_vec()).expect("sized");
    SegmentationPair::new(&p, &g).expect("valid pair")
}

const METRIC_TOL: f64 = 1e-6;

/// All four metrics on random 8x8 pairs against the straight-line references,
/// plus the perfect-prediction identities.
pub fn metric_references() -> Outcome {
    let mut rng = Rng::new(99);
    let mut failures = Vec::new();
    for trial in 0..60 {
        let (h, w) = if trial < 50 { (8, 8) } else { (range(&mut rng, 2, 12), range(&mut rng, 2, 12)) };
        let (pred, gt) = random_pair(&mut rng, h, w, trial % 10 == 9);
        let sp = pair(&pred, &gt, h, w);
        close(&mut failures, &format!("mae {trial}"), metrics::mae(&sp), o::mae(&pred, &gt), 1e-9);
        close(&mut failures, &format!("s-measure {trial}"), metrics::s_measure(&sp), o::s_measure(&pred, &gt, h, w), METRIC_TOL);
        let curve = metrics::e_measure_curve(&sp);
        let ref_curve = o::e_measure_curve(&pred, &gt);
        close(&mut failures, &format!("e-measure curve {trial}"), max_diff(&curve, &ref_curve), 0.0, METRIC_TOL);
        let (mean, max) = metrics::e_measure(&sp);
        let (rmean, rmax) = o::e_measure(&pred, &gt);
        close(&mut failures, &format!("e-measure mean {trial}"), mean, rmean, METRIC_TOL);
        close(&mut failures, &format!("e-measure max {trial}"), max, rmax, METRIC_TOL);
        let wf = metrics::weighted_f(&sp);
        match o::weighted_f(&pred, &gt, h, w) {
            Some(want) => close(&mut failures, &format!("weighted F {trial}"), wf.value, want, METRIC_TOL),
            None => {
                if !wf.empty_gt || wf.value != 0.0 {
                    failures.push(format!("weighted F {trial}: empty ground truth not flagged"));
                }
            }
        }
    }
    for trial in 0..10 {
        let (h, w) = (range(&mut rng, 4, 16), range(&mut rng, 4, 16));
        let (_, gt) = random_pair(&mut rng, h, w, false);
        let s = metrics::score(&pair(&gt, &gt, h, w));
        close(&mut failures, &format!("identity mae {trial}"), s.mae, 0.0, METRIC_TOL);
        close(&mut failures, &format!("identity s {trial}"), s.s_alpha, 1.0, METRIC_TOL);
        close(&mut failures, &format!("identity e max {trial}"), s.e_phi_max, 1.0, METRIC_TOL);
        close(&mut failures, &format!("identity e mean {trial}"), s.e_phi_mean, o::e_measure(&gt, &gt).0, METRIC_TOL);
        close(&mut failures, &format!("identity f {trial}"), s.f_w, 1.0, METRIC_TOL);
    }
    Outcome::from_failures(failures, "mae, S, E curve, weighted F match references on 60 pairs; identities hold".into())
}

fn saturated_total(g: &Tensor<f64>) -> f64 {
    let z = g.map(|v| if v == 1.0 { 20.0 } else { -20.0 });
    let mut t = Tape::<f64>::new();
    let zv = t.leaf(z);
    let l = total_loss(&mut t, zv, g, WeightRule::default()).expect("valid loss");
    t.value(l.total).data()[0]
}

/// Hand-evaluated loss values and the direct probability-space oracle.
pub fn loss_identities() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |what: &str, got: f64, want: f64, tol: f64| close(&mut failures, what, got, want, tol);

    let g = random_mask(Shape::new(2, 1, 16, 16), 5);
    check("saturated correct prediction", saturated_total(&g), 0.0, 1e-6);

    let ones = Tensor::<f64>::ones(Shape::new(1, 1, 4, 4));
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::full(ones.shape(), -60.0));
    let iou = t.weighted_iou(z, &ones, &ones).expect("shapes match");
    check("iou 4x4 all-ones target, zero prediction", t.value(iou).data()[0], 16.0 / 17.0, 1e-6);

    let mut single = Tensor::<f64>::zeros(Shape::new(1, 1, 9, 9));
    single.set(0, 0, 4, 4, 1.0);
    let w5 = weight_map(&single, WeightRule { lambda: 5.0, kernel: 3 }).expect("binary");
    check("single pixel weight, lambda 5", w5.0.at(0, 0, 4, 4), 49.0 / 9.0, 1e-6);
    let w4 = weight_map(&single, WeightRule { lambda: 4.0, kernel: 3 }).expect("binary");
    check("single pixel weight, lambda 4", w4.0.at(0, 0, 4, 4), 41.0 / 9.0, 1e-6);

    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::zeros(single.shape()));
    let bce = t.weighted_bce(z, &single, &w5.0).expect("shapes match");
    check("zero logits bce", t.value(bce).data()[0], std::f64::consts::LN_2, 1e-12);

    for seed in 0..5 {
        let shape = Shape::new(1, 1, 12, 12);
        let g = random_mask(shape, 10 + seed);
        let z = random(shape, 3.0, 20 + seed);
        let rule = WeightRule { lambda: 5.0, kernel: 5 };
        let w = weight_map(&g, rule).expect("binary");
        let ref_w = o::weight_map(g.data(), 12, 12, 5.0, 5);
        check("weight map vs reference", max_diff(w.0.data(), &ref_w), 0.0, 1e-12);
        let mut t = Tape::<f64>::new();
        let zv = t.leaf(z.clone());
        let l = total_loss(&mut t, zv, &g, rule).expect("valid loss");
        let (bce, iou, total) = (t.value(l.bce).data()[0], t.value(l.iou).data()[0], t.value(l.total).data()[0]);
        check("bce vs probability-space oracle", bce, o::weighted_bce(z.data(), g.data(), &ref_w), 1e-5);
        check("iou vs oracle", iou, o::weighted_iou(z.data(), g.data(), &ref_w), 1e-9);
        check("total is bce + iou", total, bce + iou, 1e-15);
    }
    Outcome::from_failures(failures, "saturated loss, 16/17 IoU, single-pixel weight, oracle agreement".into())
}

/// Random ACFM evaluations: the pre-convolution blend stays inside the
/// elementwise envelope of its two inputs.
pub fn acfm_convexity(evaluations: usize) -> Outcome {
    let mut rng = Rng::new(4242);
    let mut failures = Vec::new();
    let mut elements = 0usize;
    for e in 0..evaluations {
        let c = range(&mut rng, 1, 4);
        let (h2, w2) = (range(&mut rng, 1, 4), range(&mut rng, 1, 4));
        let use_bn = e % 2 == 0;
        let block = Acfm::new("a", c, AttentionConfig { reduction: 2, use_bn, conv_substitute: e % 7 == 3 });
        let mut store = ParamStore::<f32>::new();
        block.init(&mut store, &mut Rng::new(e as u64));
        let scale = [0.1, 1.0, 10.0, 100.0][rng.below(4)];
        let fa = random(Shape::new(1, c, 2 * h2, 2 * w2), scale, 10_000 + e as u64).cast::<f32>();
        let fb = random(Shape::new(1, c, h2, w2), scale, 20_000 + e as u64).cast::<f32>();
        let mut s = Session::new(&mut store, Mode::Eval);
        let (a, b) = (s.input(fa), s.input(fb));
        let out = block.forward(&mut s, a, b).expect("valid shapes");
        let up = s.tape.upsample(b, 2).expect("valid");
        let (fa, up, blend) = (s.value(a).data(), s.value(up).data(), s.value(out.blend).data());
        for i in 0..blend.len() {
            elements += 1;
            let (lo, hi) = (fa[i].min(up[i]), fa[i].max(up[i]));
            if !(lo <= blend[i] && blend[i] <= hi) {
                failures.push(format!("evaluation {e} element {i}: {} outside [{lo}, {hi}]", blend[i]));
                break;
            }
        }
    }
    Outcome::from_failures(failures, format!("{evaluations} evaluations, {elements} elements inside the envelope"))
}

/// Blocks and every network variant against the primitive re-composition.
pub fn composition() -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, variant) in Variant::ALL.iter().enumerate() {
        let net = Network::new(tiny_config(*variant));
        let mut store: ParamStore<f64> = net.init(k as u64 + 1);
        let mut rng = Rng::new(k as u64 + 50);
        for (name, p) in store.iter_mut() {
            if name.ends_with("running_mean") || name.ends_with(".beta") || name.ends_with(".bias") {
                p.data.iter_mut().for_each(|v| *v += 0.1 * rng.normal());
            } else if name.ends_with("running_var") || name.ends_with(".gamma") {
                p.data.iter_mut().for_each(|v| *v = rng.uniform(0.5, 1.5));
            }
        }
        let image = random(Shape::new(1, 3, 64, 64), 1.0, 60 + k as u64);
        let want = compose::network(&store, &net, &compose::arr(&image));
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.input(image);
        let got = match net.forward(&mut s, x) {
            Ok(f) => s.value(f.logits).clone(),
            Err(e) => {
                failures.push(format!("{variant}: {e}"));
                continue;
            }
        };
        let d = max_diff(got.data(), &want.data);
        worst = worst.max(d);
        if !(d < 1e-5) {
            failures.push(format!("{variant}: max abs diff {d:.3e}"));
        }
    }
    Outcome::from_failures(failures, format!("all five variants match re-composition, worst {worst:.2e}"))
}
