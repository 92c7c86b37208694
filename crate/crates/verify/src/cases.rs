//! Named gradient-check cases for every differentiable op, block and the
//! tiny network.

use c2f_core::blocks::{Acfm, Attention, AttentionConfig, Dgcm, Msca, Rfb};
use c2f_core::losses::{total_loss, weight_map, WeightRule};
use c2f_core::network::Network;
use c2f_core::nn::{Conv, ConvBn, Mode, ParamStore};
use c2f_core::tape::NormStats;
use c2f_core::{NetworkConfig, Result, Rng, Shape, Tensor, Variant};

use crate::gradcheck::{check, GradCheck, GradReport};

pub struct Case {
    pub name: &'static str,
    pub run: fn(&GradCheck) -> Result<GradReport>,
}

/// Normal entries scaled by `scale`.
pub fn random(shape: Shape, scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| scale * rng.normal())
}

/// Entries bounded away from zero so kinks stay outside the difference step.
fn away_from_zero(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.uniform(0.1, 1.0);
        if rng.next_f64() < 0.5 { -m } else { m }
    })
}

/// Random binary mask with both labels present.
pub fn random_mask(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let mut t = Tensor::from_fn(shape, |_, _, _, _| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 });
    t.data_mut()[0] = 1.0;
    t.data_mut()[1] = 0.0;
    t
}

fn empty() -> ParamStore<f64> {
    ParamStore::new()
}

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

fn conv_case(opts: &GradCheck, name: &str, x: Shape, out_c: usize, k: usize, stride: usize, dilation: usize) -> Result<GradReport> {
    let conv = Conv::new("c", x.c, out_c, k).stride(stride).dilation(dilation);
    let mut store = ParamStore::new();
    conv.init(&mut store, &mut Rng::new(3));
    if let Some(b) = store.get_mut("c.bias") {
        b.data.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
    }
    check(name, &store, Mode::Eval, &[random(x, 1.0, 11)], opts, |s, v| conv.forward(s, v[0]))
}

fn bn_store(c: usize) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    c2f_core::nn::BatchNorm::new("bn", c).init(&mut store);
    let mut rng = Rng::new(5);
    for key in ["bn.gamma", "bn.beta"] {
        store.get_mut(key).unwrap().data.iter_mut().for_each(|v| *v += 0.5 * rng.normal());
    }
    store.get_mut("bn.running_mean").unwrap().data.iter_mut().for_each(|v| *v = 0.3 * rng.normal());
    store.get_mut("bn.running_var").unwrap().data.iter_mut().for_each(|v| *v = rng.uniform(0.5, 2.0));
    store
}

fn attention_cfg(use_bn: bool, conv_substitute: bool) -> AttentionConfig {
    AttentionConfig { reduction: 2, use_bn, conv_substitute }
}

fn block_store(init: impl FnOnce(&mut ParamStore<f64>, &mut Rng)) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    init(&mut store, &mut Rng::new(21));
    // Non-trivial affine parameters so every BN path carries signal.
    let mut rng = Rng::new(22);
    for (name, p) in store.iter_mut() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            p.data.iter_mut().for_each(|v| *v += 0.2 * rng.normal());
        }
    }
    store
}

/// The tiny configuration: backbone [8, 12, 16, 24, 32], 16 fusion channels.
pub fn tiny_config(variant: Variant) -> NetworkConfig {
    NetworkConfig { backbone_channels: [8, 12, 16, 24, 32], rfb_channels: 16, msca_reduction: 4, msca_bn: true, variant }
}

fn network_case(opts: &GradCheck, variant: Variant, mode: Mode) -> Result<GradReport> {
    let net = Network::new(tiny_config(variant));
    let store = block_store(|st, _| *st = net.init(9));
    // Batch 4 as in training: two-sample batch statistics are too sharply
    // curved for a 1e-4 difference step.
    let n = if mode == Mode::Train { 4 } else { 2 };
    let image = random(s(n, 3, 64, 64), 1.0, 31);
    let g = random_mask(s(n, 1, 64, 64), 32);
    let rule = WeightRule { lambda: 5.0, kernel: 7 };
    let name = format!("network {} ({:?} mode)", variant.name(), mode);
    let opts = GradCheck { per_tensor: opts.per_tensor.min(3), ..*opts };
    check(&name, &store, mode, &[image], &opts, |s, v| {
        let out = net.forward(s, v[0])?;
        Ok(total_loss(&mut s.tape, out.logits, &g, rule)?.total)
    })
}

pub fn op_cases() -> Vec<Case> {
    vec![
        Case { name: "conv2d 3x3", run: |o| conv_case(o, "conv2d 3x3", s(2, 3, 6, 6), 4, 3, 1, 1) },
        Case { name: "conv2d 3x3 dilation 3", run: |o| conv_case(o, "conv2d 3x3 dilation 3", s(2, 3, 8, 8), 4, 3, 1, 3) },
        Case { name: "conv2d 3x3 stride 2", run: |o| conv_case(o, "conv2d 3x3 stride 2", s(1, 2, 7, 6), 3, 3, 2, 1) },
        Case { name: "conv2d 5x5", run: |o| conv_case(o, "conv2d 5x5", s(1, 2, 6, 6), 2, 5, 1, 1) },
        Case { name: "conv2d 1x1", run: |o| conv_case(o, "conv2d 1x1", s(2, 4, 3, 3), 3, 1, 1, 1) },
        Case {
            name: "batch_norm train",
            run: |o| {
                check("batch_norm train", &bn_store(3), Mode::Train, &[random(s(2, 3, 3, 4), 1.5, 41)], o, |s, v| {
                    let (g, b) = (s.param("bn.gamma")?, s.param("bn.beta")?);
                    Ok(s.tape.batch_norm(v[0], g, b, NormStats::Batch)?.0)
                })
            },
        },
        Case {
            name: "batch_norm eval",
            run: |o| {
                check("batch_norm eval", &bn_store(3), Mode::Eval, &[random(s(2, 3, 3, 4), 1.5, 42)], o, |s, v| {
                    c2f_core::nn::BatchNorm::new("bn", 3).forward(s, v[0])
                })
            },
        },
        Case {
            name: "relu",
            run: |o| check("relu", &empty(), Mode::Eval, &[away_from_zero(s(1, 2, 4, 4), 43)], o, |s, v| Ok(s.tape.relu(v[0]))),
        },
        Case {
            name: "sigmoid",
            run: |o| check("sigmoid", &empty(), Mode::Eval, &[random(s(1, 2, 4, 4), 2.0, 44)], o, |s, v| Ok(s.tape.sigmoid(v[0]))),
        },
        Case {
            name: "avg_pool 2x2",
            run: |o| check("avg_pool 2x2", &empty(), Mode::Eval, &[random(s(1, 2, 6, 4), 1.0, 45)], o, |s, v| s.tape.avg_pool(v[0], 2, 2)),
        },
        Case {
            name: "avg_pool 5x5 stride 1",
            run: |o| {
                check("avg_pool 5x5 stride 1", &empty(), Mode::Eval, &[random(s(1, 2, 6, 7), 1.0, 46)], o, |s, v| {
                    s.tape.avg_pool(v[0], 5, 1)
                })
            },
        },
        Case {
            name: "global_avg_pool",
            run: |o| {
                check("global_avg_pool", &empty(), Mode::Eval, &[random(s(2, 3, 4, 5), 1.0, 47)], o, |s, v| {
                    Ok(s.tape.global_avg_pool(v[0]))
                })
            },
        },
        Case {
            name: "upsample x2",
            run: |o| check("upsample x2", &empty(), Mode::Eval, &[random(s(1, 2, 3, 4), 1.0, 48)], o, |s, v| s.tape.upsample(v[0], 2)),
        },
        Case {
            name: "resize 5x7 to 8x3",
            run: |o| {
                check("resize 5x7 to 8x3", &empty(), Mode::Eval, &[random(s(1, 1, 5, 7), 1.0, 49)], o, |s, v| {
                    s.tape.resize(v[0], 8, 3)
                })
            },
        },
        Case {
            name: "add",
            run: |o| {
                let ins = [random(s(1, 2, 3, 3), 1.0, 50), random(s(1, 2, 3, 3), 1.0, 51)];
                check("add", &empty(), Mode::Eval, &ins, o, |s, v| s.tape.add(v[0], v[1]))
            },
        },
        Case {
            name: "add broadcast",
            run: |o| {
                let ins = [random(s(2, 2, 3, 3), 1.0, 52), random(s(2, 2, 1, 1), 1.0, 53)];
                check("add broadcast", &empty(), Mode::Eval, &ins, o, |s, v| s.tape.add(v[0], v[1]))
            },
        },
        Case {
            name: "mul",
            run: |o| {
                let ins = [random(s(1, 2, 3, 3), 1.0, 54), random(s(1, 2, 3, 3), 1.0, 55)];
                check("mul", &empty(), Mode::Eval, &ins, o, |s, v| s.tape.mul(v[0], v[1]))
            },
        },
        Case {
            name: "mul broadcast",
            run: |o| {
                let ins = [random(s(2, 2, 3, 3), 1.0, 56), random(s(2, 2, 1, 1), 1.0, 57)];
                check("mul broadcast", &empty(), Mode::Eval, &ins, o, |s, v| s.tape.mul(v[0], v[1]))
            },
        },
        Case {
            name: "blend",
            run: |o| {
                let ins = [random(s(1, 2, 3, 3), 1.0, 58), random(s(1, 2, 3, 3), 1.0, 59), random(s(1, 2, 3, 3), 1.0, 60)];
                check("blend", &empty(), Mode::Eval, &ins, o, |s, v| {
                    let a = s.tape.sigmoid(v[0]);
                    s.tape.blend(a, v[1], v[2])
                })
            },
        },
        Case {
            name: "concat",
            run: |o| {
                let ins = [random(s(2, 1, 3, 3), 1.0, 61), random(s(2, 3, 3, 3), 1.0, 62)];
                check("concat", &empty(), Mode::Eval, &ins, o, |s, v| s.tape.concat(v))
            },
        },
        Case {
            name: "slice_channels",
            run: |o| {
                check("slice_channels", &empty(), Mode::Eval, &[random(s(2, 4, 2, 3), 1.0, 63)], o, |s, v| {
                    s.tape.slice_channels(v[0], 1, 2)
                })
            },
        },
        Case {
            name: "sum",
            run: |o| check("sum", &empty(), Mode::Eval, &[random(s(1, 2, 3, 3), 1.0, 64)], o, |s, v| Ok(s.tape.sum(v[0]))),
        },
        Case {
            name: "weighted_bce",
            run: |o| {
                let g = random_mask(s(1, 1, 6, 6), 65);
                let w = weight_map(&g, WeightRule { lambda: 5.0, kernel: 3 }).unwrap().0;
                check("weighted_bce", &empty(), Mode::Eval, &[random(s(1, 1, 6, 6), 2.0, 66)], o, move |s, v| {
                    s.tape.weighted_bce(v[0], &g, &w)
                })
            },
        },
        Case {
            name: "weighted_iou",
            run: |o| {
                let g = random_mask(s(1, 1, 6, 6), 67);
                let w = weight_map(&g, WeightRule { lambda: 5.0, kernel: 3 }).unwrap().0;
                check("weighted_iou", &empty(), Mode::Eval, &[random(s(1, 1, 6, 6), 2.0, 68)], o, move |s, v| {
                    s.tape.weighted_iou(v[0], &g, &w)
                })
            },
        },
        Case {
            name: "total_loss with upsampling",
            run: |o| {
                let g = random_mask(s(2, 1, 8, 8), 69);
                check("total_loss with upsampling", &empty(), Mode::Eval, &[random(s(2, 1, 4, 4), 2.0, 70)], o, move |s, v| {
                    Ok(total_loss(&mut s.tape, v[0], &g, WeightRule { lambda: 5.0, kernel: 5 })?.total)
                })
            },
        },
    ]
}

pub fn block_cases() -> Vec<Case> {
    vec![
        Case {
            name: "msca",
            run: |o| {
                let m = Msca::new("m", 4, 2, true);
                let store = block_store(|st, r| m.init(st, r));
                check("msca", &store, Mode::Train, &[random(s(2, 4, 4, 4), 1.0, 71)], o, |s, v| m.forward(s, v[0]))
            },
        },
        Case {
            name: "msca without bn",
            run: |o| {
                let m = Msca::new("m", 4, 2, false);
                let store = block_store(|st, r| m.init(st, r));
                check("msca without bn", &store, Mode::Eval, &[random(s(1, 4, 4, 4), 1.0, 72)], o, |s, v| m.forward(s, v[0]))
            },
        },
        Case {
            name: "msca conv substitute",
            run: |o| {
                let a = Attention::new("a", 3, attention_cfg(true, true));
                let store = block_store(|st, r| a.init(st, r));
                check("msca conv substitute", &store, Mode::Eval, &[random(s(1, 3, 4, 4), 1.0, 73)], o, |s, v| {
                    a.forward(s, v[0])
                })
            },
        },
        Case {
            name: "conv-bn-relu",
            run: |o| {
                let c = ConvBn::new("cb", Conv::new("", 2, 3, 3), true);
                let store = block_store(|st, r| c.init(st, r));
                check("conv-bn-relu", &store, Mode::Train, &[random(s(2, 2, 4, 4), 1.0, 74)], o, |s, v| c.forward(s, v[0]))
            },
        },
        Case {
            name: "rfb",
            run: |o| {
                let r = Rfb::new("r", 3, 4);
                let store = block_store(|st, rng| r.init(st, rng));
                check("rfb", &store, Mode::Train, &[random(s(2, 3, 6, 6), 1.0, 75)], o, |s, v| r.forward(s, v[0]))
            },
        },
        Case {
            name: "acfm",
            run: |o| {
                let a = Acfm::new("a", 4, attention_cfg(true, false));
                let store = block_store(|st, r| a.init(st, r));
                let ins = [random(s(2, 4, 4, 4), 1.0, 76), random(s(2, 4, 2, 2), 1.0, 77)];
                check("acfm", &store, Mode::Train, &ins, o, |s, v| Ok(a.forward(s, v[0], v[1])?.fused))
            },
        },
        Case {
            name: "dgcm",
            run: |o| {
                let d = Dgcm::new("d", 4, attention_cfg(true, false));
                let store = block_store(|st, r| d.init(st, r));
                check("dgcm", &store, Mode::Train, &[random(s(2, 4, 4, 4), 1.0, 78)], o, |s, v| d.forward(s, v[0]))
            },
        },
    ]
}

pub fn network_cases() -> Vec<Case> {
    vec![
        Case { name: "network full (train)", run: |o| network_case(o, Variant::Full, Mode::Train) },
        Case { name: "network full (eval)", run: |o| network_case(o, Variant::Full, Mode::Eval) },
        Case { name: "network msca->conv (train)", run: |o| network_case(o, Variant::MscaConv, Mode::Train) },
        Case { name: "network basic (train)", run: |o| network_case(o, Variant::Basic, Mode::Train) },
    ]
}

pub fn all_cases() -> Vec<Case> {
    let mut v = op_cases();
    v.extend(block_cases());
    v.extend(network_cases());
    v
}
