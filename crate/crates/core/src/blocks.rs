//! Receptive-field, channel-attention, cross-level fusion and global-context blocks.

use crate::error::{Error, Result};
use crate::nn::{Conv, ConvBn, ParamStore, Session};
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Real;

/// Settings shared by every attention site in a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub reduction: usize,
    pub use_bn: bool,
    /// Replace every MSCA with a single 3x3 convolution plus sigmoid.
    pub conv_substitute: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { reduction: 4, use_bn: true, conv_substitute: false }
    }
}

fn conv_layer(name: &str, conv: Conv, bn: bool, relu: bool) -> ConvBn {
    if bn {
        ConvBn::new(name, conv, relu)
    } else {
        ConvBn { relu, ..ConvBn::plain(name, conv) }
    }
}

/// Multi-scale channel attention.
///
/// Two pointwise bottlenecks `C -> max(C / r, 1) -> C`: one on the full map,
/// one on its global average. Their sum goes through a sigmoid, so the gate
/// lies in `(0, 1)` and keeps the input's spatial size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Msca {
    pub channels: usize,
    pub local: [ConvBn; 2],
    pub global: [ConvBn; 2],
}

impl Msca {
    pub fn new(name: &str, channels: usize, reduction: usize, use_bn: bool) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        let branch = |b: &str| {
            [
                conv_layer(&format!("{name}.{b}1"), Conv::new("", channels, hidden, 1), use_bn, true),
                conv_layer(&format!("{name}.{b}2"), Conv::new("", hidden, channels, 1), use_bn, false),
            ]
        };
        Msca { channels, local: branch("local"), global: branch("global") }
    }

    pub fn hidden(&self) -> usize {
        self.local[0].conv.out_c
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        for layer in self.local.iter().chain(&self.global) {
            layer.init(store, rng);
        }
    }

    /// Pre-sigmoid sum of the local map and the broadcast global vector.
    pub fn logits<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let c = s.tape.shape(x).c;
        if c != self.channels {
            return Err(Error::shape("msca", format!("input has {c} channels, block expects {}", self.channels)));
        }
        let mut local = x;
        for layer in &self.local {
            local = layer.forward(s, local)?;
        }
        let mut global = s.tape.global_avg_pool(x);
        for layer in &self.global {
            global = layer.forward(s, global)?;
        }
        s.tape.add(local, global)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let z = self.logits(s, x)?;
        Ok(s.tape.sigmoid(z))
    }
}

/// An attention site: MSCA, or the 3x3-conv substitute used for ablation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Attention {
    Msca(Msca),
    Conv(Conv),
}

impl Attention {
    pub fn new(name: &str, channels: usize, cfg: AttentionConfig) -> Self {
        if cfg.conv_substitute {
            Attention::Conv(Conv::new(format!("{name}.msca_conv"), channels, channels, 3))
        } else {
            Attention::Msca(Msca::new(&format!("{name}.msca"), channels, cfg.reduction, cfg.use_bn))
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        match self {
            Attention::Msca(m) => m.init(store, rng),
            Attention::Conv(c) => c.init(store, rng),
        }
    }

    /// Gate values strictly inside `(0, 1)`, same shape as `x`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        match self {
            Attention::Msca(m) => m.forward(s, x),
            Attention::Conv(c) => msca_conv_substitute(s, c, x),
        }
    }
}

/// `sigmoid(conv3x3(x))`, standing in for MSCA.
pub fn msca_conv_substitute<T: Real>(s: &mut Session<'_, T>, conv: &Conv, x: Var) -> Result<Var> {
    if conv.k != 3 || conv.in_c != conv.out_c || conv.stride != 1 {
        return Err(Error::param("msca_conv_substitute", "needs a same-padded 3x3 C->C convolution"));
    }
    let z = conv.forward(s, x)?;
    Ok(s.tape.sigmoid(z))
}

/// Receptive field block: four branches of growing kernel and dilation,
/// concatenated and merged, plus a 1x1 shortcut.
///
/// Branch `k` in 2..=4 is `1x1 -> (2k-1)x(2k-1) -> 3x3 dilated by 2k-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rfb {
    pub in_c: usize,
    pub out_c: usize,
    pub branches: Vec<Vec<ConvBn>>,
    pub merge: ConvBn,
    pub shortcut: ConvBn,
}

impl Rfb {
    pub fn new(name: &str, in_c: usize, out_c: usize) -> Self {
        let layer = |suffix: String, conv: Conv| ConvBn::new(&format!("{name}.{suffix}"), conv, false);
        let mut branches = vec![vec![layer("b1.0".into(), Conv::new("", in_c, out_c, 1))]];
        for k in 2..=4usize {
            let size = 2 * k - 1;
            branches.push(vec![
                layer(format!("b{k}.0"), Conv::new("", in_c, out_c, 1)),
                layer(format!("b{k}.1"), Conv::new("", out_c, out_c, size)),
                layer(format!("b{k}.2"), Conv::new("", out_c, out_c, 3).dilation(size)),
            ]);
        }
        Rfb {
            in_c,
            out_c,
            branches,
            merge: layer("merge".into(), Conv::new("", 4 * out_c, out_c, 1)),
            shortcut: layer("b5.0".into(), Conv::new("", in_c, out_c, 1)),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        for layer in self.branches.iter().flatten() {
            layer.init(store, rng);
        }
        self.merge.init(store, rng);
        self.shortcut.init(store, rng);
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut y = x;
            for layer in branch {
                y = layer.forward(s, y)?;
            }
            outs.push(y);
        }
        let cat = s.tape.concat(&outs)?;
        let merged = self.merge.forward(s, cat)?;
        let short = self.shortcut.forward(s, x)?;
        let sum = s.tape.add(merged, short)?;
        Ok(s.tape.relu(sum))
    }
}

/// Attention-induced cross-level fusion of a feature map with its
/// half-resolution neighbour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Acfm {
    pub attention: Attention,
    pub fuse: ConvBn,
}

#[derive(Clone, Copy, Debug)]
pub struct AcfmOutput {
    /// Fused feature after the 3x3 conv, batch norm and ReLU.
    pub fused: Var,
    /// Gated blend before the convolution.
    pub blend: Var,
    pub attention: Var,
}

impl Acfm {
    pub fn new(name: &str, channels: usize, cfg: AttentionConfig) -> Self {
        Acfm {
            attention: Attention::new(name, channels, cfg),
            fuse: ConvBn::new(&format!("{name}.fuse"), Conv::new("", channels, channels, 3), true),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.attention.init(store, rng);
        self.fuse.init(store, rng);
    }

    /// `A = att(Fa + up(Fb))`, `blend = A * Fa + (1 - A) * up(Fb)`,
    /// `fused = relu(bn(conv3x3(blend)))`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, fa: Var, fb: Var) -> Result<AcfmOutput> {
        let (sa, sb) = (s.tape.shape(fa), s.tape.shape(fb));
        if sa.h != 2 * sb.h || sa.w != 2 * sb.w || sa.c != sb.c || sa.n != sb.n {
            return Err(Error::shape(
                "acfm",
                format!("low-resolution input {sb} must have the channels of {sa} and exactly half its size"),
            ));
        }
        let up = s.tape.upsample(fb, 2)?;
        let sum = s.tape.add(fa, up)?;
        let attention = self.attention.forward(s, sum)?;
        let blend = s.tape.blend(attention, fa, up)?;
        let fused = self.fuse.forward(s, blend)?;
        Ok(AcfmOutput { fused, blend, attention })
    }
}

/// Dual-branch global context module: a full-resolution and a pooled
/// half-resolution branch, each gated by attention, merged and added back
/// to the input through a residual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dgcm {
    pub conv_c: ConvBn,
    pub conv_p: ConvBn,
    pub att_c: Attention,
    pub att_p: Attention,
    pub merge: ConvBn,
    pub out: ConvBn,
}

impl Dgcm {
    pub fn new(name: &str, channels: usize, cfg: AttentionConfig) -> Self {
        let conv = || Conv::new("", channels, channels, 3);
        Dgcm {
            conv_c: ConvBn::new(&format!("{name}.conv_c"), conv(), true),
            conv_p: ConvBn::new(&format!("{name}.conv_p"), conv(), true),
            att_c: Attention::new(&format!("{name}.att_c"), channels, cfg),
            att_p: Attention::new(&format!("{name}.att_p"), channels, cfg),
            merge: ConvBn::new(&format!("{name}.merge"), conv(), false),
            out: ConvBn::new(&format!("{name}.out"), conv(), false),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv_c.init(store, rng);
        self.conv_p.init(store, rng);
        self.att_c.init(store, rng);
        self.att_p.init(store, rng);
        self.merge.init(store, rng);
        self.out.init(store, rng);
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, f: Var) -> Result<Var> {
        let sh = s.tape.shape(f);
        if sh.h % 2 != 0 || sh.w % 2 != 0 {
            return Err(Error::shape(
                "dgcm",
                format!("input {sh} has an odd side; pad it to even size before the module"),
            ));
        }
        let fc = self.conv_c.forward(s, f)?;
        let ac = self.att_c.forward(s, fc)?;
        let fcm = s.tape.mul(fc, ac)?;
        let pooled = s.tape.avg_pool(f, 2, 2)?;
        let fp = self.conv_p.forward(s, pooled)?;
        let ap = self.att_p.forward(s, fp)?;
        let fpm = s.tape.mul(fp, ap)?;
        let up = s.tape.upsample(fpm, 2)?;
        let sum = s.tape.add(fcm, up)?;
        let cpm = self.merge.forward(s, sum)?;
        let res = s.tape.add(f, cpm)?;
        self.out.forward(s, res)
    }
}

