//! Backbone, two-stage fusion cascade, prediction head and ablation variants.

use std::fmt;
use std::str::FromStr;

use crate::blocks::{Acfm, AttentionConfig, Dgcm, Rfb};
use crate::checkpoint::CheckpointError;
use crate::error::{Error, Result};
use crate::nn::{Conv, ConvBn, Mode, ParamStore, Session};
use crate::ops::resize::ResizePlan;
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

/// Which parts of the cascade are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Both fusion modules and both context modules.
    Full,
    /// Sum of the three receptive-field outputs, no fusion or context modules.
    Basic,
    /// Fusion modules chained directly, no context modules.
    BasicAcfm,
    /// Context modules with fusion replaced by upsample-and-add.
    BasicDgcm,
    /// Full network with every channel attention replaced by a 3x3 conv.
    MscaConv,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Basic, Variant::BasicAcfm, Variant::BasicDgcm, Variant::Full, Variant::MscaConv];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Basic => "basic",
            Variant::BasicAcfm => "basic+acfm",
            Variant::BasicDgcm => "basic+dgcm",
            Variant::MscaConv => "msca->conv",
        }
    }

    pub fn uses_acfm(self) -> bool {
        matches!(self, Variant::Full | Variant::BasicAcfm | Variant::MscaConv)
    }

    pub fn uses_dgcm(self) -> bool {
        matches!(self, Variant::Full | Variant::BasicDgcm | Variant::MscaConv)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| !"_- >+".contains(*c)).collect();
        match key.as_str() {
            "full" => Ok(Variant::Full),
            "basic" => Ok(Variant::Basic),
            "basicacfm" => Ok(Variant::BasicAcfm),
            "basicdgcm" => Ok(Variant::BasicDgcm),
            "mscaconv" => Ok(Variant::MscaConv),
            _ => Err(format!("unknown variant `{s}` (expected full, basic, basic+acfm, basic+dgcm, msca->conv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub backbone_channels: [usize; 5],
    pub rfb_channels: usize,
    pub msca_reduction: usize,
    pub msca_bn: bool,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            backbone_channels: [16, 24, 32, 48, 64],
            rfb_channels: 64,
            msca_reduction: 4,
            msca_bn: true,
            variant: Variant::Full,
        }
    }
}

impl NetworkConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            reduction: self.msca_reduction,
            use_bn: self.msca_bn,
            conv_substitute: self.variant == Variant::MscaConv,
        }
    }

    /// Recovers the architecture from parameter names and shapes.
    pub fn infer_from(store: &ParamStore<f32>) -> Result<Self, CheckpointError> {
        let dim = |name: &str, axis: usize| -> Result<usize, CheckpointError> {
            store
                .get(name)
                .and_then(|p| p.dims.get(axis).copied())
                .ok_or_else(|| CheckpointError::Missing(name.to_string()))
        };
        let mut backbone_channels = [0; 5];
        for (i, c) in backbone_channels.iter_mut().enumerate() {
            *c = dim(&format!("backbone.s{}.conv1.conv.weight", i + 1), 0)?;
        }
        let rfb_channels = dim("head.weight", 1)?;
        let has = |prefix: &str| store.iter().any(|(k, _)| k.starts_with(prefix));
        let acfm = has("acfm1.");
        let dgcm = has("dgcm1.");
        let substitute = has("acfm1.msca_conv.") || has("dgcm1.att_c.msca_conv.");
        let variant = match (acfm, dgcm, substitute) {
            (_, _, true) => Variant::MscaConv,
            (true, true, false) => Variant::Full,
            (true, false, false) => Variant::BasicAcfm,
            (false, true, false) => Variant::BasicDgcm,
            (false, false, false) => Variant::Basic,
        };
        let msca_prefix = if acfm { "acfm1.msca" } else { "dgcm1.att_c.msca" };
        let (msca_reduction, msca_bn) = match store.get(&format!("{msca_prefix}.local1.conv.weight")) {
            Some(p) => (rfb_channels / p.dims[0].max(1), true),
            None => match store.get(&format!("{msca_prefix}.local1.weight")) {
                Some(p) => (rfb_channels / p.dims[0].max(1), false),
                None => (4, true),
            },
        };
        Ok(NetworkConfig { backbone_channels, rfb_channels, msca_reduction, msca_bn, variant })
    }
}

/// Plain five-stage convolutional backbone with strides 2, 4, 8, 16, 32.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backbone {
    pub stages: Vec<[ConvBn; 2]>,
}

/// Backbone outputs `f1..f5`.
#[derive(Clone, Copy, Debug)]
pub struct BackboneFeatures(pub [Var; 5]);

impl Backbone {
    pub const STRIDE: usize = 32;

    pub fn new(channels: [usize; 5]) -> Self {
        let mut in_c = 3;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = format!("backbone.s{}", i + 1);
                let stage = [
                    ConvBn::new(&format!("{name}.conv1"), Conv::new("", in_c, c, 3).stride(2), true),
                    ConvBn::new(&format!("{name}.conv2"), Conv::new("", c, c, 3), true),
                ];
                in_c = c;
                stage
            })
            .collect();
        Backbone { stages }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        for layer in self.stages.iter().flatten() {
            layer.init(store, rng);
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<BackboneFeatures> {
        let sh = s.tape.shape(image);
        if sh.h % Self::STRIDE != 0 || sh.w % Self::STRIDE != 0 || sh.h == 0 || sh.w == 0 {
            return Err(Error::InputSize { h: sh.h, w: sh.w, multiple: Self::STRIDE });
        }
        if sh.c != 3 {
            return Err(Error::shape("backbone", format!("expected an RGB image, got {sh}")));
        }
        let mut x = image;
        let mut feats = [image; 5];
        for (i, stage) in self.stages.iter().enumerate() {
            for layer in stage {
                x = layer.forward(s, x)?;
            }
            feats[i] = x;
        }
        Ok(BackboneFeatures(feats))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub config: NetworkConfig,
    pub backbone: Backbone,
    pub rfb: [Rfb; 3],
    pub acfm: Option<[Acfm; 2]>,
    pub dgcm: Option<[Dgcm; 2]>,
    pub head: Conv,
}

/// Values recorded by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub features: BackboneFeatures,
    /// Receptive-field outputs at strides 8, 16, 32.
    pub rfb: [Var; 3],
    /// Stride-8 single-channel logits.
    pub logits: Var,
}

fn at_stage(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Shape { op, detail } => Error::Shape { op: "forward", detail: format!("stage {stage} ({op}): {detail}") },
        other => other,
    }
}

impl Network {
    pub fn new(config: NetworkConfig) -> Self {
        let cr = config.rfb_channels;
        let bc = config.backbone_channels;
        let att = config.attention();
        let v = config.variant;
        Network {
            backbone: Backbone::new(bc),
            rfb: [Rfb::new("rfb3", bc[2], cr), Rfb::new("rfb4", bc[3], cr), Rfb::new("rfb5", bc[4], cr)],
            acfm: v.uses_acfm().then(|| [Acfm::new("acfm1", cr, att), Acfm::new("acfm2", cr, att)]),
            dgcm: v.uses_dgcm().then(|| [Dgcm::new("dgcm1", cr, att), Dgcm::new("dgcm2", cr, att)]),
            head: Conv::new("head", cr, 1, 1),
            config,
        }
    }

    /// Fresh parameters; the draw order is fixed, so equal seeds give equal stores.
    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, &mut rng);
        for r in &self.rfb {
            r.init(&mut store, &mut rng);
        }
        for i in 0..2 {
            if let Some(a) = &self.acfm {
                a[i].init(&mut store, &mut rng);
            }
            if let Some(d) = &self.dgcm {
                d[i].init(&mut store, &mut rng);
            }
        }
        self.head.init(&mut store, &mut rng);
        store
    }

    /// Image `(n, 3, H, W)` with `H, W` divisible by 32 to logits `(n, 1, H/8, W/8)`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Forward> {
        let features = self.backbone.forward(s, image)?;
        let [_, _, f3, f4, f5] = features.0;
        let r3 = self.rfb[0].forward(s, f3).map_err(at_stage("rfb3"))?;
        let r4 = self.rfb[1].forward(s, f4).map_err(at_stage("rfb4"))?;
        let r5 = self.rfb[2].forward(s, f5).map_err(at_stage("rfb5"))?;

        let top = match (&self.acfm, &self.dgcm) {
            (None, None) => {
                let u4 = s.tape.upsample(r4, 2)?;
                let u5 = s.tape.upsample(r5, 4)?;
                let sum = s.tape.add(r3, u4).map_err(at_stage("basic fusion"))?;
                s.tape.add(sum, u5).map_err(at_stage("basic fusion"))?
            }
            (acfm, dgcm) => {
                let f45 = match acfm {
                    Some(a) => a[0].forward(s, r4, r5).map_err(at_stage("acfm1"))?.fused,
                    None => up_add(s, r4, r5).map_err(at_stage("fusion 4-5"))?,
                };
                let d1 = match dgcm {
                    Some(d) => d[0].forward(s, f45).map_err(at_stage("dgcm1"))?,
                    None => f45,
                };
                let f345 = match acfm {
                    Some(a) => a[1].forward(s, r3, d1).map_err(at_stage("acfm2"))?.fused,
                    None => up_add(s, r3, d1).map_err(at_stage("fusion 3-45"))?,
                };
                match dgcm {
                    Some(d) => d[1].forward(s, f345).map_err(at_stage("dgcm2"))?,
                    None => f345,
                }
            }
        };
        let logits = self.head.forward(s, top).map_err(at_stage("head"))?;
        Ok(Forward { features, rfb: [r3, r4, r5], logits })
    }
}

fn up_add<T: Real>(s: &mut Session<'_, T>, hi: Var, lo: Var) -> Result<Var> {
    let up = s.tape.upsample(lo, 2)?;
    s.tape.add(hi, up)
}

/// Logits to a probability map at `(out_h, out_w)`: bilinear upsampling in
/// logit space, then a sigmoid.
pub fn predict<T: Real>(logits: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let plan = ResizePlan::new(logits.shape(), out_h, out_w);
    let up = plan.forward(logits.data());
    let data = up.into_iter().map(|z| T::one() / (T::one() + (-z).exp())).collect();
    Tensor::from_vec(plan.output, data).expect("plan output matches data")
}

/// A network description together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T: Real = f32> {
    pub net: Network,
    pub store: ParamStore<T>,
}

impl NetworkParams<f32> {
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let net = Network::new(config);
        let store = net.init(seed);
        NetworkParams { net, store }
    }

    /// Adopts a loaded store after checking it against the architecture it implies.
    pub fn from_store(store: ParamStore<f32>) -> Result<Self, CheckpointError> {
        let config = NetworkConfig::infer_from(&store)?;
        Self::from_store_with(config, store)
    }

    /// Adopts a loaded store for an explicit architecture; the first name or
    /// shape disagreement is reported.
    pub fn from_store_with(config: NetworkConfig, store: ParamStore<f32>) -> Result<Self, CheckpointError> {
        let net = Network::new(config);
        let expected: ParamStore<f32> = net.init(0);
        for (name, p) in expected.iter() {
            match store.get(name) {
                None => return Err(CheckpointError::Missing(name.clone())),
                Some(q) if q.dims != p.dims => {
                    return Err(CheckpointError::ShapeManifest {
                        name: name.clone(),
                        expected: p.dims.clone(),
                        found: q.dims.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some((name, _)) = store.iter().find(|(k, _)| !expected.contains(k)) {
            return Err(CheckpointError::Unexpected(name.clone()));
        }
        let mut store = store;
        for (name, p) in store.iter_mut() {
            p.trainable = expected.get(name).is_some_and(|e| e.trainable);
        }
        Ok(NetworkParams { net, store })
    }
}

impl<T: Real> NetworkParams<T> {
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams { net: self.net.clone(), store: self.store.cast() }
    }

    /// Eval-mode logits for a batch of images.
    pub fn logits(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&mut self.store, Mode::Eval);
        let x = s.input(image.clone());
        let out = self.net.forward(&mut s, x)?;
        Ok(s.value(out.logits).clone())
    }

    /// Eval-mode probability map resized to `(out_h, out_w)`.
    pub fn predict(&mut self, image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let logits = self.logits(image)?;
        Ok(predict(&logits, out_h, out_w))
    }
}
