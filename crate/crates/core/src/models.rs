//! The SR model zoo: five network families at desk scale, plus the bicubic
//! baseline. Each family keeps the structural mechanism of its full-size
//! counterpart (post-upsampling with a shrink/expand bottleneck, iterative
//! back-projection, a two-stage cascade, progressive pyramid reconstruction,
//! a long residual chain) at channel counts a CPU trains in minutes.
//!
//! Upsampling layers use even kernels of size `2*stride` (padding `stride/2`)
//! so that output extents are exactly `scale * input`; the back-projection
//! units use the 8x8/stride-4 and 6x6/stride-2 projection kernels that are
//! standard for that family.

use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, Loss};
use crate::net::{infer_stack, LayerSpec, NetBuilder, Network};
use crate::par::par_map;
use crate::resample;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Multiply-accumulate count of one forward pass at a fixed input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlopCount(pub u64);

/// Declarative model description: family, scale and hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// Post-upsampling: feature extraction, shrink, `m` mapping layers,
    /// expand, one transposed-conv reconstruction.
    FsrcnnT { scale: usize, d: usize, s: usize, m: usize },
    /// Iterative up/down back-projection with `stages` up-projections and
    /// all intermediate HR maps concatenated before reconstruction.
    DbpnT {
        scale: usize,
        stages: usize,
        base: usize,
        feat: usize,
    },
    /// Two independently trained 2x back-projection stages composed to 4x.
    DbpnCascadeT { stages: usize, base: usize, feat: usize },
    /// Progressive reconstruction: one feature branch and one image branch
    /// per 2x pyramid level, joined by residual addition.
    LapsrnT {
        scale: usize,
        convs_per_level: usize,
        channels: usize,
    },
    /// Deep-residual stand-in for a second heavy expert: `blocks` residual
    /// pairs with a global skip, then an upsampling tail.
    DrlnProxyT {
        scale: usize,
        blocks: usize,
        channels: usize,
    },
    /// Pure bicubic resampler; no parameters.
    BicubicBaseline { scale: usize },
}

impl ModelSpec {
    /// Desk-scale defaults for each family at the given scale.
    pub fn default_for(name: &str, scale: usize) -> Result<ModelSpec> {
        match name {
            "fsrcnn_t" => Ok(ModelSpec::FsrcnnT {
                scale,
                d: 16,
                s: 4,
                m: 2,
            }),
            "dbpn_t" => Ok(ModelSpec::DbpnT {
                scale,
                stages: 2,
                base: 16,
                feat: 32,
            }),
            "dbpn_cascade_t" => Ok(ModelSpec::DbpnCascadeT {
                stages: 2,
                base: 16,
                feat: 32,
            }),
            "lapsrn_t" => Ok(ModelSpec::LapsrnT {
                scale,
                convs_per_level: 4,
                channels: 16,
            }),
            "drln_proxy_t" => Ok(ModelSpec::DrlnProxyT {
                scale,
                blocks: 8,
                channels: 16,
            }),
            "bicubic_baseline" => Ok(ModelSpec::BicubicBaseline { scale }),
            other => Err(Error::invalid(format!("unknown model name '{other}'"))),
        }
    }

    /// Reduced hyperparameters for exhaustive gradient checks.
    pub fn minimal_for(name: &str, scale: usize) -> Result<ModelSpec> {
        match name {
            "fsrcnn_t" => Ok(ModelSpec::FsrcnnT {
                scale,
                d: 4,
                s: 2,
                m: 1,
            }),
            "dbpn_t" => Ok(ModelSpec::DbpnT {
                scale,
                stages: 2,
                base: 2,
                feat: 4,
            }),
            "dbpn_cascade_t" => Ok(ModelSpec::DbpnCascadeT {
                stages: 1,
                base: 2,
                feat: 4,
            }),
            "lapsrn_t" => Ok(ModelSpec::LapsrnT {
                scale,
                convs_per_level: 1,
                channels: 3,
            }),
            "drln_proxy_t" => Ok(ModelSpec::DrlnProxyT {
                scale,
                blocks: 2,
                channels: 3,
            }),
            "bicubic_baseline" => Ok(ModelSpec::BicubicBaseline { scale }),
            other => Err(Error::invalid(format!("unknown model name '{other}'"))),
        }
    }

    pub fn family_names() -> &'static [&'static str] {
        &[
            "fsrcnn_t",
            "dbpn_t",
            "dbpn_cascade_t",
            "lapsrn_t",
            "drln_proxy_t",
            "bicubic_baseline",
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::FsrcnnT { .. } => "fsrcnn_t",
            ModelSpec::DbpnT { .. } => "dbpn_t",
            ModelSpec::DbpnCascadeT { .. } => "dbpn_cascade_t",
            ModelSpec::LapsrnT { .. } => "lapsrn_t",
            ModelSpec::DrlnProxyT { .. } => "drln_proxy_t",
            ModelSpec::BicubicBaseline { .. } => "bicubic_baseline",
        }
    }

    pub fn scale(&self) -> usize {
        match *self {
            ModelSpec::FsrcnnT { scale, .. }
            | ModelSpec::DbpnT { scale, .. }
            | ModelSpec::LapsrnT { scale, .. }
            | ModelSpec::DrlnProxyT { scale, .. }
            | ModelSpec::BicubicBaseline { scale } => scale,
            ModelSpec::DbpnCascadeT { .. } => 4,
        }
    }

    /// Default training loss for this family. The progressive pyramid model
    /// trains with the Charbonnier penalty; everything else with L2.
    pub fn default_loss(&self) -> Loss {
        match self {
            ModelSpec::LapsrnT { .. } => Loss::Charbonnier { eps: 1e-3 },
            _ => Loss::L2,
        }
    }

    fn validate(&self) -> Result<()> {
        let scale = self.scale();
        if scale != 2 && scale != 4 {
            return Err(Error::invalid(format!("scale must be 2 or 4, got {scale}")));
        }
        match *self {
            ModelSpec::FsrcnnT { d, s, m, .. } => {
                if d == 0 || s == 0 || m == 0 {
                    return Err(Error::invalid("fsrcnn_t needs d, s, m >= 1"));
                }
            }
            ModelSpec::DbpnT { stages, base, feat, .. }
            | ModelSpec::DbpnCascadeT { stages, base, feat } => {
                if stages == 0 || base == 0 || feat == 0 {
                    return Err(Error::invalid("dbpn needs stages, base, feat >= 1"));
                }
            }
            ModelSpec::LapsrnT {
                scale,
                convs_per_level,
                channels,
            } => {
                if convs_per_level == 0 || channels == 0 {
                    return Err(Error::invalid("lapsrn_t needs convs and channels >= 1"));
                }
                if scale == 2 {
                    // one pyramid level; fine
                } else if scale != 4 {
                    return Err(Error::invalid("lapsrn_t supports scale 2 or 4"));
                }
            }
            ModelSpec::DrlnProxyT { blocks, channels, .. } => {
                if blocks == 0 || channels == 0 {
                    return Err(Error::invalid("drln_proxy_t needs blocks and channels >= 1"));
                }
            }
            ModelSpec::BicubicBaseline { .. } => {}
        }
        Ok(())
    }

    /// The declarative layer stack in execution order. Empty for the bicubic
    /// baseline (a pure resampler).
    pub fn layer_stack(&self) -> Vec<LayerSpec> {
        let mut stack = Vec::new();
        match *self {
            ModelSpec::FsrcnnT { scale, d, s, m } => {
                stack.push(LayerSpec::conv(1, d, 5, 1, 2));
                stack.push(LayerSpec::prelu(d));
                stack.push(LayerSpec::conv(d, s, 1, 1, 0));
                stack.push(LayerSpec::prelu(s));
                for _ in 0..m {
                    stack.push(LayerSpec::conv(s, s, 3, 1, 1));
                    stack.push(LayerSpec::prelu(s));
                }
                stack.push(LayerSpec::conv(s, d, 1, 1, 0));
                stack.push(LayerSpec::prelu(d));
                stack.push(LayerSpec::tconv(d, 1, 2 * scale, scale, scale / 2));
            }
            ModelSpec::DbpnT {
                scale,
                stages,
                base,
                feat,
            } => {
                let (k, s, p) = projection_kernel(scale);
                stack.push(LayerSpec::conv(1, feat, 3, 1, 1));
                stack.push(LayerSpec::prelu(feat));
                stack.push(LayerSpec::conv(feat, base, 1, 1, 0));
                stack.push(LayerSpec::prelu(base));
                for stage in 0..stages {
                    // Up-projection: scale up, back-project down, re-project
                    // the residual, sum the two HR maps.
                    stack.push(LayerSpec::tconv(base, base, k, s, p));
                    stack.push(LayerSpec::prelu(base));
                    stack.push(LayerSpec::conv(base, base, k, s, p));
                    stack.push(LayerSpec::prelu(base));
                    stack.push(LayerSpec::add_skip(base));
                    stack.push(LayerSpec::tconv(base, base, k, s, p));
                    stack.push(LayerSpec::prelu(base));
                    stack.push(LayerSpec::add_skip(base));
                    if stage + 1 < stages {
                        // Down-projection mirrors the same pattern.
                        stack.push(LayerSpec::conv(base, base, k, s, p));
                        stack.push(LayerSpec::prelu(base));
                        stack.push(LayerSpec::tconv(base, base, k, s, p));
                        stack.push(LayerSpec::prelu(base));
                        stack.push(LayerSpec::add_skip(base));
                        stack.push(LayerSpec::conv(base, base, k, s, p));
                        stack.push(LayerSpec::prelu(base));
                        stack.push(LayerSpec::add_skip(base));
                    }
                }
                stack.push(LayerSpec::concat(base, stages * base));
                stack.push(LayerSpec::conv(stages * base, 1, 3, 1, 1));
            }
            ModelSpec::DbpnCascadeT { stages, base, feat } => {
                let stage = ModelSpec::DbpnT {
                    scale: 2,
                    stages,
                    base,
                    feat,
                };
                stack.extend(stage.layer_stack());
                stack.extend(stage.layer_stack());
            }
            ModelSpec::LapsrnT {
                scale,
                convs_per_level,
                channels,
            } => {
                // Main chain: the feature branch through all pyramid levels,
                // then the final residual projection joined with the
                // (side-branch) image pyramid by residual addition.
                let levels = if scale == 4 { 2 } else { 1 };
                for level in 0..levels {
                    for j in 0..convs_per_level {
                        let cin = if level == 0 && j == 0 { 1 } else { channels };
                        stack.push(LayerSpec::conv(cin, channels, 3, 1, 1));
                        stack.push(LayerSpec::prelu(channels));
                    }
                    stack.push(LayerSpec::tconv(channels, channels, 4, 2, 1));
                    stack.push(LayerSpec::prelu(channels));
                }
                stack.push(LayerSpec::conv(channels, 1, 3, 1, 1));
                stack.push(LayerSpec::add_skip(1));
            }
            ModelSpec::DrlnProxyT {
                scale,
                blocks,
                channels,
            } => {
                stack.push(LayerSpec::conv(1, channels, 3, 1, 1));
                stack.push(LayerSpec::prelu(channels));
                for _ in 0..blocks {
                    stack.push(LayerSpec::conv(channels, channels, 3, 1, 1));
                    stack.push(LayerSpec::prelu(channels));
                    stack.push(LayerSpec::conv(channels, channels, 3, 1, 1));
                    stack.push(LayerSpec::add_skip(channels));
                }
                stack.push(LayerSpec::conv(channels, channels, 3, 1, 1));
                stack.push(LayerSpec::add_skip(channels));
                stack.push(LayerSpec::tconv(channels, channels, 2 * scale, scale, scale / 2));
                stack.push(LayerSpec::prelu(channels));
                stack.push(LayerSpec::conv(channels, 1, 3, 1, 1));
            }
            ModelSpec::BicubicBaseline { .. } => {}
        }
        stack
    }

    /// Serialize as a flat key=value block, one entry per line.
    pub fn to_kv(&self) -> String {
        let mut out = format!("name={}\nscale={}\n", self.name(), self.scale());
        match *self {
            ModelSpec::FsrcnnT { d, s, m, .. } => {
                out.push_str(&format!("d={d}\ns={s}\nm={m}\n"));
            }
            ModelSpec::DbpnT { stages, base, feat, .. }
            | ModelSpec::DbpnCascadeT { stages, base, feat } => {
                out.push_str(&format!("stages={stages}\nbase={base}\nfeat={feat}\n"));
            }
            ModelSpec::LapsrnT {
                convs_per_level,
                channels,
                ..
            } => {
                out.push_str(&format!("convs_per_level={convs_per_level}\nchannels={channels}\n"));
            }
            ModelSpec::DrlnProxyT { blocks, channels, .. } => {
                out.push_str(&format!("blocks={blocks}\nchannels={channels}\n"));
            }
            ModelSpec::BicubicBaseline { .. } => {}
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<ModelSpec> {
        let mut map = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("spec line {}: missing '='", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let name = map
            .get("name")
            .ok_or_else(|| Error::Config("model spec is missing 'name'".into()))?
            .clone();
        let get = |key: &str, default: usize| -> Result<usize> {
            match map.get(key) {
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad value for '{key}': {v}"))),
                None => Ok(default),
            }
        };
        let scale = get("scale", 4)?;
        let mut spec = ModelSpec::default_for(&name, scale)?;
        match &mut spec {
            ModelSpec::FsrcnnT { d, s, m, .. } => {
                *d = get("d", *d)?;
                *s = get("s", *s)?;
                *m = get("m", *m)?;
            }
            ModelSpec::DbpnT { stages, base, feat, .. }
            | ModelSpec::DbpnCascadeT { stages, base, feat } => {
                *stages = get("stages", *stages)?;
                *base = get("base", *base)?;
                *feat = get("feat", *feat)?;
            }
            ModelSpec::LapsrnT {
                convs_per_level,
                channels,
                ..
            } => {
                *convs_per_level = get("convs_per_level", *convs_per_level)?;
                *channels = get("channels", *channels)?;
            }
            ModelSpec::DrlnProxyT { blocks, channels, .. } => {
                *blocks = get("blocks", *blocks)?;
                *channels = get("channels", *channels)?;
            }
            ModelSpec::BicubicBaseline { .. } => {}
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Instantiate the model with seeded He-uniform weights.
    pub fn build<T: Element>(&self, seed: u64) -> Result<Model<T>> {
        self.validate()?;
        let body = match *self {
            ModelSpec::FsrcnnT { scale, d, s, m } => {
                ModelBody::Net(build_fsrcnn(seed, scale, d, s, m))
            }
            ModelSpec::DbpnT {
                scale,
                stages,
                base,
                feat,
            } => ModelBody::Net(build_dbpn(seed, scale, stages, base, feat)),
            ModelSpec::DbpnCascadeT { stages, base, feat } => {
                let mut rng = Rng::new(seed);
                let s1 = build_dbpn(rng.next_u64(), 2, stages, base, feat);
                let s2 = build_dbpn(rng.next_u64(), 2, stages, base, feat);
                ModelBody::Cascade {
                    stage1: s1,
                    stage2: s2,
                }
            }
            ModelSpec::LapsrnT {
                scale,
                convs_per_level,
                channels,
            } => ModelBody::Net(build_lapsrn(seed, scale, convs_per_level, channels)),
            ModelSpec::DrlnProxyT {
                scale,
                blocks,
                channels,
            } => ModelBody::Net(build_drln_proxy(seed, scale, blocks, channels)),
            ModelSpec::BicubicBaseline { scale } => {
                let mut b = NetBuilder::<T>::new(seed);
                let x = b.input();
                let up = b.upsample_bicubic(x, scale);
                ModelBody::Net(b.build(up))
            }
        };
        let model = Model {
            spec: self.clone(),
            body,
        };
        // Catch any wiring mistake at build time rather than mid-training.
        model.verify_geometry().map_err(|e| {
            Error::shape(format!("model '{}' failed shape check: {e}", self.name()))
        })?;
        Ok(model)
    }

    /// Multiply-accumulate count of one forward pass on an `h x w` LR input.
    pub fn flops(&self, lr_h: usize, lr_w: usize) -> Result<FlopCount> {
        let model: Model<f32> = self.build(0)?;
        model.flops(lr_h, lr_w)
    }
}

fn projection_kernel(scale: usize) -> (usize, usize, usize) {
    match scale {
        2 => (6, 2, 2),
        _ => (8, 4, 2),
    }
}

fn build_fsrcnn<T: Element>(seed: u64, scale: usize, d: usize, s: usize, m: usize) -> Network<T> {
    let mut b = NetBuilder::<T>::new(seed);
    let x = b.input();
    let mut cur = b.conv(x, "feat", 1, d, 5, 1, 2);
    cur = b.prelu(cur, "feat_act", d);
    cur = b.conv(cur, "shrink", d, s, 1, 1, 0);
    cur = b.prelu(cur, "shrink_act", s);
    for i in 0..m {
        cur = b.conv(cur, &format!("map{i}"), s, s, 3, 1, 1);
        cur = b.prelu(cur, &format!("map{i}_act"), s);
    }
    cur = b.conv(cur, "expand", s, d, 1, 1, 0);
    cur = b.prelu(cur, "expand_act", d);
    let out = b.tconv(cur, "deconv", d, 1, 2 * scale, scale, scale / 2);
    b.build(out)
}

fn build_dbpn<T: Element>(
    seed: u64,
    scale: usize,
    stages: usize,
    base: usize,
    feat: usize,
) -> Network<T> {
    let (k, s, p) = projection_kernel(scale);
    let mut b = NetBuilder::<T>::new(seed);
    let x = b.input();
    let mut cur = b.conv(x, "feat0", 1, feat, 3, 1, 1);
    cur = b.prelu(cur, "feat0_act", feat);
    cur = b.conv(cur, "feat1", feat, base, 1, 1, 0);
    let mut lr_map = b.prelu(cur, "feat1_act", base);

    let mut hr_maps = Vec::with_capacity(stages);
    for stage in 0..stages {
        // Up-projection unit: project, back-project, correct with the
        // residual, project the correction, sum.
        let t0 = b.tconv(lr_map, &format!("up{stage}_t0"), base, base, k, s, p);
        let h0 = b.prelu(t0, &format!("up{stage}_t0_act"), base);
        let c0 = b.conv(h0, &format!("up{stage}_c0"), base, base, k, s, p);
        let l0 = b.prelu(c0, &format!("up{stage}_c0_act"), base);
        let e = b.sub(l0, lr_map);
        let t1 = b.tconv(e, &format!("up{stage}_t1"), base, base, k, s, p);
        let h1 = b.prelu(t1, &format!("up{stage}_t1_act"), base);
        let h = b.add(h0, h1);
        hr_maps.push(h);

        if stage + 1 < stages {
            // Down-projection unit, mirrored.
            let c1 = b.conv(h, &format!("down{stage}_c0"), base, base, k, s, p);
            let l1 = b.prelu(c1, &format!("down{stage}_c0_act"), base);
            let t2 = b.tconv(l1, &format!("down{stage}_t0"), base, base, k, s, p);
            let h2 = b.prelu(t2, &format!("down{stage}_t0_act"), base);
            let eh = b.sub(h2, h);
            let c2 = b.conv(eh, &format!("down{stage}_c1"), base, base, k, s, p);
            let l2 = b.prelu(c2, &format!("down{stage}_c1_act"), base);
            lr_map = b.add(l1, l2);
        }
    }
    let cat = b.concat(&hr_maps);
    let out = b.conv(cat, "recon", stages * base, 1, 3, 1, 1);
    b.build(out)
}

fn build_lapsrn<T: Element>(
    seed: u64,
    scale: usize,
    convs_per_level: usize,
    channels: usize,
) -> Network<T> {
    let levels = if scale == 4 { 2 } else { 1 };
    let mut b = NetBuilder::<T>::new(seed);
    let x = b.input();
    let mut feat = x;
    let mut img = x;
    for level in 0..levels {
        for j in 0..convs_per_level {
            let cin = if level == 0 && j == 0 { 1 } else { channels };
            feat = b.conv(feat, &format!("l{level}_f{j}"), cin, channels, 3, 1, 1);
            feat = b.prelu(feat, &format!("l{level}_f{j}_act"), channels);
        }
        feat = b.tconv(feat, &format!("l{level}_up"), channels, channels, 4, 2, 1);
        feat = b.prelu(feat, &format!("l{level}_up_act"), channels);
        let res = b.conv(feat, &format!("l{level}_res"), channels, 1, 3, 1, 1);
        let upscaled = b.tconv(img, &format!("l{level}_img"), 1, 1, 4, 2, 1);
        img = b.add(upscaled, res);
        if level == 0 && levels > 1 {
            b.tap("level1_image", img);
        }
    }
    b.build(img)
}

fn build_drln_proxy<T: Element>(
    seed: u64,
    scale: usize,
    blocks: usize,
    channels: usize,
) -> Network<T> {
    let mut b = NetBuilder::<T>::new(seed);
    let x = b.input();
    let head = b.conv(x, "head", 1, channels, 3, 1, 1);
    let head_act = b.prelu(head, "head_act", channels);
    let mut cur = head_act;
    for i in 0..blocks {
        let c0 = b.conv(cur, &format!("b{i}_c0"), channels, channels, 3, 1, 1);
        let a0 = b.prelu(c0, &format!("b{i}_act"), channels);
        let c1 = b.conv(a0, &format!("b{i}_c1"), channels, channels, 3, 1, 1);
        cur = b.add(c1, cur);
    }
    let fuse = b.conv(cur, "fuse", channels, channels, 3, 1, 1);
    let global = b.add(fuse, head_act);
    let up = b.tconv(global, "up", channels, channels, 2 * scale, scale, scale / 2);
    let up_act = b.prelu(up, "up_act", channels);
    let out = b.conv(up_act, "tail", channels, 1, 3, 1, 1);
    b.build(out)
}

#[derive(Debug, Clone)]
pub enum ModelBody<T> {
    Net(Network<T>),
    Cascade { stage1: Network<T>, stage2: Network<T> },
}

/// A built model: spec plus parameterized graph(s).
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub body: ModelBody<T>,
}

impl<T: Element> Model<T> {
    /// Super-resolve one LR patch; the output is clamped to [0, 1].
    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.body {
            ModelBody::Net(net) => Ok(net.forward(lr)?.clamp(T::ZERO, T::ONE)),
            ModelBody::Cascade { stage1, stage2 } => {
                let mid = stage1.forward(lr)?.clamp(T::ZERO, T::ONE);
                Ok(stage2.forward(&mid)?.clamp(T::ZERO, T::ONE))
            }
        }
    }

    /// Forward pass without the final clamp (training path).
    pub fn forward_raw(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.body {
            ModelBody::Net(net) => net.forward(lr),
            ModelBody::Cascade { stage1, stage2 } => {
                let mid = stage1.forward(lr)?.clamp(T::ZERO, T::ONE);
                stage2.forward(&mid)
            }
        }
    }

    /// Value of a named intermediate output (e.g. `level1_image`).
    pub fn tap(&self, lr: &Tensor<T>, name: &str) -> Result<Option<Tensor<T>>> {
        match &self.body {
            ModelBody::Net(net) => match net.tap_node(name) {
                Some(id) => {
                    let values = net.forward_all(lr)?;
                    Ok(Some(values[id].clone()))
                }
                None => Ok(None),
            },
            ModelBody::Cascade { .. } => Ok(None),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match &self.body {
            ModelBody::Net(net) => net.parameter_count(),
            ModelBody::Cascade { stage1, stage2 } => {
                stage1.parameter_count() + stage2.parameter_count()
            }
        }
    }

    /// Networks making up this model, in execution order.
    pub fn networks(&self) -> Vec<&Network<T>> {
        match &self.body {
            ModelBody::Net(net) => vec![net],
            ModelBody::Cascade { stage1, stage2 } => vec![stage1, stage2],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Network<T>> {
        match &mut self.body {
            ModelBody::Net(net) => vec![net],
            ModelBody::Cascade { stage1, stage2 } => vec![stage1, stage2],
        }
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            body: match &self.body {
                ModelBody::Net(net) => ModelBody::Net(net.cast()),
                ModelBody::Cascade { stage1, stage2 } => ModelBody::Cascade {
                    stage1: stage1.cast(),
                    stage2: stage2.cast(),
                },
            },
        }
    }

    pub fn flops(&self, lr_h: usize, lr_w: usize) -> Result<FlopCount> {
        match &self.body {
            ModelBody::Net(net) => Ok(FlopCount(net.flops((1, lr_h, lr_w))?)),
            ModelBody::Cascade { stage1, stage2 } => {
                let f1 = stage1.flops((1, lr_h, lr_w))?;
                let f2 = stage2.flops((1, lr_h * 2, lr_w * 2))?;
                Ok(FlopCount(f1 + f2))
            }
        }
    }

    /// Check that the graph scales an input by exactly the declared factor
    /// for a couple of extents, and that the declarative layer stack agrees.
    fn verify_geometry(&self) -> Result<()> {
        let scale = self.spec.scale();
        for hw in [8usize, 12] {
            let got = match &self.body {
                ModelBody::Net(net) => {
                    let shapes = net.infer_shapes((1, hw, hw))?;
                    *shapes.last().unwrap()
                }
                ModelBody::Cascade { stage1, stage2 } => {
                    let s1 = *stage1.infer_shapes((1, hw, hw))?.last().unwrap();
                    *stage2.infer_shapes(s1)?.last().unwrap()
                }
            };
            if got != (1, scale * hw, scale * hw) {
                return Err(Error::shape(format!(
                    "forward maps (1,{hw},{hw}) to {got:?}, expected (1,{},{})",
                    scale * hw,
                    scale * hw
                )));
            }
            let stack = self.spec.layer_stack();
            if !stack.is_empty() {
                let inferred = infer_stack(&stack, (1, hw, hw))?;
                if inferred != got {
                    return Err(Error::shape(format!(
                        "layer stack infers {inferred:?}, graph produces {got:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Training configuration. `threads` parallelizes gradient computation
/// within a mini-batch; per-sample gradients are reduced in sample order, so
/// results are identical for every thread count.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub threads: usize,
    /// Override the family's default loss.
    pub loss: Option<Loss>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            lr: 0.02,
            momentum: 0.9,
            seed: 0,
            batch_size: 4,
            threads: 1,
            loss: None,
        }
    }
}

/// Train `model` on `(lr, hr)` pairs; returns the mean training loss per
/// epoch. Deterministic given `opts.seed`.
pub fn train(
    model: &mut Model<f32>,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    opts: &TrainOptions,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if opts.epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1"));
    }
    let scale = model.spec.scale();
    for (lr, hr) in pairs {
        let (_, lh, lw) = lr.shape3()?;
        let (_, hh, hw) = hr.shape3()?;
        if (hh, hw) != (scale * lh, scale * lw) {
            return Err(Error::shape(format!(
                "pair dims {lh}x{lw} -> {hh}x{hw} do not match scale {scale}"
            )));
        }
    }
    let loss = opts.loss.unwrap_or_else(|| model.spec.default_loss());

    match &mut model.body {
        ModelBody::Net(net) => train_network(net, pairs, loss, opts, 0),
        ModelBody::Cascade { stage1, stage2 } => {
            // Stages are trained independently: stage 1 against a 2x-downscaled
            // target, stage 2 from that intermediate to the full target.
            let mids: Vec<Tensor<f32>> = pairs
                .iter()
                .map(|(_, hr)| {
                    let (_, hh, hw) = hr.shape3().expect("checked above");
                    resample::resize_tensor(hr, hh / 2, hw / 2).clamp(0.0, 1.0)
                })
                .collect();
            let pairs1: Vec<(Tensor<f32>, Tensor<f32>)> = pairs
                .iter()
                .zip(&mids)
                .map(|((lr, _), mid)| (lr.clone(), mid.clone()))
                .collect();
            let pairs2: Vec<(Tensor<f32>, Tensor<f32>)> = mids
                .iter()
                .zip(pairs)
                .map(|(mid, (_, hr))| (mid.clone(), hr.clone()))
                .collect();
            let l1 = train_network(stage1, &pairs1, loss, opts, 1)?;
            let l2 = train_network(stage2, &pairs2, loss, opts, 2)?;
            Ok(l1.iter().zip(&l2).map(|(a, b)| (a + b) / 2.0).collect())
        }
    }
}

fn train_network(
    net: &mut Network<f32>,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    loss: Loss,
    opts: &TrainOptions,
    stream: u64,
) -> Result<Vec<f64>> {
    if net.parameter_count() == 0 {
        // Nothing to optimize (bicubic baseline): report the loss trajectory.
        let mut out = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            let mut total = 0.0;
            for (lr, hr) in pairs {
                total += crate::loss::loss_value(loss, &net.forward(lr)?, hr)?;
            }
            out.push(total / pairs.len() as f64);
        }
        return Ok(out);
    }

    let mut rng = Rng::new(opts.seed ^ stream.wrapping_mul(0x9E37_79B9));
    let param_dims: Vec<Vec<usize>> = net.params().iter().map(|p| p.value.dims().to_vec()).collect();
    let mut velocity: Vec<Tensor<f32>> = param_dims.iter().map(|d| Tensor::zeros(d)).collect();
    let batch = opts.batch_size.max(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trajectory = Vec::with_capacity(opts.epochs);

    for _ in 0..opts.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch) {
            // Per-sample gradients, computed possibly in parallel but always
            // reduced in chunk order.
            let net_ref: &Network<f32> = net;
            let results = par_map(chunk, opts.threads, |_, &idx| {
                let (lr, hr) = &pairs[idx];
                let values = net_ref.forward_all(lr)?;
                let (l, grad_out) = loss_and_grad(loss, values.last().unwrap(), hr)?;
                let grads = net_ref.backward(&values, &grad_out)?;
                Ok::<_, Error>((l, grads.params))
            });

            let mut batch_grads: Vec<Tensor<f32>> =
                param_dims.iter().map(|d| Tensor::zeros(d)).collect();
            let inv = 1.0f32 / chunk.len() as f32;
            for r in results {
                let (l, grads) = r?;
                epoch_loss += l;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    acc.add_scaled(g, inv)?;
                }
            }

            if opts.lr > 0.0 {
                for (i, p) in net.params_mut().iter_mut().enumerate() {
                    if !p.trainable {
                        continue;
                    }
                    crate::optim::sgd_step(
                        &mut p.value,
                        &batch_grads[i],
                        &mut velocity[i],
                        opts.lr,
                        opts.momentum,
                    )?;
                }
            }
        }
        trajectory.push(epoch_loss / pairs.len() as f64);
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_scale_input_by_four() {
        for name in ModelSpec::family_names() {
            let spec = ModelSpec::minimal_for(name, 4).unwrap();
            let model: Model<f32> = spec.build(3).unwrap();
            let lr = Tensor::<f32>::from_fn(&[1, 16, 16], |i| (i % 17) as f32 / 17.0);
            let sr = model.forward(&lr).unwrap();
            assert_eq!(sr.dims(), &[1, 64, 64], "{name}");
        }
    }

    #[test]
    fn families_scale_input_by_two() {
        for name in ["fsrcnn_t", "dbpn_t", "lapsrn_t", "drln_proxy_t", "bicubic_baseline"] {
            let spec = ModelSpec::minimal_for(name, 2).unwrap();
            let model: Model<f32> = spec.build(5).unwrap();
            let lr = Tensor::<f32>::from_fn(&[1, 12, 12], |i| (i % 9) as f32 / 9.0);
            assert_eq!(model.forward(&lr).unwrap().dims(), &[1, 24, 24], "{name}");
        }
    }

    #[test]
    fn fsrcnn_default_shape_contract() {
        let spec = ModelSpec::FsrcnnT {
            scale: 4,
            d: 16,
            s: 4,
            m: 2,
        };
        let model: Model<f32> = spec.build(0).unwrap();
        let lr = Tensor::<f32>::zeros(&[1, 16, 16]);
        assert_eq!(model.forward(&lr).unwrap().dims(), &[1, 64, 64]);
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = ModelSpec::default_for("dbpn_t", 4).unwrap();
        let a: Model<f32> = spec.build(42).unwrap();
        let b: Model<f32> = spec.build(42).unwrap();
        for (na, nb) in a.networks().iter().zip(b.networks()) {
            for (pa, pb) in na.params().iter().zip(nb.params()) {
                assert_eq!(pa.value.data(), pb.value.data());
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for name in ["fsrcnn_t", "dbpn_t", "lapsrn_t", "drln_proxy_t"] {
            let spec = ModelSpec::minimal_for(name, 4).unwrap();
            let mut model: Model<f32> = spec.build(1).unwrap();
            for net in model.networks_mut() {
                for p in net.params_mut() {
                    p.value.scale(0.0);
                }
            }
            let lr = Tensor::<f32>::from_fn(&[1, 8, 8], |i| (i % 5) as f32 * 0.2);
            let sr = model.forward(&lr).unwrap();
            assert!(sr.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn bicubic_baseline_is_the_resampler() {
        let spec = ModelSpec::BicubicBaseline { scale: 4 };
        let model: Model<f32> = spec.build(0).unwrap();
        let lr = Tensor::<f32>::from_fn(&[1, 12, 12], |i| ((i * 31) % 97) as f32 / 97.0);
        let a = model.forward(&lr).unwrap();
        let b = resample::resize_tensor(&lr, 48, 48).clamp(0.0, 1.0);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn cascade_is_exact_composition() {
        let spec = ModelSpec::DbpnCascadeT {
            stages: 1,
            base: 2,
            feat: 4,
        };
        let model: Model<f32> = spec.build(7).unwrap();
        let lr = Tensor::<f32>::from_fn(&[1, 16, 16], |i| (i % 13) as f32 / 13.0);
        let composed = model.forward(&lr).unwrap();
        let ModelBody::Cascade { stage1, stage2 } = &model.body else {
            panic!("cascade body expected");
        };
        let mid = stage1.forward(&lr).unwrap().clamp(0.0, 1.0);
        let manual = stage2.forward(&mid).unwrap().clamp(0.0, 1.0);
        assert_eq!(composed.data(), manual.data());
        assert_eq!(mid.dims(), &[1, 32, 32]);
    }

    #[test]
    fn lapsrn_intermediate_level_has_half_dims() {
        let spec = ModelSpec::minimal_for("lapsrn_t", 4).unwrap();
        let model: Model<f32> = spec.build(9).unwrap();
        let lr = Tensor::<f32>::from_fn(&[1, 16, 16], |i| (i % 7) as f32 / 7.0);
        let mid = model.tap(&lr, "level1_image").unwrap().unwrap();
        assert_eq!(mid.dims(), &[1, 32, 32]);
    }

    #[test]
    fn flops_ordering_and_additivity() {
        let fsrcnn = ModelSpec::default_for("fsrcnn_t", 4).unwrap();
        let dbpn = ModelSpec::default_for("dbpn_t", 4).unwrap();
        assert!(fsrcnn.flops(16, 16).unwrap() < dbpn.flops(16, 16).unwrap());

        let cascade = ModelSpec::DbpnCascadeT {
            stages: 2,
            base: 16,
            feat: 32,
        };
        let stage = ModelSpec::DbpnT {
            scale: 2,
            stages: 2,
            base: 16,
            feat: 32,
        };
        let whole = cascade.flops(16, 16).unwrap();
        let s1 = stage.flops(16, 16).unwrap();
        let s2 = stage.flops(32, 32).unwrap();
        assert_eq!(whole.0, s1.0 + s2.0);
    }

    #[test]
    fn training_is_deterministic_and_lr_zero_is_noop() {
        let spec = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap();
        let mut rng = Rng::new(12);
        let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..4)
            .map(|_| {
                let v = rng.uniform(0.2, 0.8) as f32;
                (
                    Tensor::filled(&[1, 8, 8], v),
                    Tensor::filled(&[1, 32, 32], v),
                )
            })
            .collect();

        let mut frozen: Model<f32> = spec.build(5).unwrap();
        let before: Vec<f32> = frozen.networks()[0].params()[0].value.data().to_vec();
        train(
            &mut frozen,
            &pairs,
            &TrainOptions {
                epochs: 1,
                lr: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(frozen.networks()[0].params()[0].value.data(), &before[..]);

        let opts = TrainOptions {
            epochs: 3,
            lr: 0.05,
            seed: 77,
            ..Default::default()
        };
        let mut a: Model<f32> = spec.build(5).unwrap();
        let mut b: Model<f32> = spec.build(5).unwrap();
        let la = train(&mut a, &pairs, &opts).unwrap();
        let lb = train(&mut b, &pairs, &opts).unwrap();
        assert_eq!(la, lb);
        for (na, nb) in a.networks().iter().zip(b.networks()) {
            for (pa, pb) in na.params().iter().zip(nb.params()) {
                assert_eq!(pa.value.data(), pb.value.data());
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap();
        let mut rng = Rng::new(8);
        let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..6)
            .map(|_| {
                (
                    Tensor::from_fn(&[1, 8, 8], |_| rng.next_f64() as f32),
                    Tensor::from_fn(&[1, 32, 32], |_| rng.next_f64() as f32),
                )
            })
            .collect();
        let mut single: Model<f32> = spec.build(2).unwrap();
        let mut multi: Model<f32> = spec.build(2).unwrap();
        let base = TrainOptions {
            epochs: 2,
            lr: 0.03,
            batch_size: 4,
            seed: 3,
            ..Default::default()
        };
        let l1 = train(&mut single, &pairs, &base).unwrap();
        let l4 = train(
            &mut multi,
            &pairs,
            &TrainOptions {
                threads: 4,
                ..base
            },
        )
        .unwrap();
        assert_eq!(l1, l4);
        for (na, nb) in single.networks().iter().zip(multi.networks()) {
            for (pa, pb) in na.params().iter().zip(nb.params()) {
                assert_eq!(pa.value.data(), pb.value.data());
            }
        }
    }

    #[test]
    fn loss_drops_tenfold_on_constant_images() {
        let spec = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap();
        let mut model: Model<f32> = spec.build(4).unwrap();
        let mut rng = Rng::new(15);
        let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..8)
            .map(|_| {
                let v = rng.uniform(0.3, 0.7) as f32;
                (
                    Tensor::filled(&[1, 8, 8], v),
                    Tensor::filled(&[1, 32, 32], v),
                )
            })
            .collect();
        let losses = train(
            &mut model,
            &pairs,
            &TrainOptions {
                epochs: 20,
                lr: 0.2,
                momentum: 0.9,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            losses[19] * 10.0 <= losses[0],
            "epoch1 {} vs epoch20 {}",
            losses[0],
            losses[19]
        );
    }

    #[test]
    fn spec_kv_round_trip() {
        let specs = [
            ModelSpec::FsrcnnT {
                scale: 4,
                d: 12,
                s: 3,
                m: 4,
            },
            ModelSpec::DbpnT {
                scale: 2,
                stages: 3,
                base: 8,
                feat: 16,
            },
            ModelSpec::BicubicBaseline { scale: 4 },
        ];
        for spec in specs {
            let text = spec.to_kv();
            let parsed = ModelSpec::from_kv(&text).unwrap();
            assert_eq!(parsed, spec);
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        let spec = ModelSpec::minimal_for("fsrcnn_t", 4).unwrap();
        let mut model: Model<f32> = spec.build(0).unwrap();
        assert!(train(&mut model, &[], &TrainOptions::default()).is_err());
    }
}
