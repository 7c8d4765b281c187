//! The fusion network: initial extraction, `N` stages of cross promotion
//! followed by the residual-prior and frequency-domain updates, the
//! reconstruction head and the auxiliary residual decoder.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::{Plane, Rgb, SourcePair, YCbCr};
use crate::math;
use crate::ops::BatchStats;
use crate::tensor::{Shape, Tensor};

/// Momentum of the running-statistics update in training-mode batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

/// Replacement for the frequency-domain update, used by the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdfmMode {
    Frequency,
    TransformerSub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: usize,
    pub dilation_rates: Vec<usize>,
    /// Channel-attention bottleneck divisor.
    pub reduction: usize,
    pub use_cpm: bool,
    pub use_residual_branch: bool,
    pub fdfm_mode: FdfmMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 3,
            channels: 32,
            dilation_rates: vec![1, 3, 5],
            reduction: 8,
            use_cpm: true,
            use_residual_branch: true,
            fdfm_mode: FdfmMode::Frequency,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("stages must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction must be at least 1".into()));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates[0] == 0 {
            return Err(Error::Config("dilation rates must be non-empty and positive".into()));
        }
        if self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("dilation rates must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }
}

/// How batch-norm layers behave in one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated afterwards.
    Train,
    /// Running statistics.
    Eval,
    /// Pass-through, for exact algebraic checks.
    Identity,
}

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Decoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: Group,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: Option<usize>,
    dilation: usize,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Relu,
    Sigmoid,
}

/// Conv → BN → activation.
#[derive(Clone, Copy, Debug)]
struct ConvBn {
    conv: Conv,
    bn: Bn,
    act: Act,
}

#[derive(Clone, Debug)]
struct Cpm {
    f_to_r: ConvBn,
    r_to_f: ConvBn,
}

#[derive(Clone, Debug)]
struct Rpm {
    ca_fc1: Conv,
    ca_fc2: Conv,
    sa: Conv,
    dilated: Vec<Conv>,
}

#[derive(Clone, Debug)]
enum Global {
    Frequency(ConvBn),
    Attention { q: Conv, k: Conv, v: Conv, o: Conv },
}

#[derive(Clone, Debug)]
struct Fdfm {
    spatial: ConvBn,
    global: Global,
}

#[derive(Clone, Debug)]
struct Stage {
    cpm: Option<Cpm>,
    rpm: Option<Rpm>,
    fdfm: Fdfm,
}

/// Parameter and statistics registry used while building the layers.
struct Builder<'a> {
    params: Vec<Param>,
    stats: Vec<RunningStats>,
    group: Group,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, shape: Shape, bound: f64) -> usize {
        let value = if bound == 0.0 {
            Tensor::zeros(shape)
        } else {
            let rng = &mut *self.rng;
            Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-bound..bound))
        };
        self.params.push(Param { name, value, group: self.group });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, dilation: usize, bias: bool) -> Conv {
        let bound = 1.0 / math::sqrt((cin * k * k) as f64);
        let w = self.tensor(format!("{name}.weight"), Shape::new(cout, cin, k, k), bound);
        let b = bias.then(|| self.tensor(format!("{name}.bias"), Shape::new(1, cout, 1, 1), 0.0));
        Conv { w, b, dilation }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.tensor(format!("{name}.gamma"), Shape::new(1, c, 1, 1), 0.0);
        self.params[gamma].value = Tensor::full(Shape::new(1, c, 1, 1), 1.0);
        let beta = self.tensor(format!("{name}.beta"), Shape::new(1, c, 1, 1), 0.0);
        self.stats.push(RunningStats { name: name.to_string(), mean: vec![0.0; c], var: vec![1.0; c] });
        Bn { gamma, beta, stats: self.stats.len() - 1 }
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, act: Act) -> ConvBn {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, k, 1, true);
        let bn = self.bn(&format!("{name}.bn"), cout);
        ConvBn { conv, bn, act }
    }
}

/// Per-stage pair of fusion-branch and residual-branch features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureState {
    pub fusion: Var,
    pub residual: Option<Var>,
    pub stage: usize,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Fused luma, `N×1×H×W` in `(0, 1)`.
    pub fused: Var,
    /// Decoder reconstruction of the residual map, `N×1×H×W` in `[−1, 1]`.
    pub aux_residual: Option<Var>,
    pub features: FeatureState,
    /// Batch statistics observed by training-mode batch norms, by stats index.
    pub bn_updates: Vec<(usize, BatchStats)>,
}

/// Options for a single forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub bn: BnMode,
    pub with_decoder: bool,
    /// Cut the gradient path from the decoder into the residual branch.
    pub detach_decoder_input: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions { bn: BnMode::Train, with_decoder: true, detach_decoder_input: false }
    }

    pub fn inference() -> Self {
        ForwardOptions { bn: BnMode::Eval, with_decoder: false, detach_decoder_input: false }
    }
}

/// Fused result for one source pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedOutput {
    pub fused_y: Plane,
    pub fused_rgb: Rgb,
    pub aux_residual: Option<Plane>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    stats: Vec<RunningStats>,
    init_fusion: ConvBn,
    init_residual: Option<ConvBn>,
    stages: Vec<Stage>,
    head_hidden: ConvBn,
    head_out: ConvBn,
    decoder: (ConvBn, ConvBn, Conv),
}

/// Graph handles for every parameter of a model.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient tensor per parameter, zero where none reached it.
    pub fn collect(&self, grads: &Gradients, model: &Model) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&model.params)
            .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

struct Ctx<'a> {
    g: &'a mut Graph,
    bound: &'a Bound,
    model: &'a Model,
    bn: BnMode,
    updates: Vec<(usize, BatchStats)>,
}

impl Ctx<'_> {
    fn conv(&mut self, x: Var, c: Conv) -> Result<Var> {
        let w = self.bound.var(c.w);
        let b = c.b.map(|i| self.bound.var(i));
        self.g.conv2d(x, w, b, c.dilation)
    }

    fn bn(&mut self, x: Var, bn: Bn) -> Result<Var> {
        let (gamma, beta) = (self.bound.var(bn.gamma), self.bound.var(bn.beta));
        match self.bn {
            BnMode::Identity => Ok(x),
            BnMode::Eval => {
                let st = &self.model.stats[bn.stats];
                self.g.batch_norm_fixed(x, gamma, beta, &st.mean, &st.var)
            }
            BnMode::Train => {
                let (y, stats) = self.g.batch_norm_train(x, gamma, beta)?;
                self.updates.push((bn.stats, stats));
                Ok(y)
            }
        }
    }

    fn conv_bn(&mut self, x: Var, cb: ConvBn) -> Result<Var> {
        let y = self.conv(x, cb.conv)?;
        let y = self.bn(y, cb.bn)?;
        Ok(match cb.act {
            Act::Relu => self.g.relu(y),
            Act::Sigmoid => self.g.sigmoid(y),
        })
    }

    fn cpm(&mut self, f: Var, r: Var, cpm: &Cpm) -> Result<(Var, Var)> {
        let to_r = self.conv_bn(f, cpm.f_to_r)?;
        let r_hat = self.g.add(to_r, r)?;
        let attn = self.conv_bn(r, cpm.r_to_f)?;
        let gated = self.g.mul(attn, f)?;
        let f_hat = self.g.add(gated, f)?;
        Ok((f_hat, r_hat))
    }

    fn channel_attention(&mut self, x: Var, rpm: &Rpm) -> Result<Var> {
        let avg = self.g.global_avg_pool(x);
        let max = self.g.global_max_pool(x);
        let branch = |ctx: &mut Self, p: Var| -> Result<Var> {
            let h = ctx.conv(p, rpm.ca_fc1)?;
            let h = ctx.g.relu(h);
            ctx.conv(h, rpm.ca_fc2)
        };
        let a = branch(self, avg)?;
        let m = branch(self, max)?;
        let s = self.g.add(a, m)?;
        let s = self.g.sigmoid(s);
        self.g.mul(x, s)
    }

    fn spatial_attention(&mut self, x: Var, rpm: &Rpm) -> Result<Var> {
        let avg = self.g.channel_mean(x);
        let max = self.g.channel_max(x);
        let both = self.g.concat_channels(&[avg, max])?;
        let s = self.conv(both, rpm.sa)?;
        let s = self.g.sigmoid(s);
        self.g.mul(x, s)
    }

    fn rpm(&mut self, r: Var, rpm: &Rpm) -> Result<Var> {
        let a = self.channel_attention(r, rpm)?;
        let a = self.spatial_attention(a, rpm)?;
        let mut acc: Option<Var> = None;
        for &d in &rpm.dilated {
            let y = self.conv(a, d)?;
            acc = Some(match acc {
                None => y,
                Some(s) => self.g.add(s, y)?,
            });
        }
        Ok(acc.expect("at least one dilation rate"))
    }

    fn fdfm(&mut self, f: Var, fdfm: &Fdfm) -> Result<Var> {
        let t = self.conv_bn(f, fdfm.spatial)?;
        let global = match &fdfm.global {
            Global::Frequency(cb) => {
                let spec = self.g.fft2(t)?;
                let spec = self.conv_bn(spec, *cb)?;
                self.g.ifft2_real(spec)?
            }
            Global::Attention { q, k, v, o } => {
                let (q, k, v, o) = (*q, *k, *v, *o);
                let qv = self.conv(t, q)?;
                let kv = self.conv(t, k)?;
                let vv = self.conv(t, v)?;
                let a = self.g.self_attention(qv, kv, vv)?;
                self.conv(a, o)?
            }
        };
        self.g.add(t, global)
    }
}

impl Model {
    /// Build a model with seeded Kaiming-uniform weights, zero biases and
    /// unit batch-norm scales.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { params: Vec::new(), stats: Vec::new(), group: Group::Backbone, rng: &mut rng };
        let c = config.channels;
        let init_fusion = b.conv_bn("init.fusion", 2, c, 3, Act::Relu);
        let init_residual = config.use_residual_branch.then(|| b.conv_bn("init.residual", 1, c, 3, Act::Relu));
        let mut stages = Vec::with_capacity(config.stages);
        for n in 0..config.stages {
            let p = format!("stage{n}");
            let cpm = (config.use_cpm && config.use_residual_branch).then(|| Cpm {
                f_to_r: b.conv_bn(&format!("{p}.cpm.f_to_r"), c, c, 3, Act::Relu),
                r_to_f: b.conv_bn(&format!("{p}.cpm.r_to_f"), c, c, 3, Act::Sigmoid),
            });
            let rpm = config.use_residual_branch.then(|| {
                let h = config.hidden();
                Rpm {
                    ca_fc1: b.conv(&format!("{p}.rpm.ca.fc1"), c, h, 1, 1, false),
                    ca_fc2: b.conv(&format!("{p}.rpm.ca.fc2"), h, c, 1, 1, false),
                    sa: b.conv(&format!("{p}.rpm.sa"), 2, 1, 7, 1, false),
                    dilated: config
                        .dilation_rates
                        .iter()
                        .map(|&r| b.conv(&format!("{p}.rpm.dilated{r}"), c, c, 3, r, true))
                        .collect(),
                }
            });
            let spatial = b.conv_bn(&format!("{p}.fdfm.spatial"), c, c, 3, Act::Relu);
            let global = match config.fdfm_mode {
                FdfmMode::Frequency => Global::Frequency(b.conv_bn(&format!("{p}.fdfm.freq"), 2 * c, 2 * c, 1, Act::Relu)),
                FdfmMode::TransformerSub => Global::Attention {
                    q: b.conv(&format!("{p}.fdfm.attn.q"), c, c, 1, 1, true),
                    k: b.conv(&format!("{p}.fdfm.attn.k"), c, c, 1, 1, true),
                    v: b.conv(&format!("{p}.fdfm.attn.v"), c, c, 1, 1, true),
                    o: b.conv(&format!("{p}.fdfm.attn.o"), c, c, 1, 1, true),
                },
            };
            stages.push(Stage { cpm, rpm, fdfm: Fdfm { spatial, global } });
        }
        let head_hidden = b.conv_bn("head.hidden", c, c, 3, Act::Relu);
        let head_out = b.conv_bn("head.out", c, 1, 3, Act::Sigmoid);
        b.group = Group::Decoder;
        let decoder = (
            b.conv_bn("decoder.block1", c, c, 3, Act::Relu),
            b.conv_bn("decoder.block2", c, c, 3, Act::Relu),
            b.conv("decoder.out", c, 1, 1, 1, true),
        );
        let (params, stats) = (b.params, b.stats);
        Ok(Model { config, params, stats, init_fusion, init_residual, stages, head_hidden, head_out, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.params.iter().position(|p| p.name == name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// `(name, element count)` for every learnable tensor.
    pub fn census(&self) -> Vec<(&str, usize)> {
        self.params.iter().map(|p| (p.name.as_str(), p.value.len())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Set every learnable parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Register every parameter on `g` as a gradient-carrying leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.params.iter().map(|p| g.leaf(p.value.clone())).collect() }
    }

    /// Register every parameter on `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.params.iter().map(|p| g.constant(p.value.clone())).collect() }
    }

    /// Forward pass from `N×1×H×W` infrared and visible-luma batches.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, ir: Var, vis_y: Var, opts: ForwardOptions) -> Result<Forward> {
        let residual = if self.config.use_residual_branch { Some(g.sub(ir, vis_y)?) } else { None };
        self.forward_with_residual(g, bound, ir, vis_y, residual, opts)
    }

    /// Forward pass with an explicitly supplied residual map. The residual
    /// is ignored when the residual branch is disabled.
    pub fn forward_with_residual(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ir: Var,
        vis_y: Var,
        residual: Option<Var>,
        opts: ForwardOptions,
    ) -> Result<Forward> {
        let (si, sv) = (g.shape(ir), g.shape(vis_y));
        if si != sv || si.c() != 1 {
            return Err(Error::ShapeMismatch { expected: si.with_c(1), got: sv });
        }
        let mut ctx = Ctx { g, bound, model: self, bn: opts.bn, updates: Vec::new() };
        let input = ctx.g.concat_channels(&[ir, vis_y])?;
        let mut f = ctx.conv_bn(input, self.init_fusion)?;
        let mut r = match (&self.init_residual, residual) {
            (Some(cb), Some(m)) => {
                if ctx.g.shape(m) != si {
                    return Err(Error::ShapeMismatch { expected: si, got: ctx.g.shape(m) });
                }
                Some(ctx.conv_bn(m, *cb)?)
            }
            (Some(_), None) => return Err(Error::Config("residual branch enabled but no residual map supplied".into())),
            (None, _) => None,
        };
        for stage in &self.stages {
            let (f_hat, r_hat) = match (&stage.cpm, r) {
                (Some(cpm), Some(rv)) => {
                    let (a, b) = ctx.cpm(f, rv, cpm)?;
                    (a, Some(b))
                }
                _ => (f, r),
            };
            r = match (&stage.rpm, r_hat) {
                (Some(rpm), Some(rv)) => Some(ctx.rpm(rv, rpm)?),
                _ => None,
            };
            f = ctx.fdfm(f_hat, &stage.fdfm)?;
        }
        let merged = match r {
            Some(rv) => ctx.g.add(f, rv)?,
            None => f,
        };
        let h = ctx.conv_bn(merged, self.head_hidden)?;
        let fused = ctx.conv_bn(h, self.head_out)?;
        let aux_residual = if opts.with_decoder {
            let src = r.unwrap_or(f);
            let src = if opts.detach_decoder_input { ctx.g.detach(src) } else { src };
            let (b1, b2, out) = &self.decoder;
            let d = ctx.conv_bn(src, *b1)?;
            let d = ctx.conv_bn(d, *b2)?;
            let d = ctx.conv(d, *out)?;
            Some(ctx.g.tanh(d))
        } else {
            None
        };
        let features = FeatureState { fusion: f, residual: r, stage: self.stages.len() };
        Ok(Forward { fused, aux_residual, features, bn_updates: ctx.updates })
    }

    /// Fold training-mode batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[(usize, BatchStats)]) {
        for (idx, st) in updates {
            let run = &mut self.stats[*idx];
            let unbias = if st.count > 1 { st.count as f64 / (st.count - 1) as f64 } else { 1.0 };
            for c in 0..run.mean.len() {
                run.mean[c] = (1.0 - BN_MOMENTUM) * run.mean[c] + BN_MOMENTUM * st.mean[c];
                run.var[c] = (1.0 - BN_MOMENTUM) * run.var[c] + BN_MOMENTUM * st.var[c] * unbias;
            }
        }
    }

    /// Inference on a batch of `N×1×H×W` planes; returns the fused luma.
    pub fn infer(&self, ir: &Tensor, vis_y: &Tensor, bn: BnMode) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let (i, v) = (g.constant(ir.clone()), g.constant(vis_y.clone()));
        let out = self.forward(&mut g, &bound, i, v, ForwardOptions { bn, with_decoder: false, detach_decoder_input: false })?;
        Ok(g.value(out.fused).clone())
    }

    /// Fuse one registered pair, restoring colour from the visible chroma.
    pub fn fuse_pair(&self, pair: &SourcePair) -> Result<FusedOutput> {
        let ir = pair.ir.to_tensor();
        let vis = pair.vis.y.to_tensor();
        let fused = self.infer(&ir, &vis, BnMode::Eval)?;
        let fused_y = Plane::from_tensor(&fused, 0, 0);
        let fused_rgb = crate::imaging::ycbcr_to_rgb(&YCbCr {
            y: fused_y.clone(),
            cb: pair.vis.cb.clone(),
            cr: pair.vis.cr.clone(),
        })?;
        Ok(FusedOutput { fused_y, fused_rgb, aux_residual: None })
    }

    /// Every stored tensor by name: parameters, then running statistics
    /// as `<layer>.running_mean` / `<layer>.running_var`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for st in &self.stats {
            let shape = Shape::new(1, st.mean.len(), 1, 1);
            out.push((format!("{}.running_mean", st.name), Tensor::from_vec(shape, st.mean.clone()).expect("stats length")));
            out.push((format!("{}.running_var", st.name), Tensor::from_vec(shape, st.var.clone()).expect("stats length")));
        }
        out
    }

    /// Overwrite stored tensors from `(name, tensor)` pairs. Every tensor of
    /// the model must be present with a matching shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for p in &mut self.params {
            let t = find(&p.name).ok_or_else(|| Error::UnknownParam(p.name.clone()))?;
            t.expect_shape(p.value.shape())?;
            p.value = t.clone();
        }
        for st in &mut self.stats {
            for (suffix, dst) in [("running_mean", &mut st.mean), ("running_var", &mut st.var)] {
                let key = format!("{}.{suffix}", st.name);
                let t = find(&key).ok_or(Error::UnknownParam(key))?;
                t.expect_shape(Shape::new(1, dst.len(), 1, 1))?;
                dst.copy_from_slice(t.data());
            }
        }
        let known = self.params.len() + 2 * self.stats.len();
        if tensors.len() != known {
            let extra = tensors
                .iter()
                .find(|(n, _)| {
                    !self.params.iter().any(|p| &p.name == n)
                        && !self.stats.iter().any(|s| n.strip_prefix(s.name.as_str()).is_some_and(|r| r == ".running_mean" || r == ".running_var"))
                })
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(Error::UnknownParam(extra));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::conv2d_naive;

    fn small(c: usize, n: usize) -> ModelConfig {
        ModelConfig { stages: n, channels: c, ..ModelConfig::default() }
    }

    fn batch(n: usize, h: usize, w: usize, salt: usize) -> Tensor {
        Tensor::from_fn(Shape::new(n, 1, h, w), |b, _, y, x| (((b + salt) * 131 + y * 17 + x * 29) % 23) as f64 / 22.0)
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Model::new(small(8, 0), 0).is_err());
        let mut c = small(8, 1);
        c.dilation_rates = vec![1, 5, 3];
        assert!(Model::new(c, 0).is_err());
    }

    #[test]
    fn output_in_open_unit_interval_and_shape_preserved() {
        let m = Model::new(small(8, 2), 1).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let (ir, vis) = (g.constant(batch(2, 9, 7, 0)), g.constant(batch(2, 9, 7, 3)));
        let out = m.forward(&mut g, &b, ir, vis, ForwardOptions::train()).unwrap();
        assert_eq!(g.shape(out.fused), Shape::new(2, 1, 9, 7));
        assert!(g.value(out.fused).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let aux = out.aux_residual.unwrap();
        assert_eq!(g.shape(aux), Shape::new(2, 1, 9, 7));
        assert!(g.value(aux).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert_eq!(g.shape(out.features.fusion), Shape::new(2, 8, 9, 7));
        assert_eq!(out.bn_updates.len(), m.running_stats().len());
    }

    #[test]
    fn zeroed_model_outputs_half() {
        let mut m = Model::new(small(8, 3), 2).unwrap();
        m.zero_all();
        let out = m.infer(&batch(1, 8, 8, 0), &batch(1, 8, 8, 1), BnMode::Identity).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut m = Model::new(small(4, 1), 3).unwrap();
        let st = BatchStats { mean: vec![1.0; 4], var: vec![2.0; 4], count: 5 };
        let idx = 0;
        m.apply_bn_updates(&[(idx, st)]);
        let run = &m.running_stats()[idx];
        assert!((run.mean[0] - 0.1).abs() < 1e-15);
        assert!((run.var[0] - (0.9 + 0.1 * 2.0 * 5.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn conv_block_on_single_pixel_is_center_matmul() {
        let m = Model::new(small(4, 1), 4).unwrap();
        let cb = m.init_fusion;
        let w = &m.params[cb.conv.w].value;
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3, -0.7]).unwrap();
        let mut g = Graph::new();
        let bound = m.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let mut ctx = Ctx { g: &mut g, bound: &bound, model: &m, bn: BnMode::Identity, updates: Vec::new() };
        let y = ctx.conv_bn(xv, cb).unwrap();
        for co in 0..4 {
            let expect = (0.3 * w.at(co, 0, 1, 1) - 0.7 * w.at(co, 1, 1, 1)).max(0.0);
            assert!((g.value(y).at(0, co, 0, 0) - expect).abs() < 1e-15);
        }
        let naive = conv2d_naive(&x, w, None, 1);
        assert!((naive.at(0, 0, 0, 0).max(0.0) - g.value(y).at(0, 0, 0, 0)).abs() < 1e-15);
    }

    #[test]
    fn identity_frequency_block_doubles_its_input() {
        let c = 2;
        let mut m = Model::new(small(c, 1), 8).unwrap();
        let fd = m.stages[0].fdfm.clone();
        let Global::Frequency(freq) = &fd.global else { unreachable!() };
        let eye = |n: usize, k: usize| {
            Tensor::from_fn(Shape::new(n, n, k, k), |o, i, y, x| if o == i && y == k / 2 && x == k / 2 { 1.0 } else { 0.0 })
        };
        m.params[fd.spatial.conv.w].value = eye(c, 3);
        m.params[freq.conv.w].value = eye(2 * c, 1);
        // A scaled delta has a real, positive spectrum, so the ReLU passes it.
        let x = Tensor::from_fn(Shape::new(1, c, 6, 5), |_, ch, y, xx| if y == 0 && xx == 0 { 0.5 + ch as f64 } else { 0.0 });
        let mut g = Graph::new();
        let bound = m.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let mut ctx = Ctx { g: &mut g, bound: &bound, model: &m, bn: BnMode::Identity, updates: Vec::new() };
        let y = ctx.fdfm(xv, &fd).unwrap();
        let diff = g.value(y).zip_map(&x, |a, b| (a - 2.0 * b).abs()).unwrap().max_abs();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn named_tensors_round_trip() {
        let a = Model::new(small(4, 2), 5).unwrap();
        let mut b = Model::new(small(4, 2), 6).unwrap();
        assert_ne!(a.params()[0].value, b.params()[0].value);
        b.load_named(&a.named_tensors()).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut extra = a.named_tensors();
        extra.push(("bogus".into(), Tensor::scalar(0.0)));
        assert_eq!(b.load_named(&extra), Err(Error::UnknownParam("bogus".into())));
    }

    #[test]
    fn groups_split_backbone_and_decoder() {
        let m = Model::new(small(8, 1), 7).unwrap();
        for p in m.params() {
            assert_eq!(p.group == Group::Decoder, p.name.starts_with("decoder."), "{}", p.name);
        }
    }
}
