//! Declarative construction of residual networks.
//!
//! An [`ArchSpec`] names a depth preset (18 basic-block layers, or 50/101
//! bottleneck layers), a width scaling factor applied uniformly to every
//! internal channel count, a class count, and the downsampling variant
//! used at stage transitions. [`build`] turns it into a [`Network`] whose
//! forward pass maps (n, 3, h, w) images to (n, classes, 1, 1) logits.

pub mod config;

use crate::error::{Error, Result};
use crate::layers::batchnorm::{bn_backward, bn_forward_eval, bn_forward_train, BatchNormParams, BnCache};
use crate::layers::conv::{conv_backward_raw, conv_forward_raw, ConvRef};
use crate::layers::head::{
    global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward,
};
use crate::layers::linear::{linear_backward, linear_forward, LinearParams};
use crate::layers::phase::{dilated_pooling_backward, dilated_pooling_forward};
use crate::layers::pool::{pool2d_forward, pool_backward, window_pool_forward, PoolCache, PoolKind};
use crate::layers::ConvParams;
use crate::rng::Pcg32;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// How a stage-transition halves the spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleKind {
    /// Stride-2 convolutions (the reference layout).
    Strided,
    /// Shared-weight convolution over the four spatial phase sub-grids.
    DilatedPool,
    /// Stride-1 convolution at full resolution followed by 2x2 average pooling.
    AvgPoolConv,
    /// Stride-1 convolution at full resolution followed by 2x2 max pooling.
    MaxPoolConv,
}

impl DownsampleKind {
    pub const ALL: [DownsampleKind; 4] = [
        DownsampleKind::Strided,
        DownsampleKind::DilatedPool,
        DownsampleKind::AvgPoolConv,
        DownsampleKind::MaxPoolConv,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DownsampleKind::Strided => "strided",
            DownsampleKind::DilatedPool => "dilated_pool",
            DownsampleKind::AvgPoolConv => "avg_pool_conv",
            DownsampleKind::MaxPoolConv => "max_pool_conv",
        }
    }

    pub fn parse(text: &str) -> Result<DownsampleKind> {
        match text.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "strided" => Ok(DownsampleKind::Strided),
            "dilated_pool" | "dp" => Ok(DownsampleKind::DilatedPool),
            "avg_pool_conv" | "avg" | "ave" => Ok(DownsampleKind::AvgPoolConv),
            "max_pool_conv" | "max" => Ok(DownsampleKind::MaxPoolConv),
            other => Err(Error::Config(format!(
                "unknown downsample kind '{other}'; supported: strided, dilated_pool, avg_pool_conv, max_pool_conv"
            ))),
        }
    }
}

/// Input stem variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemKind {
    /// 7x7 stride-2 convolution plus 3x3 stride-2 max pool; input dims
    /// must be divisible by 32.
    Standard,
    /// 3x3 stride-1 convolution, no pool, for small desk-scale inputs;
    /// input dims must be divisible by 8.
    Small,
}

impl StemKind {
    pub fn label(self) -> &'static str {
        match self {
            StemKind::Standard => "standard",
            StemKind::Small => "small",
        }
    }

    pub fn parse(text: &str) -> Result<StemKind> {
        match text.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(StemKind::Standard),
            "small" => Ok(StemKind::Small),
            other => Err(Error::Config(format!(
                "unknown stem kind '{other}'; supported: standard, small"
            ))),
        }
    }

    pub fn divisor(self) -> usize {
        match self {
            StemKind::Standard => 32,
            StemKind::Small => 8,
        }
    }
}

/// Width scaling factor; the supported grid keeps every scaled channel
/// count integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthFactor {
    Quarter,
    Half,
    One,
    Two,
}

impl WidthFactor {
    pub fn as_f64(self) -> f64 {
        match self {
            WidthFactor::Quarter => 0.25,
            WidthFactor::Half => 0.5,
            WidthFactor::One => 1.0,
            WidthFactor::Two => 2.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WidthFactor::Quarter => "0.25",
            WidthFactor::Half => "0.5",
            WidthFactor::One => "1",
            WidthFactor::Two => "2",
        }
    }

    pub fn parse(text: &str) -> Result<WidthFactor> {
        match text.trim() {
            "0.25" | ".25" | "1/4" => Ok(WidthFactor::Quarter),
            "0.5" | ".5" | "0.50" | "1/2" => Ok(WidthFactor::Half),
            "1" | "1.0" => Ok(WidthFactor::One),
            "2" | "2.0" => Ok(WidthFactor::Two),
            other => Err(Error::Config(format!(
                "unsupported width factor '{other}'; supported: 0.25, 0.5, 1, 2"
            ))),
        }
    }

    /// Exact scaling; errors if the result would not be a positive integer.
    pub fn scale(self, channels: usize) -> Result<usize> {
        let (num, den) = match self {
            WidthFactor::Quarter => (1, 4),
            WidthFactor::Half => (1, 2),
            WidthFactor::One => (1, 1),
            WidthFactor::Two => (2, 1),
        };
        let scaled = channels * num;
        if scaled % den != 0 || scaled / den == 0 {
            return Err(Error::Config(format!(
                "width factor {} does not scale {channels} channels to a positive integer",
                self.label()
            )));
        }
        Ok(scaled / den)
    }
}

/// Declarative description of a network to build.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub depth: usize,
    pub width_factor: WidthFactor,
    pub num_classes: usize,
    pub downsample: DownsampleKind,
    pub input_size: (usize, usize),
    pub stem: StemKind,
}

impl ArchSpec {
    pub fn new(
        depth: usize,
        width_factor: WidthFactor,
        num_classes: usize,
        downsample: DownsampleKind,
    ) -> ArchSpec {
        ArchSpec {
            depth,
            width_factor,
            num_classes,
            downsample,
            input_size: (224, 224),
            stem: StemKind::Standard,
        }
    }

    /// The deep-narrow layout: depth 101 with every width halved.
    pub fn deep_narrow(num_classes: usize, with_dp: bool) -> ArchSpec {
        ArchSpec::new(
            101,
            WidthFactor::Half,
            num_classes,
            if with_dp {
                DownsampleKind::DilatedPool
            } else {
                DownsampleKind::Strided
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.depth, 18 | 50 | 101) {
            return Err(Error::Config(format!(
                "unsupported depth {}; supported presets: 18, 50, 101",
                self.depth
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        for base in [64usize, 128, 256, 512] {
            self.width_factor.scale(base)?;
        }
        Ok(())
    }

    /// Blocks per stage for the preset.
    pub fn stage_blocks(&self) -> [usize; 4] {
        match self.depth {
            18 => [2, 2, 2, 2],
            50 => [3, 4, 6, 3],
            _ => [3, 4, 23, 3],
        }
    }

    pub fn uses_bottleneck(&self) -> bool {
        self.depth != 18
    }

    /// Stage output channel counts after width scaling.
    pub fn stage_widths(&self) -> Result<[usize; 4]> {
        let expansion = if self.uses_bottleneck() { 4 } else { 1 };
        let mut out = [0usize; 4];
        for (i, base) in [64usize, 128, 256, 512].iter().enumerate() {
            out[i] = self.width_factor.scale(*base)? * expansion;
        }
        Ok(out)
    }

    /// A short machine-readable model label used in report summary lines.
    pub fn model_label(&self) -> String {
        let kind = match self.downsample {
            DownsampleKind::Strided => String::new(),
            other => format!("-{}", other.label()),
        };
        format!(
            "resnet{}-x{}{}-c{}",
            self.depth,
            self.width_factor.label(),
            kind,
            self.num_classes
        )
    }
}

/// Gradient and momentum storage attached to each parameter tensor.
#[derive(Debug, Clone)]
pub struct OptSlot<S: Scalar> {
    pub grad: Tensor4<S>,
    pub velocity: Tensor4<S>,
}

impl<S: Scalar> OptSlot<S> {
    fn like(t: &Tensor4<S>) -> OptSlot<S> {
        OptSlot {
            grad: Tensor4::zeros(t.shape()),
            velocity: Tensor4::zeros(t.shape()),
        }
    }
}

/// Records the first layer whose training-mode output went non-finite.
#[derive(Debug, Default)]
pub struct NanWatch {
    pub first: Option<String>,
}

impl NanWatch {
    fn note<S: Scalar>(&mut self, path: &str, out: &Tensor4<S>) {
        if self.first.is_none() && !out.is_all_finite() {
            self.first = Some(path.to_string());
        }
    }
}

/// How a convolution's spatial application is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvApply {
    /// Straight convolution with the stored stride.
    Plain,
    /// Shared-weight convolution over the four phase sub-grids, summed.
    DilatedPool,
    /// Stride-1 convolution at full resolution, then 2x2 pooling.
    ConvThenPool(PoolKind),
    /// 2x2 pooling, then stride-1 convolution at half resolution.
    PoolThenConv(PoolKind),
}

#[derive(Debug, Clone)]
enum ConvUnitCache<S: Scalar> {
    Plain { input: Tensor4<S> },
    DilatedPool { input: Tensor4<S> },
    ConvThenPool { input: Tensor4<S>, pool: PoolCache },
    PoolThenConv { pooled: Tensor4<S>, pool: PoolCache },
}

/// A convolution embedded in the network, with optimizer state and the
/// spatial application mode. Network convolutions are bias-free; batch
/// norm supplies the shift.
#[derive(Debug, Clone)]
pub struct ConvUnit<S: Scalar> {
    pub path: String,
    pub weight: Tensor4<S>,
    pub slot: OptSlot<S>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub apply: ConvApply,
    cache: Option<ConvUnitCache<S>>,
}

impl<S: Scalar> ConvUnit<S> {
    fn new(
        path: String,
        weight: Tensor4<S>,
        stride: (usize, usize),
        padding: (usize, usize),
        apply: ConvApply,
    ) -> ConvUnit<S> {
        let slot = OptSlot::like(&weight);
        ConvUnit {
            path,
            weight,
            slot,
            stride,
            padding,
            apply,
            cache: None,
        }
    }

    fn conv_ref(&self) -> ConvRef<'_, S> {
        ConvRef {
            weights: &self.weight,
            stride: self.stride,
            padding: self.padding,
            bias: None,
        }
    }

    fn dp_params(&self) -> ConvParams<S> {
        ConvParams {
            weights: self.weight.clone(),
            stride: self.stride,
            padding: self.padding,
            bias: None,
        }
    }

    /// Output shape without running the forward pass.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self.apply {
            ConvApply::Plain => self.conv_ref().output_shape(input),
            ConvApply::DilatedPool => {
                let half = Shape::new(input.n, input.c, input.h / 2, input.w / 2);
                self.conv_ref().output_shape(half)
            }
            ConvApply::ConvThenPool(_) => {
                let full = self.conv_ref().output_shape(input)?;
                Ok(Shape::new(full.n, full.c, full.h / 2, full.w / 2))
            }
            ConvApply::PoolThenConv(_) => {
                let half = Shape::new(input.n, input.c, input.h / 2, input.w / 2);
                self.conv_ref().output_shape(half)
            }
        }
    }

    fn forward_eval(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        match self.apply {
            ConvApply::Plain => conv_forward_raw(x, self.conv_ref()),
            ConvApply::DilatedPool => dilated_pooling_forward(x, &self.dp_params()),
            ConvApply::ConvThenPool(kind) => {
                let full = conv_forward_raw(x, self.conv_ref())?;
                let (out, _) = pool2d_forward(&full, kind)?;
                Ok(out)
            }
            ConvApply::PoolThenConv(kind) => {
                let (pooled, _) = pool2d_forward(x, kind)?;
                conv_forward_raw(&pooled, self.conv_ref())
            }
        }
    }

    fn forward_train(&mut self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        match self.apply {
            ConvApply::Plain => {
                let out = conv_forward_raw(x, self.conv_ref())?;
                self.cache = Some(ConvUnitCache::Plain { input: x.clone() });
                Ok(out)
            }
            ConvApply::DilatedPool => {
                let out = dilated_pooling_forward(x, &self.dp_params())?;
                self.cache = Some(ConvUnitCache::DilatedPool { input: x.clone() });
                Ok(out)
            }
            ConvApply::ConvThenPool(kind) => {
                let full = conv_forward_raw(x, self.conv_ref())?;
                let (out, pool) = pool2d_forward(&full, kind)?;
                self.cache = Some(ConvUnitCache::ConvThenPool {
                    input: x.clone(),
                    pool,
                });
                Ok(out)
            }
            ConvApply::PoolThenConv(kind) => {
                let (pooled, pool) = pool2d_forward(x, kind)?;
                let out = conv_forward_raw(&pooled, self.conv_ref())?;
                self.cache = Some(ConvUnitCache::PoolThenConv { pooled, pool });
                Ok(out)
            }
        }
    }

    /// Accumulates the weight gradient and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Validation(format!("{}: backward without a cached forward", self.path))
        })?;
        match cache {
            ConvUnitCache::Plain { input } => {
                let grads = conv_backward_raw(&input, self.conv_ref(), grad_out)?;
                self.slot.grad.add_scaled(&grads.weights, S::ONE)?;
                Ok(grads.input)
            }
            ConvUnitCache::DilatedPool { input } => {
                let grads = dilated_pooling_backward(&input, &self.dp_params(), grad_out)?;
                self.slot.grad.add_scaled(&grads.weights, S::ONE)?;
                Ok(grads.input)
            }
            ConvUnitCache::ConvThenPool { input, pool } => {
                let grad_full = pool_backward(&pool, grad_out)?;
                let grads = conv_backward_raw(&input, self.conv_ref(), &grad_full)?;
                self.slot.grad.add_scaled(&grads.weights, S::ONE)?;
                Ok(grads.input)
            }
            ConvUnitCache::PoolThenConv { pooled, pool } => {
                let grads = conv_backward_raw(&pooled, self.conv_ref(), grad_out)?;
                self.slot.grad.add_scaled(&grads.weights, S::ONE)?;
                pool_backward(&pool, &grads.input)
            }
        }
    }

    fn macs(&self, input: Shape) -> Result<u128> {
        let out = self.output_shape(input)?;
        let ws = self.weight.shape();
        // Under the multiply-accumulate convention the convolution cost is
        // taken at the resolution the kernel actually slides over: full
        // resolution for the pool-after variant, half resolution for the
        // pool-first and phase-sum variants (the latter is algebraically a
        // convolution of the 2x2 sum-pooled map).
        let spatial = match self.apply {
            ConvApply::ConvThenPool(_) => {
                let full = self.conv_ref().output_shape(input)?;
                full.h as u128 * full.w as u128
            }
            _ => out.h as u128 * out.w as u128,
        };
        Ok(spatial * ws.n as u128 * ws.c as u128 * ws.h as u128 * ws.w as u128)
    }
}

/// Batch norm embedded in the network.
#[derive(Debug, Clone)]
pub struct BnLayer<S: Scalar> {
    pub path: String,
    pub bn: BatchNormParams<S>,
    pub gamma_slot: OptSlot<S>,
    pub beta_slot: OptSlot<S>,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BnLayer<S> {
    fn new(path: String, channels: usize) -> BnLayer<S> {
        let bn = BatchNormParams::new(channels, S::from_f64(1e-5), S::from_f64(0.1));
        let gamma_slot = OptSlot::like(&bn.gamma);
        let beta_slot = OptSlot::like(&bn.beta);
        BnLayer {
            path,
            bn,
            gamma_slot,
            beta_slot,
            cache: None,
        }
    }

    fn forward_eval(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        bn_forward_eval(x, &self.bn)
    }

    fn forward_train(&mut self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let (out, cache) = bn_forward_train(x, &mut self.bn)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Validation(format!("{}: backward without a cached forward", self.path))
        })?;
        let grads = bn_backward(&self.bn, &cache, grad_out)?;
        self.gamma_slot.grad.add_scaled(&grads.gamma, S::ONE)?;
        self.beta_slot.grad.add_scaled(&grads.beta, S::ONE)?;
        Ok(grads.input)
    }
}

/// Residual block; depth 18 uses the two-convolution basic form, 50 and
/// 101 the three-convolution bottleneck.
#[derive(Debug, Clone)]
pub struct Block<S: Scalar> {
    pub path: String,
    pub convs: Vec<(ConvUnit<S>, BnLayer<S>)>,
    pub shortcut: Option<(ConvUnit<S>, BnLayer<S>)>,
    /// Pre-activation values saved for the ReLU backward passes.
    relu_caches: Vec<Tensor4<S>>,
    sum_cache: Option<Tensor4<S>>,
}

impl<S: Scalar> Block<S> {
    fn forward_eval(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let mut out = x.clone();
        let last = self.convs.len() - 1;
        for (idx, (conv, bn)) in self.convs.iter().enumerate() {
            out = conv.forward_eval(&out)?;
            out = bn.forward_eval(&out)?;
            if idx != last {
                out = relu_forward(&out);
            }
        }
        let identity = match &self.shortcut {
            Some((conv, bn)) => bn.forward_eval(&conv.forward_eval(x)?)?,
            None => x.clone(),
        };
        Ok(relu_forward(&out.add(&identity)?))
    }

    fn forward_train(&mut self, x: &Tensor4<S>, watch: &mut NanWatch) -> Result<Tensor4<S>> {
        self.relu_caches.clear();
        let mut out = x.clone();
        let last = self.convs.len() - 1;
        for idx in 0..self.convs.len() {
            let (conv, bn) = &mut self.convs[idx];
            out = conv.forward_train(&out)?;
            watch.note(&conv.path, &out);
            out = bn.forward_train(&out)?;
            watch.note(&bn.path, &out);
            if idx != last {
                self.relu_caches.push(out.clone());
                out = relu_forward(&out);
            }
        }
        let identity = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward_train(x)?;
                watch.note(&conv.path, &s);
                let s = bn.forward_train(&s)?;
                watch.note(&bn.path, &s);
                s
            }
            None => x.clone(),
        };
        let sum = out.add(&identity)?;
        self.sum_cache = Some(sum.clone());
        Ok(relu_forward(&sum))
    }

    fn backward(&mut self, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
        let sum = self.sum_cache.take().ok_or_else(|| {
            Error::Validation(format!("{}: backward without a cached forward", self.path))
        })?;
        let grad_sum = relu_backward(&sum, grad_out)?;

        // Shortcut branch.
        let grad_identity = match &mut self.shortcut {
            Some((conv, bn)) => {
                let g = bn.backward(&grad_sum)?;
                conv.backward(&g)?
            }
            None => grad_sum.clone(),
        };

        // Main branch, in reverse.
        let mut g = grad_sum;
        for idx in (0..self.convs.len()).rev() {
            if idx != self.convs.len() - 1 {
                let pre = &self.relu_caches[idx];
                g = relu_backward(pre, &g)?;
            }
            let (conv, bn) = &mut self.convs[idx];
            g = bn.backward(&g)?;
            g = conv.backward(&g)?;
        }
        self.relu_caches.clear();
        g.add_scaled(&grad_identity, S::ONE)?;
        Ok(g)
    }
}

/// Input stem.
#[derive(Debug, Clone)]
pub struct Stem<S: Scalar> {
    pub conv: ConvUnit<S>,
    pub bn: BnLayer<S>,
    pub kind: StemKind,
    relu_cache: Option<Tensor4<S>>,
    pool_cache: Option<PoolCache>,
}

impl<S: Scalar> Stem<S> {
    fn forward_eval(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let out = self.conv.forward_eval(x)?;
        let out = self.bn.forward_eval(&out)?;
        let out = relu_forward(&out);
        match self.kind {
            StemKind::Standard => {
                let (out, _) = window_pool_forward(&out, PoolKind::Max, (3, 3), (2, 2), (1, 1))?;
                Ok(out)
            }
            StemKind::Small => Ok(out),
        }
    }

    fn forward_train(&mut self, x: &Tensor4<S>, watch: &mut NanWatch) -> Result<Tensor4<S>> {
        let out = self.conv.forward_train(x)?;
        watch.note(&self.conv.path, &out);
        let out = self.bn.forward_train(&out)?;
        watch.note(&self.bn.path, &out);
        self.relu_cache = Some(out.clone());
        let out = relu_forward(&out);
        match self.kind {
            StemKind::Standard => {
                let (out, cache) = window_pool_forward(&out, PoolKind::Max, (3, 3), (2, 2), (1, 1))?;
                self.pool_cache = Some(cache);
                Ok(out)
            }
            StemKind::Small => {
                self.pool_cache = None;
                Ok(out)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
        let mut g = match (&self.kind, self.pool_cache.take()) {
            (StemKind::Standard, Some(cache)) => pool_backward(&cache, grad_out)?,
            (StemKind::Small, _) => grad_out.clone(),
            (StemKind::Standard, None) => {
                return Err(Error::Validation(
                    "stem: backward without a cached forward".into(),
                ))
            }
        };
        let pre = self.relu_cache.take().ok_or_else(|| {
            Error::Validation("stem: backward without a cached forward".into())
        })?;
        g = relu_backward(&pre, &g)?;
        g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

/// A built network: stem, four stages of residual blocks, global average
/// pooling and a linear classifier. Parameters are reachable by layer
/// path through the visitor methods.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    pub spec: ArchSpec,
    pub stem: Stem<S>,
    pub stages: Vec<Vec<Block<S>>>,
    pub fc: LinearParams<S>,
    pub fc_weight_slot: OptSlot<S>,
    pub fc_bias_slot: OptSlot<S>,
    fc_input_cache: Option<Tensor4<S>>,
    gap_input_shape: Option<Shape>,
}

fn he_normal<S: Scalar>(shape: Shape, rng: &mut Pcg32, cache: &mut Option<f64>) -> Tensor4<S> {
    let fan_out = shape.n * shape.h * shape.w;
    let std = (2.0 / fan_out as f64).sqrt();
    Tensor4::from_fn(shape, |_, _, _, _| S::from_f64(rng.normal(cache) * std))
}

/// Builds a network from its declarative description; weight
/// initialization is deterministic in the seed.
pub fn build<S: Scalar>(spec: &ArchSpec, seed: u64) -> Result<Network<S>> {
    spec.validate()?;
    let mut rng = Pcg32::seed_from(seed);
    let mut normal_cache = None;
    let wf = spec.width_factor;

    let stem_width = wf.scale(64)?;
    let (stem_kernel, stem_stride, stem_padding) = match spec.stem {
        StemKind::Standard => (7, (2, 2), (3, 3)),
        StemKind::Small => (3, (1, 1), (1, 1)),
    };
    let stem_conv = ConvUnit::new(
        "stem.conv".into(),
        he_normal(
            Shape::new(stem_width, 3, stem_kernel, stem_kernel),
            &mut rng,
            &mut normal_cache,
        ),
        stem_stride,
        stem_padding,
        ConvApply::Plain,
    );
    let stem = Stem {
        conv: stem_conv,
        bn: BnLayer::new("stem.bn".into(), stem_width),
        kind: spec.stem,
        relu_cache: None,
        pool_cache: None,
    };

    let bottleneck = spec.uses_bottleneck();
    let expansion = if bottleneck { 4 } else { 1 };
    let blocks_per_stage = spec.stage_blocks();
    let mut stages = Vec::with_capacity(4);
    let mut in_channels = stem_width;

    for (stage_idx, &num_blocks) in blocks_per_stage.iter().enumerate() {
        let inner = wf.scale(64 << stage_idx)?;
        let out_channels = inner * expansion;
        let mut blocks = Vec::with_capacity(num_blocks);
        for block_idx in 0..num_blocks {
            let path = format!("stage{}.block{}", stage_idx + 1, block_idx);
            let downsamples = block_idx == 0 && stage_idx > 0;
            let needs_projection = block_idx == 0 && (in_channels != out_channels || downsamples);

            // Application mode for the convolutions that would be strided.
            let (down_apply, down_stride) = match (downsamples, spec.downsample) {
                (false, _) => (ConvApply::Plain, (1, 1)),
                (true, DownsampleKind::Strided) => (ConvApply::Plain, (2, 2)),
                (true, DownsampleKind::DilatedPool) => (ConvApply::DilatedPool, (1, 1)),
                (true, DownsampleKind::AvgPoolConv) => {
                    (ConvApply::ConvThenPool(PoolKind::Avg), (1, 1))
                }
                (true, DownsampleKind::MaxPoolConv) => {
                    (ConvApply::ConvThenPool(PoolKind::Max), (1, 1))
                }
            };
            // The projection shortcut keeps cost parity: pooled variants
            // pool first and convolve at half resolution.
            let (short_apply, short_stride) = match (downsamples, spec.downsample) {
                (false, _) => (ConvApply::Plain, (1, 1)),
                (true, DownsampleKind::Strided) => (ConvApply::Plain, (2, 2)),
                (true, DownsampleKind::DilatedPool) => (ConvApply::DilatedPool, (1, 1)),
                (true, DownsampleKind::AvgPoolConv) => {
                    (ConvApply::PoolThenConv(PoolKind::Avg), (1, 1))
                }
                (true, DownsampleKind::MaxPoolConv) => {
                    (ConvApply::PoolThenConv(PoolKind::Max), (1, 1))
                }
            };

            let mut convs = Vec::new();
            if bottleneck {
                convs.push((
                    ConvUnit::new(
                        format!("{path}.conv1"),
                        he_normal(Shape::new(inner, in_channels, 1, 1), &mut rng, &mut normal_cache),
                        (1, 1),
                        (0, 0),
                        ConvApply::Plain,
                    ),
                    BnLayer::new(format!("{path}.bn1"), inner),
                ));
                convs.push((
                    ConvUnit::new(
                        format!("{path}.conv2"),
                        he_normal(Shape::new(inner, inner, 3, 3), &mut rng, &mut normal_cache),
                        down_stride,
                        (1, 1),
                        down_apply,
                    ),
                    BnLayer::new(format!("{path}.bn2"), inner),
                ));
                convs.push((
                    ConvUnit::new(
                        format!("{path}.conv3"),
                        he_normal(Shape::new(out_channels, inner, 1, 1), &mut rng, &mut normal_cache),
                        (1, 1),
                        (0, 0),
                        ConvApply::Plain,
                    ),
                    BnLayer::new(format!("{path}.bn3"), out_channels),
                ));
            } else {
                convs.push((
                    ConvUnit::new(
                        format!("{path}.conv1"),
                        he_normal(
                            Shape::new(out_channels, in_channels, 3, 3),
                            &mut rng,
                            &mut normal_cache,
                        ),
                        down_stride,
                        (1, 1),
                        down_apply,
                    ),
                    BnLayer::new(format!("{path}.bn1"), out_channels),
                ));
                convs.push((
                    ConvUnit::new(
                        format!("{path}.conv2"),
                        he_normal(
                            Shape::new(out_channels, out_channels, 3, 3),
                            &mut rng,
                            &mut normal_cache,
                        ),
                        (1, 1),
                        (1, 1),
                        ConvApply::Plain,
                    ),
                    BnLayer::new(format!("{path}.bn2"), out_channels),
                ));
            }

            let shortcut = if needs_projection {
                let apply = if downsamples { short_apply } else { ConvApply::Plain };
                let stride = if downsamples { short_stride } else { (1, 1) };
                Some((
                    ConvUnit::new(
                        format!("{path}.shortcut.conv"),
                        he_normal(
                            Shape::new(out_channels, in_channels, 1, 1),
                            &mut rng,
                            &mut normal_cache,
                        ),
                        stride,
                        (0, 0),
                        apply,
                    ),
                    BnLayer::new(format!("{path}.shortcut.bn"), out_channels),
                ))
            } else {
                None
            };

            blocks.push(Block {
                path,
                convs,
                shortcut,
                relu_caches: Vec::new(),
                sum_cache: None,
            });
            in_channels = out_channels;
        }
        stages.push(blocks);
    }

    // Classifier: uniform in +-1/sqrt(fan_in), the one biased layer.
    let fan_in = in_channels;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let fc_weight = Tensor4::from_fn(Shape::new(spec.num_classes, fan_in, 1, 1), |_, _, _, _| {
        S::from_f64(rng.uniform(-bound, bound))
    });
    let fc_bias = Tensor4::from_fn(Shape::new(1, spec.num_classes, 1, 1), |_, _, _, _| {
        S::from_f64(rng.uniform(-bound, bound))
    });
    let fc_weight_slot = OptSlot::like(&fc_weight);
    let fc_bias_slot = OptSlot::like(&fc_bias);

    Ok(Network {
        spec: spec.clone(),
        stem,
        stages,
        fc: LinearParams {
            weight: fc_weight,
            bias: Some(fc_bias),
        },
        fc_weight_slot,
        fc_bias_slot,
        fc_input_cache: None,
        gap_input_shape: None,
    })
}

/// Convenience constructor for the deep-narrow layout (depth 101, width
/// 0.5), optionally with dilated pooling at every stage transition.
pub fn deep_narrow<S: Scalar>(num_classes: usize, with_dp: bool) -> Result<Network<S>> {
    build(&ArchSpec::deep_narrow(num_classes, with_dp), 0)
}

impl<S: Scalar> Network<S> {
    fn check_input(&self, batch: &Tensor4<S>) -> Result<()> {
        let s = batch.shape();
        if s.c != 3 {
            return Err(Error::Dimension(format!(
                "network input must have 3 channels, got {s}"
            )));
        }
        let div = self.spec.stem.divisor();
        if s.h % div != 0 || s.w % div != 0 {
            return Err(Error::Dimension(format!(
                "input dims must be divisible by {div} for the {} stem, got {s}",
                self.spec.stem.label()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward: pure in (parameters, input).
    pub fn forward_eval(&self, batch: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(batch)?;
        let mut out = self.stem.forward_eval(batch)?;
        for stage in &self.stages {
            for block in stage {
                out = block.forward_eval(&out)?;
            }
        }
        let pooled = global_avg_pool_forward(&out);
        linear_forward(&pooled, &self.fc)
    }

    /// Training-mode forward: caches activations for [`Network::backward`]
    /// and notes the first non-finite layer output in `watch`.
    pub fn forward_train(&mut self, batch: &Tensor4<S>, watch: &mut NanWatch) -> Result<Tensor4<S>> {
        self.check_input(batch)?;
        let mut out = self.stem.forward_train(batch, watch)?;
        for stage in &mut self.stages {
            for block in stage {
                out = block.forward_train(&out, watch)?;
            }
        }
        self.gap_input_shape = Some(out.shape());
        let pooled = global_avg_pool_forward(&out);
        self.fc_input_cache = Some(pooled.clone());
        let logits = linear_forward(&pooled, &self.fc)?;
        watch.note("fc", &logits);
        Ok(logits)
    }

    /// Accumulates parameter gradients from a training-mode forward.
    pub fn backward(&mut self, grad_logits: &Tensor4<S>) -> Result<()> {
        let fc_input = self
            .fc_input_cache
            .take()
            .ok_or_else(|| Error::Validation("backward without a cached forward".into()))?;
        let gap_shape = self.gap_input_shape.take().unwrap();
        let fc_grads = linear_backward(&fc_input, &self.fc, grad_logits)?;
        self.fc_weight_slot.grad.add_scaled(&fc_grads.weight, S::ONE)?;
        if let Some(gb) = fc_grads.bias {
            self.fc_bias_slot.grad.add_scaled(&gb, S::ONE)?;
        }
        let mut g = global_avg_pool_backward(&fc_grads.input, gap_shape)?;
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g)?;
            }
        }
        self.stem.backward(&g)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, slot| slot.grad.fill(S::ZERO));
    }

    /// Visits every learned parameter in deterministic order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor4<S>)) {
        f("stem.conv.weight", &self.stem.conv.weight);
        f("stem.bn.gamma", &self.stem.bn.bn.gamma);
        f("stem.bn.beta", &self.stem.bn.bn.beta);
        for stage in &self.stages {
            for block in stage {
                for (conv, bn) in &block.convs {
                    f(&format!("{}.weight", conv.path), &conv.weight);
                    f(&format!("{}.gamma", bn.path), &bn.bn.gamma);
                    f(&format!("{}.beta", bn.path), &bn.bn.beta);
                }
                if let Some((conv, bn)) = &block.shortcut {
                    f(&format!("{}.weight", conv.path), &conv.weight);
                    f(&format!("{}.gamma", bn.path), &bn.bn.gamma);
                    f(&format!("{}.beta", bn.path), &bn.bn.beta);
                }
            }
        }
        f("fc.weight", &self.fc.weight);
        if let Some(b) = &self.fc.bias {
            f("fc.bias", b);
        }
    }

    /// Mutable parameter visit with optimizer slots, same order as
    /// [`Network::visit_params`].
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor4<S>, &mut OptSlot<S>)) {
        f(
            "stem.conv.weight",
            &mut self.stem.conv.weight,
            &mut self.stem.conv.slot,
        );
        f(
            "stem.bn.gamma",
            &mut self.stem.bn.bn.gamma,
            &mut self.stem.bn.gamma_slot,
        );
        f(
            "stem.bn.beta",
            &mut self.stem.bn.bn.beta,
            &mut self.stem.bn.beta_slot,
        );
        for stage in &mut self.stages {
            for block in stage {
                for (conv, bn) in &mut block.convs {
                    f(&format!("{}.weight", conv.path), &mut conv.weight, &mut conv.slot);
                    f(&format!("{}.gamma", bn.path), &mut bn.bn.gamma, &mut bn.gamma_slot);
                    f(&format!("{}.beta", bn.path), &mut bn.bn.beta, &mut bn.beta_slot);
                }
                if let Some((conv, bn)) = &mut block.shortcut {
                    f(&format!("{}.weight", conv.path), &mut conv.weight, &mut conv.slot);
                    f(&format!("{}.gamma", bn.path), &mut bn.bn.gamma, &mut bn.gamma_slot);
                    f(&format!("{}.beta", bn.path), &mut bn.bn.beta, &mut bn.beta_slot);
                }
            }
        }
        f("fc.weight", &mut self.fc.weight, &mut self.fc_weight_slot);
        if let Some(b) = &mut self.fc.bias {
            f("fc.bias", b, &mut self.fc_bias_slot);
        }
    }

    /// Visits the non-learned running statistics.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor4<S>)) {
        let bn_bufs = |bn: &BnLayer<S>, f: &mut dyn FnMut(&str, &Tensor4<S>)| {
            f(&format!("{}.running_mean", bn.path), &bn.bn.running_mean);
            f(&format!("{}.running_var", bn.path), &bn.bn.running_var);
        };
        bn_bufs(&self.stem.bn, f);
        for stage in &self.stages {
            for block in stage {
                for (_, bn) in &block.convs {
                    bn_bufs(bn, f);
                }
                if let Some((_, bn)) = &block.shortcut {
                    bn_bufs(bn, f);
                }
            }
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor4<S>)) {
        let bn_bufs = |bn: &mut BnLayer<S>, f: &mut dyn FnMut(&str, &mut Tensor4<S>)| {
            f(&format!("{}.running_mean", bn.path), &mut bn.bn.running_mean);
            f(&format!("{}.running_var", bn.path), &mut bn.bn.running_var);
        };
        bn_bufs(&mut self.stem.bn, f);
        for stage in &mut self.stages {
            for block in stage {
                for (_, bn) in &mut block.convs {
                    bn_bufs(bn, f);
                }
                if let Some((_, bn)) = &mut block.shortcut {
                    bn_bufs(bn, f);
                }
            }
        }
    }

    /// Total learned parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0usize;
        self.visit_params(&mut |_, t| total += t.numel());
        total
    }

    /// (path, shape) for every learned parameter, in visit order.
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        self.visit_params(&mut |path, t| out.push((path.to_string(), t.shape())));
        out
    }

    /// Number of weighted layers on the main path (convolutions plus the
    /// classifier; projection shortcuts excluded), i.e. the conventional
    /// depth of the architecture.
    pub fn weighted_depth(&self) -> usize {
        let mut count = 1; // stem conv
        for stage in &self.stages {
            for block in stage {
                count += block.convs.len();
            }
        }
        count + 1 // classifier
    }
}

#[derive(Debug, Clone)]
pub struct LayerSummary {
    pub path: String,
    pub kind: String,
    pub output: Shape,
    pub macs: u128,
    pub params: usize,
}

impl<S: Scalar> Network<S> {
    /// Static per-layer shapes, multiply-accumulate counts and parameter
    /// counts for a (1, 3, h, w) input.
    pub fn layer_summaries(&self, input_size: (usize, usize)) -> Result<Vec<LayerSummary>> {
        let mut rows = Vec::new();
        let mut shape = Shape::new(1, 3, input_size.0, input_size.1);

        let conv_row = |conv: &ConvUnit<S>, input: Shape| -> Result<(LayerSummary, Shape)> {
            let out = conv.output_shape(input)?;
            let kind = match conv.apply {
                ConvApply::Plain => format!(
                    "conv{}x{}/s{}",
                    conv.weight.shape().h,
                    conv.weight.shape().w,
                    conv.stride.0
                ),
                ConvApply::DilatedPool => format!(
                    "dilated_pool conv{}x{}",
                    conv.weight.shape().h,
                    conv.weight.shape().w
                ),
                ConvApply::ConvThenPool(kind) => format!(
                    "conv{}x{} + {}pool2x2",
                    conv.weight.shape().h,
                    conv.weight.shape().w,
                    kind.label()
                ),
                ConvApply::PoolThenConv(kind) => format!(
                    "{}pool2x2 + conv{}x{}",
                    kind.label(),
                    conv.weight.shape().h,
                    conv.weight.shape().w
                ),
            };
            Ok((
                LayerSummary {
                    path: conv.path.clone(),
                    kind,
                    output: out,
                    macs: conv.macs(input)?,
                    params: conv.weight.numel(),
                },
                out,
            ))
        };
        let bn_row = |bn: &BnLayer<S>, shape: Shape| LayerSummary {
            path: bn.path.clone(),
            kind: "batchnorm".into(),
            output: shape,
            macs: 0,
            params: bn.bn.gamma.numel() + bn.bn.beta.numel(),
        };

        let (row, next) = conv_row(&self.stem.conv, shape)?;
        rows.push(row);
        shape = next;
        rows.push(bn_row(&self.stem.bn, shape));
        if self.stem.kind == StemKind::Standard {
            shape = Shape::new(shape.n, shape.c, shape.h / 2, shape.w / 2);
            rows.push(LayerSummary {
                path: "stem.pool".into(),
                kind: "maxpool3x3/s2".into(),
                output: shape,
                macs: 0,
                params: 0,
            });
        }

        for stage in &self.stages {
            for block in stage {
                let block_input = shape;
                for (conv, bn) in &block.convs {
                    let (row, next) = conv_row(conv, shape)?;
                    rows.push(row);
                    shape = next;
                    rows.push(bn_row(bn, shape));
                }
                if let Some((conv, bn)) = &block.shortcut {
                    let (row, out) = conv_row(conv, block_input)?;
                    if out != shape {
                        return Err(Error::Dimension(format!(
                            "{}: shortcut output {out} does not match main path {shape}",
                            block.path
                        )));
                    }
                    rows.push(row);
                    rows.push(bn_row(bn, shape));
                }
            }
        }

        shape = Shape::new(shape.n, shape.c, 1, 1);
        rows.push(LayerSummary {
            path: "gap".into(),
            kind: "global_avg_pool".into(),
            output: shape,
            macs: 0,
            params: 0,
        });
        let classes = self.fc.out_features();
        rows.push(LayerSummary {
            path: "fc".into(),
            kind: format!("linear({}->{})", self.fc.in_features(), classes),
            output: Shape::new(shape.n, classes, 1, 1),
            macs: (self.fc.in_features() * classes) as u128,
            params: self.fc.weight.numel() + self.fc.bias.as_ref().map_or(0, |b| b.numel()),
        });
        Ok(rows)
    }
}
