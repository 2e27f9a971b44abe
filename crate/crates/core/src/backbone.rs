//! The LOLViT hybrid backbone.
//!
//! Five stages at strides 2, 4, 8, 16 and 32: a convolution stem followed by
//! GhostNet bottlenecks, with a LOLViT block after each of the last three
//! downsampling bottlenecks. A LOLViT block raises channels with a 1×1
//! convolution, serializes the map into tokens, runs `L` pre-norm
//! transformer layers built on fast window attention (sharing one key
//! cache), folds the tokens back, projects to the block width and applies
//! the depthwise feature-fusion branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{fwa_attention, FwaConfig, FwaWeights, KeyCache, DEFAULT_DP, DEFAULT_HEADS};
use crate::error::{Error, Result};
use crate::fawa::{PatchGeometry, TokenBatch};
use crate::layers::{Conv2d, ConvNorm, LayerNorm, Linear, Parameters};
use crate::tensor::Tensor;

/// Patch size; `length` runs along the feature-map height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Patch {
    pub width: usize,
    pub length: usize,
}

impl Patch {
    pub const UNIT: Patch = Patch { width: 1, length: 1 };
}

/// Serializes `[B, C, H, W]` into row-major pixel tokens `[B, H·W, C]`.
pub fn serialize(feature_map: &Tensor, patch: Patch, fold: usize) -> Result<TokenBatch> {
    if feature_map.rank() != 4 {
        return Err(Error::InvalidShape {
            op: "serialize",
            shape: feature_map.shape().to_vec(),
            reason: "expected [batch, channels, height, width]".into(),
        });
    }
    let [b, c, h, w] = [feature_map.shape()[0], feature_map.shape()[1], feature_map.shape()[2], feature_map.shape()[3]];
    if h % patch.length != 0 {
        return Err(Error::Divisibility { op: "serialize height", value: h, divisor: patch.length });
    }
    if w % patch.width != 0 {
        return Err(Error::Divisibility { op: "serialize width", value: w, divisor: patch.width });
    }
    let geometry = PatchGeometry::new(h, w, patch.length, patch.width, fold)?;
    let tokens = feature_map.clone().reshape(&[b, c, h * w])?.transpose(1, 2)?;
    TokenBatch::new(tokens, geometry)
}

/// Inverse of [`serialize`].
pub fn deserialize(tokens: &TokenBatch) -> Result<Tensor> {
    let g = tokens.geometry();
    tokens
        .tokens()
        .transpose(1, 2)?
        .reshape(&[tokens.batch(), tokens.channels(), g.feat_h, g.feat_w])
}

/// Keeps the first `channels` channels of `[B, C, H, W]`.
fn narrow_channels(x: Tensor, channels: usize) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape[1] == channels {
        return Ok(x);
    }
    let plane = shape[2] * shape[3];
    let mut data = Vec::with_capacity(shape[0] * channels * plane);
    for item in x.data().chunks_exact(shape[1] * plane) {
        data.extend_from_slice(&item[..channels * plane]);
    }
    Tensor::new(&[shape[0], channels, shape[2], shape[3]], data)
}

/// Half the output channels from a pointwise convolution, the rest from a
/// cheap 3×3 depthwise convolution over those.
#[derive(Debug, Clone)]
pub struct GhostModule {
    pub primary: ConvNorm,
    pub cheap: ConvNorm,
    pub out_ch: usize,
}

impl GhostModule {
    pub fn init(in_ch: usize, out_ch: usize, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        let intrinsic = out_ch.div_ceil(2);
        Self {
            primary: ConvNorm::new(Conv2d::pointwise(in_ch, intrinsic, rng), relu),
            cheap: ConvNorm::new(Conv2d::depthwise(intrinsic, 3, 1, rng), relu),
            out_ch,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let intrinsic = self.primary.forward(x)?;
        let ghost = self.cheap.forward(&intrinsic)?;
        narrow_channels(Tensor::cat(&[intrinsic, ghost], 1)?, self.out_ch)
    }

    fn zero_weights(&mut self) {
        self.primary.zero_weights();
        self.cheap.zero_weights();
    }
}

impl Parameters for GhostModule {
    fn param_count(&self) -> usize {
        self.primary.param_count() + self.cheap.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GhostBottleneckSpec {
    pub in_ch: usize,
    pub mid_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl GhostBottleneckSpec {
    /// 3×3 rows downsample by two; 1×1 rows keep resolution.
    pub fn new(in_ch: usize, mid_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        let stride = match kernel {
            1 => 1,
            3 => 2,
            k => return Err(Error::Config(format!("ghost bottleneck kernel must be 1 or 3, got {k}"))),
        };
        if in_ch == 0 || mid_ch == 0 || out_ch == 0 {
            return Err(Error::Config("ghost bottleneck channels must be positive".into()));
        }
        Ok(Self { in_ch, mid_ch, out_ch, kernel, stride })
    }

    pub fn has_identity_shortcut(&self) -> bool {
        self.stride == 1 && self.in_ch == self.out_ch
    }
}

#[derive(Debug, Clone)]
pub struct GhostBottleneck {
    pub spec: GhostBottleneckSpec,
    pub expand: GhostModule,
    pub downsample: Option<ConvNorm>,
    pub project: GhostModule,
    /// Depthwise then pointwise projection when the identity does not fit.
    pub shortcut: Option<(ConvNorm, ConvNorm)>,
}

impl GhostBottleneck {
    pub fn init(spec: GhostBottleneckSpec, rng: &mut ChaCha8Rng) -> Self {
        let expand = GhostModule::init(spec.in_ch, spec.mid_ch, true, rng);
        let downsample =
            (spec.stride > 1).then(|| ConvNorm::new(Conv2d::depthwise(spec.mid_ch, 3, spec.stride, rng), false));
        let project = GhostModule::init(spec.mid_ch, spec.out_ch, false, rng);
        let shortcut = (!spec.has_identity_shortcut()).then(|| {
            (
                ConvNorm::new(Conv2d::depthwise(spec.in_ch, 3, spec.stride, rng), false),
                ConvNorm::new(Conv2d::pointwise(spec.in_ch, spec.out_ch, rng), false),
            )
        });
        Self { spec, expand, downsample, project, shortcut }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 4 || x.shape()[1] != self.spec.in_ch {
            return Err(Error::ShapeMismatch {
                op: "ghost_bottleneck",
                lhs: x.shape().to_vec(),
                rhs: vec![self.spec.in_ch],
            });
        }
        let mut y = self.expand.forward(x)?;
        if let Some(down) = &self.downsample {
            y = down.forward(&y)?;
        }
        let mut y = self.project.forward(&y)?;
        match &self.shortcut {
            None => y.add_assign(x)?,
            Some((dw, pw)) => y.add_assign(&pw.forward(&dw.forward(x)?)?)?,
        }
        Ok(y)
    }

    pub fn zero_weights(&mut self) {
        self.expand.zero_weights();
        self.project.zero_weights();
        if let Some(d) = &mut self.downsample {
            d.zero_weights();
        }
        if let Some((a, b)) = &mut self.shortcut {
            a.zero_weights();
            b.zero_weights();
        }
    }
}

impl Parameters for GhostBottleneck {
    fn param_count(&self) -> usize {
        self.expand.param_count()
            + self.downsample.as_ref().map_or(0, |d| d.param_count())
            + self.project.param_count()
            + self.shortcut.as_ref().map_or(0, |(a, b)| a.param_count() + b.param_count())
    }
}

/// Parallel large-kernel branch added back onto its input:
/// depthwise 5×5 → pointwise → depthwise 7×7 → pointwise, each with ReLU.
#[derive(Debug, Clone)]
pub struct FeatureFusion {
    pub branch: [ConvNorm; 4],
}

impl FeatureFusion {
    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            branch: [
                ConvNorm::new(Conv2d::depthwise(channels, 5, 1, rng), true),
                ConvNorm::new(Conv2d::pointwise(channels, channels, rng), true),
                ConvNorm::new(Conv2d::depthwise(channels, 7, 1, rng), true),
                ConvNorm::new(Conv2d::pointwise(channels, channels, rng), true),
            ],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.branch[0].forward(x)?;
        for stage in &self.branch[1..] {
            y = stage.forward(&y)?;
        }
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn zero_weights(&mut self) {
        self.branch.iter_mut().for_each(ConvNorm::zero_weights);
    }
}

impl Parameters for FeatureFusion {
    fn param_count(&self) -> usize {
        self.branch.iter().map(Parameters::param_count).sum()
    }
}

/// Pre-norm transformer layer: `x += out(FWA(LN(x)))`, `x += FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attn: FwaWeights,
    pub out_proj: Linear,
    /// DReLu scale. Fixed at inference; counted as one parameter.
    pub dp: f32,
    pub ffn_norm: LayerNorm,
    pub ffn_expand: Linear,
    pub ffn_project: Linear,
}

pub const FFN_EXPANSION: usize = 2;

impl TransformerLayer {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attn_norm: LayerNorm::new(dim),
            attn: FwaWeights::init(dim, rng),
            out_proj: Linear::init_unit(dim, dim, rng),
            dp: DEFAULT_DP,
            ffn_norm: LayerNorm::new(dim),
            ffn_expand: Linear::init(dim, FFN_EXPANSION * dim, rng),
            ffn_project: Linear::init_unit(FFN_EXPANSION * dim, dim, rng),
        }
    }

    /// Applies the layer to `x` in place. Returns the key cache it used.
    fn forward(&self, x: &mut Tensor, cfg: &FwaConfig, cache: Option<&KeyCache>) -> Result<KeyCache> {
        let cfg = cfg.with_dp(self.dp, cfg.eps)?;
        let normed = TokenBatch::new(self.attn_norm.forward(x)?, cfg.geometry)?;
        let (attn, cache) = fwa_attention(&normed, &cfg, cache, &self.attn)?;
        x.add_assign(&self.out_proj.forward(&attn)?)?;
        let hidden = self.ffn_expand.forward(&self.ffn_norm.forward(x)?)?.relu();
        x.add_assign(&self.ffn_project.forward(&hidden)?)?;
        Ok(cache)
    }
}

impl Parameters for TransformerLayer {
    fn param_count(&self) -> usize {
        self.attn_norm.param_count()
            + self.attn.param_count()
            + self.out_proj.param_count()
            + 1
            + self.ffn_norm.param_count()
            + self.ffn_expand.param_count()
            + self.ffn_project.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LolvitBlockSpec {
    /// Block input and output channels.
    pub channels: usize,
    /// Transformer width after the channel-raising convolution.
    pub embed_dim: usize,
    pub layers_l: usize,
    pub fold: usize,
    pub patch: Patch,
    pub heads: usize,
}

impl LolvitBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers_l == 0 || self.fold == 0 || self.channels == 0 {
            return Err(Error::Config("LOLViT block sizes must be positive".into()));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Divisibility { op: "LOLViT block heads", value: self.embed_dim, divisor: self.heads });
        }
        Ok(())
    }
}

/// How stacked layers obtain their key sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CacheMode {
    /// Aggregate once at the first layer; later layers reuse the cache.
    #[default]
    Shared,
    /// Every layer aggregates its own input.
    PerLayer,
}

#[derive(Debug, Clone)]
pub struct LolvitBlock {
    pub spec: LolvitBlockSpec,
    pub raise: ConvNorm,
    pub layers: Vec<TransformerLayer>,
    pub project: ConvNorm,
    pub fusion: FeatureFusion,
}

impl LolvitBlock {
    pub fn init(spec: LolvitBlockSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            raise: ConvNorm::new(Conv2d::pointwise(spec.channels, spec.embed_dim, rng), true),
            layers: (0..spec.layers_l).map(|_| TransformerLayer::init(spec.embed_dim, rng)).collect(),
            project: ConvNorm::new(Conv2d::pointwise(spec.embed_dim, spec.channels, rng), true),
            fusion: FeatureFusion::init(spec.channels, rng),
        })
    }

    /// Attention configuration for an `h × w` input. The fold is lowered to
    /// the nearest divisor of the key length when the map is too small.
    pub fn attention_config(&self, h: usize, w: usize) -> Result<FwaConfig> {
        let patch = self.spec.patch;
        let geometry = PatchGeometry::new(h, w, patch.length, patch.width, 1)?.with_fitted_fold(self.spec.fold);
        FwaConfig::new(self.spec.embed_dim, self.spec.heads, geometry)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, CacheMode::Shared)
    }

    pub fn forward_with(&self, x: &Tensor, mode: CacheMode) -> Result<Tensor> {
        if x.rank() != 4 || x.shape()[1] != self.spec.channels {
            return Err(Error::ShapeMismatch {
                op: "lolvit_block",
                lhs: x.shape().to_vec(),
                rhs: vec![self.spec.channels],
            });
        }
        let cfg = self.attention_config(x.shape()[2], x.shape()[3])?;
        let tokens = serialize(&self.raise.forward(x)?, self.spec.patch, cfg.geometry.fold)?;
        let mut h = tokens.tokens().clone();
        let mut cache: Option<KeyCache> = None;
        for layer in &self.layers {
            let reuse = match mode {
                CacheMode::Shared => cache.as_ref(),
                CacheMode::PerLayer => None,
            };
            let used = layer.forward(&mut h, &cfg, reuse)?;
            if cache.is_none() {
                cache = Some(used);
            }
        }
        let map = deserialize(&tokens.with_tokens(h)?)?;
        self.fusion.forward(&self.project.forward(&map)?)
    }
}

impl Parameters for LolvitBlock {
    fn param_count(&self) -> usize {
        self.raise.param_count()
            + self.layers.iter().map(Parameters::param_count).sum::<usize>()
            + self.project.param_count()
            + self.fusion.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    S,
    X,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Variant::S),
            "X" | "x" => Ok(Variant::X),
            other => Err(Error::Config(format!("unknown variant {other:?}, expected S or X"))),
        }
    }
}

/// One row of the published architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReferenceRow {
    pub module: &'static str,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: Option<usize>,
    pub params: usize,
}

const fn row(module: &'static str, in_ch: usize, out_ch: usize, kernel: Option<usize>, params: usize) -> ReferenceRow {
    ReferenceRow { module, in_ch, out_ch, kernel, params }
}

const REFERENCE_S: [ReferenceRow; 10] = [
    row("Conv", 3, 32, Some(3), 464),
    row("GhostNetBlock", 32, 32, Some(1), 2_448),
    row("GhostNetBlock", 32, 64, Some(3), 6_872),
    row("GhostNetBlock", 64, 64, Some(1), 6_696),
    row("GhostNetBlock", 64, 96, Some(3), 17_208),
    row("LOLViTBlock", 96, 96, None, 163_927),
    row("GhostNetBlock", 96, 128, Some(3), 30_288),
    row("LOLViTBlock", 128, 128, None, 295_703),
    row("GhostNetBlock", 128, 192, Some(3), 60_528),
    row("LOLViTBlock", 192, 192, None, 472_535),
];

const REFERENCE_X: [ReferenceRow; 10] = [
    row("Conv", 3, 32, Some(3), 928),
    row("GhostNetBlock", 32, 32, Some(1), 3_440),
    row("GhostNetBlock", 32, 64, Some(3), 8_160),
    row("GhostNetBlock", 64, 64, Some(1), 10_976),
    row("GhostNetBlock", 64, 96, Some(3), 30_288),
    row("LOLViTBlock", 96, 96, None, 269_943),
    row("GhostNetBlock", 96, 128, Some(3), 60_528),
    row("LOLViTBlock", 128, 128, None, 468_439),
    row("GhostNetBlock", 128, 192, Some(3), 109_728),
    row("LOLViTBlock", 192, 192, None, 900_279),
];

pub const REFERENCE_TOTAL_S: usize = 1_056_669;
pub const REFERENCE_TOTAL_X: usize = 1_862_709;

/// Per-stage defaults: L = 1-1-1, Fold = 1-2-4, Patch = 1-1-1, heads 4-4-4.
pub const DEFAULT_LAYERS: [usize; 3] = [1, 1, 1];
pub const DEFAULT_FOLDS: [usize; 3] = [1, 2, 4];

impl Variant {
    pub fn reference_rows(self) -> &'static [ReferenceRow; 10] {
        match self {
            Variant::S => &REFERENCE_S,
            Variant::X => &REFERENCE_X,
        }
    }

    pub fn reference_total(self) -> usize {
        match self {
            Variant::S => REFERENCE_TOTAL_S,
            Variant::X => REFERENCE_TOTAL_X,
        }
    }

    /// Expansion widths of the six ghost bottlenecks.
    fn ghost_mid_channels(self) -> [usize; 6] {
        match self {
            Variant::S => [58, 60, 90, 98, 122, 186],
            Variant::X => [84, 80, 150, 232, 356, 464],
        }
    }

    /// Transformer widths of the three LOLViT blocks.
    fn embed_dims(self) -> [usize; 3] {
        match self {
            Variant::S => [120, 160, 196],
            Variant::X => [164, 216, 296],
        }
    }

    pub fn stage_specs(self) -> ModelSpec {
        self.stage_specs_with(DEFAULT_LAYERS)
    }

    /// Stage list with a custom transformer repeat count per LOLViT block.
    pub fn stage_specs_with(self, layers: [usize; 3]) -> ModelSpec {
        let mids = self.ghost_mid_channels();
        let dims = self.embed_dims();
        let mut stages = vec![StageSpec::Stem { in_ch: 3, out_ch: 32 }];
        let (mut ghost, mut vit) = (0, 0);
        for r in &self.reference_rows()[1..] {
            match r.kernel {
                Some(k) => {
                    let spec = GhostBottleneckSpec::new(r.in_ch, mids[ghost], r.out_ch, k)
                        .expect("reference rows use kernel 1 or 3");
                    stages.push(StageSpec::Ghost(spec));
                    ghost += 1;
                }
                None => {
                    stages.push(StageSpec::Lolvit(LolvitBlockSpec {
                        channels: r.out_ch,
                        embed_dim: dims[vit],
                        layers_l: layers[vit],
                        fold: DEFAULT_FOLDS[vit],
                        patch: Patch::UNIT,
                        heads: DEFAULT_HEADS,
                    }));
                    vit += 1;
                }
            }
        }
        ModelSpec { variant: self, stages }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    Stem { in_ch: usize, out_ch: usize },
    Ghost(GhostBottleneckSpec),
    Lolvit(LolvitBlockSpec),
}

impl StageSpec {
    pub fn in_ch(&self) -> usize {
        match self {
            StageSpec::Stem { in_ch, .. } => *in_ch,
            StageSpec::Ghost(g) => g.in_ch,
            StageSpec::Lolvit(l) => l.channels,
        }
    }

    pub fn out_ch(&self) -> usize {
        match self {
            StageSpec::Stem { out_ch, .. } => *out_ch,
            StageSpec::Ghost(g) => g.out_ch,
            StageSpec::Lolvit(l) => l.channels,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            StageSpec::Stem { .. } => 2,
            StageSpec::Ghost(g) => g.stride,
            StageSpec::Lolvit(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StageSpec::Stem { .. } => "Conv",
            StageSpec::Ghost(_) => "GhostNetBlock",
            StageSpec::Lolvit(_) => "LOLViTBlock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub stages: Vec<StageSpec>,
}

impl ModelSpec {
    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(StageSpec::stride).product()
    }

    pub fn channel_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.stages[0].in_ch()];
        chain.extend(self.stages.iter().map(StageSpec::out_ch));
        chain
    }
}

#[derive(Debug, Clone)]
pub enum Stage {
    Stem(ConvNorm),
    Ghost(GhostBottleneck),
    Lolvit(LolvitBlock),
}

impl Stage {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Stage::Stem(c) => c.forward(x),
            Stage::Ghost(g) => g.forward(x),
            Stage::Lolvit(l) => l.forward(x),
        }
    }
}

impl Parameters for Stage {
    fn param_count(&self) -> usize {
        match self {
            Stage::Stem(c) => c.param_count(),
            Stage::Ghost(g) => g.param_count(),
            Stage::Lolvit(l) => l.param_count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub stages: Vec<Stage>,
}

pub fn build_model(variant: Variant, seed: u64) -> Result<Model> {
    Model::from_spec(variant.stage_specs(), seed)
}

pub fn count_params(model: &Model) -> usize {
    model.param_count()
}

impl Model {
    pub fn from_spec(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = spec
            .stages
            .iter()
            .map(|s| {
                Ok(match *s {
                    StageSpec::Stem { in_ch, out_ch } => {
                        Stage::Stem(ConvNorm::new(Conv2d::init(in_ch, out_ch, 3, 2, 1, &mut rng), true))
                    }
                    StageSpec::Ghost(g) => Stage::Ghost(GhostBottleneck::init(g, &mut rng)),
                    StageSpec::Lolvit(l) => Stage::Lolvit(LolvitBlock::init(l, &mut rng)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, stages })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let stride = self.spec.total_stride();
        if shape.len() != 4 || shape[1] != self.spec.stages[0].in_ch() {
            return Err(Error::InvalidShape {
                op: "model_forward",
                shape: shape.to_vec(),
                reason: "expected [batch, 3, height, width]".into(),
            });
        }
        for side in &shape[2..] {
            if side % stride != 0 {
                return Err(Error::Divisibility { op: "model input size", value: *side, divisor: stride });
            }
        }
        Ok(())
    }

    /// `[B, 3, H, W]` → `[B, 192, H/32, W/32]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut y = self.stages[0].forward(x)?;
        for stage in &self.stages[1..] {
            y = stage.forward(&y)?;
        }
        Ok(y)
    }

    /// Stage table for an `input_hw × input_hw` image.
    pub fn summary(&self, input_hw: usize) -> Result<ModelSummary> {
        self.check_input(&[1, 3, input_hw, input_hw])?;
        let reference = self.spec.variant.reference_rows();
        let mut side = input_hw;
        let stages = self
            .spec
            .stages
            .iter()
            .zip(&self.stages)
            .zip(reference)
            .map(|((spec, stage), r)| {
                side /= spec.stride();
                let params = stage.param_count();
                StageSummary {
                    module: spec.name(),
                    in_ch: spec.in_ch(),
                    out_ch: spec.out_ch(),
                    stride: spec.stride(),
                    output_shape: [1, spec.out_ch(), side, side],
                    params,
                    reference_params: r.params,
                    deviation_pct: deviation_pct(params, r.params),
                    spec: *spec,
                }
            })
            .collect();
        let total = self.param_count();
        let reference_total = self.spec.variant.reference_total();
        Ok(ModelSummary {
            variant: self.spec.variant,
            input: [1, 3, input_hw, input_hw],
            stages,
            total_params: total,
            reference_total,
            deviation_pct: deviation_pct(total, reference_total),
        })
    }
}

impl Parameters for Model {
    fn param_count(&self) -> usize {
        self.stages.iter().map(Parameters::param_count).sum()
    }
}

pub fn deviation_pct(actual: usize, reference: usize) -> f64 {
    (actual as f64 - reference as f64) / reference as f64 * 100.0
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub module: &'static str,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub output_shape: [usize; 4],
    pub params: usize,
    pub reference_params: usize,
    pub deviation_pct: f64,
    pub spec: StageSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub variant: Variant,
    pub input: [usize; 4],
    pub stages: Vec<StageSummary>,
    pub total_params: usize,
    pub reference_total: usize,
    pub deviation_pct: f64,
}
