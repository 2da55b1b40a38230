//! Analytic compute model.
//!
//! Counts multiply-accumulates of every matrix product, resampling tap and
//! codebook distance, and reports FLOPs at 2 per MAC. Layer norms, softmax,
//! activations and elementwise adds are excluded. The counters mirror the
//! forward passes exactly, so the tape's MAC counter is an oracle for them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::{BlockConfig, GenConfig, TokenizerConfig};
use crate::error::{contract, Result};
use crate::numerics::ResizeMode;
use crate::tokenizer::{header_lattice, plan_lattice, Lattice, DOWNSCALE};

/// FLOPs per multiply-accumulate.
pub const FLOPS_PER_MAC: u64 = 2;

/// Terms deliberately left out of every total.
pub const EXCLUDED: &str = "layer norms, softmax, activations, residual and bias adds, lookups";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    TokenizerEncode,
    TokenizerDecode,
    GeneratorForward,
    GeneratorSampleTotal,
    Baseline2dAr,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::TokenizerEncode => "tokenizer_encode",
            Component::TokenizerDecode => "tokenizer_decode",
            Component::GeneratorForward => "generator_forward",
            Component::GeneratorSampleTotal => "generator_sample_total",
            Component::Baseline2dAr => "baseline_2d_ar",
        }
    }
}

impl core::str::FromStr for Component {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Component::TokenizerEncode,
            Component::TokenizerDecode,
            Component::GeneratorForward,
            Component::GeneratorSampleTotal,
            Component::Baseline2dAr,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| crate::Error::Format(format!("unknown component {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Encode,
    Decode,
}

/// FLOPs of one transformer block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub attention: u64,
    pub mlp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub component: Component,
    /// Always the sum of `layers`, `projections` and `head`.
    pub total: u64,
    /// Blocks of the main stack.
    pub layers: Vec<LayerFlops>,
    /// Embeddings, positional resampling, code projections and the quantizer.
    pub projections: u64,
    /// Patch or pixel heads, the sub-code head and output logits.
    pub head: u64,
    /// Sequence length of the main stack.
    pub s: usize,
}

impl FlopsReport {
    fn new(component: Component, layers: Vec<LayerFlops>, projections: u64, head: u64, s: usize) -> Self {
        let total = layers.iter().map(|l| l.attention + l.mlp).sum::<u64>() + projections + head;
        FlopsReport {
            component,
            total,
            layers,
            projections,
            head,
            s,
        }
    }

    pub fn attention(&self) -> u64 {
        self.layers.iter().map(|l| l.attention).sum()
    }

    pub fn mlp(&self) -> u64 {
        self.layers.iter().map(|l| l.mlp).sum()
    }
}

fn flops(macs: u64) -> u64 {
    FLOPS_PER_MAC * macs
}

/// Attention FLOPs of one block over `s` positions: QKVO projections plus
/// scores and weighted values, `2 (4 s d^2 + 2 s^2 d)`.
pub fn attention_flops(s: usize, d: usize) -> u64 {
    let (s, d) = (s as u64, d as u64);
    flops(4 * s * d * d + 2 * s * s * d)
}

/// MLP FLOPs of one block over `s` positions, `2 s d (r d) 2`.
pub fn mlp_flops(s: usize, d: usize, mlp_ratio: usize) -> u64 {
    let (s, d, r) = (s as u64, d as u64, mlp_ratio as u64);
    2 * s * d * (r * d) * 2
}

fn block(cfg: &BlockConfig, s: usize) -> LayerFlops {
    LayerFlops {
        attention: attention_flops(s, cfg.d),
        mlp: mlp_flops(s, cfg.d, cfg.mlp_ratio),
    }
}

fn stack(cfg: &BlockConfig, s: usize) -> Vec<LayerFlops> {
    vec![block(cfg, s); cfg.layers]
}

/// One block advancing a single position against a cache holding `t` positions
/// (the new one included).
fn cached_block(cfg: &BlockConfig, t: usize) -> u64 {
    let (t, d, r) = (t as u64, cfg.d as u64, cfg.mlp_ratio as u64);
    flops(4 * d * d + 2 * t * d + 2 * d * r * d)
}

/// Separable resample of `[c, h, w]` to `[c, oh, ow]`; axes of equal size are skipped.
fn resize_macs(c: usize, (h, w): (usize, usize), (oh, ow): (usize, usize), mode: ResizeMode) -> u64 {
    let taps = mode.taps() as u64;
    let mut macs = 0;
    if oh != h {
        macs += (c * oh * w) as u64 * taps;
    }
    if ow != w {
        macs += (c * oh * ow) as u64 * taps;
    }
    macs
}

fn encode_report(cfg: &TokenizerConfig, lat: &Lattice, l: usize) -> FlopsReport {
    let d = cfg.encoder.d;
    let (n, k) = (lat.n(), lat.k);
    let (th, tw) = (lat.grid.t_h, lat.grid.t_w);
    let cb = cfg.codebook;
    let head = resize_macs(d * 3, (cfg.k_max, cfg.k_max), (k, k), cfg.weight_resize) + (n * 3 * k * k * d) as u64;
    let projections = resize_macs(d, (cfg.grid_max, cfg.grid_max), (th, tw), cfg.pos_resize)
        + (l * d * cb.code_dim()) as u64
        + (l * cb.n_cb * cb.m * cb.d_sub) as u64;
    FlopsReport::new(Component::TokenizerEncode, stack(&cfg.encoder, n + l), flops(projections), flops(head), n + l)
}

fn decode_report(cfg: &TokenizerConfig, lat: &Lattice, l: usize, h_out: usize, w_out: usize) -> FlopsReport {
    let d = cfg.decoder.d;
    let (n, big) = (lat.n(), DOWNSCALE * lat.k);
    let (th, tw) = (lat.grid.t_h, lat.grid.t_w);
    let base = DOWNSCALE * cfg.k_max;
    let projections =
        (l * cfg.codebook.code_dim() * d) as u64 + resize_macs(d, (cfg.grid_max, cfg.grid_max), (th, tw), cfg.pos_resize);
    let head = resize_macs(d * 3, (base, base), (big, big), cfg.weight_resize)
        + (n * d * 3 * big * big) as u64
        + resize_macs(
            3,
            (DOWNSCALE * lat.height, DOWNSCALE * lat.width),
            (DOWNSCALE * h_out, DOWNSCALE * w_out),
            ResizeMode::Bilinear,
        )
        + (h_out * w_out * 3 * DOWNSCALE * DOWNSCALE * 3) as u64;
    FlopsReport::new(Component::TokenizerDecode, stack(&cfg.decoder, l + n), flops(projections), flops(head), l + n)
}

/// Tokenizer cost for one `height x width` image and `l` tokens.
///
/// Encoding uses the lattice `k` selects (the capacity rule when `None`);
/// decoding assumes the header of such an encoding and a same-size output.
pub fn count_tokenizer(
    cfg: &TokenizerConfig,
    height: usize,
    width: usize,
    k: Option<usize>,
    l: usize,
    direction: Direction,
) -> Result<FlopsReport> {
    let lat = plan_lattice(cfg, height, width, k)?;
    match direction {
        Direction::Encode => Ok(encode_report(cfg, &lat, l)),
        Direction::Decode => Ok(decode_report(cfg, &lat, l, height, width)),
    }
}

/// Decoder cost for tokens carrying header `(height, width, k)` rendered at `h_out x w_out`.
pub fn count_decode(
    cfg: &TokenizerConfig,
    (height, width, k): (usize, usize, usize),
    l: usize,
    h_out: usize,
    w_out: usize,
) -> Result<FlopsReport> {
    if h_out == 0 || w_out == 0 {
        return Err(contract!("output extents must be positive, got {h_out}x{w_out}"));
    }
    Ok(decode_report(cfg, &header_lattice(cfg, height, width, k)?, l, h_out, w_out))
}

fn condition_macs(d: usize) -> u64 {
    (2 * d + d * d) as u64
}

/// One full generator forward over the condition and `l` tokens.
///
/// The target resolution only enters through the conditioning vector, whose
/// cost is fixed, so `_cond_resolution` does not affect the count.
pub fn count_generator(cfg: &GenConfig, l: usize, _cond_resolution: (usize, usize)) -> FlopsReport {
    let d = cfg.backbone.d;
    let n_cb = cfg.codebook.n_cb;
    let steps = l + usize::from(cfg.eos_enabled);
    let classes = cfg.codebook.m + usize::from(cfg.eos_enabled);
    let head_block = block(&cfg.head_config(), n_cb);
    let head = steps as u64 * (cfg.head_layers as u64 * (head_block.attention + head_block.mlp))
        + flops((steps * n_cb * d * classes) as u64);
    FlopsReport::new(
        Component::GeneratorForward,
        stack(&cfg.backbone, 1 + l),
        flops(condition_macs(d)),
        head,
        1 + l,
    )
}

/// Sum of cached per-step costs to sample `l` tokens for `rows` batch rows
/// (2 under classifier-free guidance).
pub fn count_generator_sample(cfg: &GenConfig, l: usize, _cond_resolution: (usize, usize), rows: usize) -> FlopsReport {
    let d = cfg.backbone.d;
    let n_cb = cfg.codebook.n_cb;
    let classes = cfg.codebook.m + usize::from(cfg.eos_enabled);
    let rows_u = rows as u64;
    let layers = (0..cfg.backbone.layers)
        .map(|_| {
            let (mut attention, mut mlp) = (0, 0);
            for t in 1..=l {
                let (dd, tt, r) = (d as u64, t as u64, cfg.backbone.mlp_ratio as u64);
                attention += rows_u * flops(4 * dd * dd + 2 * tt * dd);
                mlp += rows_u * flops(2 * dd * r * dd);
            }
            LayerFlops { attention, mlp }
        })
        .collect();
    let head_cfg = cfg.head_config();
    let per_token: u64 = (1..=n_cb)
        .map(|c| head_cfg.layers as u64 * cached_block(&head_cfg, c) + flops((d * classes) as u64))
        .sum();
    FlopsReport::new(
        Component::GeneratorSampleTotal,
        layers,
        rows_u * flops(condition_macs(d)),
        rows_u * l as u64 * per_token,
        l,
    )
}

/// A fixed-resolution 2D-token autoregressive model with one token per `f x f` patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArBaselineConfig {
    pub backbone: BlockConfig,
    pub vocab: usize,
}

impl ArBaselineConfig {
    /// A GPT-B sized stack over a 16384-entry codebook.
    pub fn reference_b() -> Self {
        ArBaselineConfig {
            backbone: BlockConfig::causal(768, 12, 12),
            vocab: 16384,
        }
    }

    /// Same stack as a generator preset, vocabulary of one of its codebooks.
    pub fn matching(cfg: &GenConfig) -> Self {
        ArBaselineConfig {
            backbone: cfg.backbone.clone(),
            vocab: cfg.codebook.m,
        }
    }
}

/// Full forward of the baseline over `s = (height / f) (width / f)` tokens.
pub fn count_baseline_2d_ar(cfg: &ArBaselineConfig, height: usize, width: usize, f: usize) -> Result<FlopsReport> {
    if f == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
        return Err(contract!("downsampling factor {f} must divide {height}x{width}"));
    }
    let s = (height / f) * (width / f);
    let head = flops((s * cfg.backbone.d * cfg.vocab) as u64);
    Ok(FlopsReport::new(Component::Baseline2dAr, stack(&cfg.backbone, s), 0, head, s))
}

/// One point of a compute-versus-resolution curve.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveRow {
    /// `HxW`.
    pub resolution: String,
    pub component: Component,
    /// Token count `L`, or the baseline's downsampling factor.
    pub param: usize,
    pub flops: u64,
}

/// Models compared by [`emit_curves`].
#[derive(Clone, Debug)]
pub struct CurveSet {
    pub tokenizer: TokenizerConfig,
    pub generator: GenConfig,
    pub baseline: ArBaselineConfig,
    pub lengths: Vec<usize>,
    pub factors: Vec<usize>,
}

/// Tokenizer (capacity-rule lattice), generator and baseline costs at every
/// resolution; resolutions a baseline factor does not divide are skipped.
pub fn emit_curves(resolutions: &[(usize, usize)], set: &CurveSet) -> Result<Vec<CurveRow>> {
    if resolutions.is_empty() || (set.lengths.is_empty() && set.factors.is_empty()) {
        return Err(contract!("curves need at least one resolution and one length or factor"));
    }
    let mut rows = Vec::new();
    for &(h, w) in resolutions {
        let resolution = format!("{h}x{w}");
        let mut push = |component, param, flops| {
            rows.push(CurveRow {
                resolution: resolution.clone(),
                component,
                param,
                flops,
            })
        };
        for &l in &set.lengths {
            for (component, direction) in [
                (Component::TokenizerEncode, Direction::Encode),
                (Component::TokenizerDecode, Direction::Decode),
            ] {
                push(component, l, count_tokenizer(&set.tokenizer, h, w, None, l, direction)?.total);
            }
            push(Component::GeneratorForward, l, count_generator(&set.generator, l, (h, w)).total);
        }
        for &f in &set.factors {
            if h % f == 0 && w % f == 0 {
                push(Component::Baseline2dAr, f, count_baseline_2d_ar(&set.baseline, h, w, f)?.total);
            }
        }
    }
    Ok(rows)
}
