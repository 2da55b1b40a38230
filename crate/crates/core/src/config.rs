//! Model geometry and presets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ResizeMode;

/// One transformer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub d: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub layers: usize,
    pub qk_norm: bool,
    pub causal: bool,
    pub dropout_p: f64,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(alloc::format!(
                "width {} must be a positive multiple of heads {}",
                self.d,
                self.heads
            )));
        }
        if self.mlp_ratio < 1 {
            return Err(Error::Config("mlp_ratio must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    fn bidirectional(d: usize, heads: usize, layers: usize) -> Self {
        BlockConfig {
            d,
            heads,
            mlp_ratio: 4,
            layers,
            qk_norm: false,
            causal: false,
            dropout_p: 0.0,
        }
    }

    pub fn causal(d: usize, heads: usize, layers: usize) -> Self {
        BlockConfig {
            d,
            heads,
            mlp_ratio: 4,
            layers,
            qk_norm: true,
            causal: true,
            dropout_p: 0.1,
        }
    }
}

/// Geometry of the multi-codebook quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub n_cb: usize,
    pub m: usize,
    pub d_sub: usize,
}

impl CodebookConfig {
    pub fn code_dim(&self) -> usize {
        self.n_cb * self.d_sub
    }

    pub fn vocabulary(&self) -> usize {
        self.n_cb * self.m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub encoder: BlockConfig,
    pub decoder: BlockConfig,
    pub codebook: CodebookConfig,
    /// Patch sizes used in training and accepted by `encode`.
    pub k_set: Vec<usize>,
    /// Base patch size of the learned projection.
    pub k_max: usize,
    pub l_min: usize,
    pub l_max: usize,
    /// Upper bound on spatial tokens per image.
    pub n_cap: usize,
    /// Oversampling factor of the decoder canvas.
    pub decode_upscale: usize,
    /// Side of the learned positional lattice.
    pub grid_max: usize,
    pub pos_resize: ResizeMode,
    pub weight_resize: ResizeMode,
    /// Admit patch sizes outside `k_set` (still within `[1, k_max]`).
    pub allow_any_k: bool,
    /// Admit explicit patch sizes whose lattice exceeds `n_cap`.
    #[serde(default)]
    pub allow_over_cap: bool,
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.causal || self.decoder.causal {
            return Err(Error::Config("tokenizer stacks are bidirectional".into()));
        }
        let cb = &self.codebook;
        if cb.n_cb == 0 || cb.m == 0 || cb.d_sub == 0 || cb.m > u16::MAX as usize + 1 {
            return Err(Error::Config("codebook geometry must be positive, m <= 65536".into()));
        }
        if self.l_min == 0 || self.l_max < self.l_min || self.l_max > u16::MAX as usize {
            return Err(Error::Config(alloc::format!(
                "token bounds [{}, {}] invalid",
                self.l_min,
                self.l_max
            )));
        }
        if self.k_max == 0 || self.k_set.iter().any(|&k| k == 0 || k > self.k_max) || self.k_set.is_empty() {
            return Err(Error::Config("k_set must be non-empty and within [1, k_max]".into()));
        }
        if self.decode_upscale == 0 || self.grid_max == 0 || self.n_cap == 0 {
            return Err(Error::Config("decode_upscale, grid_max and n_cap must be positive".into()));
        }
        Ok(())
    }

    /// Test and acceptance scale: width 32, two layers per stack, 8 x 64 x 4 codebooks.
    pub fn micro() -> Self {
        TokenizerConfig {
            encoder: BlockConfig::bidirectional(32, 4, 2),
            decoder: BlockConfig::bidirectional(32, 4, 2),
            codebook: CodebookConfig { n_cb: 8, m: 64, d_sub: 4 },
            k_set: vec![8, 12, 16, 32],
            k_max: 32,
            l_min: 4,
            l_max: 16,
            n_cap: 1024,
            decode_upscale: 4,
            grid_max: 32,
            pos_resize: ResizeMode::Bilinear,
            weight_resize: ResizeMode::Bilinear,
            allow_any_k: false,
            allow_over_cap: false,
        }
    }

    /// Small encoder, larger decoder (the SL layout scaled down 8x in width).
    pub fn desk_sl() -> Self {
        TokenizerConfig {
            encoder: BlockConfig::bidirectional(32, 4, 3),
            decoder: BlockConfig::bidirectional(64, 4, 6),
            codebook: CodebookConfig { n_cb: 8, m: 256, d_sub: 4 },
            l_min: 8,
            l_max: 64,
            ..Self::micro()
        }
    }

    /// Large encoder and decoder (the LL layout scaled down 8x in width).
    pub fn desk_ll() -> Self {
        TokenizerConfig {
            encoder: BlockConfig::bidirectional(64, 4, 6),
            decoder: BlockConfig::bidirectional(64, 4, 6),
            ..Self::desk_sl()
        }
    }

    /// Reference SL geometry, used only for compute accounting.
    pub fn reference_sl() -> Self {
        TokenizerConfig {
            encoder: BlockConfig::bidirectional(256, 8, 6),
            decoder: BlockConfig::bidirectional(512, 8, 12),
            codebook: CodebookConfig { n_cb: 8, m: 4096, d_sub: 32 },
            l_min: 32,
            l_max: 256,
            ..Self::micro()
        }
    }

    /// Reference LL geometry, used only for compute accounting.
    pub fn reference_ll() -> Self {
        TokenizerConfig {
            encoder: BlockConfig::bidirectional(512, 8, 12),
            decoder: BlockConfig::bidirectional(512, 8, 12),
            ..Self::reference_sl()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "desk-sl" => Ok(Self::desk_sl()),
            "desk-ll" => Ok(Self::desk_ll()),
            "reference-sl" => Ok(Self::reference_sl()),
            "reference-ll" => Ok(Self::reference_ll()),
            other => Err(Error::Config(alloc::format!("unknown tokenizer preset {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub backbone: BlockConfig,
    pub head_layers: usize,
    pub codebook: CodebookConfig,
    pub num_classes: usize,
    /// Longest token sequence the positional table covers.
    pub max_len: usize,
    pub l_train: Vec<usize>,
    pub class_dropout_p: f64,
    pub eos_enabled: bool,
    /// Resolution normalizer of the size conditioning.
    pub beta: f64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if !self.backbone.causal {
            return Err(Error::Config("generator backbone must be causal".into()));
        }
        let cb = &self.codebook;
        if cb.n_cb == 0 || cb.m == 0 || !self.backbone.d.is_multiple_of(cb.n_cb) {
            return Err(Error::Config(alloc::format!(
                "width {} must split evenly into {} sub-codes",
                self.backbone.d,
                cb.n_cb
            )));
        }
        if self.head_layers == 0 || self.num_classes == 0 || self.max_len == 0 {
            return Err(Error::Config("head_layers, num_classes and max_len must be positive".into()));
        }
        if self.l_train.iter().any(|&l| l == 0 || l > self.max_len) {
            return Err(Error::Config("l_train entries must be in [1, max_len]".into()));
        }
        if !(0.0..=1.0).contains(&self.class_dropout_p) || self.beta <= 0.0 {
            return Err(Error::Config("class_dropout_p in [0, 1] and beta > 0 required".into()));
        }
        Ok(())
    }

    pub fn head_config(&self) -> BlockConfig {
        BlockConfig {
            layers: self.head_layers,
            ..self.backbone.clone()
        }
    }

    pub fn micro() -> Self {
        GenConfig {
            backbone: BlockConfig::causal(32, 4, 2),
            head_layers: 2,
            codebook: CodebookConfig { n_cb: 8, m: 64, d_sub: 4 },
            num_classes: 10,
            max_len: 32,
            l_train: vec![16],
            class_dropout_p: 0.1,
            eos_enabled: false,
            beta: 1536.0,
        }
    }

    pub fn desk() -> Self {
        GenConfig {
            backbone: BlockConfig::causal(128, 8, 8),
            head_layers: 4,
            codebook: CodebookConfig { n_cb: 8, m: 256, d_sub: 4 },
            max_len: 256,
            l_train: vec![16, 32, 64],
            ..Self::micro()
        }
    }

    /// GPT-B sized backbone (12 x 768) over the reference codebooks.
    pub fn reference_b() -> Self {
        GenConfig {
            backbone: BlockConfig::causal(768, 12, 12),
            head_layers: 4,
            codebook: CodebookConfig { n_cb: 8, m: 4096, d_sub: 32 },
            num_classes: 1000,
            max_len: 256,
            l_train: vec![64, 128, 256],
            ..Self::micro()
        }
    }

    /// GPT-XXL sized backbone (48 x 1536).
    pub fn reference_xxl() -> Self {
        GenConfig {
            backbone: BlockConfig::causal(1536, 24, 48),
            ..Self::reference_b()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "desk" | "desk-sl" | "desk-ll" => Ok(Self::desk()),
            "reference-b" => Ok(Self::reference_b()),
            "reference-xxl" => Ok(Self::reference_xxl()),
            other => Err(Error::Config(alloc::format!("unknown generator preset {other}"))),
        }
    }
}

/// Names accepted by [`TokenizerConfig::preset`] / [`GenConfig::preset`].
pub fn preset_names() -> Vec<String> {
    ["micro", "desk-sl", "desk-ll"].iter().map(|s| String::from(*s)).collect()
}
