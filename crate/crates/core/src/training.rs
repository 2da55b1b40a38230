//! Optimizer, schedules, data mixtures and the two training loops.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::TokenizerConfig;
use crate::error::{contract, Error, Result};
use crate::generator::{argmax, GenCondition, Generator};
use crate::imaging::Image;
use crate::numerics::{Module, ResizeMode, Scalar, Tape};
use crate::quantizer::usage_entropy;
use crate::tokenizer::Tokenizer;
use crate::tokens::TokenSeq;
use crate::{seeded_rng, Rng};

/// Resolutions with their draw probabilities; serialized as `{"HxW": p}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct ResolutionMix {
    /// Sorted by resolution, each resolution once.
    entries: Vec<((usize, usize), f64)>,
}

impl ResolutionMix {
    pub fn new(mut entries: Vec<((usize, usize), f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("resolution mix repeats a resolution".into()));
        }
        if entries.is_empty() {
            return Err(Error::Config("resolution mix is empty".into()));
        }
        if entries.iter().any(|&((h, w), p)| h == 0 || w == 0 || !(p >= 0.0)) {
            return Err(Error::Config("resolution mix needs positive sizes and probabilities".into()));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(alloc::format!("resolution mix sums to {total}, not 1")));
        }
        Ok(ResolutionMix { entries })
    }

    /// One resolution with probability 1.
    pub fn single(height: usize, width: usize) -> Self {
        ResolutionMix { entries: vec![((height, width), 1.0)] }
    }

    /// Tokenizer pretraining mix, every side divided by `div`.
    pub fn tokenizer_mix(div: usize) -> Result<Self> {
        Self::scaled(
            &[
                ((256, 256), 0.3),
                ((512, 512), 0.3),
                ((384, 256), 0.1),
                ((256, 384), 0.1),
                ((512, 384), 0.1),
                ((384, 512), 0.1),
            ],
            div,
        )
    }

    /// Generator training mix, every side divided by `div`.
    pub fn generator_mix(div: usize) -> Result<Self> {
        Self::scaled(
            &[
                ((256, 256), 0.3),
                ((512, 512), 0.3),
                ((384, 256), 0.07),
                ((256, 384), 0.07),
                ((512, 384), 0.07),
                ((384, 512), 0.07),
                ((256, 512), 0.06),
                ((512, 256), 0.06),
            ],
            div,
        )
    }

    fn scaled(entries: &[((usize, usize), f64)], div: usize) -> Result<Self> {
        if div == 0 {
            return Err(Error::Config("mix divisor must be positive".into()));
        }
        Self::new(entries.iter().map(|&((h, w), p)| ((h / div, w / div), p)).collect())
    }

    pub fn entries(&self) -> &[((usize, usize), f64)] {
        &self.entries
    }

    pub fn draw(&self, rng: &mut Rng) -> (usize, usize) {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for &(hw, p) in &self.entries {
            acc += p;
            if u < acc {
                return hw;
            }
        }
        self.entries[self.entries.len() - 1].0
    }
}

impl TryFrom<BTreeMap<String, f64>> for ResolutionMix {
    type Error = Error;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self> {
        let parse = |key: &str| -> Option<(usize, usize)> {
            let (h, w) = key.split_once('x')?;
            Some((h.trim().parse().ok()?, w.trim().parse().ok()?))
        };
        let entries = map
            .iter()
            .map(|(k, &p)| parse(k).map(|hw| (hw, p)).ok_or_else(|| Error::Config(alloc::format!("bad resolution key {k:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }
}

impl From<ResolutionMix> for BTreeMap<String, f64> {
    fn from(mix: ResolutionMix) -> Self {
        mix.entries.iter().map(|&((h, w), p)| (alloc::format!("{h}x{w}"), p)).collect()
    }
}

/// Patch sizes whose lattice on `height x width` respects the token cap.
pub fn admissible_k(cfg: &TokenizerConfig, height: usize, width: usize) -> Vec<usize> {
    cfg.k_set
        .iter()
        .copied()
        .filter(|&k| height.div_ceil(k) * width.div_ceil(k) <= cfg.n_cap)
        .collect()
}

/// One tokenizer training draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub input: (usize, usize),
    pub target: (usize, usize),
    pub k: usize,
    pub l: usize,
}

/// Independent input and target resolutions, an admissible `k` and `l` in `lengths`.
pub fn sample_task(mix: &ResolutionMix, cfg: &TokenizerConfig, lengths: (usize, usize), rng: &mut Rng) -> Result<Task> {
    let input = mix.draw(rng);
    let target = mix.draw(rng);
    let ks = admissible_k(cfg, input.0, input.1);
    if ks.is_empty() {
        return Err(Error::Config(alloc::format!(
            "no patch size in {:?} keeps {}x{} within {} tokens",
            cfg.k_set,
            input.0,
            input.1,
            cfg.n_cap
        )));
    }
    let k = ks[rng.random_range(0..ks.len())];
    let l = rng.random_range(lengths.0..=lengths.1);
    Ok(Task { input, target, k, l })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Linear warmup then half-cosine to zero.
    Cosine,
    /// Linear warmup then linear decay to zero.
    Linear,
    Constant,
}

impl Scheduler {
    /// Learning rate at `step` of `total`.
    pub fn lr(self, step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
        if step < warmup {
            return peak * step as f64 / warmup as f64;
        }
        let span = total.saturating_sub(warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        match self {
            Scheduler::Cosine => peak * 0.5 * (1.0 + Float::cos(PI * progress)),
            Scheduler::Linear => peak * (1.0 - progress),
            Scheduler::Constant => peak,
        }
    }
}

/// Optimization settings; field names follow the published hyperparameter tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub warmup_steps: usize,
    pub training_steps: usize,
    pub batch_size: usize,
    pub gradient_accumulation: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub reconstruction_weight: f64,
    pub quantizer_weight: f64,
    pub commitment_cost: f64,
    /// Logged as zero; no perceptual network is trained.
    pub perceptual_weight: f64,
    /// Logged as zero; no discriminator is trained.
    pub discriminator_weight: f64,
    pub variable_resolutions: ResolutionMix,
    /// Tokenizer latent-length range; defaults to the model's bounds.
    #[serde(default)]
    pub latent_lengths: Option<(usize, usize)>,
    /// Patch sizes drawn in tokenizer training; `None` uses the model's `k_set`.
    #[serde(default)]
    pub patch_sizes: Option<Vec<usize>>,
    pub log_every: usize,
}

impl TrainConfig {
    /// Tokenizer recipe at desk resolutions (sides divided by 8).
    pub fn tokenizer() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            scheduler: Scheduler::Cosine,
            warmup_steps: 10_000,
            training_steps: 200_000,
            batch_size: 8,
            gradient_accumulation: 1,
            grad_clip: Some(1.0),
            seed: 0,
            reconstruction_weight: 1.0,
            quantizer_weight: 1.0,
            commitment_cost: 0.25,
            perceptual_weight: 0.0,
            discriminator_weight: 0.0,
            variable_resolutions: ResolutionMix::tokenizer_mix(8).unwrap_or_else(|_| ResolutionMix::single(32, 32)),
            latent_lengths: None,
            patch_sizes: None,
            log_every: 100,
        }
    }

    /// Generator recipe.
    pub fn generator() -> Self {
        TrainConfig {
            beta2: 0.95,
            weight_decay: 0.05,
            scheduler: Scheduler::Linear,
            warmup_steps: 0,
            variable_resolutions: ResolutionMix::generator_mix(8).unwrap_or_else(|_| ResolutionMix::single(32, 32)),
            ..Self::tokenizer()
        }
    }

    /// Short high-rate tokenizer run that memorizes a handful of 32x32 images.
    pub fn tokenizer_overfit() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            warmup_steps: 100,
            training_steps: 2_000,
            weight_decay: 0.0,
            variable_resolutions: ResolutionMix::single(32, 32),
            patch_sizes: Some(vec![8]),
            ..Self::tokenizer()
        }
    }

    /// Short high-rate generator run that memorizes a handful of sequences.
    pub fn generator_overfit() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            warmup_steps: 100,
            training_steps: 3_000,
            batch_size: 4,
            weight_decay: 0.0,
            ..Self::generator()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.training_steps > 0
            && self.batch_size > 0
            && self.gradient_accumulation > 0
            && self.log_every > 0;
        if !positive {
            return Err(Error::Config("learning rate, steps, batch, accumulation and log interval must be positive".into()));
        }
        if self.warmup_steps > self.training_steps {
            return Err(Error::Config(alloc::format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps,
                self.training_steps
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config("betas in [0, 1) and weight decay >= 0 required".into()));
        }
        if self.commitment_cost < 0.0 || self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("commitment cost >= 0 and clip > 0 required".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.scheduler.lr(step, self.learning_rate, self.warmup_steps, self.training_steps)
    }
}

/// Adam with decoupled weight decay on parameters flagged for decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        AdamW { beta1, beta2, eps: 1e-8, weight_decay, t: 0, moments: Vec::new() }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<M: Module<T>>(&mut self, model: &mut M, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Float::powi(self.beta1, self.t as i32);
        let c2 = 1.0 - Float::powi(self.beta2, self.t as i32);
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (a1, a2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let step = T::c(lr / c1);
        let root_c2 = T::c(Float::sqrt(c2));
        let eps = T::c(self.eps);
        let wd = self.weight_decay;
        let moments = &mut self.moments;
        let mut i = 0;
        model.visit_mut(&mut |p| {
            if moments.len() <= i {
                moments.push((vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            }
            let (m, v) = &mut moments[i];
            let keep = T::c(1.0 - lr * if p.decay { wd } else { 0.0 });
            let grad = core::mem::take(&mut p.grad);
            for (((x, &g), m), v) in p.value_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + a1 * g;
                *v = b2 * *v + a2 * g * g;
                *x = *x * keep - step * *m / (v.sqrt() / root_c2 + eps);
            }
            p.grad = grad;
            i += 1;
        });
    }
}

/// Rescales gradients to global norm at most `max`; returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar, M: Module<T>>(model: &mut M, max: f64) -> f64 {
    let norm = model.grad_norm();
    if norm > max {
        let s = T::c(max / norm);
        model.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = *g * s));
    }
    norm
}

/// Kind of synthetic picture in the procedural corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Gradient,
    Checkerboard,
    Blobs,
}

/// A random image of the given pattern, values in `[-1, 1]`.
pub fn procedural_image(pattern: Pattern, height: usize, width: usize, rng: &mut Rng) -> Result<Image> {
    let mut color = || -> [f64; 3] { [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)] };
    let (a, b) = (color(), color());
    let mut data = vec![0f32; 3 * height * width];
    let px = |y: usize, x: usize| ((y as f64 + 0.5) / height as f64, (x as f64 + 0.5) / width as f64);
    match pattern {
        Pattern::Gradient => {
            let angle = rng.random_range(0.0..2.0 * PI);
            let (s, c) = (Float::sin(angle), Float::cos(angle));
            for y in 0..height {
                for x in 0..width {
                    let (v, u) = px(y, x);
                    let t = (((u - 0.5) * c + (v - 0.5) * s) * core::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
                    for ch in 0..3 {
                        data[(ch * height + y) * width + x] = (a[ch] * (1.0 - t) + b[ch] * t) as f32;
                    }
                }
            }
        }
        Pattern::Checkerboard => {
            let cells = rng.random_range(2..=4) as f64;
            for y in 0..height {
                for x in 0..width {
                    let (v, u) = px(y, x);
                    let odd = (Float::floor(u * cells) + Float::floor(v * cells)) as i64 % 2 == 1;
                    let col = if odd { b } else { a };
                    for ch in 0..3 {
                        data[(ch * height + y) * width + x] = col[ch] as f32;
                    }
                }
            }
        }
        Pattern::Blobs => {
            let count = rng.random_range(1..=3);
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..count)
                .map(|_| {
                    let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.1..0.3), c)
                })
                .collect();
            for y in 0..height {
                for x in 0..width {
                    let (v, u) = px(y, x);
                    let mut col = a;
                    for &(cy, cx, r, c) in &blobs {
                        let w = Float::exp(-((v - cy) * (v - cy) + (u - cx) * (u - cx)) / (2.0 * r * r));
                        for ch in 0..3 {
                            col[ch] = col[ch] * (1.0 - w) + c[ch] * w;
                        }
                    }
                    for ch in 0..3 {
                        data[(ch * height + y) * width + x] = col[ch].clamp(-1.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Image::new(height, width, data)
}

/// `n` images cycling through the patterns, reproducible from `seed`.
pub fn procedural_corpus(n: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = seeded_rng(seed);
    let patterns = [Pattern::Gradient, Pattern::Checkerboard, Pattern::Blobs];
    (0..n).map(|i| procedural_image(patterns[i % 3], height, width, &mut rng)).collect()
}

/// Cycles through shuffled epochs of `0..n`.
struct EpochOrder {
    order: Vec<usize>,
    cursor: usize,
}

impl EpochOrder {
    fn new(n: usize) -> Self {
        EpochOrder { order: (0..n).collect(), cursor: n }
    }

    fn take(&mut self, count: usize, rng: &mut Rng) -> Vec<usize> {
        (0..count)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Independent streams derived from one seed.
struct Streams {
    task: Rng,
    data: Rng,
    noise: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut root = seeded_rng(seed);
        Streams {
            task: seeded_rng(root.random()),
            data: seeded_rng(root.random()),
            noise: seeded_rng(root.random()),
        }
    }
}

/// One logged tokenizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerMetrics {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub quantizer: f64,
    pub codebook: f64,
    pub commit: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub usage_entropy: Vec<f64>,
    pub task: Task,
}

/// One logged generator step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub subcode_acc: Vec<f64>,
    pub l: usize,
}

fn non_finite(step: usize, detail: String) -> Error {
    Error::NonFinite { step, detail }
}

fn non_finite_param<T: Scalar, M: Module<T>>(model: &M) -> Option<String> {
    let mut found = None;
    model.visit(&mut |p| {
        if found.is_none() && p.value().iter().any(|v| !v.is_finite()) {
            found = Some(String::from(p.name()));
        }
    });
    found
}

/// Trains `tok` on `corpus`; returns the per-step total losses.
pub fn train_tokenizer<T: Scalar>(
    tok: &mut Tokenizer<T>,
    corpus: &[Image],
    cfg: &TrainConfig,
    mut log: impl FnMut(&TokenizerMetrics),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(contract!("empty training corpus"));
    }
    let lengths = cfg.latent_lengths.unwrap_or((tok.cfg.l_min, tok.cfg.l_max));
    let mut task_cfg = tok.cfg.clone();
    if let Some(ks) = &cfg.patch_sizes {
        if ks.is_empty() || ks.iter().any(|k| !tok.cfg.k_set.contains(k)) {
            return Err(Error::Config(alloc::format!("patch sizes {ks:?} must be a non-empty subset of {:?}", tok.cfg.k_set)));
        }
        task_cfg.k_set = ks.clone();
    }
    if lengths.0 < tok.cfg.l_min || lengths.1 > tok.cfg.l_max || lengths.0 > lengths.1 {
        return Err(Error::Config(alloc::format!(
            "latent lengths {lengths:?} outside [{}, {}]",
            tok.cfg.l_min,
            tok.cfg.l_max
        )));
    }
    let mut streams = Streams::new(cfg.seed);
    let mut order = EpochOrder::new(corpus.len());
    let mut opt = AdamW::from_config(cfg);
    let mut losses = Vec::with_capacity(cfg.training_steps);
    let mode = ResizeMode::Bilinear;
    for step in 0..cfg.training_steps {
        let lr = cfg.lr_at(step);
        tok.zero_grad();
        let mut m = TokenizerMetrics {
            step,
            loss: 0.0,
            recon: 0.0,
            quantizer: 0.0,
            codebook: 0.0,
            commit: 0.0,
            perceptual: 0.0,
            adversarial: 0.0,
            lr,
            grad_norm: 0.0,
            usage_entropy: Vec::new(),
            task: Task { input: (0, 0), target: (0, 0), k: 0, l: 0 },
        };
        let mut usage = vec![vec![0u32; tok.cfg.codebook.m]; tok.cfg.codebook.n_cb];
        let share = 1.0 / cfg.gradient_accumulation as f64;
        for _ in 0..cfg.gradient_accumulation {
            let task = sample_task(&cfg.variable_resolutions, &task_cfg, lengths, &mut streams.task)?;
            let picks = order.take(cfg.batch_size, &mut streams.data);
            let fit = |img: &Image, (h, w): (usize, usize)| {
                if (img.height(), img.width()) == (h, w) {
                    Ok(img.clone())
                } else {
                    img.resized(h, w, mode)
                }
            };
            let inputs = picks.iter().map(|&i| fit(&corpus[i], task.input)).collect::<Result<Vec<_>>>()?;
            let targets = picks.iter().map(|&i| fit(&corpus[i], task.target)).collect::<Result<Vec<_>>>()?;
            let tape = Tape::training(seeded_rng(streams.noise.random()));
            let rec = tok
                .reconstruct(&tape, &inputs, &targets, Some(task.k), task.l, cfg.commitment_cost, None)
                .map_err(|e| match non_finite_param(tok) {
                    Some(name) => non_finite(step, alloc::format!("parameter {name} is not finite ({e})")),
                    None => e,
                })?;
            let recon = rec.recon_loss.item().f64();
            let quant = rec.vq_loss.item().f64();
            let loss = rec
                .recon_loss
                .scale(T::c(cfg.reconstruction_weight))
                .add(rec.vq_loss.scale(T::c(cfg.quantizer_weight)))?;
            let total = loss.item().f64();
            if !total.is_finite() {
                return Err(non_finite(
                    step,
                    alloc::format!("recon {recon}, quantizer {quant}, task {task:?}"),
                ));
            }
            m.loss += share * total;
            m.recon += share * recon;
            m.quantizer += share * quant;
            m.codebook += share * rec.quant.codebook_loss.item().f64();
            m.commit += share * rec.quant.commit_loss.item().f64();
            m.task = task;
            for (acc, u) in usage.iter_mut().zip(&rec.quant.usage) {
                acc.iter_mut().zip(u).for_each(|(a, b)| *a += b);
            }
            let grads = tape.backward(loss.scale(T::c(share)))?;
            tok.accumulate(&grads);
        }
        m.grad_norm = match cfg.grad_clip {
            Some(c) => clip_grad_norm(tok, c),
            None => tok.grad_norm(),
        };
        if !m.grad_norm.is_finite() {
            return Err(non_finite(step, alloc::format!("gradient norm {}", m.grad_norm)));
        }
        opt.step(tok, lr);
        losses.push(m.loss);
        if step % cfg.log_every == 0 || step + 1 == cfg.training_steps {
            m.usage_entropy = usage_entropy(&usage);
            log(&m);
        }
    }
    Ok(losses)
}

/// A token sequence with the condition it was generated under.
#[derive(Clone, Debug, PartialEq)]
pub struct GenExample {
    pub tokens: TokenSeq,
    pub cond: GenCondition,
}

/// Mean cross-entropy and per-codebook accuracy on `examples` truncated to `l` tokens.
pub fn evaluate_generator<T: Scalar>(gen: &Generator<T>, examples: &[GenExample], l: usize) -> Result<(f64, Vec<f64>)> {
    let (codes, conds) = batch_of(examples, l)?;
    let tape = Tape::inference();
    let logits = gen.forward_logits(&tape, &codes, &conds)?;
    let loss = gen.loss_from_logits(logits, &codes, conds.len())?.item().f64();
    Ok((loss, subcode_accuracy(gen, &logits.to_vec(), &codes, conds.len())))
}

fn batch_of(examples: &[GenExample], l: usize) -> Result<(Vec<usize>, Vec<GenCondition>)> {
    let mut codes = Vec::new();
    for e in examples {
        codes.extend(e.tokens.prefix(l)?.indices());
    }
    Ok((codes, examples.iter().map(|e| e.cond).collect()))
}

fn subcode_accuracy<T: Scalar>(gen: &Generator<T>, logits: &[T], codes: &[usize], b: usize) -> Vec<f64> {
    let n_cb = gen.cfg.codebook.n_cb;
    let classes = gen.classes();
    let l = codes.len() / (b * n_cb);
    let steps = if gen.cfg.eos_enabled { l + 1 } else { l };
    let mut hit = vec![0usize; n_cb];
    for s in 0..b {
        for t in 0..l {
            for c in 0..n_cb {
                let row = ((s * steps + t) * n_cb + c) * classes;
                hit[c] += usize::from(argmax(&logits[row..row + classes]) == codes[(s * l + t) * n_cb + c]);
            }
        }
    }
    hit.iter().map(|&h| h as f64 / (b * l) as f64).collect()
}

/// Trains `gen` on `corpus` with class dropout; returns the per-step losses.
pub fn train_generator<T: Scalar>(
    gen: &mut Generator<T>,
    corpus: &[GenExample],
    cfg: &TrainConfig,
    mut log: impl FnMut(&GeneratorMetrics),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let shortest = corpus.iter().map(|e| e.tokens.len()).min().ok_or_else(|| contract!("empty token corpus"))?;
    let lengths: Vec<usize> = gen.cfg.l_train.iter().copied().filter(|&l| l <= shortest).collect();
    if lengths.is_empty() {
        return Err(Error::Config(alloc::format!(
            "no training length in {:?} fits sequences of {shortest} tokens",
            gen.cfg.l_train
        )));
    }
    let mut streams = Streams::new(cfg.seed);
    let mut order = EpochOrder::new(corpus.len());
    let mut opt = AdamW::from_config(cfg);
    let mut losses = Vec::with_capacity(cfg.training_steps);
    for step in 0..cfg.training_steps {
        let lr = cfg.lr_at(step);
        gen.zero_grad();
        let share = 1.0 / cfg.gradient_accumulation as f64;
        let mut m = GeneratorMetrics { step, loss: 0.0, lr, grad_norm: 0.0, subcode_acc: vec![0.0; gen.cfg.codebook.n_cb], l: 0 };
        for _ in 0..cfg.gradient_accumulation {
            let l = lengths[streams.task.random_range(0..lengths.len())];
            let picks = order.take(cfg.batch_size, &mut streams.data);
            let batch: Vec<GenExample> = picks.iter().map(|&i| corpus[i].clone()).collect();
            let (codes, conds) = batch_of(&batch, l)?;
            let conds: Vec<GenCondition> = conds
                .iter()
                .map(|c| if streams.task.random::<f64>() < gen.cfg.class_dropout_p { c.unconditional() } else { *c })
                .collect();
            let tape = Tape::training(seeded_rng(streams.noise.random()));
            let logits = gen.forward_logits(&tape, &codes, &conds)?;
            let loss = gen.loss_from_logits(logits, &codes, conds.len())?;
            let value = loss.item().f64();
            if !value.is_finite() {
                return Err(non_finite(step, alloc::format!("cross-entropy {value} at length {l}")));
            }
            m.loss += share * value;
            m.l = l;
            if step % cfg.log_every == 0 || step + 1 == cfg.training_steps {
                let acc = subcode_accuracy(gen, &logits.to_vec(), &codes, conds.len());
                m.subcode_acc.iter_mut().zip(acc).for_each(|(a, b)| *a += share * b);
            }
            let grads = tape.backward(loss.scale(T::c(share)))?;
            gen.accumulate(&grads);
        }
        m.grad_norm = match cfg.grad_clip {
            Some(c) => clip_grad_norm(gen, c),
            None => gen.grad_norm(),
        };
        if !m.grad_norm.is_finite() {
            return Err(non_finite(step, alloc::format!("gradient norm {}", m.grad_norm)));
        }
        opt.step(gen, lr);
        losses.push(m.loss);
        if step % cfg.log_every == 0 || step + 1 == cfg.training_steps {
            log(&m);
        }
    }
    Ok(losses)
}

/// Encodes `images` with a frozen tokenizer into generator examples.
pub fn encode_corpus<T: Scalar>(
    tok: &Tokenizer<T>,
    images: &[Image],
    classes: &[usize],
    k: Option<usize>,
    l: usize,
) -> Result<Vec<GenExample>> {
    if images.len() != classes.len() {
        return Err(contract!("{} images but {} labels", images.len(), classes.len()));
    }
    images
        .iter()
        .zip(classes)
        .map(|(img, &y)| {
            Ok(GenExample {
                tokens: tok.encode(img, k, l)?,
                cond: GenCondition::new(Some(y), img.height(), img.width()),
            })
        })
        .collect()
}
