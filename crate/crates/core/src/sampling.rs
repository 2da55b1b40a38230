//! Guided, truncated categorical sampling from a [`Generator`].

use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{argmax, GenCondition, Generator};
use crate::numerics::Scalar;
use crate::tokens::TokenSeq;
use crate::{seeded_rng, Rng};

/// Temperatures below this pick the argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub cfg_scale: f64,
    pub temperature: f64,
    /// 0 disables top-k truncation.
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            cfg_scale: 1.75,
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Sharper settings for showcase samples.
    pub fn qualitative() -> Self {
        SamplerConfig {
            cfg_scale: 4.0,
            temperature: 0.9,
            top_k: 500,
            ..Self::default()
        }
    }

    /// Deterministic argmax decoding without guidance.
    pub fn greedy() -> Self {
        SamplerConfig {
            cfg_scale: 1.0,
            temperature: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::Config(alloc::format!("cfg scale must be >= 0, got {}", self.cfg_scale)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(alloc::format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(alloc::format!("top-p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

/// `l_cond + (s - 1)(l_cond - l_null)`, which equals `l_null + s(l_cond - l_null)`
/// and returns `l_cond` bit-for-bit at `s = 1`. Masked columns stay masked.
pub fn guide<T: Scalar>(cond: &[T], null: &[T], scale: f64) -> Vec<T> {
    let s1 = T::c(scale - 1.0);
    cond.iter()
        .zip(null)
        .map(|(&c, &n)| if c.is_finite() && n.is_finite() { c + s1 * (c - n) } else { c })
        .collect()
}

/// Draws one class index from `logits` after temperature, top-k and top-p.
pub fn pick<T: Scalar>(logits: &[T], cfg: &SamplerConfig, rng: &mut Rng) -> usize {
    if cfg.temperature < GREEDY_TEMPERATURE {
        return argmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v.f64() / cfg.temperature).collect();
    let mut order: Vec<usize> = (0..scaled.len()).filter(|&i| scaled[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    if cfg.top_k > 0 {
        order.truncate(cfg.top_k);
    }
    let Some(&first) = order.first() else { return argmax(logits) };
    let top = scaled[first];
    let mut probs: Vec<f64> = order.iter().map(|&i| Float::exp(scaled[i] - top)).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    if cfg.top_p < 1.0 {
        let mut acc = 0.0;
        let mut keep = probs.len();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if acc >= cfg.top_p {
                keep = i + 1;
                break;
            }
        }
        probs.truncate(keep);
        order.truncate(keep);
    }
    let z: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * z;
    for (&i, &p) in order.iter().zip(&probs) {
        if u < p {
            return i;
        }
        u -= p;
    }
    order[order.len() - 1]
}

/// Generated codes and whether decoding stopped at an end-of-sequence class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub codes: Vec<usize>,
    pub stopped_at_eos: bool,
}

/// Which logits feed the draw at every sub-code step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guidance {
    /// Conditional and null-class rows decoded in parallel and blended.
    Classifier,
    /// Only the conditional row; no guidance regardless of scale.
    ConditionalOnly,
}

/// Decodes up to `l_target` tokens, observing every guided logit row through `observe`.
pub fn sample_with<T: Scalar>(
    gen: &Generator<T>,
    cond: GenCondition,
    l_target: usize,
    cfg: &SamplerConfig,
    guidance: Guidance,
    mut observe: impl FnMut(&[T], &[T]),
) -> Result<Sampled> {
    cfg.validate()?;
    if l_target == 0 || l_target > gen.cfg.max_len {
        return Err(crate::error::contract!(
            "token count {l_target} outside [1, {}]",
            gen.cfg.max_len
        ));
    }
    let rows = match guidance {
        Guidance::Classifier => vec![cond, cond.unconditional()],
        Guidance::ConditionalOnly => vec![cond],
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut session = gen.session(&rows)?;
    let classes = gen.classes();
    let n_cb = gen.cfg.codebook.n_cb;
    let mut codes = Vec::with_capacity(l_target * n_cb);
    for t in 0..l_target {
        for c in 0..n_cb {
            let logits = session.logits()?;
            let conditional = &logits[..classes];
            let mut guided = match guidance {
                Guidance::Classifier => guide(conditional, &logits[classes..2 * classes], cfg.cfg_scale),
                Guidance::ConditionalOnly => conditional.to_vec(),
            };
            if let (Some(eos), 0, 0) = (gen.eos(), c, t) {
                guided[eos] = T::neg_infinity();
            }
            observe(conditional, &guided);
            let j = pick(&guided, cfg, &mut rng);
            if Some(j) == gen.eos() {
                return Ok(Sampled { codes, stopped_at_eos: true });
            }
            session.push(&vec![j; rows.len()])?;
            codes.push(j);
        }
    }
    Ok(Sampled { codes, stopped_at_eos: false })
}

/// Samples a token sequence whose header targets `(height, width)` at patch size `k`.
pub fn sample<T: Scalar>(
    gen: &Generator<T>,
    cond: GenCondition,
    l_target: usize,
    cfg: &SamplerConfig,
    k: usize,
) -> Result<TokenSeq> {
    let out = sample_with(gen, cond, l_target, cfg, Guidance::Classifier, |_, _| {})?;
    let cb = gen.cfg.codebook;
    TokenSeq::from_indices(cond.height, cond.width, k, cb.n_cb, cb.m, &out.codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlockConfig, CodebookConfig, GenConfig};
    use crate::numerics::{Module, Tape};

    fn small(eos: bool) -> GenConfig {
        GenConfig {
            backbone: BlockConfig::causal(16, 2, 1),
            head_layers: 1,
            codebook: CodebookConfig { n_cb: 4, m: 8, d_sub: 2 },
            num_classes: 3,
            max_len: 32,
            l_train: vec![8],
            class_dropout_p: 0.1,
            eos_enabled: eos,
            beta: 1536.0,
        }
    }

    fn sharpened(eos: bool, seed: u64) -> Generator<f32> {
        let mut rng = seeded_rng(seed);
        let mut g = Generator::<f32>::new(small(eos), &mut rng).unwrap();
        g.visit_mut(&mut |p| {
            let noise: Vec<f32> = crate::init::trunc_normal(&mut rng, p.len(), 0.5);
            p.value_mut().iter_mut().zip(noise).for_each(|(v, e)| *v += e);
        });
        g
    }

    #[test]
    fn unit_scale_guidance_is_the_conditional_row() {
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let c: Vec<f32> = (0..9).map(|_| rng.random_range(-20.0..20.0)).collect();
            let n: Vec<f32> = (0..9).map(|_| rng.random_range(-20.0..20.0)).collect();
            assert_eq!(guide(&c, &n, 1.0), c);
        }
        let g = guide(&[2.0f64, 1.0], &[1.0, 1.0], 3.0);
        assert_eq!(g, vec![1.0 + 3.0 * 1.0, 1.0]);
        assert_eq!(guide(&[f64::NEG_INFINITY], &[f64::NEG_INFINITY], 2.0)[0], f64::NEG_INFINITY);
    }

    #[test]
    fn truncation_rules() {
        let logits = [1.0f64, 3.0, 3.0, 0.5];
        let mut rng = seeded_rng(2);
        let greedy = SamplerConfig { temperature: 0.0, ..SamplerConfig::default() };
        assert_eq!(pick(&logits, &greedy, &mut rng), 1);
        let top1 = SamplerConfig { top_k: 1, ..SamplerConfig::default() };
        for _ in 0..50 {
            assert_eq!(pick(&logits, &top1, &mut rng), 1);
        }
        let top2 = SamplerConfig { top_k: 2, ..SamplerConfig::default() };
        for _ in 0..200 {
            assert!([1, 2].contains(&pick(&logits, &top2, &mut rng)));
        }
        let nucleus = SamplerConfig { top_p: 0.05, ..SamplerConfig::default() };
        for _ in 0..50 {
            assert_eq!(pick(&logits, &nucleus, &mut rng), 1);
        }
        let masked = [f64::NEG_INFINITY, 0.0];
        for _ in 0..50 {
            assert_eq!(pick(&masked, &SamplerConfig::default(), &mut rng), 1);
        }
    }

    #[test]
    fn unrestricted_draws_follow_the_softmax() {
        let logits = [0.0f64, 1.0, 2.0];
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let mut rng = seeded_rng(3);
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[pick(&logits, &SamplerConfig::default(), &mut rng)] += 1;
        }
        for i in 0..3 {
            let p = logits[i].exp() / z;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[i] as f64 / n as f64 - p).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn top_one_matches_argmax_over_random_steps() {
        let g = sharpened(false, 4);
        let cond = GenCondition::new(Some(2), 64, 64);
        let greedy = SamplerConfig { cfg_scale: 2.0, temperature: 0.0, ..SamplerConfig::default() };
        let top1 = SamplerConfig { cfg_scale: 2.0, top_k: 1, seed: 77, ..SamplerConfig::default() };
        let a = sample_with(&g, cond, 25, &greedy, Guidance::Classifier, |_, _| {}).unwrap();
        let b = sample_with(&g, cond, 25, &top1, Guidance::Classifier, |_, _| {}).unwrap();
        assert_eq!(a.codes.len(), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_seed_sensitive() {
        let g = sharpened(false, 5);
        let cond = GenCondition::new(Some(0), 32, 48);
        let cfg = SamplerConfig { seed: 9, ..SamplerConfig::default() };
        let a = sample(&g, cond, 12, &cfg, 16).unwrap();
        let b = sample(&g, cond, 12, &cfg, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.height, a.width, a.k, a.len()), (32, 48, 16, 12));
        let c = sample(&g, cond, 12, &SamplerConfig { seed: 10, ..cfg }, 16).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_scale_matches_conditional_only_decoding() {
        let g = sharpened(false, 6);
        let cond = GenCondition::new(Some(1), 64, 32);
        let cfg = SamplerConfig { cfg_scale: 1.0, seed: 3, ..SamplerConfig::default() };
        let mut equal = 0;
        let a = sample_with(&g, cond, 20, &cfg, Guidance::Classifier, |c, gd| {
            assert_eq!(c, gd);
            equal += 1;
        })
        .unwrap();
        let b = sample_with(&g, cond, 20, &cfg, Guidance::ConditionalOnly, |_, _| {}).unwrap();
        assert_eq!(equal, 80);
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_logits_match_teacher_forcing() {
        let g = sharpened(false, 7);
        let cond = GenCondition::new(Some(2), 128, 64);
        let mut steps = Vec::new();
        let cfg = SamplerConfig { cfg_scale: 1.0, seed: 1, ..SamplerConfig::default() };
        let s = sample_with(&g, cond, 32, &cfg, Guidance::ConditionalOnly, |c, _| steps.push(c.to_vec())).unwrap();
        let t = Tape::inference();
        let full = g.forward_logits(&t, &s.codes, &[cond]).unwrap().to_vec();
        let mut worst = 0f32;
        for (i, row) in steps.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - full[i * 8 + j]).abs());
            }
        }
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn eos_can_stop_early_but_never_first() {
        let mut g = sharpened(true, 8);
        g.out_b.value_mut()[8] = 1e4;
        let cond = GenCondition::new(Some(0), 16, 16);
        let s = sample_with(&g, cond, 10, &SamplerConfig::greedy(), Guidance::Classifier, |_, _| {}).unwrap();
        assert!(s.stopped_at_eos);
        assert_eq!(s.codes.len(), 4);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let g = sharpened(false, 9);
        let cond = GenCondition::new(None, 16, 16);
        let bad = SamplerConfig { top_p: 0.0, ..SamplerConfig::default() };
        assert!(sample(&g, cond, 4, &bad, 16).is_err());
        assert!(sample(&g, cond, 33, &SamplerConfig::default(), 16).is_err());
        assert!(sample(&g, GenCondition::new(Some(3), 8, 8), 4, &SamplerConfig::default(), 16).is_err());
    }
}
