//! Self-checks shared by the test suites and the `selfcheck` command:
//! finite-difference gradients of every differentiable operation and of both
//! model losses, the quantizer against an exhaustive scan, and the constancy
//! of generator compute across resolutions.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng as _;

use crate::config::{BlockConfig, CodebookConfig, GenConfig, TokenizerConfig};
use crate::error::Result;
use crate::flops::{count_decode, count_generator, count_tokenizer, Direction, FLOPS_PER_MAC};
use crate::generator::{GenCondition, Generator};
use crate::imaging::Image;
use crate::init::{trunc_normal, uniform};
use crate::numerics::{grad_check, grad_check_module, GradCheckReport, Module, ResizeMode, Tape, Var};
use crate::quantizer::CodebookSet;
use crate::tokenizer::Tokenizer;
use crate::{seeded_rng, Rng};

/// Relative error bound for finite-difference checks in 64-bit mode.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
}

/// Fixed pseudo-random weights so that every output element carries a
/// distinct share of the scalar objective.
fn project<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let n = y.numel();
    let w: Vec<f64> = (0..n).map(|i| Float::sin(1.0 + 0.7 * i as f64)).collect();
    Ok(y.mul(y.tape().constant(&y.shape(), w)?)?.sum())
}

fn draw(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values in `[lo, hi]` with magnitude at least `gap`, away from kinks at 0.
fn away_from_zero(rng: &mut Rng, n: usize, gap: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(gap..hi);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

struct Suite {
    rng: Rng,
    out: Vec<OpCheck>,
}

impl Suite {
    fn check<F>(&mut self, name: &'static str, shape: &[usize], x: Vec<f64>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let err = grad_check(|t, v| project(f(t, v)?), shape, &x, EPS)?;
        self.out.push(OpCheck { name, max_rel_error: err });
        Ok(())
    }

    fn values(&mut self, n: usize) -> Vec<f64> {
        draw(&mut self.rng, n, -1.0, 1.0)
    }
}

/// Finite-difference check of every differentiable tensor operation.
///
/// The straight-through estimator is excluded: its forward value ignores the
/// input, so finite differences are zero by construction.
pub fn op_grad_checks(seed: u64) -> Result<Vec<OpCheck>> {
    let mut s = Suite { rng: seeded_rng(seed), out: Vec::new() };
    let other = s.values(12);
    let row = s.values(4);
    let pos_other = draw(&mut s.rng, 12, 0.5, 2.0);
    let mat = s.values(4 * 5);

    let x = s.values(12);
    let o = other.clone();
    s.check("add", &[3, 4], x.clone(), move |t, v| v.add(t.constant(&[3, 4], o.clone())?))?;
    let r = row.clone();
    s.check("add_broadcast", &[3, 4], x.clone(), move |t, v| v.add(t.constant(&[4], r.clone())?))?;
    let xr = s.values(4);
    let o = other.clone();
    s.check("add_broadcast_rhs", &[4], xr, move |t, v| t.constant(&[3, 4], o.clone())?.add(v))?;
    let o = other.clone();
    s.check("sub", &[3, 4], x.clone(), move |t, v| t.constant(&[3, 4], o.clone())?.sub(v))?;
    let o = other.clone();
    s.check("mul", &[3, 4], x.clone(), move |t, v| v.mul(t.constant(&[3, 4], o.clone())?))?;
    s.check("mul_self", &[3, 4], x.clone(), |_, v| v.mul(v))?;
    let o = pos_other.clone();
    s.check("div_numerator", &[3, 4], x.clone(), move |t, v| v.div(t.constant(&[3, 4], o.clone())?))?;
    let den = draw(&mut s.rng, 12, 0.5, 2.0);
    let o = other.clone();
    s.check("div_denominator", &[3, 4], den, move |t, v| t.constant(&[3, 4], o.clone())?.div(v))?;
    s.check("exp", &[3, 4], x.clone(), |_, v| Ok(v.exp()))?;
    let pos = draw(&mut s.rng, 12, 0.3, 2.0);
    s.check("log", &[3, 4], pos, |_, v| Ok(v.log()))?;
    s.check("tanh", &[3, 4], x.clone(), |_, v| Ok(v.tanh()))?;
    s.check("gelu", &[3, 4], x.clone(), |_, v| Ok(v.gelu()))?;
    let kinked = away_from_zero(&mut s.rng, 12, 0.05, 1.0);
    s.check("relu", &[3, 4], kinked, |_, v| Ok(v.relu()))?;
    s.check("scale", &[3, 4], x.clone(), |_, v| Ok(v.scale(-2.5)))?;
    s.check("add_scalar", &[3, 4], x.clone(), |_, v| Ok(v.add_scalar(0.75)))?;
    s.check("neg", &[3, 4], x.clone(), |_, v| Ok(v.neg()))?;
    s.check("square", &[3, 4], x.clone(), |_, v| Ok(v.square()))?;
    let clamped: Vec<f64> = away_from_zero(&mut s.rng, 12, 0.1, 1.0).iter().map(|v| v * 0.8 + 0.3 * v.signum()).collect();
    s.check("clamp", &[3, 4], clamped, |_, v| Ok(v.clamp(-0.7, 0.7)))?;
    s.check("sum", &[3, 4], x.clone(), |_, v| Ok(v.square().sum()))?;
    s.check("mean", &[3, 4], x.clone(), |_, v| Ok(v.square().mean()))?;
    s.check("softmax_last", &[3, 4], x.clone(), |_, v| v.softmax(1))?;
    s.check("softmax_first", &[3, 4], x.clone(), |_, v| v.softmax(0))?;
    s.check("layer_norm", &[3, 4], x.clone(), |_, v| v.layer_norm(None, None, 1e-5))?;
    let (g, b) = (s.values(4), s.values(4));
    s.check("layer_norm_gain", &[4], g, move |t, v| {
        t.constant(&[3, 4], x.clone())?.layer_norm(Some(v), Some(t.constant(&[4], b.clone())?), 1e-5)
    })?;
    let logits = s.values(12);
    s.check("cross_entropy", &[3, 4], logits, |_, v| v.cross_entropy(&[2, 0, 3]))?;

    let x = s.values(24);
    s.check("reshape", &[2, 3, 4], x.clone(), |_, v| v.reshape(&[6, 4])?.softmax(1))?;
    s.check("permute", &[2, 3, 4], x.clone(), |_, v| v.permute(&[2, 0, 1])?.softmax(2))?;
    s.check("transpose", &[2, 3, 4], x.clone(), |_, v| v.transpose()?.softmax(2))?;
    s.check("slice", &[2, 3, 4], x.clone(), |_, v| v.slice(2, 1, 2))?;
    let o = s.values(2 * 2 * 4);
    s.check("concat", &[2, 3, 4], x.clone(), move |t, v| Var::concat(&[t.constant(&[2, 2, 4], o.clone())?, v], 1))?;
    s.check("gather_rows", &[2, 3, 4], x, |_, v| v.reshape(&[6, 4])?.gather_rows(&[5, 0, 5, 2]))?;

    let a = s.values(3 * 4);
    let m = mat.clone();
    s.check("matmul_lhs", &[3, 4], a.clone(), move |t, v| v.matmul(t.constant(&[4, 5], m.clone())?))?;
    s.check("matmul_rhs", &[4, 5], mat, move |t, v| t.constant(&[3, 4], a.clone())?.matmul(v))?;
    let batched = s.values(2 * 3 * 4);
    s.check("matmul_batched", &[2, 3, 4], batched, |_, v| v.matmul(v.transpose()?))?;

    let grid = s.values(2 * 5 * 6);
    for (name, mode, oh, ow) in [
        ("resize_bilinear_up", ResizeMode::Bilinear, 9, 11),
        ("resize_bilinear_down", ResizeMode::Bilinear, 3, 2),
        ("resize_bicubic_up", ResizeMode::Bicubic, 8, 13),
        ("resize_bicubic_down", ResizeMode::Bicubic, 2, 4),
    ] {
        s.check(name, &[2, 5, 6], grid.clone(), move |_, v| v.resize(oh, ow, mode))?;
    }
    Ok(s.out)
}

/// Two-layer tokenizer of width 16 used by [`tokenizer_grad_check`].
pub fn grad_check_tokenizer_config() -> TokenizerConfig {
    let block = BlockConfig {
        d: 16,
        heads: 2,
        mlp_ratio: 2,
        layers: 2,
        qk_norm: false,
        causal: false,
        dropout_p: 0.0,
    };
    TokenizerConfig {
        encoder: block.clone(),
        decoder: block,
        codebook: CodebookConfig { n_cb: 2, m: 8, d_sub: 2 },
        k_set: vec![2, 4],
        k_max: 4,
        l_min: 1,
        l_max: 4,
        n_cap: 64,
        grid_max: 4,
        ..TokenizerConfig::micro()
    }
}

/// Two-layer generator of width 16 used by [`generator_grad_check`].
pub fn grad_check_generator_config(eos: bool) -> GenConfig {
    GenConfig {
        backbone: BlockConfig {
            d: 16,
            heads: 2,
            mlp_ratio: 2,
            layers: 2,
            qk_norm: true,
            causal: true,
            dropout_p: 0.0,
        },
        head_layers: 2,
        codebook: CodebookConfig { n_cb: 4, m: 8, d_sub: 2 },
        num_classes: 3,
        max_len: 6,
        l_train: vec![4],
        class_dropout_p: 0.1,
        eos_enabled: eos,
        beta: 1536.0,
    }
}

fn perturb<M: Module<f64>>(model: &mut M, rng: &mut Rng) {
    model.visit_mut(&mut |p| {
        let noise: Vec<f64> = trunc_normal(rng, p.len(), 0.2);
        p.value_mut().iter_mut().zip(noise).for_each(|(v, e)| *v += e);
    });
}

/// Full reconstruction loss (patch and output sizes differ from the base
/// kernels) checked against finite differences over every parameter.
pub fn tokenizer_grad_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let mut tok = Tokenizer::<f64>::new(grad_check_tokenizer_config(), &mut rng)?;
    perturb(&mut tok, &mut rng);
    let image = |h: usize, w: usize, rng: &mut Rng| Image::new(h, w, draw(rng, 3 * h * w, -1.0, 1.0).iter().map(|&v| v as f32).collect());
    let src = image(6, 8, &mut rng)?;
    let dst = image(5, 3, &mut rng)?;
    // Nearest-code choices are piecewise constant; hold them fixed so the
    // finite differences see the smooth branch.
    let frozen = {
        let t = Tape::inference();
        tok.reconstruct(&t, core::slice::from_ref(&src), core::slice::from_ref(&dst), Some(2), 3, 0.25, None)?.quant.freeze()
    };
    grad_check_module(
        &mut tok,
        |m, t| Ok(m.reconstruct(t, core::slice::from_ref(&src), core::slice::from_ref(&dst), Some(2), 3, 0.25, Some(&frozen))?.total),
        EPS,
        4,
        &mut rng,
    )
}

/// Teacher-forced generator cross-entropy checked over every parameter.
pub fn generator_grad_check(seed: u64, eos: bool) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let mut gen = Generator::<f64>::new(grad_check_generator_config(eos), &mut rng)?;
    perturb(&mut gen, &mut rng);
    let codes: Vec<usize> = (0..2 * 3 * 4).map(|_| rng.random_range(0..8)).collect();
    let conds = [GenCondition::new(Some(2), 40, 24), GenCondition::new(None, 16, 16)];
    grad_check_module(&mut gen, |m, t| m.loss(t, &codes, &conds, None), EPS, 5, &mut rng)
}

/// Batched quantization of `rows` random latents (plus exact ties) against
/// an exhaustive nearest-neighbor scan; returns the number of disagreements.
pub fn quantizer_oracle(geometry: CodebookConfig, rows: usize, seed: u64) -> Result<usize> {
    let mut rng = seeded_rng(seed);
    let CodebookConfig { n_cb, m, d_sub } = geometry;
    let mut tables: Vec<f64> = uniform(&mut rng, n_cb * m * d_sub, 1.0);
    // Duplicate entries make lowest-index tie-breaking observable.
    for c in 0..n_cb {
        let base = c * m * d_sub;
        let (src, dst) = (base + (m / 2) * d_sub, base + (m - 1) * d_sub);
        tables.copy_within(src..src + d_sub, dst);
    }
    let cb = CodebookSet::from_tables(geometry, tables.clone())?;
    let d = n_cb * d_sub;
    let mut h: Vec<f64> = uniform(&mut rng, rows * d, 1.0);
    if rows > 0 {
        for c in 0..n_cb {
            let e = c * m * d_sub + (m - 1) * d_sub;
            h[c * d_sub..(c + 1) * d_sub].copy_from_slice(&tables[e..e + d_sub]);
        }
    }
    let t = Tape::inference();
    let q = cb.quantize(&t, t.constant(&[rows, d], h.clone())?)?;
    let mut mismatches = 0;
    for r in 0..rows {
        for c in 0..n_cb {
            let sub = &h[r * d + c * d_sub..r * d + (c + 1) * d_sub];
            let mut best = (f64::INFINITY, 0);
            for j in 0..m {
                let e = &tables[(c * m + j) * d_sub..(c * m + j + 1) * d_sub];
                let dist: f64 = e.iter().zip(sub).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            mismatches += usize::from(q.indices[r * n_cb + c] != best.1);
        }
    }
    Ok(mismatches)
}

/// Target resolutions the constant-compute check sweeps.
pub const CONSTANT_COMPUTE_RESOLUTIONS: [(usize, usize); 4] = [(256, 256), (512, 512), (768, 1024), (1024, 1024)];

/// Whether the generator's per-forward count is identical across target resolutions.
pub fn generator_compute_is_constant(cfg: &GenConfig, l: usize) -> bool {
    let base = count_generator(cfg, l, CONSTANT_COMPUTE_RESOLUTIONS[0]);
    CONSTANT_COMPUTE_RESOLUTIONS.iter().all(|&r| count_generator(cfg, l, r) == base)
}

/// Analytic FLOPs beside the count recorded by an instrumented forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputeCheck {
    pub name: alloc::string::String,
    pub analytic: u64,
    pub instrumented: u64,
}

impl ComputeCheck {
    /// Relative gap between the analytic and instrumented counts.
    pub fn rel_error(&self) -> f64 {
        (self.analytic as f64 - self.instrumented as f64).abs() / (self.instrumented as f64).max(1.0)
    }
}

/// Runs micro tokenizer and generator forwards on MAC-counting tapes and
/// pairs each with the analytic counter for the same shapes.
pub fn instrumented_compute(seed: u64) -> Result<Vec<ComputeCheck>> {
    use alloc::format;
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    let cfg = TokenizerConfig::micro();
    let tok = Tokenizer::<f32>::new(cfg.clone(), &mut rng)?;
    let d_code = cfg.codebook.code_dim();
    for (h, w, l) in [(32, 32, 4), (40, 24, 16), (64, 96, 8)] {
        let lat = tok.plan(h, w, None)?;
        let k = lat.k;
        let img = Image::filled(lat.height, lat.width, 0.1)?;
        let tape = Tape::<f32>::inference();
        let x = tape.constant(&[1, lat.n(), 3 * k * k], crate::imaging::patchify(&img, k, k)?.0)?;
        let z = tok.encode_latents(&tape, x, &lat, l)?;
        tok.codebooks.quantize(&tape, z)?;
        out.push(ComputeCheck {
            name: format!("tokenizer encode {h}x{w} L={l}"),
            analytic: count_tokenizer(&cfg, h, w, None, l, Direction::Encode)?.total,
            instrumented: FLOPS_PER_MAC * tape.macs(),
        });
        let (ho, wo) = (2 * h, 2 * w);
        let tape = Tape::<f32>::inference();
        let codes = tape.constant(&[1, l, d_code], vec![0.0; l * d_code])?;
        let hid = tok.decoder_hidden(&tape, codes, &lat, l)?;
        tok.pixels_from_hidden(&tape, hid, &lat, ho, wo)?;
        out.push(ComputeCheck {
            name: format!("tokenizer decode {h}x{w} L={l} to {ho}x{wo}"),
            analytic: count_decode(&cfg, (h, w, k), l, ho, wo)?.total,
            instrumented: FLOPS_PER_MAC * tape.macs(),
        });
    }
    for eos in [false, true] {
        let cfg = GenConfig { eos_enabled: eos, ..GenConfig::micro() };
        let gen = Generator::<f32>::new(cfg.clone(), &mut rng)?;
        let l = 16.min(cfg.max_len);
        let codes: Vec<usize> = (0..l * cfg.codebook.n_cb).map(|_| rng.random_range(0..cfg.codebook.m)).collect();
        for res in CONSTANT_COMPUTE_RESOLUTIONS {
            let tape = Tape::<f32>::inference();
            gen.forward_logits(&tape, &codes, &[GenCondition::new(Some(1), res.0, res.1)])?;
            out.push(ComputeCheck {
                name: format!("generator L={l} eos={eos} {}x{}", res.0, res.1),
                analytic: count_generator(&cfg, l, res).total,
                instrumented: FLOPS_PER_MAC * tape.macs(),
            });
        }
    }
    Ok(out)
}
