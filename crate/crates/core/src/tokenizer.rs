//! Resolution-agnostic 1D tokenizer: patches and latent queries in, a short
//! sequence of multi-codebook codes out, and back to pixels at any size.

use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::TokenizerConfig;
use crate::embedding::{resize_kernel_rows, LatentBank, PatchProjector, PosGrid};
use crate::error::{contract, Error, Result};
use crate::imaging::{patchify, Image, PatchGrid};
use crate::init::trunc_normal;
use crate::numerics::{Module, Param, ResizeMode, Scalar, Tape, Var};
use crate::quantizer::{CodebookSet, FrozenAssignment, QuantResult};
use crate::tokens::TokenSeq;
use crate::transformer::{Linear, Stack};
use crate::Rng;

/// Side of the learned downscaling kernel, equal to its stride.
pub const DOWNSCALE: usize = 4;

/// Patch lattice chosen for an input of a given size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub k: usize,
    pub grid: PatchGrid,
    /// Size the image is resampled to before patchifying.
    pub height: usize,
    pub width: usize,
}

impl Lattice {
    pub fn n(&self) -> usize {
        self.grid.n()
    }
}

/// Differentiable outputs of one encode/decode pass.
pub struct Reconstruction<'t, T: Scalar> {
    /// `[b, 3, h_out, w_out]`.
    pub images: Var<'t, T>,
    pub quant: QuantResult<'t, T>,
    pub recon_loss: Var<'t, T>,
    pub vq_loss: Var<'t, T>,
    pub total: Var<'t, T>,
    pub lattice: Lattice,
}

/// Weight of the unimplemented perceptual term; logged for completeness.
pub const PERCEPTUAL_WEIGHT: f64 = 0.0;
/// Weight of the unimplemented adversarial term; logged for completeness.
pub const ADVERSARIAL_WEIGHT: f64 = 0.0;

#[derive(Clone, Debug)]
pub struct Tokenizer<T> {
    pub cfg: TokenizerConfig,
    pub patch: PatchProjector<T>,
    pub enc_pos: PosGrid<T>,
    pub latents: LatentBank<T>,
    pub encoder: Stack<T>,
    pub to_code: Linear<T>,
    pub codebooks: CodebookSet<T>,
    pub from_code: Linear<T>,
    pub dec_latent_pos: Param<T>,
    pub mask: Param<T>,
    pub filler: Param<T>,
    pub dec_pos: PosGrid<T>,
    pub decoder: Stack<T>,
    /// `[d_dec, 3 * (4 k_max)^2]`, resized per patch size like the input projection.
    pub pix_w: Param<T>,
    /// Per-channel offset of the canvas, `[3]`.
    pub pix_b: Param<T>,
    /// Stride-4 4x4 convolution as a `[3 * 16, 3]` matrix over channel-major taps.
    pub down_w: Param<T>,
    pub down_b: Param<T>,
}

/// `[n, d]` repeated to `[b, n, d]`.
fn repeat_batch<'t, T: Scalar>(x: Var<'t, T>, b: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let x = x.reshape(&[1, s[0], s[1]])?;
    if b == 1 {
        return Ok(x);
    }
    x.add(x.tape().constant(&[b, 1, 1], vec![T::zero(); b])?)
}

fn to_scalars<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::c(x as f64)).collect()
}

fn images_to_tensor<'t, T: Scalar>(tape: &'t Tape<T>, imgs: &[Image]) -> Result<Var<'t, T>> {
    let first = imgs.first().ok_or_else(|| contract!("empty image batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        if (img.height(), img.width()) != (h, w) {
            return Err(contract!(
                "batch mixes {}x{} with {h}x{w}",
                img.height(),
                img.width()
            ));
        }
        data.extend(to_scalars::<T>(img.data()));
    }
    tape.constant(&[imgs.len(), 3, h, w], data)
}

fn tensor_to_images<T: Scalar>(v: &Var<'_, T>) -> Result<Vec<Image>> {
    let s = v.shape();
    let (b, h, w) = (s[0], s[2], s[3]);
    let data = v.value();
    let per = 3 * h * w;
    (0..b)
        .map(|i| {
            let px = data[i * per..(i + 1) * per].iter().map(|x| x.f64() as f32).collect();
            Image::new(h, w, px)
        })
        .collect()
}

fn check_k(cfg: &TokenizerConfig, k: usize) -> Result<()> {
    if k == 0 || k > cfg.k_max {
        return Err(contract!("patch size {k} outside [1, {}]", cfg.k_max));
    }
    if !cfg.allow_any_k && !cfg.k_set.contains(&k) {
        return Err(contract!("patch size {k} not in {:?}", cfg.k_set));
    }
    Ok(())
}

/// Aspect-preserving lattice of patch size `k` with at most `n_cap` cells.
fn shrunk(cfg: &TokenizerConfig, height: usize, width: usize, k: usize) -> Result<Lattice> {
    let cells = |r: f64| {
        let th = (Float::round(height as f64 / k as f64 * r) as usize).max(1);
        let tw = (Float::round(width as f64 / k as f64 * r) as usize).max(1);
        (th, tw)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (th, tw) = cells(mid);
        if th * tw <= cfg.n_cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (th, tw) = cells(lo);
    if th * tw > cfg.n_cap {
        return Err(Error::Capacity { n: th * tw, cap: cfg.n_cap });
    }
    Ok(Lattice {
        k,
        grid: PatchGrid::new(th * k, tw * k, k, k)?,
        height: th * k,
        width: tw * k,
    })
}

/// Lattice for an input of `height x width`.
///
/// With `k = None` the smallest admissible patch size whose lattice fits
/// `n_cap` is chosen; if none fits, `k_max` is used on a proportionally
/// downscaled input. An explicit `k` must fit unless `allow_over_cap`.
pub fn plan_lattice(cfg: &TokenizerConfig, height: usize, width: usize, k: Option<usize>) -> Result<Lattice> {
    if height == 0 || width == 0 {
        return Err(contract!("image extents must be positive, got {height}x{width}"));
    }
    let direct = |k: usize| -> Result<Lattice> {
        Ok(Lattice {
            k,
            grid: PatchGrid::new(height, width, k, k)?,
            height,
            width,
        })
    };
    match k {
        Some(k) => {
            check_k(cfg, k)?;
            let lat = direct(k)?;
            if lat.n() > cfg.n_cap && !cfg.allow_over_cap {
                return Err(Error::Capacity { n: lat.n(), cap: cfg.n_cap });
            }
            Ok(lat)
        }
        None => {
            let mut ks = cfg.k_set.clone();
            ks.sort_unstable();
            for k in ks {
                let lat = direct(k)?;
                if lat.n() <= cfg.n_cap {
                    return Ok(lat);
                }
            }
            shrunk(cfg, height, width, cfg.k_max)
        }
    }
}

/// Lattice recorded by a token header of the given geometry.
pub fn header_lattice(cfg: &TokenizerConfig, height: usize, width: usize, k: usize) -> Result<Lattice> {
    match plan_lattice(cfg, height, width, Some(k)) {
        Err(Error::Capacity { .. }) if k == cfg.k_max => shrunk(cfg, height, width, k),
        other => other,
    }
}

impl<T: Scalar> Tokenizer<T> {
    pub fn new(cfg: TokenizerConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let de = cfg.encoder.d;
        let dd = cfg.decoder.d;
        let code = cfg.codebook.code_dim();
        let big = DOWNSCALE * cfg.k_max;
        let mut patch = PatchProjector::new("embed", de, cfg.k_max, cfg.k_set.clone(), cfg.weight_resize, rng);
        patch.allow_any_k = cfg.allow_any_k;
        let mut down = vec![T::zero(); 3 * DOWNSCALE * DOWNSCALE * 3];
        let tap = T::c(1.0 / (DOWNSCALE * DOWNSCALE) as f64);
        for c in 0..3 {
            for j in 0..DOWNSCALE * DOWNSCALE {
                down[(c * DOWNSCALE * DOWNSCALE + j) * 3 + c] = tap;
            }
        }
        Ok(Tokenizer {
            patch,
            enc_pos: PosGrid::new("embed/pos_grid", de, cfg.grid_max, cfg.pos_resize, rng),
            latents: LatentBank::new("embed", de, cfg.l_min, cfg.l_max, rng),
            encoder: Stack::new("enc", &cfg.encoder, rng)?,
            to_code: Linear::new("enc/to_code", de, code, true, rng),
            codebooks: CodebookSet::new(cfg.codebook, rng),
            from_code: Linear::new("dec/from_code", code, dd, true, rng),
            dec_latent_pos: Param::new("dec/latent_pos", &[cfg.l_max, dd], trunc_normal(rng, cfg.l_max * dd, 0.02)),
            mask: Param::new("dec/mask", &[dd], trunc_normal(rng, dd, 0.02)),
            filler: Param::new("dec/filler", &[dd], trunc_normal(rng, dd, 0.02)),
            dec_pos: PosGrid::new("dec/pos_grid", dd, cfg.grid_max, cfg.pos_resize, rng),
            decoder: Stack::new("dec", &cfg.decoder, rng)?,
            pix_w: Param::new("dec/pix_w", &[dd, 3 * big * big], trunc_normal(rng, dd * 3 * big * big, 0.02)).with_decay(),
            pix_b: Param::zeros("dec/pix_b", &[3]),
            down_w: Param::new("dec/down_w", &[3 * DOWNSCALE * DOWNSCALE, 3], down).with_decay(),
            down_b: Param::zeros("dec/down_b", &[3]),
            cfg,
        })
    }

    /// Lattice for an input of `height x width`; see [`plan_lattice`].
    pub fn plan(&self, height: usize, width: usize, k: Option<usize>) -> Result<Lattice> {
        plan_lattice(&self.cfg, height, width, k)
    }

    /// Lattice a token header was encoded on.
    pub fn lattice_for(&self, tokens: &TokenSeq) -> Result<Lattice> {
        header_lattice(&self.cfg, tokens.height as usize, tokens.width as usize, tokens.k as usize)
    }

    fn check_tokens(&self, tokens: &TokenSeq) -> Result<()> {
        let cb = self.cfg.codebook;
        if tokens.n_cb as usize != cb.n_cb || tokens.m as usize != cb.m {
            return Err(Error::Format(format!(
                "tokens use {} codebooks of {} entries, model has {} of {}",
                tokens.n_cb, tokens.m, cb.n_cb, cb.m
            )));
        }
        let l = tokens.len();
        if l < self.cfg.l_min || l > self.cfg.l_max {
            return Err(Error::Format(format!(
                "token count {l} outside [{}, {}]",
                self.cfg.l_min, self.cfg.l_max
            )));
        }
        Ok(())
    }

    /// `[b, 3, h, w]` pixels (already at the lattice size) to `[b, n, 3 k^2]` patches.
    fn patches<'t>(&self, tape: &'t Tape<T>, imgs: &[Image], lat: &Lattice) -> Result<Var<'t, T>> {
        let mut data = Vec::new();
        for img in imgs {
            let img = if (img.height(), img.width()) == (lat.height, lat.width) {
                patchify(img, lat.k, lat.k)?
            } else {
                patchify(&img.resized(lat.height, lat.width, ResizeMode::Bilinear)?, lat.k, lat.k)?
            };
            data.extend(to_scalars::<T>(&img.0));
        }
        tape.constant(&[imgs.len(), lat.n(), lat.grid.patch_dim()], data)
    }

    /// Encoder outputs at the latent positions, projected to code space: `[b, l, code_dim]`.
    pub fn encode_latents<'t>(&self, tape: &'t Tape<T>, patches: Var<'t, T>, lat: &Lattice, l: usize) -> Result<Var<'t, T>> {
        let b = patches.shape()[0];
        let n = lat.n();
        let x = self
            .patch
            .embed(tape, patches, lat.k)?
            .add(self.enc_pos.embed(tape, lat.grid.t_h, lat.grid.t_w)?)?;
        let q = repeat_batch(self.latents.inputs(tape, l)?, b)?;
        let seq = Var::concat(&[x, q], 1)?;
        let out = self.encoder.forward(tape, seq)?.slice(1, n, l)?;
        self.to_code.forward(tape, out)
    }

    /// Decoder states `[b, l + n, d_dec]`; code rows come first.
    ///
    /// Rows of `codes` at or beyond `known` are replaced by the learned filler.
    pub fn decoder_hidden<'t>(&self, tape: &'t Tape<T>, codes: Var<'t, T>, lat: &Lattice, known: usize) -> Result<Var<'t, T>> {
        let s = codes.shape();
        let (b, l) = (s[0], s[1]);
        if l > self.cfg.l_max || known == 0 || known > l {
            return Err(contract!("{known} of {l} code rows for a bank of {}", self.cfg.l_max));
        }
        let mut c = self.from_code.forward(tape, codes)?;
        if known < l {
            let filler = tape
                .param(&self.filler)
                .reshape(&[1, 1, self.cfg.decoder.d])?
                .add(tape.constant(&[b, l - known, 1], vec![T::zero(); b * (l - known)])?)?;
            c = Var::concat(&[c.slice(1, 0, known)?, filler], 1)?;
        }
        let c = c.add(tape.param(&self.dec_latent_pos).slice(0, 0, l)?)?;
        let masks = self
            .dec_pos
            .embed(tape, lat.grid.t_h, lat.grid.t_w)?
            .add(tape.param(&self.mask))?;
        let seq = Var::concat(&[c, repeat_batch(masks, b)?], 1)?;
        self.decoder.forward(tape, seq)
    }

    /// Pixel head over the spatial rows of `hidden`, then resample and learned
    /// downscale to `[b, 3, h_out, w_out]` in `[-1, 1]`.
    pub fn pixels_from_hidden<'t>(
        &self,
        tape: &'t Tape<T>,
        hidden: Var<'t, T>,
        lat: &Lattice,
        h_out: usize,
        w_out: usize,
    ) -> Result<Var<'t, T>> {
        if h_out == 0 || w_out == 0 {
            return Err(contract!("output extents must be positive, got {h_out}x{w_out}"));
        }
        let s = hidden.shape();
        let (b, n) = (s[0], lat.n());
        let (th, tw) = (lat.grid.t_h, lat.grid.t_w);
        let big = DOWNSCALE * lat.k;
        let u = hidden.slice(1, s[1] - n, n)?;
        let w = resize_kernel_rows(tape.param(&self.pix_w), 3, DOWNSCALE * self.cfg.k_max, big, self.cfg.weight_resize)?;
        let canvas = u
            .matmul(w)?
            .reshape(&[b, th, tw, 3, big, big])?
            .permute(&[0, 3, 1, 4, 2, 5])?
            .reshape(&[b, 3, th * big, tw * big])?
            .add(tape.param(&self.pix_b).reshape(&[3, 1, 1])?)?;
        let canvas = canvas
            .slice(2, 0, DOWNSCALE * lat.height)?
            .slice(3, 0, DOWNSCALE * lat.width)?
            .resize(DOWNSCALE * h_out, DOWNSCALE * w_out, ResizeMode::Bilinear)?;
        let taps = canvas
            .reshape(&[b, 3, h_out, DOWNSCALE, w_out, DOWNSCALE])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b, h_out * w_out, 3 * DOWNSCALE * DOWNSCALE])?;
        let y = taps
            .matmul(tape.param(&self.down_w))?
            .add(tape.param(&self.down_b))?
            .permute(&[0, 2, 1])?
            .reshape(&[b, 3, h_out, w_out])?;
        Ok(y.clamp(-T::one(), T::one()))
    }

    /// Code vectors `[b, l, code_dim]` for token sequences sharing a header geometry.
    fn code_tensor<'t>(&self, tape: &'t Tape<T>, seqs: &[TokenSeq]) -> Result<Var<'t, T>> {
        let l = seqs[0].len();
        let mut data = Vec::new();
        for s in seqs {
            self.check_tokens(s)?;
            if s.len() != l || (s.height, s.width, s.k) != (seqs[0].height, seqs[0].width, seqs[0].k) {
                return Err(contract!("token batch mixes geometries"));
            }
            data.extend(self.codebooks.lookup(&s.indices())?);
        }
        tape.constant(&[seqs.len(), l, self.cfg.codebook.code_dim()], data)
    }

    /// Encodes a batch of equally sized images.
    pub fn encode_batch(&self, imgs: &[Image], k: Option<usize>, l: usize) -> Result<Vec<TokenSeq>> {
        let first = imgs.first().ok_or_else(|| contract!("empty image batch"))?;
        let lat = self.plan(first.height(), first.width(), k)?;
        self.latents.check_len(l)?;
        let tape = Tape::inference();
        let patches = self.patches(&tape, imgs, &lat)?;
        let h = self.encode_latents(&tape, patches, &lat, l)?;
        let q = self.codebooks.quantize(&tape, h)?;
        let n_cb = self.cfg.codebook.n_cb;
        q.indices
            .chunks(l * n_cb)
            .zip(imgs)
            .map(|(codes, img)| TokenSeq::from_indices(img.height(), img.width(), lat.k, n_cb, self.cfg.codebook.m, codes))
            .collect()
    }

    pub fn encode(&self, img: &Image, k: Option<usize>, l: usize) -> Result<TokenSeq> {
        Ok(self.encode_batch(core::slice::from_ref(img), k, l)?.remove(0))
    }

    /// Decodes sequences with a common header to `h_out x w_out` images.
    pub fn decode_batch(&self, seqs: &[TokenSeq], h_out: usize, w_out: usize) -> Result<Vec<Image>> {
        self.decode_known(seqs, seqs.first().map_or(0, |s| s.len()), h_out, w_out)
    }

    pub fn decode(&self, tokens: &TokenSeq, h_out: usize, w_out: usize) -> Result<Image> {
        Ok(self.decode_batch(core::slice::from_ref(tokens), h_out, w_out)?.remove(0))
    }

    /// Decodes using only the first `known` tokens; the rest become filler.
    pub fn decode_prefix(&self, tokens: &TokenSeq, known: usize, h_out: usize, w_out: usize) -> Result<Image> {
        Ok(self.decode_known(core::slice::from_ref(tokens), known, h_out, w_out)?.remove(0))
    }

    fn decode_known(&self, seqs: &[TokenSeq], known: usize, h_out: usize, w_out: usize) -> Result<Vec<Image>> {
        let first = seqs.first().ok_or_else(|| contract!("empty token batch"))?;
        self.check_tokens(first)?;
        let lat = self.lattice_for(first)?;
        let tape = Tape::inference();
        let codes = self.code_tensor(&tape, seqs)?;
        let hidden = self.decoder_hidden(&tape, codes, &lat, known)?;
        tensor_to_images(&self.pixels_from_hidden(&tape, hidden, &lat, h_out, w_out)?)
    }

    /// Encode, quantize and decode `inputs` to the size of `targets`, with
    /// squared-error and quantizer losses.
    #[allow(clippy::too_many_arguments)]
    pub fn reconstruct<'t>(
        &self,
        tape: &'t Tape<T>,
        inputs: &[Image],
        targets: &[Image],
        k: Option<usize>,
        l: usize,
        commitment_cost: f64,
        frozen: Option<&FrozenAssignment<T>>,
    ) -> Result<Reconstruction<'t, T>> {
        let first = inputs.first().ok_or_else(|| contract!("empty image batch"))?;
        if targets.len() != inputs.len() {
            return Err(contract!("{} inputs but {} targets", inputs.len(), targets.len()));
        }
        let lat = self.plan(first.height(), first.width(), k)?;
        let patches = self.patches(tape, inputs, &lat)?;
        let h = self.encode_latents(tape, patches, &lat, l)?;
        let quant = self.codebooks.quantize_with(tape, h, frozen)?;
        let hidden = self.decoder_hidden(tape, quant.quantized, &lat, l)?;
        let target = images_to_tensor(tape, targets)?;
        let ts = target.shape();
        let images = self.pixels_from_hidden(tape, hidden, &lat, ts[2], ts[3])?;
        let recon_loss = images.sub(target)?.square().mean();
        let vq_loss = quant.loss(commitment_cost)?;
        let total = recon_loss.add(vq_loss)?;
        Ok(Reconstruction {
            images,
            quant,
            recon_loss,
            vq_loss,
            total,
            lattice: lat,
        })
    }
}

impl<T: Scalar> Module<T> for Tokenizer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.patch.visit(f);
        self.enc_pos.visit(f);
        self.latents.visit(f);
        self.encoder.visit(f);
        self.to_code.visit(f);
        self.codebooks.visit(f);
        self.from_code.visit(f);
        f(&self.dec_latent_pos);
        f(&self.mask);
        f(&self.filler);
        self.dec_pos.visit(f);
        self.decoder.visit(f);
        f(&self.pix_w);
        f(&self.pix_b);
        f(&self.down_w);
        f(&self.down_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.patch.visit_mut(f);
        self.enc_pos.visit_mut(f);
        self.latents.visit_mut(f);
        self.encoder.visit_mut(f);
        self.to_code.visit_mut(f);
        self.codebooks.visit_mut(f);
        self.from_code.visit_mut(f);
        f(&mut self.dec_latent_pos);
        f(&mut self.mask);
        f(&mut self.filler);
        self.dec_pos.visit_mut(f);
        self.decoder.visit_mut(f);
        f(&mut self.pix_w);
        f(&mut self.pix_b);
        f(&mut self.down_w);
        f(&mut self.down_b);
    }
}
