//! Positional lattices, latent banks and size-adaptive patch projection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::init::trunc_normal;
use crate::numerics::{Module, Param, ResizeMode, Scalar, Tape, Var};
use crate::Rng;

/// Learned `[d, side, side]` lattice resampled to any patch grid.
#[derive(Clone, Debug)]
pub struct PosGrid<T> {
    pub grid: Param<T>,
    pub mode: ResizeMode,
}

impl<T: Scalar> PosGrid<T> {
    pub fn new(name: impl Into<String>, d: usize, side: usize, mode: ResizeMode, rng: &mut Rng) -> Self {
        PosGrid {
            grid: Param::new(name, &[d, side, side], trunc_normal(rng, d * side * side, 0.02)),
            mode,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[0]
    }

    /// Row-major `[t_h * t_w, d]` position codes.
    pub fn embed<'t>(&self, tape: &'t Tape<T>, t_h: usize, t_w: usize) -> Result<Var<'t, T>> {
        if t_h == 0 || t_w == 0 {
            return Err(contract!("positional lattice must be non-empty, got {t_h}x{t_w}"));
        }
        let d = self.width();
        tape.param(&self.grid)
            .resize(t_h, t_w, self.mode)?
            .reshape(&[d, t_h * t_w])?
            .transpose()
    }
}

impl<T: Scalar> Module<T> for PosGrid<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.grid);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.grid);
    }
}

/// `l_max` learned latent queries with their own absolute positions.
#[derive(Clone, Debug)]
pub struct LatentBank<T> {
    pub latents: Param<T>,
    pub latent_pos: Param<T>,
    pub l_min: usize,
    pub l_max: usize,
}

impl<T: Scalar> LatentBank<T> {
    pub fn new(prefix: &str, d: usize, l_min: usize, l_max: usize, rng: &mut Rng) -> Self {
        LatentBank {
            latents: Param::new(format!("{prefix}/latents"), &[l_max, d], trunc_normal(rng, l_max * d, 0.02)),
            latent_pos: Param::new(format!("{prefix}/latent_pos"), &[l_max, d], trunc_normal(rng, l_max * d, 0.02)),
            l_min,
            l_max,
        }
    }

    pub fn check_len(&self, l: usize) -> Result<()> {
        if l < self.l_min || l > self.l_max {
            return Err(contract!("token count {l} outside [{}, {}]", self.l_min, self.l_max));
        }
        Ok(())
    }

    /// First `l` latents plus their positions, `[l, d]`.
    pub fn inputs<'t>(&self, tape: &'t Tape<T>, l: usize) -> Result<Var<'t, T>> {
        self.check_len(l)?;
        let lat = tape.param(&self.latents).slice(0, 0, l)?;
        let pos = tape.param(&self.latent_pos).slice(0, 0, l)?;
        lat.add(pos)
    }
}

impl<T: Scalar> Module<T> for LatentBank<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.latents);
        f(&self.latent_pos);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.latents);
        f(&mut self.latent_pos);
    }
}

/// Resizes each `[channels, base, base]` kernel row of a `[rows, channels * base^2]`
/// weight to `k x k`.
pub fn resize_kernel_rows<'t, T: Scalar>(
    w: Var<'t, T>,
    channels: usize,
    base: usize,
    k: usize,
    mode: ResizeMode,
) -> Result<Var<'t, T>> {
    let shape = w.shape();
    if shape.len() != 2 || shape[1] != channels * base * base {
        return Err(Error::Shape {
            op: "resize_kernel_rows",
            lhs: shape,
            rhs: vec![channels, base, base],
        });
    }
    let rows = shape[0];
    w.reshape(&[rows * channels, base, base])?
        .resize(k, k, mode)?
        .reshape(&[rows, channels * k * k])
}

/// Patch projection whose weights for every patch size derive from one base kernel.
#[derive(Clone, Debug)]
pub struct PatchProjector<T> {
    /// `[d, 3 * k_max^2]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub k_max: usize,
    pub k_set: Vec<usize>,
    pub allow_any_k: bool,
    pub mode: ResizeMode,
}

impl<T: Scalar> PatchProjector<T> {
    pub fn new(prefix: &str, d: usize, k_max: usize, k_set: Vec<usize>, mode: ResizeMode, rng: &mut Rng) -> Self {
        let fan = 3 * k_max * k_max;
        PatchProjector {
            weight: Param::new(format!("{prefix}/patch_w"), &[d, fan], trunc_normal(rng, d * fan, 0.02)).with_decay(),
            bias: Param::zeros(format!("{prefix}/patch_b"), &[d]),
            k_max,
            k_set,
            allow_any_k: false,
            mode,
        }
    }

    pub fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_max {
            return Err(contract!("patch size {k} outside [1, {}]", self.k_max));
        }
        if !self.allow_any_k && !self.k_set.contains(&k) {
            return Err(contract!("patch size {k} not in {:?}", self.k_set));
        }
        Ok(())
    }

    /// Derived `[d, 3 k^2]` projection.
    pub fn weights_for<'t>(&self, tape: &'t Tape<T>, k: usize) -> Result<Var<'t, T>> {
        self.check_k(k)?;
        resize_kernel_rows(tape.param(&self.weight), 3, self.k_max, k, self.mode)
    }

    /// `[.., N, 3 k^2]` patches to `[.., N, d]` embeddings.
    pub fn embed<'t>(&self, tape: &'t Tape<T>, patches: Var<'t, T>, k: usize) -> Result<Var<'t, T>> {
        let w = self.weights_for(tape, k)?;
        let width = *patches.shape().last().unwrap_or(&0);
        if width != 3 * k * k {
            return Err(Error::Shape {
                op: "embed_patches",
                lhs: patches.shape(),
                rhs: w.shape(),
            });
        }
        patches.matmul(w.transpose()?)?.add(tape.param(&self.bias))
    }
}

impl<T: Scalar> Module<T> for PatchProjector<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
