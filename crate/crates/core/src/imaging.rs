//! RGB images in `[-1, 1]` and their patch lattices.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{resize_values, ResizeMode};

/// Three-channel planar image, values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// `data` is planar `[3, height, width]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(contract!("image extents must be positive, got {height}x{width}"));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Shape {
                op: "image",
                lhs: vec![3, height, width],
                rhs: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(contract!("image contains non-finite value {v}"));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; 3 * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Checks the `[-1, 1]` range invariant with a small tolerance.
    pub fn in_range(&self) -> bool {
        self.data.iter().all(|&v| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&v))
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self
    }

    pub fn resized(&self, height: usize, width: usize, mode: ResizeMode) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(contract!("resize target must be positive, got {height}x{width}"));
        }
        let data = resize_values(&self.data, 3, self.height, self.width, height, width, mode);
        Image::new(height, width, data)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape {
                op: "mse",
                lhs: vec![3, self.height, self.width],
                rhs: vec![3, other.height, other.width],
            });
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }
}

/// Patch lattice covering an image, with bottom/right zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub k_h: usize,
    pub k_w: usize,
    pub t_h: usize,
    pub t_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, k_h: usize, k_w: usize) -> Result<Self> {
        if k_h == 0 || k_w == 0 {
            return Err(contract!("patch size must be positive, got {k_h}x{k_w}"));
        }
        let t_h = height.div_ceil(k_h);
        let t_w = width.div_ceil(k_w);
        Ok(PatchGrid {
            k_h,
            k_w,
            t_h,
            t_w,
            pad_h: t_h * k_h - height,
            pad_w: t_w * k_w - width,
        })
    }

    pub fn square(height: usize, width: usize, k: usize) -> Result<Self> {
        Self::new(height, width, k, k)
    }

    /// Number of spatial tokens.
    pub fn n(&self) -> usize {
        self.t_h * self.t_w
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.k_h * self.k_w
    }
}

/// Splits `img` into row-major patches, each flattened channel-major
/// (`[3, k_h, k_w]`). Returns `[N * 3 k_h k_w]` values and the grid.
pub fn patchify(img: &Image, k_h: usize, k_w: usize) -> Result<(Vec<f32>, PatchGrid)> {
    let grid = PatchGrid::new(img.height, img.width, k_h, k_w)?;
    let pd = grid.patch_dim();
    let mut out = vec![0.0f32; grid.n() * pd];
    for ty in 0..grid.t_h {
        for tx in 0..grid.t_w {
            let base = (ty * grid.t_w + tx) * pd;
            for c in 0..3 {
                for dy in 0..k_h {
                    let y = ty * k_h + dy;
                    if y >= img.height {
                        break;
                    }
                    for dx in 0..k_w {
                        let x = tx * k_w + dx;
                        if x >= img.width {
                            break;
                        }
                        out[base + (c * k_h + dy) * k_w + dx] = img.get(c, y, x);
                    }
                }
            }
        }
    }
    Ok((out, grid))
}

/// Inverse of [`patchify`]: reassembles and crops to `height x width`.
pub fn unpatchify(patches: &[f32], grid: &PatchGrid, height: usize, width: usize) -> Result<Image> {
    let pd = grid.patch_dim();
    if patches.len() != grid.n() * pd {
        return Err(Error::Shape {
            op: "unpatchify",
            lhs: vec![grid.n(), pd],
            rhs: vec![patches.len()],
        });
    }
    if height == 0 || width == 0 || height > grid.t_h * grid.k_h || width > grid.t_w * grid.k_w {
        return Err(contract!(
            "{height}x{width} does not fit a {}x{} lattice of {}x{} patches",
            grid.t_h,
            grid.t_w,
            grid.k_h,
            grid.k_w
        ));
    }
    let mut data = vec![0.0f32; 3 * height * width];
    for c in 0..3 {
        for y in 0..height {
            let (ty, dy) = (y / grid.k_h, y % grid.k_h);
            for x in 0..width {
                let (tx, dx) = (x / grid.k_w, x % grid.k_w);
                let base = (ty * grid.t_w + tx) * pd;
                data[(c * height + y) * width + x] = patches[base + (c * grid.k_h + dy) * grid.k_w + dx];
            }
        }
    }
    Image::new(height, width, data)
}
