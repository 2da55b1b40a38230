//! Multi-codebook vector quantization with straight-through gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::CodebookConfig;
use crate::error::{contract, Error, Result};
use crate::init::uniform;
use crate::numerics::{Module, Param, Scalar, Tape, Var};
use crate::Rng;

/// `n_cb` independent codebooks of `m` entries, each `d_sub` wide.
#[derive(Clone, Debug)]
pub struct CodebookSet<T> {
    /// `[n_cb, m, d_sub]`.
    pub tables: Param<T>,
    pub geometry: CodebookConfig,
}

/// Outcome of quantizing `rows` latents.
pub struct QuantResult<'t, T: Scalar> {
    /// Row-major `[rows, n_cb]` codes.
    pub indices: Vec<usize>,
    /// Straight-through output, forward value equal to the selected entries.
    pub quantized: Var<'t, T>,
    /// Mean over sub-vectors of `|sg(h) - e|^2`.
    pub codebook_loss: Var<'t, T>,
    /// Mean over sub-vectors of `|h - sg(e)|^2`.
    pub commit_loss: Var<'t, T>,
    /// `[n_cb][m]` selection counts.
    pub usage: Vec<Vec<u32>>,
    latents: Vec<T>,
    entries: Vec<T>,
}

/// A quantization outcome replayed with every stop-gradient pinned to its
/// recorded value.
///
/// The output becomes `h + (e0 - h0)` and the losses `|h0 - e|^2`, `|h - e0|^2`:
/// smooth functions whose true derivatives equal the straight-through ones,
/// so finite differences can probe them.
#[derive(Clone, Debug)]
pub struct FrozenAssignment<T> {
    pub indices: Vec<usize>,
    /// `h0`, `[rows, d]`.
    pub latents: Vec<T>,
    /// `e0`, `[rows, d]`.
    pub entries: Vec<T>,
}

impl<'t, T: Scalar> QuantResult<'t, T> {
    pub fn loss(&self, commitment_cost: f64) -> Result<Var<'t, T>> {
        quantizer_loss(self, commitment_cost)
    }

    pub fn freeze(&self) -> FrozenAssignment<T> {
        FrozenAssignment {
            indices: self.indices.clone(),
            latents: self.latents.clone(),
            entries: self.entries.clone(),
        }
    }
}

/// `codebook_loss + commitment_cost * commit_loss`.
pub fn quantizer_loss<'t, T: Scalar>(q: &QuantResult<'t, T>, commitment_cost: f64) -> Result<Var<'t, T>> {
    if !(commitment_cost >= 0.0) {
        return Err(contract!("commitment cost must be non-negative, got {commitment_cost}"));
    }
    q.codebook_loss.add(q.commit_loss.scale(T::c(commitment_cost)))
}

impl<T: Scalar> CodebookSet<T> {
    pub fn new(geometry: CodebookConfig, rng: &mut Rng) -> Self {
        let CodebookConfig { n_cb, m, d_sub } = geometry;
        CodebookSet {
            tables: Param::new("vq/tables", &[n_cb, m, d_sub], uniform(rng, n_cb * m * d_sub, 1.0 / m as f64)),
            geometry,
        }
    }

    pub fn from_tables(geometry: CodebookConfig, data: Vec<T>) -> Result<Self> {
        let CodebookConfig { n_cb, m, d_sub } = geometry;
        if data.len() != n_cb * m * d_sub {
            return Err(Error::Shape {
                op: "codebook",
                lhs: vec![n_cb, m, d_sub],
                rhs: vec![data.len()],
            });
        }
        Ok(CodebookSet {
            tables: Param::new("vq/tables", &[n_cb, m, d_sub], data),
            geometry,
        })
    }

    pub fn dim(&self) -> usize {
        self.geometry.code_dim()
    }

    /// Nearest entry of codebook `c` to `sub`, lowest index on ties.
    pub fn nearest(&self, c: usize, sub: &[T]) -> usize {
        let CodebookConfig { m, d_sub, .. } = self.geometry;
        let table = &self.tables.value()[c * m * d_sub..(c + 1) * m * d_sub];
        let mut best = 0;
        let mut best_d = T::infinity();
        for (j, e) in table.chunks_exact(d_sub).enumerate() {
            let dist = e.iter().zip(sub).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        best
    }

    fn check_rows(&self, h: &Var<'_, T>) -> Result<usize> {
        let shape = h.shape();
        let d = self.dim();
        if shape.last() != Some(&d) {
            return Err(Error::Shape {
                op: "quantize",
                lhs: shape,
                rhs: vec![d],
            });
        }
        Ok(h.numel() / d)
    }

    /// Nearest-entry quantization of `[.., d]` latents.
    pub fn quantize<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>) -> Result<QuantResult<'t, T>> {
        self.quantize_with(tape, h, None)
    }

    /// As [`CodebookSet::quantize`], replaying `frozen` when given.
    pub fn quantize_with<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        frozen: Option<&FrozenAssignment<T>>,
    ) -> Result<QuantResult<'t, T>> {
        let rows = self.check_rows(&h)?;
        let CodebookConfig { n_cb, m, d_sub } = self.geometry;
        let d = self.dim();
        let hv = h.value();
        if let Some(pos) = hv.iter().position(|v| !v.is_finite()) {
            return Err(contract!("non-finite latent at row {}, channel {}", pos / d, pos % d));
        }
        let indices = match frozen {
            Some(f) => {
                if f.indices.len() != rows * n_cb || f.latents.len() != rows * d || f.entries.len() != rows * d {
                    return Err(contract!("frozen assignment covers a different number of rows"));
                }
                f.indices.clone()
            }
            None => {
                tape.count_macs((rows * n_cb * m * d_sub) as u64);
                (0..rows * n_cb)
                    .map(|i| self.nearest(i % n_cb, &hv[i * d_sub..(i + 1) * d_sub]))
                    .collect()
            }
        };
        if let Some(pos) = indices.iter().position(|&i| i >= m) {
            return Err(contract!("code {} at position {pos} out of range for {m} entries", indices[pos]));
        }
        let selected = self.lookup(&indices)?;
        let sub_shape = [rows * n_cb, d_sub];
        let flat: Vec<usize> = indices.iter().enumerate().map(|(i, &j)| (i % n_cb) * m + j).collect();
        let entries = tape.param(&self.tables).reshape(&[n_cb * m, d_sub])?.gather_rows(&flat)?;
        let subs = h.reshape(&sub_shape)?;
        let (quantized, h_stop, e_stop) = match frozen {
            Some(f) => {
                let offset: Vec<T> = f.entries.iter().zip(&f.latents).map(|(&e, &x)| e - x).collect();
                (
                    h.add(tape.constant(&h.shape(), offset)?)?,
                    tape.constant(&sub_shape, f.latents.clone())?,
                    tape.constant(&sub_shape, f.entries.clone())?,
                )
            }
            None => (h.straight_through(selected.clone())?, subs.detach(), entries.detach()),
        };
        let per_sub = T::c(1.0 / (rows * n_cb) as f64);
        let codebook_loss = h_stop.sub(entries)?.square().sum().scale(per_sub);
        let commit_loss = subs.sub(e_stop)?.square().sum().scale(per_sub);

        let mut usage = vec![vec![0u32; m]; n_cb];
        for (i, &j) in indices.iter().enumerate() {
            usage[i % n_cb][j] += 1;
        }
        Ok(QuantResult {
            indices,
            quantized,
            codebook_loss,
            commit_loss,
            usage,
            latents: hv.to_vec(),
            entries: selected,
        })
    }

    /// Concatenated entries for row-major `[rows, n_cb]` codes.
    pub fn lookup(&self, indices: &[usize]) -> Result<Vec<T>> {
        let CodebookConfig { n_cb, m, d_sub } = self.geometry;
        if !indices.len().is_multiple_of(n_cb) {
            return Err(contract!("{} codes do not form whole rows of {n_cb}", indices.len()));
        }
        let table = self.tables.value();
        let mut out = Vec::with_capacity(indices.len() * d_sub);
        for (i, &j) in indices.iter().enumerate() {
            if j >= m {
                return Err(contract!(
                    "code {j} at token {}, codebook {} out of range for {m} entries",
                    i / n_cb,
                    i % n_cb
                ));
            }
            let base = ((i % n_cb) * m + j) * d_sub;
            out.extend_from_slice(&table[base..base + d_sub]);
        }
        Ok(out)
    }
}

impl<T: Scalar> Module<T> for CodebookSet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.tables);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.tables);
    }
}

/// Shannon entropy in bits of each codebook's usage histogram.
pub fn usage_entropy(usage: &[Vec<u32>]) -> Vec<f64> {
    usage
        .iter()
        .map(|h| {
            let total: f64 = h.iter().map(|&c| c as f64).sum();
            if total == 0.0 {
                return 0.0;
            }
            h.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total;
                    -p * num_traits::Float::log2(p)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use alloc::format;
    use crate::seeded_rng;

    fn two_entry() -> CodebookSet<f64> {
        CodebookSet::from_tables(CodebookConfig { n_cb: 1, m: 2, d_sub: 2 }, vec![0.0, 0.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn documented_assignments() {
        let cb = two_entry();
        let t = Tape::new();
        let q = cb.quantize(&t, t.constant(&[1, 2], vec![0.2, 0.1]).unwrap()).unwrap();
        assert_eq!(q.indices, vec![0]);
        let q = cb.quantize(&t, t.constant(&[1, 2], vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(q.indices, vec![0]);
        let q = cb.quantize(&t, t.constant(&[1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(q.indices, vec![1]);
        assert_eq!(q.commit_loss.item(), 0.0);
        assert_eq!(q.loss(0.25).unwrap().item(), 0.0);
    }

    #[test]
    fn exact_match_with_many_entries() {
        let mut rng = seeded_rng(1);
        let cb = CodebookSet::<f64>::new(CodebookConfig { n_cb: 1, m: 8, d_sub: 3 }, &mut rng);
        let e3 = cb.lookup(&[3]).unwrap();
        let t = Tape::new();
        let q = cb.quantize(&t, t.constant(&[1, 3], e3).unwrap()).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.commit_loss.item(), 0.0);
    }

    #[test]
    fn brute_force_equivalence() {
        let mut rng = seeded_rng(2);
        let g = CodebookConfig { n_cb: 8, m: 64, d_sub: 4 };
        let cb = CodebookSet::<f64>::new(g, &mut rng);
        let h: Vec<f64> = uniform(&mut rng, 100 * 32, 0.03);
        let t = Tape::inference();
        let q = cb.quantize(&t, t.constant(&[100, 32], h.clone()).unwrap()).unwrap();
        let table = cb.tables.value();
        for r in 0..100 {
            for c in 0..8 {
                let sub = &h[r * 32 + c * 4..r * 32 + c * 4 + 4];
                let dists: Vec<f64> = (0..64)
                    .map(|j| (0..4).map(|i| (table[(c * 64 + j) * 4 + i] - sub[i]).powi(2)).sum())
                    .collect();
                let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                let want = dists.iter().position(|&x| x == min).unwrap();
                assert_eq!(q.indices[r * 8 + c], want);
            }
        }
        assert_eq!(t.macs(), 100 * 8 * 64 * 4);
        let total: u32 = q.usage.iter().flatten().sum();
        assert_eq!(total, 800);
    }

    #[test]
    fn lookup_round_trips_and_rejects_bad_codes() {
        let mut rng = seeded_rng(3);
        let g = CodebookConfig { n_cb: 4, m: 16, d_sub: 2 };
        let cb = CodebookSet::<f32>::new(g, &mut rng);
        let t = Tape::inference();
        let h: Vec<f32> = uniform(&mut rng, 5 * 8, 0.1);
        let q = cb.quantize(&t, t.constant(&[5, 8], h).unwrap()).unwrap();
        assert_eq!(cb.lookup(&q.indices).unwrap(), q.quantized.to_vec());
        let again = cb.quantize(&t, t.constant(&[5, 8], cb.lookup(&q.indices).unwrap()).unwrap()).unwrap();
        assert_eq!(again.indices, q.indices);

        let zeros = cb.lookup(&[0; 8]).unwrap();
        let first: Vec<f32> = (0..4).flat_map(|c| cb.tables.value()[c * 32..c * 32 + 2].to_vec()).collect();
        assert_eq!(&zeros[..8], first.as_slice());
        assert_eq!(&zeros[8..], first.as_slice());

        let err = cb.lookup(&[0, 0, 16, 0]).unwrap_err();
        assert!(format!("{err}").contains("token 0, codebook 2"));
    }

    #[test]
    fn losses_have_closed_form() {
        let cb = two_entry();
        let t = Tape::new();
        // one entry away: h = (1.3, 0.6) selects (1, 1), delta = (0.3, -0.4), |delta|^2 = 0.25
        let h = t.leaf(&[1, 2], vec![1.3, 0.6]).unwrap();
        let q = cb.quantize(&t, h).unwrap();
        assert!((q.codebook_loss.item() - 0.25).abs() < 1e-12);
        assert!((q.commit_loss.item() - 0.25).abs() < 1e-12);
        assert!((q.loss(0.25).unwrap().item() - 0.3125).abs() < 1e-12);
        assert_eq!(q.loss(0.0).unwrap().item(), q.codebook_loss.item());
        assert!(q.loss(-1.0).is_err());
    }

    #[test]
    fn straight_through_is_identity_and_codebook_grads_are_sparse() {
        let mut rng = seeded_rng(4);
        let g = CodebookConfig { n_cb: 2, m: 8, d_sub: 2 };
        let cb = CodebookSet::<f64>::new(g, &mut rng);
        let t = Tape::new();
        let h = t.leaf(&[3, 4], uniform(&mut rng, 12, 0.2)).unwrap();
        let q = cb.quantize(&t, h).unwrap();
        let grads = t.backward(q.quantized.sum()).unwrap();
        assert!(grads.wrt(h).unwrap().iter().all(|&x| x == 1.0));

        let t = Tape::new();
        let h = t.leaf(&[3, 4], h.to_vec()).unwrap();
        let q = cb.quantize(&t, h).unwrap();
        let grads = t.backward(q.codebook_loss).unwrap();
        let gt = grads.param(cb.tables.id()).unwrap();
        for c in 0..2 {
            for j in 0..8 {
                let used = q.usage[c][j] > 0;
                let row = &gt[(c * 8 + j) * 2..(c * 8 + j + 1) * 2];
                if !used {
                    assert!(row.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn frozen_surrogate_matches_finite_differences() {
        let mut rng = seeded_rng(5);
        let g = CodebookConfig { n_cb: 2, m: 8, d_sub: 2 };
        let cb = CodebookSet::<f64>::new(g, &mut rng);
        let x0: Vec<f64> = uniform(&mut rng, 8, 0.5);
        let frozen = {
            let t = Tape::inference();
            cb.quantize(&t, t.constant(&[2, 4], x0.clone()).unwrap()).unwrap().freeze()
        };
        let err = grad_check(
            |t, h| {
                let q = cb.quantize_with(t, h, Some(&frozen))?;
                q.quantized.square().sum().add(q.loss(0.25)?)
            },
            &[2, 4],
            &x0,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn non_finite_latents_are_rejected() {
        let cb = two_entry();
        let t = Tape::new();
        assert!(cb.quantize(&t, t.constant(&[1, 2], vec![f64::NAN, 0.0]).unwrap()).is_err());
        assert!(cb.quantize(&t, t.constant(&[1, 3], vec![0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn entropy_of_uniform_usage() {
        let e = usage_entropy(&[vec![1, 1, 1, 1], vec![4, 0, 0, 0]]);
        assert!((e[0] - 2.0).abs() < 1e-12);
        assert_eq!(e[1], 0.0);
    }
}
