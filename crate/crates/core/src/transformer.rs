//! Pre-norm transformer blocks, bidirectional or causal, with incremental decoding.

use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::BlockConfig;
use crate::error::{contract, Error, Result};
use crate::init::trunc_normal;
use crate::numerics::{Module, Param, Scalar, Tape, Var};
use crate::Rng;

const LN_EPS: f64 = 1e-5;
const QK_EPS: f64 = 1e-6;

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(
                format!("{prefix}/w"),
                &[fan_in, fan_out],
                trunc_normal(rng, fan_in * fan_out, 0.02),
            )
            .with_decay(),
            bias: bias.then(|| Param::zeros(format!("{prefix}/b"), &[fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(tape.param(&self.weight))?;
        match &self.bias {
            Some(b) => y.add(tape.param(b)),
            None => Ok(y),
        }
    }

    /// Sets weight and bias to zero.
    pub fn zero(&mut self) {
        self.weight.value_mut().iter_mut().for_each(|v| *v = T::zero());
        if let Some(b) = &mut self.bias {
            b.value_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        self.bias.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        self.bias.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(prefix: &str, d: usize) -> Self {
        LayerNorm {
            gain: Param::filled(format!("{prefix}/g"), &[d], T::one()),
            bias: Param::zeros(format!("{prefix}/b"), &[d]),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(Some(tape.param(&self.gain)), Some(tape.param(&self.bias)), LN_EPS)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gain);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Scaled dot-product attention over `[.., s_q, dh]` queries and `[.., s_k, dh]`
/// keys/values. Returns the output and the attention weights.
pub fn attention<'t, T: Scalar>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    causal: bool,
    dropout_p: f64,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let qs = q.shape();
    let ks = k.shape();
    if qs.len() < 2 || ks.len() != qs.len() || qs[qs.len() - 1] != ks[ks.len() - 1] || v.shape() != ks {
        return Err(Error::Shape { op: "attention", lhs: qs, rhs: ks });
    }
    let dh = qs[qs.len() - 1];
    let (s_q, s_k) = (qs[qs.len() - 2], ks[ks.len() - 2]);
    let tape = q.tape();
    let mut scores = q.matmul(k.transpose()?)?.scale(T::c(1.0 / Float::sqrt(dh as f64)));
    if causal {
        // query i sits at absolute position s_k - s_q + i
        let off = s_k - s_q.min(s_k);
        let mask: Vec<T> = (0..s_q)
            .flat_map(|i| (0..s_k).map(move |j| if j > off + i { T::neg_infinity() } else { T::zero() }))
            .collect();
        scores = scores.add(tape.constant(&[s_q, s_k], mask)?)?;
    }
    let probs = scores.softmax(qs.len() - 1)?;
    let out = probs.dropout(dropout_p).matmul(v)?;
    Ok((out, probs))
}

/// Cached keys and values of one layer, per batch row `[t, heads * dh]`.
#[derive(Clone, Debug, Default)]
struct LayerCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

/// Incremental decoding state of a causal [`Stack`].
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    layers: Vec<LayerCache<T>>,
    batch: usize,
    len: usize,
    width: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// One pre-norm residual block: LN, attention, residual; LN, GELU MLP, residual.
#[derive(Clone, Debug)]
pub struct Block<T> {
    pub ln_attn: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ln_mlp: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    heads: usize,
    qk_norm: bool,
    causal: bool,
    dropout_p: f64,
}

impl<T: Scalar> Block<T> {
    pub fn new(prefix: &str, cfg: &BlockConfig, rng: &mut Rng) -> Self {
        let d = cfg.d;
        let hidden = cfg.mlp_ratio * d;
        Block {
            ln_attn: LayerNorm::new(&format!("{prefix}/ln1"), d),
            q: Linear::new(&format!("{prefix}/attn/q"), d, d, true, rng),
            // a key bias shifts every score of a query equally, so it is omitted
            k: Linear::new(&format!("{prefix}/attn/k"), d, d, false, rng),
            v: Linear::new(&format!("{prefix}/attn/v"), d, d, true, rng),
            o: Linear::new(&format!("{prefix}/attn/o"), d, d, true, rng),
            ln_mlp: LayerNorm::new(&format!("{prefix}/ln2"), d),
            fc1: Linear::new(&format!("{prefix}/mlp/fc1"), d, hidden, true, rng),
            fc2: Linear::new(&format!("{prefix}/mlp/fc2"), hidden, d, true, rng),
            heads: cfg.heads,
            qk_norm: cfg.qk_norm,
            causal: cfg.causal,
            dropout_p: cfg.dropout_p,
        }
    }

    /// `[b, s, d]` to per-head `[b, s, heads, dh]`, normalized if QK-norm is on.
    fn split<'t>(&self, x: Var<'t, T>, normalize: bool) -> Result<Var<'t, T>> {
        let s = x.shape();
        let y = x.reshape(&[s[0], s[1], self.heads, s[2] / self.heads])?;
        if normalize && self.qk_norm {
            y.layer_norm(None, None, QK_EPS)
        } else {
            Ok(y)
        }
    }

    fn merge<'t>(&self, heads_first: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = heads_first.shape();
        heads_first.permute(&[0, 2, 1, 3])?.reshape(&[s[0], s[2], s[1] * s[3]])
    }

    /// Attention sublayer on `[b, s, d]`; returns the residual update and the weights.
    pub fn attend<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let h = self.ln_attn.forward(tape, x)?;
        let perm = [0, 2, 1, 3];
        let q = self.split(self.q.forward(tape, h)?, true)?.permute(&perm)?;
        let k = self.split(self.k.forward(tape, h)?, true)?.permute(&perm)?;
        let v = self.split(self.v.forward(tape, h)?, false)?.permute(&perm)?;
        let (a, probs) = attention(q, k, v, self.causal, self.dropout_p)?;
        Ok((self.o.forward(tape, self.merge(a)?)?, probs))
    }

    fn mlp<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.ln_mlp.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?.gelu().dropout(self.dropout_p);
        self.fc2.forward(tape, h)
    }

    /// `[b, s, d] -> [b, s, d]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = x.add(self.attend(tape, x)?.0)?;
        x.add(self.mlp(tape, x)?)
    }

    /// One new position per batch row against cached keys and values.
    fn step<'t>(&self, tape: &'t Tape<T>, cache: &mut LayerCache<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let (b, d) = (shape[0], shape[2]);
        let dh = d / self.heads;
        let h = self.ln_attn.forward(tape, x)?;
        let q = self.split(self.q.forward(tape, h)?, true)?.permute(&[0, 2, 1, 3])?;
        let k = self.split(self.k.forward(tape, h)?, true)?.value();
        let v = self.split(self.v.forward(tape, h)?, false)?.value();
        for r in 0..b {
            cache.keys[r].extend_from_slice(&k[r * d..(r + 1) * d]);
            cache.values[r].extend_from_slice(&v[r * d..(r + 1) * d]);
        }
        let t = cache.keys[0].len() / d;
        let gather = |rows: &[Vec<T>]| -> Result<Var<'t, T>> {
            let flat: Vec<T> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            tape.constant(&[b, t, self.heads, dh], flat)?.permute(&[0, 2, 1, 3])
        };
        let (a, _) = attention(q, gather(&cache.keys)?, gather(&cache.values)?, false, 0.0)?;
        let x = x.add(self.o.forward(tape, self.merge(a)?)?)?;
        x.add(self.mlp(tape, x)?)
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ln_attn.visit(f);
        self.q.visit(f);
        self.k.visit(f);
        self.v.visit(f);
        self.o.visit(f);
        self.ln_mlp.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln_attn.visit_mut(f);
        self.q.visit_mut(f);
        self.k.visit_mut(f);
        self.v.visit_mut(f);
        self.o.visit_mut(f);
        self.ln_mlp.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Stack<T> {
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
    pub cfg: BlockConfig,
}

impl<T: Scalar> Stack<T> {
    pub fn new(prefix: &str, cfg: &BlockConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Stack {
            blocks: (0..cfg.layers).map(|i| Block::new(&format!("{prefix}/{i}"), cfg, rng)).collect(),
            norm: LayerNorm::new(&format!("{prefix}/norm"), cfg.d),
            cfg: cfg.clone(),
        })
    }

    /// `[s, d]` or `[b, s, d]` to the same shape.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let mut h = match shape.as_slice() {
            [s, d] if *d == self.cfg.d => x.reshape(&[1, *s, *d])?,
            [_, _, d] if *d == self.cfg.d => x,
            _ => {
                return Err(Error::Shape {
                    op: "stack",
                    lhs: shape,
                    rhs: vec![self.cfg.d],
                })
            }
        };
        for b in &self.blocks {
            h = b.forward(tape, h)?;
        }
        self.norm.forward(tape, h)?.reshape(&shape)
    }

    pub fn new_cache(&self, batch: usize) -> KvCache<T> {
        KvCache {
            layers: (0..self.blocks.len())
                .map(|_| LayerCache {
                    keys: vec![Vec::new(); batch],
                    values: vec![Vec::new(); batch],
                })
                .collect(),
            batch,
            len: 0,
            width: self.cfg.d,
        }
    }

    /// Appends one `[b, 1, d]` position to `cache` and returns its final hidden state.
    pub fn step<'t>(&self, tape: &'t Tape<T>, cache: &mut KvCache<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if !self.cfg.causal {
            return Err(contract!("incremental decoding needs a causal stack"));
        }
        if cache.layers.len() != self.blocks.len() || cache.width != self.cfg.d {
            return Err(contract!(
                "cache built for {} layers of width {}, stack has {} of width {}",
                cache.layers.len(),
                cache.width,
                self.blocks.len(),
                self.cfg.d
            ));
        }
        let shape = x.shape();
        if shape != [cache.batch, 1, self.cfg.d] {
            return Err(Error::Shape {
                op: "decode_step",
                lhs: shape,
                rhs: vec![cache.batch, 1, self.cfg.d],
            });
        }
        let mut h = x;
        for (b, layer) in self.blocks.iter().zip(cache.layers.iter_mut()) {
            h = b.step(tape, layer, h)?;
        }
        cache.len += 1;
        self.norm.forward(tape, h)
    }

    /// Value-level [`Stack::step`] over `batch * d` inputs.
    pub fn decode_step(&self, cache: &mut KvCache<T>, x: &[T]) -> Result<Vec<T>> {
        let tape = Tape::inference();
        let v = tape.constant(&[cache.batch, 1, self.cfg.d], x.to_vec())?;
        Ok(self.step(&tape, cache, v)?.to_vec())
    }
}

impl<T: Scalar> Module<T> for Stack<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.blocks.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.blocks.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_module;
    use crate::seeded_rng;

    fn cfg(causal: bool, layers: usize) -> BlockConfig {
        BlockConfig {
            d: 8,
            heads: 2,
            mlp_ratio: 2,
            layers,
            qk_norm: causal,
            causal,
            dropout_p: 0.0,
        }
    }

    fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
        trunc_normal(rng, n, 1.0)
    }

    #[test]
    fn single_key_and_identical_keys() {
        let t = Tape::<f64>::new();
        let mut rng = seeded_rng(1);
        let q = t.constant(&[2, 1, 4], random(&mut rng, 8)).unwrap();
        let k = t.constant(&[2, 1, 4], random(&mut rng, 8)).unwrap();
        let v = t.constant(&[2, 1, 4], random(&mut rng, 8)).unwrap();
        assert_eq!(attention(q, k, v, false, 0.0).unwrap().0.to_vec(), v.to_vec());

        let q = t.constant(&[3, 2], random(&mut rng, 6)).unwrap();
        let k = t.constant(&[3, 2], vec![0.3, -0.2, 0.3, -0.2, 0.3, -0.2]).unwrap();
        let v = t.constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let out = attention(q, k, v, false, 0.0).unwrap().0.to_vec();
        for r in 0..3 {
            assert!((out[r * 2] - 3.0).abs() < 1e-12 && (out[r * 2 + 1] - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_projections_make_blocks_identity() {
        let mut rng = seeded_rng(2);
        let mut b = Block::<f64>::new("enc/0", &cfg(false, 1), &mut rng);
        b.o.zero();
        b.fc2.zero();
        let t = Tape::inference();
        let x = t.constant(&[1, 5, 8], random(&mut rng, 40)).unwrap();
        assert_eq!(b.forward(&t, x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn causal_outputs_ignore_the_future() {
        let mut rng = seeded_rng(3);
        let s = Stack::<f64>::new("gpt", &cfg(true, 2), &mut rng).unwrap();
        let x = random(&mut rng, 6 * 8);
        let base = {
            let t = Tape::inference();
            s.forward(&t, t.constant(&[6, 8], x.clone()).unwrap()).unwrap().to_vec()
        };
        for pos in 0..6 {
            let mut y = x.clone();
            (0..8).for_each(|c| y[pos * 8 + c] += 0.1 * (c as f64 + 1.0));
            let t = Tape::inference();
            let out = s.forward(&t, t.constant(&[6, 8], y).unwrap()).unwrap().to_vec();
            for r in 0..6 {
                let same = out[r * 8..(r + 1) * 8] == base[r * 8..(r + 1) * 8];
                assert_eq!(same, r < pos, "perturbed {pos}, row {r}");
            }
        }
    }

    #[test]
    fn qk_norm_removes_query_scale() {
        let mut rng = seeded_rng(4);
        let mut b = Block::<f64>::new("gpt/0", &cfg(true, 1), &mut rng);
        // trained-scale weights, so the normalizer's epsilon is negligible
        b.visit_mut(&mut |p| p.set_value(&trunc_normal(&mut rng, p.len(), 0.3)).unwrap());
        let mut scaled = b.clone();
        scaled.q.visit_mut(&mut |p| p.value_mut().iter_mut().for_each(|v| *v *= 10.0));
        let t = Tape::inference();
        let x = t.constant(&[1, 7, 8], random(&mut rng, 56)).unwrap();
        let a = b.attend(&t, x).unwrap().1.to_vec();
        let z = scaled.attend(&t, x).unwrap().1.to_vec();
        let diff = a.iter().zip(&z).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-5, "{diff}");
    }

    #[test]
    fn cached_decoding_matches_full_forward() {
        let mut rng = seeded_rng(5);
        let mut c = cfg(true, 2);
        c.dropout_p = 0.1;
        let s = Stack::<f32>::new("gpt", &c, &mut rng).unwrap();
        let x: Vec<f32> = trunc_normal(&mut rng, 2 * 5 * 8, 1.0);
        let t = Tape::inference();
        let full = s.forward(&t, t.constant(&[2, 5, 8], x.clone()).unwrap()).unwrap().to_vec();
        let mut cache = s.new_cache(2);
        for pos in 0..5 {
            let step_in: Vec<f32> = (0..2).flat_map(|b| x[(b * 5 + pos) * 8..(b * 5 + pos + 1) * 8].to_vec()).collect();
            let out = s.decode_step(&mut cache, &step_in).unwrap();
            assert_eq!(cache.len(), pos + 1);
            for b in 0..2 {
                for ch in 0..8 {
                    let want = full[(b * 5 + pos) * 8 + ch];
                    assert!((out[b * 8 + ch] - want).abs() <= 1e-5);
                }
            }
        }
        let one = s.forward(&t, t.constant(&[1, 8], x[..8].to_vec()).unwrap()).unwrap().to_vec();
        let mut fresh = s.new_cache(1);
        assert_eq!(s.decode_step(&mut fresh, &x[..8]).unwrap(), one);
    }

    #[test]
    fn cache_mismatches_are_rejected() {
        let mut rng = seeded_rng(6);
        let s = Stack::<f32>::new("gpt", &cfg(true, 2), &mut rng).unwrap();
        let other = Stack::<f32>::new("gpt", &cfg(true, 1), &mut rng).unwrap();
        let mut cache = other.new_cache(1);
        assert!(matches!(s.decode_step(&mut cache, &[0.0; 8]), Err(Error::Contract(_))));
        let enc = Stack::<f32>::new("enc", &cfg(false, 1), &mut rng).unwrap();
        let mut c2 = enc.new_cache(1);
        assert!(enc.decode_step(&mut c2, &[0.0; 8]).is_err());
        let mut c3 = s.new_cache(2);
        assert!(s.decode_step(&mut c3, &[0.0; 8]).is_err());
    }

    #[test]
    fn bidirectional_stack_is_permutation_equivariant() {
        let mut rng = seeded_rng(7);
        let s = Stack::<f64>::new("enc", &cfg(false, 2), &mut rng).unwrap();
        let x = random(&mut rng, 5 * 8);
        let perm = [3, 0, 4, 1, 2];
        let px: Vec<f64> = perm.iter().flat_map(|&r| x[r * 8..(r + 1) * 8].to_vec()).collect();
        let t = Tape::inference();
        let y = s.forward(&t, t.constant(&[5, 8], x).unwrap()).unwrap().to_vec();
        let py = s.forward(&t, t.constant(&[5, 8], px).unwrap()).unwrap().to_vec();
        for (i, &r) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((py[i * 8 + c] - y[r * 8 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let mut rng = seeded_rng(8);
        let s = Stack::<f32>::new("gpt", &cfg(true, 2), &mut rng).unwrap();
        let x: Vec<f32> = trunc_normal(&mut rng, 4 * 8, 1.0);
        let run = || {
            let t = Tape::inference();
            s.forward(&t, t.constant(&[4, 8], x.clone()).unwrap()).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn two_layer_stack_gradients_match_finite_differences() {
        let mut rng = seeded_rng(9);
        for causal in [false, true] {
            let mut s = Stack::<f64>::new("enc", &cfg(causal, 2), &mut rng).unwrap();
            s.visit_mut(&mut |p| {
                let n = p.len();
                let noise: Vec<f64> = trunc_normal(&mut rng, n, 0.3);
                p.value_mut().iter_mut().zip(noise).for_each(|(v, e)| *v += e);
            });
            let x = random(&mut rng, 4 * 8);
            let target = random(&mut rng, 4 * 8);
            let report = grad_check_module(
                &mut s,
                |m, t| {
                    let y = m.forward(t, t.constant(&[4, 8], x.clone())?)?;
                    Ok(y.sub(t.constant(&[4, 8], target.clone())?)?.square().mean())
                },
                1e-5,
                6,
                &mut rng,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }
}
