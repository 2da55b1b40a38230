//! Class- and size-conditioned autoregressive model over multi-codebook tokens.
//!
//! The backbone reads `[condition, token_0 .. token_{L-1}]`; its state at
//! position `t` is handed to a small causal head that emits the `n_cb`
//! sub-codes of token `t` one after another.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::config::GenConfig;
use crate::error::{contract, Error, Result};
use crate::init::trunc_normal;
use crate::numerics::{Module, Param, Scalar, Tape, Var};
use crate::transformer::{KvCache, Linear, Stack};
use crate::Rng;

/// Class label (or the null class) plus the requested output size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenCondition {
    pub class: Option<usize>,
    pub height: usize,
    pub width: usize,
}

impl GenCondition {
    pub fn new(class: Option<usize>, height: usize, width: usize) -> Self {
        GenCondition { class, height, width }
    }

    /// Same size, null class.
    pub fn unconditional(&self) -> Self {
        GenCondition { class: None, ..*self }
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub cfg: GenConfig,
    /// `[num_classes + 1, d]`; the last row is the null class.
    pub class_emb: Param<T>,
    pub size_fc1: Linear<T>,
    pub size_fc2: Linear<T>,
    /// `[n_cb, m, d / n_cb]`.
    pub tok_emb: Param<T>,
    /// `[max_len + 1, d]`.
    pub pos: Param<T>,
    pub backbone: Stack<T>,
    /// `[n_cb, m, d]` embeddings of already emitted sub-codes inside the head.
    pub head_emb: Param<T>,
    /// `[n_cb, d]`.
    pub head_pos: Param<T>,
    pub head: Stack<T>,
    /// `[n_cb, d, classes]`.
    pub out_w: Param<T>,
    /// `[n_cb, 1, classes]`.
    pub out_b: Param<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GenConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.backbone.d;
        let cb = cfg.codebook;
        let ds = d / cb.n_cb;
        let classes = Self::classes_of(&cfg);
        Ok(Generator {
            class_emb: Param::new("gpt/class_emb", &[cfg.num_classes + 1, d], trunc_normal(rng, (cfg.num_classes + 1) * d, 0.02)),
            size_fc1: Linear::new("gpt/size/fc1", 2, d, true, rng),
            size_fc2: Linear::new("gpt/size/fc2", d, d, true, rng),
            tok_emb: Param::new("gpt/tok_emb", &[cb.n_cb, cb.m, ds], trunc_normal(rng, cb.n_cb * cb.m * ds, 0.02)),
            pos: Param::new("gpt/pos", &[cfg.max_len + 1, d], trunc_normal(rng, (cfg.max_len + 1) * d, 0.02)),
            backbone: Stack::new("gpt", &cfg.backbone, rng)?,
            head_emb: Param::new("head/sub_emb", &[cb.n_cb, cb.m, d], trunc_normal(rng, cb.n_cb * cb.m * d, 0.02)),
            head_pos: Param::new("head/pos", &[cb.n_cb, d], trunc_normal(rng, cb.n_cb * d, 0.02)),
            head: Stack::new("head", &cfg.head_config(), rng)?,
            out_w: Param::new("head/out_w", &[cb.n_cb, d, classes], trunc_normal(rng, cb.n_cb * d * classes, 0.02)).with_decay(),
            out_b: Param::zeros("head/out_b", &[cb.n_cb, 1, classes]),
            cfg,
        })
    }

    fn classes_of(cfg: &GenConfig) -> usize {
        cfg.codebook.m + usize::from(cfg.eos_enabled)
    }

    /// Logit columns per sub-code: `m`, plus one end-of-sequence class when enabled.
    pub fn classes(&self) -> usize {
        Self::classes_of(&self.cfg)
    }

    /// Index of the end-of-sequence class on codebook 0.
    pub fn eos(&self) -> Option<usize> {
        self.cfg.eos_enabled.then_some(self.cfg.codebook.m)
    }

    fn class_row(&self, c: &GenCondition) -> Result<usize> {
        match c.class {
            Some(y) if y >= self.cfg.num_classes => {
                Err(contract!("class {y} out of range for {} classes", self.cfg.num_classes))
            }
            Some(y) => Ok(y),
            None => Ok(self.cfg.num_classes),
        }
    }

    /// `[b, d]` condition vectors: class row plus an MLP of the size over beta.
    pub fn condition_embed<'t>(&self, tape: &'t Tape<T>, conds: &[GenCondition]) -> Result<Var<'t, T>> {
        let rows = conds.iter().map(|c| self.class_row(c)).collect::<Result<Vec<_>>>()?;
        for c in conds {
            if c.height == 0 || c.width == 0 {
                return Err(contract!("condition size must be positive, got {}x{}", c.height, c.width));
            }
        }
        let sizes: Vec<T> = conds
            .iter()
            .flat_map(|c| [T::c(c.height as f64 / self.cfg.beta), T::c(c.width as f64 / self.cfg.beta)])
            .collect();
        let s = tape.constant(&[conds.len(), 2], sizes)?;
        let s = self.size_fc2.forward(tape, self.size_fc1.forward(tape, s)?.gelu())?;
        tape.param(&self.class_emb).gather_rows(&rows)?.add(s)
    }

    fn check_codes(&self, codes: &[usize]) -> Result<()> {
        let m = self.cfg.codebook.m;
        let n_cb = self.cfg.codebook.n_cb;
        if !codes.len().is_multiple_of(n_cb) {
            return Err(contract!("{} codes do not form whole tokens of {n_cb}", codes.len()));
        }
        if let Some(p) = codes.iter().position(|&c| c >= m) {
            return Err(contract!(
                "code {} at token {}, codebook {} out of range for {m} entries",
                codes[p],
                p / n_cb,
                p % n_cb
            ));
        }
        Ok(())
    }

    /// `[tokens, d]` embeddings: per-codebook slices concatenated in codebook order.
    pub fn token_embed<'t>(&self, tape: &'t Tape<T>, codes: &[usize]) -> Result<Var<'t, T>> {
        self.check_codes(codes)?;
        let cb = self.cfg.codebook;
        let ds = self.cfg.backbone.d / cb.n_cb;
        let n = codes.len() / cb.n_cb;
        let flat: Vec<usize> = codes.iter().enumerate().map(|(i, &c)| (i % cb.n_cb) * cb.m + c).collect();
        tape.param(&self.tok_emb)
            .reshape(&[cb.n_cb * cb.m, ds])?
            .gather_rows(&flat)?
            .reshape(&[n, self.cfg.backbone.d])
    }

    /// Head inputs for `rows` predictions: the backbone state then the
    /// embeddings of the first `n_cb - 1` sub-codes, each plus its head position.
    fn head_inputs<'t>(&self, tape: &'t Tape<T>, states: Var<'t, T>, codes: &[usize]) -> Result<Var<'t, T>> {
        let cb = self.cfg.codebook;
        let d = self.cfg.backbone.d;
        let rows = codes.len() / cb.n_cb;
        let first = states.reshape(&[rows, 1, d])?;
        let seq = if cb.n_cb > 1 {
            let idx: Vec<usize> = (0..rows)
                .flat_map(|r| (0..cb.n_cb - 1).map(move |c| (r, c)))
                .map(|(r, c)| c * cb.m + codes[r * cb.n_cb + c])
                .collect();
            let rest = tape
                .param(&self.head_emb)
                .reshape(&[cb.n_cb * cb.m, d])?
                .gather_rows(&idx)?
                .reshape(&[rows, cb.n_cb - 1, d])?;
            Var::concat(&[first, rest], 1)?
        } else {
            first
        };
        seq.add(tape.param(&self.head_pos))
    }

    /// `[rows, n_cb, d]` head outputs to `[rows, n_cb, classes]` logits.
    fn project<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, first_sub: usize) -> Result<Var<'t, T>> {
        let s = h.shape();
        let (rows, subs) = (s[0], s[1]);
        let w = tape.param(&self.out_w).slice(0, first_sub, subs)?;
        let b = tape.param(&self.out_b).slice(0, first_sub, subs)?;
        let mut y = h.permute(&[1, 0, 2])?.matmul(w)?.add(b)?;
        if let Some(eos) = self.eos() {
            let classes = self.classes();
            let mut mask = vec![T::zero(); subs * classes];
            for c in 0..subs {
                if first_sub + c > 0 {
                    mask[c * classes + eos] = T::neg_infinity();
                }
            }
            y = y.add(tape.constant(&[subs, 1, classes], mask)?)?;
        }
        y.permute(&[1, 0, 2])?.reshape(&[rows, subs, self.classes()])
    }

    /// Teacher-forced logits `[b, T, n_cb, classes]`, where `codes` holds `b`
    /// sequences of `l` tokens and `T = l`, or `l + 1` with end-of-sequence on.
    pub fn forward_logits<'t>(&self, tape: &'t Tape<T>, codes: &[usize], conds: &[GenCondition]) -> Result<Var<'t, T>> {
        let b = conds.len();
        let n_cb = self.cfg.codebook.n_cb;
        let d = self.cfg.backbone.d;
        if b == 0 || !codes.len().is_multiple_of(b * n_cb) || codes.is_empty() {
            return Err(contract!("{} codes for {b} sequences of {n_cb}-code tokens", codes.len()));
        }
        let l = codes.len() / (b * n_cb);
        if l > self.cfg.max_len {
            return Err(contract!("sequence of {l} tokens exceeds the trained maximum {}", self.cfg.max_len));
        }
        let cond = self.condition_embed(tape, conds)?.reshape(&[b, 1, d])?;
        let tok = self.token_embed(tape, codes)?.reshape(&[b, l, d])?;
        let seq = Var::concat(&[cond, tok], 1)?.add(tape.param(&self.pos).slice(0, 0, l + 1)?)?;
        let states = self.backbone.forward(tape, seq)?;
        let steps = if self.cfg.eos_enabled { l + 1 } else { l };
        let states = states.slice(1, 0, steps)?;
        let mut head_codes = Vec::with_capacity(b * steps * n_cb);
        for s in 0..b {
            head_codes.extend_from_slice(&codes[s * l * n_cb..(s + 1) * l * n_cb]);
            if steps > l {
                head_codes.extend(core::iter::repeat_n(0, n_cb));
            }
        }
        let x = self.head_inputs(tape, states, &head_codes)?;
        let h = self.head.forward(tape, x)?;
        self.project(tape, h, 0)?.reshape(&[b, steps, n_cb, self.classes()])
    }

    /// Per-prediction targets matching [`Generator::forward_logits`], with
    /// `None` for positions that carry no loss.
    fn targets(&self, codes: &[usize], b: usize) -> Vec<Option<usize>> {
        let n_cb = self.cfg.codebook.n_cb;
        let l = codes.len() / (b * n_cb);
        let mut out = Vec::new();
        for s in 0..b {
            out.extend(codes[s * l * n_cb..(s + 1) * l * n_cb].iter().map(|&c| Some(c)));
            if let Some(eos) = self.eos() {
                out.push(Some(eos));
                out.extend(core::iter::repeat_n(None, n_cb - 1));
            }
        }
        out
    }

    /// Mean next-sub-code cross-entropy. With `class_drop`, each condition's
    /// class is replaced by the null class with probability `class_dropout_p`.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape<T>,
        codes: &[usize],
        conds: &[GenCondition],
        class_drop: Option<&mut Rng>,
    ) -> Result<Var<'t, T>> {
        let conds: Vec<GenCondition> = match class_drop {
            Some(rng) => conds
                .iter()
                .map(|c| {
                    if rng.random::<f64>() < self.cfg.class_dropout_p {
                        c.unconditional()
                    } else {
                        *c
                    }
                })
                .collect(),
            None => conds.to_vec(),
        };
        let logits = self.forward_logits(tape, codes, &conds)?;
        self.loss_from_logits(logits, codes, conds.len())
    }

    /// Cross-entropy of `[b, T, n_cb, classes]` logits against the targets
    /// implied by `codes`; positions without a target are skipped.
    pub fn loss_from_logits<'t>(&self, logits: Var<'t, T>, codes: &[usize], b: usize) -> Result<Var<'t, T>> {
        let classes = self.classes();
        let targets = self.targets(codes, b);
        let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_some()).collect();
        let flat = logits.reshape(&[targets.len(), classes])?;
        let flat = if rows.len() == targets.len() { flat } else { flat.gather_rows(&rows)? };
        let t: Vec<usize> = rows.iter().map(|&i| targets[i].unwrap_or(0)).collect();
        flat.cross_entropy(&t)
    }

    /// Fraction of sub-codes whose argmax prediction equals the target, per codebook.
    pub fn subcode_accuracy(&self, codes: &[usize], conds: &[GenCondition]) -> Result<Vec<f64>> {
        let tape = Tape::inference();
        let logits = self.forward_logits(&tape, codes, conds)?.to_vec();
        let n_cb = self.cfg.codebook.n_cb;
        let classes = self.classes();
        let targets = self.targets(codes, conds.len());
        let mut hit = vec![0usize; n_cb];
        let mut total = vec![0usize; n_cb];
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let row = &logits[i * classes..(i + 1) * classes];
            let best = argmax(row);
            total[i % n_cb] += 1;
            hit[i % n_cb] += usize::from(best == *t);
        }
        Ok(hit.iter().zip(&total).map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect())
    }

    /// Starts incremental decoding for one row per condition.
    pub fn session(&self, conds: &[GenCondition]) -> Result<Session<'_, T>> {
        if conds.is_empty() {
            return Err(contract!("a session needs at least one condition"));
        }
        for c in conds {
            self.class_row(c)?;
        }
        Ok(Session {
            gen: self,
            conds: conds.to_vec(),
            backbone: self.backbone.new_cache(conds.len()),
            head: self.head.new_cache(conds.len()),
            tokens: 0,
            sub: 0,
            current: vec![Vec::with_capacity(self.cfg.codebook.n_cb); conds.len()],
            logits: None,
        })
    }
}

/// Lowest index among the maxima.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// KV-cached decoding state over a batch of conditions.
pub struct Session<'g, T: Scalar> {
    gen: &'g Generator<T>,
    conds: Vec<GenCondition>,
    backbone: KvCache<T>,
    head: KvCache<T>,
    tokens: usize,
    sub: usize,
    current: Vec<Vec<usize>>,
    logits: Option<Vec<T>>,
}

impl<T: Scalar> Session<'_, T> {
    /// Completed tokens.
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Sub-code position the next logits refer to.
    pub fn sub(&self) -> usize {
        self.sub
    }

    /// `[rows, classes]` logits of the next sub-code.
    pub fn logits(&mut self) -> Result<&[T]> {
        if self.logits.is_none() {
            self.logits = Some(self.advance()?);
        }
        Ok(self.logits.as_deref().unwrap_or(&[]))
    }

    fn advance(&mut self) -> Result<Vec<T>> {
        let g = self.gen;
        let d = g.cfg.backbone.d;
        let rows = self.conds.len();
        let tape = Tape::inference();
        let head_in = if self.sub == 0 {
            if self.tokens > g.cfg.max_len {
                return Err(contract!("sequence exceeds the trained maximum {}", g.cfg.max_len));
            }
            let x = if self.tokens == 0 {
                g.condition_embed(&tape, &self.conds)?
            } else {
                let codes: Vec<usize> = self.current.iter().flatten().copied().collect();
                g.token_embed(&tape, &codes)?
            };
            let x = x.add(tape.param(&g.pos).slice(0, self.tokens, 1)?)?.reshape(&[rows, 1, d])?;
            let state = g.backbone.step(&tape, &mut self.backbone, x)?;
            self.head = g.head.new_cache(rows);
            for r in &mut self.current {
                r.clear();
            }
            state.add(tape.param(&g.head_pos).slice(0, 0, 1)?)?
        } else {
            let c = self.sub - 1;
            let m = g.cfg.codebook.m;
            let idx: Vec<usize> = self.current.iter().map(|r| c * m + r[c]).collect();
            tape.param(&g.head_emb)
                .reshape(&[g.cfg.codebook.n_cb * m, d])?
                .gather_rows(&idx)?
                .add(tape.param(&g.head_pos).slice(0, self.sub, 1)?)?
                .reshape(&[rows, 1, d])?
        };
        let h = g.head.step(&tape, &mut self.head, head_in)?;
        Ok(g.project(&tape, h, self.sub)?.to_vec())
    }

    /// Commits one sub-code per row.
    pub fn push(&mut self, codes: &[usize]) -> Result<()> {
        if codes.len() != self.conds.len() {
            return Err(Error::Shape {
                op: "push",
                lhs: vec![self.conds.len()],
                rhs: vec![codes.len()],
            });
        }
        if let Some(&c) = codes.iter().find(|&&c| c >= self.gen.cfg.codebook.m) {
            return Err(contract!("code {c} out of range for {} entries", self.gen.cfg.codebook.m));
        }
        if self.logits.is_none() {
            self.logits = Some(self.advance()?);
        }
        for (r, &c) in self.current.iter_mut().zip(codes) {
            r.push(c);
        }
        self.logits = None;
        self.sub += 1;
        if self.sub == self.gen.cfg.codebook.n_cb {
            self.sub = 0;
            self.tokens += 1;
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.class_emb);
        self.size_fc1.visit(f);
        self.size_fc2.visit(f);
        f(&self.tok_emb);
        f(&self.pos);
        self.backbone.visit(f);
        f(&self.head_emb);
        f(&self.head_pos);
        self.head.visit(f);
        f(&self.out_w);
        f(&self.out_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.class_emb);
        self.size_fc1.visit_mut(f);
        self.size_fc2.visit_mut(f);
        f(&mut self.tok_emb);
        f(&mut self.pos);
        self.backbone.visit_mut(f);
        f(&mut self.head_emb);
        f(&mut self.head_pos);
        self.head.visit_mut(f);
        f(&mut self.out_w);
        f(&mut self.out_b);
    }
}

/// Parameter prefix check used by checkpoint loaders.
pub fn is_generator_param(name: &str) -> bool {
    name.starts_with("gpt/") || name.starts_with("head/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlockConfig, CodebookConfig};
    use crate::numerics::grad_check_module;
    use crate::seeded_rng;

    fn small(eos: bool) -> GenConfig {
        GenConfig {
            backbone: BlockConfig {
                d: 16,
                heads: 2,
                mlp_ratio: 2,
                layers: 1,
                qk_norm: true,
                causal: true,
                dropout_p: 0.0,
            },
            head_layers: 1,
            codebook: CodebookConfig { n_cb: 4, m: 8, d_sub: 2 },
            num_classes: 3,
            max_len: 6,
            l_train: vec![4],
            class_dropout_p: 0.1,
            eos_enabled: eos,
            beta: 1536.0,
        }
    }

    fn random_codes(rng: &mut Rng, n: usize, m: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..m)).collect()
    }

    #[test]
    fn condition_embedding_cases() {
        let g = Generator::<f64>::new(small(false), &mut seeded_rng(1)).unwrap();
        let t = Tape::inference();
        let a = g.condition_embed(&t, &[GenCondition::new(Some(0), 1536, 1536)]).unwrap().to_vec();
        let mlp = {
            let s = t.constant(&[1, 2], vec![1.0, 1.0]).unwrap();
            g.size_fc2.forward(&t, g.size_fc1.forward(&t, s).unwrap().gelu()).unwrap().to_vec()
        };
        for i in 0..16 {
            assert_eq!(a[i], g.class_emb.value()[i] + mlp[i]);
        }
        let b = g.condition_embed(&t, &[GenCondition::new(Some(0), 256, 512)]).unwrap().to_vec();
        assert_ne!(a, b);
        let null = g.condition_embed(&t, &[GenCondition::new(None, 1536, 1536)]).unwrap().to_vec();
        for i in 0..16 {
            assert_eq!(null[i], g.class_emb.value()[3 * 16 + i] + mlp[i]);
        }
        assert!(g.condition_embed(&t, &[GenCondition::new(Some(3), 8, 8)]).is_err());
    }

    #[test]
    fn token_embedding_slices_follow_codebooks() {
        let mut cfg = small(false);
        cfg.backbone.d = 64;
        cfg.backbone.heads = 4;
        cfg.codebook = CodebookConfig { n_cb: 8, m: 8, d_sub: 2 };
        let g = Generator::<f32>::new(cfg, &mut seeded_rng(2)).unwrap();
        let t = Tape::inference();
        let base = [1, 2, 3, 4, 5, 6, 7, 0];
        let mut changed = base;
        changed[3] = 6;
        let a = g.token_embed(&t, &base).unwrap().to_vec();
        let b = g.token_embed(&t, &changed).unwrap().to_vec();
        for ch in 0..64 {
            assert_eq!(a[ch] != b[ch], (24..32).contains(&ch), "channel {ch}");
        }
        let zeros = g.token_embed(&t, &[0; 8]).unwrap().to_vec();
        let tab = g.tok_emb.value();
        for c in 0..8 {
            assert_eq!(&zeros[c * 8..(c + 1) * 8], &tab[c * 64..c * 64 + 8]);
        }
        assert!(g.token_embed(&t, &[8, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn logits_respect_token_and_subcode_causality() {
        let mut rng = seeded_rng(3);
        let g = Generator::<f64>::new(small(false), &mut rng).unwrap();
        let cond = [GenCondition::new(Some(1), 64, 48)];
        let codes = random_codes(&mut rng, 4 * 4, 8);
        let t = Tape::inference();
        let base = g.forward_logits(&t, &codes, &cond).unwrap().to_vec();
        let per = 4 * 8;
        for tok in 0..4 {
            for c in 0..4 {
                let mut p = codes.clone();
                p[tok * 4 + c] = (p[tok * 4 + c] + 3) % 8;
                let out = g.forward_logits(&t, &p, &cond).unwrap().to_vec();
                for t2 in 0..4 {
                    for c2 in 0..4 {
                        let at = (t2 * per) + c2 * 8;
                        let same = out[at..at + 8] == base[at..at + 8];
                        let may_change = t2 > tok || (t2 == tok && c2 > c);
                        if !may_change {
                            assert!(same, "codes[{tok}][{c}] leaked into logits[{t2}][{c2}]");
                        } else {
                            assert!(!same, "codes[{tok}][{c}] should reach logits[{t2}][{c2}]");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let mut rng = seeded_rng(4);
        let mut cfg = GenConfig::micro();
        cfg.backbone.dropout_p = 0.0;
        let g = Generator::<f32>::new(cfg, &mut rng).unwrap();
        let codes = random_codes(&mut rng, 2 * 16 * 8, 64);
        let conds = [GenCondition::new(Some(0), 32, 32), GenCondition::new(Some(5), 64, 32)];
        let t = Tape::inference();
        let l = g.loss(&t, &codes, &conds, None).unwrap().item() as f64;
        let ln64 = 64f64.ln();
        assert!((l - ln64).abs() < 0.1 * ln64, "{l}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for eos in [false, true] {
            let mut rng = seeded_rng(5);
            let mut g = Generator::<f64>::new(small(eos), &mut rng).unwrap();
            g.visit_mut(&mut |p| {
                let noise: Vec<f64> = trunc_normal(&mut rng, p.len(), 0.2);
                p.value_mut().iter_mut().zip(noise).for_each(|(v, e)| *v += e);
            });
            let codes = random_codes(&mut rng, 2 * 3 * 4, 8);
            let conds = [GenCondition::new(Some(2), 40, 24), GenCondition::new(None, 16, 16)];
            let report = grad_check_module(&mut g, |m, t| m.loss(t, &codes, &conds, None), 1e-5, 5, &mut rng).unwrap();
            assert!(report.max_rel_error <= 1e-4, "eos={eos} {report:?}");
        }
    }

    #[test]
    fn one_hot_logits_drive_loss_to_zero() {
        for eos in [false, true] {
            let g = Generator::<f64>::new(small(eos), &mut seeded_rng(9)).unwrap();
            let codes = random_codes(&mut seeded_rng(10), 2 * 3 * 4, 8);
            let targets = g.targets(&codes, 2);
            let classes = g.classes();
            let mut v = vec![-1e3; targets.len() * classes];
            for (i, t) in targets.iter().enumerate() {
                v[i * classes + t.unwrap_or(0)] = 1e3;
            }
            let t = Tape::new();
            let steps = targets.len() / 8;
            let logits = t.constant(&[2, steps, 4, classes], v).unwrap();
            assert!(g.loss_from_logits(logits, &codes, 2).unwrap().item() < 1e-12);
        }
    }

    #[test]
    fn cached_session_reproduces_teacher_forcing() {
        for eos in [false, true] {
            let mut rng = seeded_rng(6);
            let g = Generator::<f64>::new(small(eos), &mut rng).unwrap();
            let cond = [GenCondition::new(Some(1), 96, 64)];
            let codes = random_codes(&mut rng, 5 * 4, 8);
            let t = Tape::inference();
            let full = g.forward_logits(&t, &codes, &cond).unwrap().to_vec();
            let classes = g.classes();
            let mut s = g.session(&cond).unwrap();
            for tok in 0..5 {
                for c in 0..4 {
                    let step = s.logits().unwrap().to_vec();
                    let at = (tok * 4 + c) * classes;
                    for j in 0..classes {
                        let (a, b) = (step[j], full[at + j]);
                        assert!(a == b || (a - b).abs() <= 1e-9, "token {tok} sub {c}");
                    }
                    s.push(&[codes[tok * 4 + c]]).unwrap();
                }
            }
            if eos {
                let step = s.logits().unwrap().to_vec();
                assert_eq!(step, full[5 * 4 * classes..5 * 4 * classes + classes].to_vec());
                assert!(step[8].is_finite());
            }
        }
    }

    #[test]
    fn eos_column_only_on_the_first_codebook() {
        let g = Generator::<f32>::new(small(true), &mut seeded_rng(7)).unwrap();
        let t = Tape::inference();
        let codes = vec![1; 2 * 4];
        let logits = g.forward_logits(&t, &codes, &[GenCondition::new(Some(0), 8, 8)]).unwrap();
        assert_eq!(logits.shape(), vec![1, 3, 4, 9]);
        let v = logits.to_vec();
        for row in 0..12 {
            assert_eq!(v[row * 9 + 8].is_finite(), row % 4 == 0);
        }
    }

    #[test]
    fn over_long_sequences_are_rejected() {
        let g = Generator::<f32>::new(small(false), &mut seeded_rng(8)).unwrap();
        let t = Tape::inference();
        assert!(g.forward_logits(&t, &vec![0; 7 * 4], &[GenCondition::new(None, 8, 8)]).is_err());
    }
}
