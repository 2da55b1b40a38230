//! Discrete token sequences and their `VTOK` byte layout.
//!
//! Layout (little-endian): `"VTOK"`, version `u16`, `H_in u32`, `W_in u32`,
//! `k u16`, `L u16`, `n_cb u8`, index width `u8` (16), then `L * n_cb` indices
//! as `u16`, token-major and codebook-minor.

use alloc::vec::Vec;

use crate::error::{contract, Error, Result};

pub const TOKEN_MAGIC: [u8; 4] = *b"VTOK";
pub const TOKEN_VERSION: u16 = 1;
const INDEX_BITS: u8 = 16;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 2 + 1 + 1;

/// `L` tokens of `n_cb` sub-codes plus the geometry they were encoded from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    /// Source image height in pixels.
    pub height: u32,
    pub width: u32,
    /// Patch size of the encoding lattice.
    pub k: u16,
    pub n_cb: u8,
    /// Entries per codebook.
    pub m: u32,
    codes: Vec<u16>,
}

impl TokenSeq {
    pub fn new(height: u32, width: u32, k: u16, n_cb: u8, m: u32, codes: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 || k == 0 {
            return Err(contract!("token header needs positive extents and patch size"));
        }
        if n_cb == 0 || !codes.len().is_multiple_of(n_cb as usize) || codes.is_empty() {
            return Err(contract!("{} codes do not form whole tokens of {n_cb}", codes.len()));
        }
        if codes.len() / n_cb as usize > u16::MAX as usize {
            return Err(contract!("too many tokens: {}", codes.len() / n_cb as usize));
        }
        if m == 0 || m > 1 << 16 {
            return Err(contract!("codebook size {m} not representable in 16-bit indices"));
        }
        if let Some(pos) = codes.iter().position(|&c| c as u32 >= m) {
            return Err(contract!(
                "code {} at token {}, codebook {} out of range for {m} entries",
                codes[pos],
                pos / n_cb as usize,
                pos % n_cb as usize
            ));
        }
        Ok(TokenSeq { height, width, k, n_cb, m, codes })
    }

    /// Builds from `usize` indices as produced by the quantizer.
    pub fn from_indices(height: usize, width: usize, k: usize, n_cb: usize, m: usize, indices: &[usize]) -> Result<Self> {
        let narrow = |v: usize, what: &str, max: usize| {
            if v > max {
                Err(contract!("{what} {v} exceeds {max}"))
            } else {
                Ok(v)
            }
        };
        let codes = indices
            .iter()
            .map(|&i| narrow(i, "code", u16::MAX as usize).map(|v| v as u16))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            narrow(height, "height", u32::MAX as usize)? as u32,
            narrow(width, "width", u32::MAX as usize)? as u32,
            narrow(k, "patch size", u16::MAX as usize)? as u16,
            narrow(n_cb, "codebook count", u8::MAX as usize)? as u8,
            narrow(m, "codebook size", 1 << 16)? as u32,
            codes,
        )
    }

    /// Token count `L`.
    pub fn len(&self) -> usize {
        self.codes.len() / self.n_cb as usize
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn indices(&self) -> Vec<usize> {
        self.codes.iter().map(|&c| c as usize).collect()
    }

    pub fn code(&self, token: usize, codebook: usize) -> u16 {
        self.codes[token * self.n_cb as usize + codebook]
    }

    /// The first `l` tokens.
    pub fn prefix(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.len() {
            return Err(contract!("prefix of {l} tokens from a sequence of {}", self.len()));
        }
        let mut out = self.clone();
        out.codes.truncate(l * self.n_cb as usize);
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 2 * self.codes.len());
        out.extend_from_slice(&TOKEN_MAGIC);
        out.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&(self.len() as u16).to_le_bytes());
        out.push(self.n_cb);
        out.push(INDEX_BITS);
        for c in &self.codes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses a `VTOK` stream whose codebooks hold `m` entries each.
    pub fn from_bytes(bytes: &[u8], m: u32) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(alloc::format!(
                "token stream truncated: {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if bytes[..4] != TOKEN_MAGIC {
            return Err(Error::Format(alloc::format!("bad token magic {:?}", &bytes[..4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let version = u16_at(4);
        if version != TOKEN_VERSION {
            return Err(Error::Format(alloc::format!("unsupported token version {version}")));
        }
        let (height, width, k, l) = (u32_at(6), u32_at(10), u16_at(14), u16_at(16));
        let (n_cb, bits) = (bytes[18], bytes[19]);
        if bits != INDEX_BITS {
            return Err(Error::Format(alloc::format!("unsupported index width {bits}")));
        }
        let count = l as usize * n_cb as usize;
        let want = HEADER_LEN + 2 * count;
        if bytes.len() != want {
            return Err(Error::Format(alloc::format!(
                "token stream has {} bytes, header implies {want}",
                bytes.len()
            )));
        }
        let codes: Vec<u16> = (0..count).map(|i| u16_at(HEADER_LEN + 2 * i)).collect();
        TokenSeq::new(height, width, k, n_cb, m, codes).map_err(|e| match e {
            Error::Contract(msg) => Error::Format(msg),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> TokenSeq {
        TokenSeq::new(33, 48, 16, 2, 64, vec![0, 63, 5, 7, 1, 2]).unwrap()
    }

    #[test]
    fn byte_layout_is_exact() {
        let b = sample().to_bytes();
        let mut want = b"VTOK".to_vec();
        want.extend_from_slice(&[1, 0, 33, 0, 0, 0, 48, 0, 0, 0, 16, 0, 3, 0, 2, 16]);
        want.extend_from_slice(&[0, 0, 63, 0, 5, 0, 7, 0, 1, 0, 2, 0]);
        assert_eq!(b, want);
        assert_eq!(TokenSeq::from_bytes(&b, 64).unwrap(), sample());
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(TokenSeq::from_bytes(&bad, 64), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(TokenSeq::from_bytes(&bad, 64), Err(Error::Format(_))));
        assert!(matches!(TokenSeq::from_bytes(&b[..b.len() - 1], 64), Err(Error::Format(_))));
        assert!(matches!(TokenSeq::from_bytes(&b[..10], 64), Err(Error::Format(_))));
        let err = TokenSeq::from_bytes(&b, 32).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("token 0, codebook 1")));
    }

    #[test]
    fn accessors_and_prefix() {
        let s = sample();
        assert_eq!(s.len(), 3);
        assert_eq!(s.code(1, 1), 7);
        assert_eq!(s.prefix(2).unwrap().codes(), &[0, 63, 5, 7]);
        assert!(s.prefix(4).is_err());
        assert!(TokenSeq::new(1, 1, 1, 2, 64, vec![1]).is_err());
        assert!(TokenSeq::from_indices(1, 1, 1, 1, 70_000, &[0]).is_err());
    }
}
