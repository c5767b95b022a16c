//! Little-endian wire format:
//!
//! ```text
//! "CCBF" | version u8 | m u32 | g u8 | k u8 | n u32 | hash_seed u64
//!        | matrix_seed u64 | item_count u32
//!        | barr_0 .. barr_{g-1} | orBarr        (each ceil(m/8) bytes, LSB-first)
//! ```
//!
//! The aggregate array is transmitted rather than recomputed so a receiver
//! can check it against the stacked arrays.

use super::{BitArray, Ccbf, CcbfParams, ParamsError};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CCBF";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 1 + 1 + 4 + 8 + 8 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("unsupported wire version {0} (expected {WIRE_VERSION})")]
    VersionMismatch(u8),
    #[error("header parameters invalid: {0}")]
    Params(#[from] ParamsError),
    #[error("integrity check failed: {0}")]
    Inconsistent(String),
}

impl Ccbf {
    /// Exact encoded size for a filter with these parameters.
    pub fn wire_len(params: &CcbfParams) -> usize {
        HEADER_LEN + (params.g as usize + 1) * (params.m as usize).div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.params();
        let mut out = Vec::with_capacity(Self::wire_len(p));
        out.extend_from_slice(MAGIC);
        out.push(WIRE_VERSION);
        out.extend_from_slice(&p.m.to_le_bytes());
        out.push(p.g);
        out.push(p.k);
        out.extend_from_slice(&p.n.to_le_bytes());
        out.extend_from_slice(&p.hash_seed.to_le_bytes());
        out.extend_from_slice(&p.matrix_seed.to_le_bytes());
        out.extend_from_slice(&self.item_count().to_le_bytes());
        for level in self.levels() {
            level.write_bytes(&mut out);
        }
        self.or_bits().write_bytes(&mut out);
        out
    }

    /// Decodes and validates a filter. The aggregate array must equal the OR
    /// of the stacked arrays.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 5 {
            return Err(WireError::MalformedHeader(format!(
                "{} bytes is shorter than magic and version",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(WireError::MalformedHeader("bad magic".into()));
        }
        if bytes[4] != WIRE_VERSION {
            return Err(WireError::VersionMismatch(bytes[4]));
        }
        if bytes.len() < HEADER_LEN {
            return Err(WireError::MalformedHeader(format!(
                "header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let mut r = Reader { bytes, pos: 5 };
        let params = CcbfParams {
            m: r.u32(),
            g: r.u8(),
            k: r.u8(),
            n: r.u32(),
            hash_seed: r.u64(),
            matrix_seed: r.u64(),
        };
        let item_count = r.u32();
        params.validate()?;
        if item_count > params.n {
            return Err(WireError::Inconsistent(format!(
                "item count {item_count} exceeds capacity {}",
                params.n
            )));
        }
        let expected = Ccbf::wire_len(&params);
        if bytes.len() < expected {
            return Err(WireError::TruncatedPayload {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(WireError::MalformedHeader(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        let m = params.m as usize;
        let chunk = m.div_ceil(8);
        let mut arrays = Vec::with_capacity(params.g as usize + 1);
        for i in 0..=params.g as usize {
            let start = HEADER_LEN + i * chunk;
            let arr = BitArray::from_bytes(m, &bytes[start..start + chunk])
                .ok_or_else(|| WireError::Inconsistent(format!("array {i} has bits set past m")))?;
            arrays.push(arr);
        }
        let or_bits = arrays.pop().unwrap();
        let mut recomputed = BitArray::zeros(m);
        for level in &arrays {
            recomputed.or_assign(level);
        }
        if recomputed != or_bits {
            return Err(WireError::Inconsistent(
                "aggregate array differs from OR of stacked arrays".into(),
            ));
        }
        Ok(Ccbf::from_parts(params, arrays, or_bits, item_count))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}
