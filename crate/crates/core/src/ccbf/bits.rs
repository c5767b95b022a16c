/// Fixed-length bit array packed into 64-bit words, LSB-first.
///
/// Bit `p` lives in word `p / 64` at bit `p % 64`; serialized little-endian,
/// which puts it in byte `p / 8` at bit `p % 8`. Bits past `len` in the last
/// word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitArray {
    words: Vec<u64>,
    len: usize,
}

impl BitArray {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, p: usize) -> bool {
        debug_assert!(p < self.len);
        self.words[p >> 6] >> (p & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, p: usize) {
        debug_assert!(p < self.len);
        self.words[p >> 6] |= 1 << (p & 63);
    }

    #[inline]
    pub fn clear(&mut self, p: usize) {
        debug_assert!(p < self.len);
        self.words[p >> 6] &= !(1 << (p & 63));
    }

    #[inline]
    pub fn assign(&mut self, p: usize, value: bool) {
        if value {
            self.set(p)
        } else {
            self.clear(p)
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    pub fn or_assign(&mut self, other: &BitArray) {
        assert_eq!(self.len, other.len, "bit array length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn and_not_assign(&mut self, other: &BitArray) {
        assert_eq!(self.len, other.len, "bit array length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn byte_len(&self) -> usize {
        self.len.div_ceil(8)
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        let n = self.byte_len();
        let start = out.len();
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(start + n);
    }

    /// Inverse of [`write_bytes`](Self::write_bytes). Returns `None` if any
    /// padding bit past `len` is set.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Option<Self> {
        debug_assert_eq!(bytes.len(), len.div_ceil(8));
        let mut arr = Self::zeros(len);
        for (wi, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            arr.words[wi] = u64::from_le_bytes(buf);
        }
        let tail = len % 64;
        if tail != 0 {
            let last = *arr.words.last().unwrap();
            if last >> tail != 0 {
                return None;
            }
        }
        Some(arr)
    }
}

impl std::fmt::Debug for BitArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitArray[{}; ones={}]", self.len, self.count_ones())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_lsb_first() {
        let mut a = BitArray::zeros(12);
        a.set(0);
        a.set(9);
        let mut out = Vec::new();
        a.write_bytes(&mut out);
        assert_eq!(out, vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(BitArray::from_bytes(12, &out).unwrap(), a);
    }

    #[test]
    fn padding_bits_rejected() {
        assert!(BitArray::from_bytes(12, &[0, 0b0001_0000]).is_none());
    }

    #[test]
    fn iter_ones_matches_get() {
        let mut a = BitArray::zeros(200);
        for p in [0, 63, 64, 130, 199] {
            a.set(p);
        }
        assert_eq!(a.iter_ones().collect::<Vec<_>>(), vec![0, 63, 64, 130, 199]);
        assert_eq!(a.count_ones(), 5);
    }
}
