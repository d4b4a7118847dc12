//! Binary codes, relaxed codes, and Hamming-ball machinery.
//!
//! A `BinaryCode` is a b-bit vector packed into `u64` words, low word
//! first, bit k stored in word `k / 64` at position `k % 64`. Bit value
//! 1 corresponds to code value +1 and bit value 0 to -1, so for two
//! codes mapped to {-1,+1}^b the squared Euclidean distance is exactly
//! `4 * hamming_distance`.
//!
//! The on-disk format (`write_codes` / `read_codes`) is:
//!
//! ```text
//! magic "HBC1" | u32 LE bits | u64 LE count | count * ceil(bits/64) u64 LE words
//! ```
//!
//! Tail bits past `bits` in the last word are zero, both in memory and
//! on disk; readers reject files that violate this so equal codes have
//! equal bytes.

use crate::error::{Error, Result};
use crate::scalar::Real;
use itertools::Itertools;
use std::io::{Read, Write};
use std::path::Path;

/// Longest supported code. Keeps `ball_size` within `u64` for every
/// radius the library is specified for and bounds bucket enumeration.
pub const MAX_BITS: usize = 4096;

/// Tolerance for relaxed-code entries: |z_k| may exceed 1 by at most
/// this much before construction fails.
pub const RELAXED_TOL: f64 = 1e-9;

const MAGIC: &[u8; 4] = b"HBC1";

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BinaryCode {
    len: usize,
    words: Vec<u64>,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 || len > MAX_BITS {
        return Err(Error::InvalidArgument(format!(
            "code length must be in 1..={MAX_BITS}, got {len}"
        )));
    }
    Ok(())
}

/// Mask of the valid bits in the final word, all ones if the length is
/// a multiple of 64.
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BinaryCode {
    /// All-zero code, i.e. every position at -1.
    pub fn zeros(len: usize) -> Result<Self> {
        check_len(len)?;
        Ok(BinaryCode {
            len,
            words: vec![0; words_for(len)],
        })
    }

    pub fn from_bools(bits: &[bool]) -> Result<Self> {
        let mut code = BinaryCode::zeros(bits.len())?;
        for (k, &b) in bits.iter().enumerate() {
            if b {
                code.words[k / 64] |= 1u64 << (k % 64);
            }
        }
        Ok(code)
    }

    /// Builds from pre-packed words. The word count must match the
    /// length and tail bits must be zero.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        check_len(len)?;
        if words.len() != words_for(len) {
            return Err(Error::InvalidArgument(format!(
                "expected {} words for {len} bits, got {}",
                words_for(len),
                words.len()
            )));
        }
        if *words.last().expect("len >= 1 implies a word") & !tail_mask(len) != 0 {
            return Err(Error::InvalidArgument(
                "nonzero padding bits past code length".into(),
            ));
        }
        Ok(BinaryCode { len, words })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Bit k as a bool. Panics if `k >= len`.
    pub fn bit(&self, k: usize) -> bool {
        assert!(k < self.len, "bit {k} out of range for {} bits", self.len);
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, k: usize, value: bool) {
        assert!(k < self.len, "bit {k} out of range for {} bits", self.len);
        if value {
            self.words[k / 64] |= 1u64 << (k % 64);
        } else {
            self.words[k / 64] &= !(1u64 << (k % 64));
        }
    }

    /// Copy with bit k flipped.
    pub fn flipped(&self, k: usize) -> Self {
        assert!(k < self.len, "bit {k} out of range for {} bits", self.len);
        let mut out = self.clone();
        out.words[k / 64] ^= 1u64 << (k % 64);
        out
    }

    /// Bitwise complement; at distance `len` from `self`.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        *words.last_mut().expect("len >= 1") &= tail_mask(self.len);
        BinaryCode {
            len: self.len,
            words,
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|k| self.bit(k)).collect()
    }

    /// The {-1,+1} embedding: bit 1 maps to +1, bit 0 to -1.
    pub fn to_signs<T: Real>(&self) -> Vec<T> {
        (0..self.len)
            .map(|k| if self.bit(k) { T::one() } else { -T::one() })
            .collect()
    }
}

/// Hamming distance via XOR + popcount per word. Errors if the codes
/// have different lengths.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Number of codes within Hamming radius `radius` of any b-bit center:
/// sum of C(bits, k) for k in 0..=radius. Overflow past u64 is an
/// explicit error, never a wrapped value.
pub fn ball_size(bits: usize, radius: usize) -> Result<u64> {
    if radius > bits {
        return Err(Error::RadiusTooLarge { radius, bits });
    }
    let overflow = || Error::BallSizeOverflow { bits, radius };
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 0..=radius {
        if k > 0 {
            // C(b,k) = C(b,k-1) * (b-k+1) / k, exact at every step.
            binom = binom
                .checked_mul((bits - k + 1) as u128)
                .ok_or_else(overflow)?
                / k as u128;
        }
        total = total.checked_add(binom).ok_or_else(overflow)?;
    }
    u64::try_from(total).map_err(|_| overflow())
}

/// Enumerates every code within `radius` of `center`, ordered by flip
/// count and then lexicographically by flip positions. Yields exactly
/// `ball_size(center.len(), radius)` codes, starting with `center`.
pub fn enumerate_ball(
    center: &BinaryCode,
    radius: usize,
) -> Result<impl Iterator<Item = BinaryCode> + '_> {
    if radius > center.len {
        return Err(Error::RadiusTooLarge {
            radius,
            bits: center.len,
        });
    }
    let bits = center.len;
    Ok((0..=radius).flat_map(move |k| {
        (0..bits).combinations(k).map(move |flips| {
            let mut code = center.clone();
            for f in flips {
                code.words[f / 64] ^= 1u64 << (f % 64);
            }
            code
        })
    }))
}

/// Relaxed code: a point of [-1,1]^b, the continuous surrogate a hash
/// network emits before thresholding. Entries are validated to be
/// finite and within `RELAXED_TOL` of the box, then clamped onto it.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedCode<T: Real> {
    z: Vec<T>,
}

impl<T: Real> RelaxedCode<T> {
    pub fn new(z: Vec<T>) -> Result<Self> {
        check_len(z.len())?;
        let tol = T::c(RELAXED_TOL);
        let one = T::one();
        for (k, &v) in z.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "relaxed code".into(),
                    detail: format!("entry {k} is {v}"),
                });
            }
            if v.abs() > one + tol {
                return Err(Error::InvalidArgument(format!(
                    "relaxed code entry {k} = {v} outside [-1,1]"
                )));
            }
        }
        let z = z
            .into_iter()
            .map(|v| v.min(one).max(-one))
            .collect();
        Ok(RelaxedCode { z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[T] {
        &self.z
    }

    /// sgn thresholding with the convention sgn(0) = -1: bit k is 1
    /// exactly when z_k > 0.
    pub fn sign_threshold(&self) -> BinaryCode {
        let mut code = BinaryCode::zeros(self.z.len()).expect("validated length");
        for (k, &v) in self.z.iter().enumerate() {
            if v > T::zero() {
                code.words[k / 64] |= 1u64 << (k % 64);
            }
        }
        code
    }
}

/// Writes a same-length collection in the HBC1 layout. An empty
/// collection is stored with bits = 0.
pub fn write_codes<W: Write>(w: &mut W, codes: &[BinaryCode]) -> Result<()> {
    let bits = codes.first().map_or(0, |c| c.len);
    for c in codes {
        if c.len != bits {
            return Err(Error::LengthMismatch {
                left: bits,
                right: c.len,
            });
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&(bits as u32).to_le_bytes())?;
    w.write_all(&(codes.len() as u64).to_le_bytes())?;
    for c in codes {
        for word in &c.words {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Parse {
                offset,
                what: format!("truncated {what}"),
            }
        } else {
            Error::Io(e)
        }
    })
}

pub fn read_codes<R: Read>(r: &mut R) -> Result<Vec<BinaryCode>> {
    let mut magic = [0u8; 4];
    read_exact_at(r, &mut magic, 0, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let mut u32buf = [0u8; 4];
    read_exact_at(r, &mut u32buf, 4, "bit count")?;
    let bits = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    read_exact_at(r, &mut u64buf, 8, "code count")?;
    let count = u64::from_le_bytes(u64buf) as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Parse {
            offset: 4,
            what: format!("bit count {bits} outside 1..={MAX_BITS}"),
        });
    }
    let wpc = words_for(bits);
    let mut codes = Vec::with_capacity(count);
    let mut word_buf = vec![0u8; wpc * 8];
    for i in 0..count {
        let offset = 16 + (i as u64) * (wpc as u64) * 8;
        read_exact_at(r, &mut word_buf, offset, "code words")?;
        let words: Vec<u64> = word_buf
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if words[wpc - 1] & !tail_mask(bits) != 0 {
            return Err(Error::Parse {
                offset: offset + (wpc as u64 - 1) * 8,
                what: "nonzero padding bits past code length".into(),
            });
        }
        codes.push(BinaryCode { len: bits, words });
    }
    Ok(codes)
}

pub fn save_codes<P: AsRef<Path>>(path: P, codes: &[BinaryCode]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_codes(&mut w, codes)?;
    w.flush()?;
    Ok(())
}

pub fn load_codes<P: AsRef<Path>>(path: P) -> Result<Vec<BinaryCode>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_codes(&mut r)
}
