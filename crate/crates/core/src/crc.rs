//! CRC-32 arithmetic behind tile signatures.
//!
//! Everything here uses the CRC-32/ISO-HDLC convention: reflected input and
//! output, an all-ones initial register and an all-ones final XOR, generator
//! polynomial `0x04C11DB7` (`0xEDB88320` reflected). Three forms are provided:
//!
//! - [`crc32_bitwise`], the bit-at-a-time reference definition;
//! - [`crc32_sliced`], table driven, consuming 1, 4 or 8 bytes per step;
//! - the compositional operators [`crc_shift`], [`crc_concat`] and
//!   [`crc_splice`], which combine checksums of separately hashed pieces
//!   without touching the underlying bytes again.
//!
//! The compositional operators rely on the raw CRC (zero initial register,
//! zero final XOR) being linear over GF(2), and on appending `n` zero bytes
//! being multiplication by `x^(8n)` modulo the generator polynomial.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

/// Reflected CRC-32 generator polynomial.
pub const POLY_REFLECTED: u32 = 0xEDB8_8320;

/// Checksum of the empty message; doubles as the signature of an empty tile.
pub const EMPTY_CRC: CrcValue = CrcValue(0);

/// A finished CRC-32/ISO-HDLC checksum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrcValue(pub u32);

/// A raw CRC register value: zero initial register, no final XOR.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RawCrcValue(pub u32);

impl fmt::Display for CrcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

impl fmt::LowerHex for CrcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrcError {
    #[error("unsupported slice count {0} (expected 1, 4 or 8)")]
    UnsupportedSliceCount(usize),
    #[error("splice blocks differ in length: old {old} bytes, new {new} bytes")]
    LengthMismatch { old: usize, new: usize },
}

#[inline]
fn step_bit(reg: u32) -> u32 {
    if reg & 1 != 0 {
        (reg >> 1) ^ POLY_REFLECTED
    } else {
        reg >> 1
    }
}

/// Feeds `data` through the register one bit at a time.
pub fn bitwise_update(mut reg: u32, data: &[u8]) -> u32 {
    for &byte in data {
        reg ^= u32::from(byte);
        for _ in 0..8 {
            reg = step_bit(reg);
        }
    }
    reg
}

/// Reference CRC-32 of `data`.
pub fn crc32_bitwise(data: &[u8]) -> CrcValue {
    CrcValue(!bitwise_update(!0, data))
}

/// Raw (linear) CRC of `data`.
pub fn raw_crc32(data: &[u8]) -> RawCrcValue {
    RawCrcValue(bitwise_update(0, data))
}

/// Slice-by-N lookup tables.
#[derive(Clone, PartialEq, Eq)]
pub struct CrcTables {
    slices: Vec<[u32; 256]>,
}

impl fmt::Debug for CrcTables {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CrcTables")
            .field("slice_count", &self.slices.len())
            .finish()
    }
}

/// Builds slice tables for `slice_count` bytes per step (1, 4 or 8).
pub fn build_tables(slice_count: usize) -> Result<CrcTables, CrcError> {
    if !matches!(slice_count, 1 | 4 | 8) {
        return Err(CrcError::UnsupportedSliceCount(slice_count));
    }
    let mut slices = vec![[0u32; 256]; slice_count];
    for b in 0..256u32 {
        let mut reg = b;
        for _ in 0..8 {
            reg = step_bit(reg);
        }
        slices[0][b as usize] = reg;
    }
    for k in 1..slice_count {
        for b in 0..256 {
            let prev = slices[k - 1][b];
            slices[k][b] = (prev >> 8) ^ slices[0][(prev & 0xff) as usize];
        }
    }
    Ok(CrcTables { slices })
}

impl CrcTables {
    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    pub fn table(&self, k: usize) -> &[u32; 256] {
        &self.slices[k]
    }

    /// Advances a raw register over `data`, `slice_count` bytes per step.
    pub fn update(&self, mut reg: u32, data: &[u8]) -> u32 {
        let n = self.slices.len();
        let t0 = &self.slices[0];
        let mut chunks = data.chunks_exact(n);
        for chunk in &mut chunks {
            // Bytes 0..4 of the chunk absorb the register; later bytes enter clean.
            let mut acc = if n < 4 { reg >> (8 * n) } else { 0 };
            for (j, &byte) in chunk.iter().enumerate() {
                let mixed = if j < 4 {
                    byte ^ (reg >> (8 * j)) as u8
                } else {
                    byte
                };
                acc ^= self.slices[n - 1 - j][mixed as usize];
            }
            reg = acc;
        }
        for &byte in chunks.remainder() {
            reg = (reg >> 8) ^ t0[((reg ^ u32::from(byte)) & 0xff) as usize];
        }
        reg
    }

    /// Writes every table entry as eight hex digits, one per line, table by table.
    pub fn write_hex_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for table in &self.slices {
            for entry in table {
                writeln!(out, "{entry:08x}")?;
            }
        }
        Ok(())
    }
}

/// Table-driven CRC-32 of `data`; bit-identical to [`crc32_bitwise`].
pub fn crc32_sliced(data: &[u8], tables: &CrcTables) -> CrcValue {
    CrcValue(!tables.update(!0, data))
}

/// Carry-less product `a * b mod P` in reflected bit order (bit 31 is `x^0`).
const fn mul_mod_poly(a: u32, mut b: u32) -> u32 {
    let mut m = 1u32 << 31;
    let mut product = 0u32;
    loop {
        if a & m != 0 {
            product ^= b;
            if a & (m - 1) == 0 {
                break;
            }
        }
        m >>= 1;
        b = if b & 1 != 0 {
            (b >> 1) ^ POLY_REFLECTED
        } else {
            b >> 1
        };
    }
    product
}

/// `x^(8 * 2^i) mod P` for i in 0..32. The sequence is periodic with period 32.
const ZERO_BYTE_POWERS: [u32; 32] = {
    let mut powers = [0u32; 32];
    // x^8 in reflected form.
    let mut p = 1u32 << (31 - 8);
    let mut i = 0;
    while i < 32 {
        powers[i] = p;
        p = mul_mod_poly(p, p);
        i += 1;
    }
    powers
};

/// The operator "append `n` zero bytes", i.e. multiplication by `x^(8n) mod P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroShift {
    factor: u32,
}

impl ZeroShift {
    pub fn bytes(mut n: u64) -> Self {
        let mut factor = 1u32 << 31;
        let mut i = 0usize;
        while n != 0 {
            if n & 1 != 0 {
                factor = mul_mod_poly(ZERO_BYTE_POWERS[i & 31], factor);
            }
            n >>= 1;
            i += 1;
        }
        ZeroShift { factor }
    }

    #[inline]
    pub fn apply(self, reg: u32) -> u32 {
        mul_mod_poly(self.factor, reg)
    }

    /// `crc(A || B)` from `crc(A)` and `crc(B)`, where `B` is the length this shift was built for.
    #[inline]
    pub fn concat(self, crc_a: CrcValue, crc_b: CrcValue) -> CrcValue {
        CrcValue(self.apply(crc_a.0) ^ crc_b.0)
    }
}

/// Raw CRC of the original message extended by `byte_count` zero bytes.
pub fn crc_shift(crc: RawCrcValue, byte_count: u64) -> RawCrcValue {
    RawCrcValue(ZeroShift::bytes(byte_count).apply(crc.0))
}

/// `crc32(A || B)` given `crc32(A)`, `crc32(B)` and `|B|`.
pub fn crc_concat(crc_a: CrcValue, crc_b: CrcValue, len_b: u64) -> CrcValue {
    ZeroShift::bytes(len_b).concat(crc_a, crc_b)
}

/// Replaces an interior block of a message whose checksum is `full`.
///
/// `full` is the CRC of `H || old_block || T` with `|T| == tail_len`; the
/// result is the CRC of `H || new_block || T`. Neither `H` nor `T` is needed.
pub fn crc_splice(
    full: CrcValue,
    old_block: &[u8],
    new_block: &[u8],
    tail_len: u64,
) -> Result<CrcValue, CrcError> {
    if old_block.len() != new_block.len() {
        return Err(CrcError::LengthMismatch {
            old: old_block.len(),
            new: new_block.len(),
        });
    }
    let diff: Vec<u8> = old_block
        .iter()
        .zip(new_block)
        .map(|(a, b)| a ^ b)
        .collect();
    let delta = crc_shift(raw_crc32(&diff), tail_len);
    Ok(CrcValue(full.0 ^ delta.0))
}

/// Which CRC implementation the simulator hashes with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CrcImpl {
    Bitwise,
    #[default]
    Sliced4,
    Sliced8,
}

impl fmt::Display for CrcImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrcImpl::Bitwise => "bitwise",
            CrcImpl::Sliced4 => "sliced4",
            CrcImpl::Sliced8 => "sliced8",
        })
    }
}

impl std::str::FromStr for CrcImpl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bitwise" => Ok(CrcImpl::Bitwise),
            "sliced4" => Ok(CrcImpl::Sliced4),
            "sliced8" => Ok(CrcImpl::Sliced8),
            other => Err(format!(
                "unknown crc implementation '{other}' (expected bitwise, sliced4 or sliced8)"
            )),
        }
    }
}

/// A shareable CRC-32 hasher bound to one implementation choice.
#[derive(Clone, Debug)]
pub struct CrcEngine {
    kind: CrcImpl,
    tables: Option<Arc<CrcTables>>,
}

impl CrcEngine {
    pub fn new(kind: CrcImpl) -> Self {
        let slices = match kind {
            CrcImpl::Bitwise => None,
            CrcImpl::Sliced4 => Some(4),
            CrcImpl::Sliced8 => Some(8),
        };
        let tables = slices.map(|n| Arc::new(build_tables(n).expect("supported slice count")));
        CrcEngine { kind, tables }
    }

    pub fn kind(&self) -> CrcImpl {
        self.kind
    }

    pub fn tables(&self) -> Option<&CrcTables> {
        self.tables.as_deref()
    }

    pub fn checksum(&self, data: &[u8]) -> CrcValue {
        match &self.tables {
            Some(tables) => crc32_sliced(data, tables),
            None => crc32_bitwise(data),
        }
    }
}

impl Default for CrcEngine {
    fn default() -> Self {
        CrcEngine::new(CrcImpl::default())
    }
}
