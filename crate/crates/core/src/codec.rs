//! Versioned binary container used for calibration caches and intrusion
//! snapshots.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic    4 bytes  "PPRV"
//! version  u16      FORMAT_VERSION
//! kind     u8       RecordKind
//! reserved u8       0
//! length   u64      payload length in bytes
//! payload  [u8]
//! crc32    u32      IEEE CRC of every preceding byte
//! ```
//!
//! Floats are stored as their IEEE-754 bit patterns so round trips are exact.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PPRV";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Calibration = 1,
    Exact = 2,
    Distinct = 3,
    CroppedSum = 4,
    HeavyHitters = 5,
    DotPair = 6,
}

impl RecordKind {
    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Calibration => "calibration",
            RecordKind::Exact => "exact-distinct",
            RecordKind::Distinct => "pp-distinct",
            RecordKind::CroppedSum => "cropped-sum",
            RecordKind::HeavyHitters => "heavy-hitters",
            RecordKind::DotPair => "dot-pair",
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => RecordKind::Calibration,
            2 => RecordKind::Exact,
            3 => RecordKind::Distinct,
            4 => RecordKind::CroppedSum,
            5 => RecordKind::HeavyHitters,
            6 => RecordKind::DotPair,
            other => return Err(Error::Decode(format!("unknown record kind {other}"))),
        })
    }
}

/// Wraps a payload in the container.
pub fn seal(kind: RecordKind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.push(0);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Verifies the container and returns its kind and payload.
pub fn open(bytes: &[u8]) -> Result<(RecordKind, &[u8])> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Decode("record shorter than header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Decode("checksum mismatch".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let kind = RecordKind::from_u8(bytes[6])?;
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload = &body[HEADER_LEN..];
    if payload.len() != len {
        return Err(Error::Decode("payload length mismatch".into()));
    }
    Ok((kind, payload))
}

/// Peeks at the record kind without verifying the checksum.
pub fn peek_kind(bytes: &[u8]) -> Result<RecordKind> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Decode("not a panpriv record".into()));
    }
    RecordKind::from_u8(bytes[6])
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn bits(&mut self, v: &[bool]) -> &mut Self {
        self.u64(v.len() as u64);
        let mut byte = 0u8;
        for (idx, bit) in v.iter().enumerate() {
            if *bit {
                byte |= 1 << (idx % 8);
            }
            if idx % 8 == 7 {
                self.buf.push(byte);
                byte = 0;
            }
        }
        if !v.len().is_multiple_of(8) {
            self.buf.push(byte);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Decode("truncated payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Reads a length prefix and sanity-checks it against the bytes left,
    /// assuming each element occupies at least `min_elem_bytes`.
    pub fn len_prefix(&mut self, min_elem_bytes: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(min_elem_bytes) > self.buf.len() {
            return Err(Error::Decode("length prefix exceeds payload".into()));
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len_prefix(1)?;
        self.take(n)
    }

    pub fn bits(&mut self) -> Result<Vec<bool>> {
        let n = self.u64()? as usize;
        let packed = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode("trailing bytes in payload".into()))
        }
    }
}
