//! Versioned binary checkpoint container.
//!
//! Layout: magic `DSCK`, format version (`u32`), endianness marker `b'L'`,
//! a 4-byte payload tag, then the payload. All integers and floats are
//! little-endian; floats are stored as raw IEEE-754 bits so `load(save(m))`
//! is bit-exact.

use thiserror::Error;

use crate::nn::{Activation, DenseLayer, Mlp};

const MAGIC: &[u8; 4] = b"DSCK";
pub const FORMAT_VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = b'L';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported endianness marker {0:#04x}")]
    BadEndianness(u8),
    #[error("expected a {expected} checkpoint, found {found}")]
    WrongTag { expected: String, found: String },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(tag: &[u8; 4]) -> Self {
        let mut w = Self::default();
        w.buf.extend(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(LITTLE_ENDIAN);
        w.buf.extend(tag);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend(v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend(v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend(v.to_bits().to_le_bytes());
    }

    pub fn f64s(&mut self, values: &[f64]) {
        self.u64(values.len() as u64);
        values.iter().for_each(|&v| self.f64(v));
    }

    pub fn mlp(&mut self, net: &Mlp) {
        self.u32(net.layers().len() as u32);
        for layer in net.layers() {
            self.u32(layer.in_dim as u32);
            self.u32(layer.out_dim as u32);
            self.u8(layer.activation.tag());
            self.f64s(&layer.weights);
            self.f64s(&layer.bias);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], tag: &[u8; 4]) -> Result<Self, CheckpointError> {
        let mut r = Self { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let endian = r.u8()?;
        if endian != LITTLE_ENDIAN {
            return Err(CheckpointError::BadEndianness(endian));
        }
        let found = r.take(4)?;
        if found != tag {
            return Err(CheckpointError::WrongTag {
                expected: String::from_utf8_lossy(tag).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(CheckpointError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn mlp(&mut self) -> Result<Mlp, CheckpointError> {
        let n = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let in_dim = self.u32()? as usize;
            let out_dim = self.u32()? as usize;
            let tag = self.u8()?;
            let activation =
                Activation::from_tag(tag).ok_or_else(|| CheckpointError::Invalid(format!("activation tag {tag}")))?;
            let weights = self.f64s()?;
            let bias = self.f64s()?;
            layers.push(DenseLayer { in_dim, out_dim, weights, bias, activation });
        }
        Mlp::from_layers(layers).map_err(|e| CheckpointError::Invalid(e.to_string()))
    }

    pub fn finish(self) -> Result<(), CheckpointError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(CheckpointError::Invalid(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}
