//! Little-endian binary helpers with section-aware truncation errors.

use crate::error::{Error, Result};

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: impl IntoIterator<Item = f32>) {
        for v in vs {
            self.f32(v);
        }
    }

    pub fn str16(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    pub fn str32(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                section: section.to_string(),
                offset: self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self, section: &str) -> Result<[u8; N]> {
        Ok(self.take(N, section)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u16(&mut self, section: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(section)?))
    }

    pub fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(section)?))
    }

    pub fn f32(&mut self, section: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(section)?))
    }

    pub fn f64(&mut self, section: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(section)?))
    }

    pub fn f32s(&mut self, n: usize, section: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.corrupt("size overflow"))?, section)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    fn string(&mut self, n: usize, section: &str) -> Result<String> {
        let at = self.pos;
        let bytes = self.take(n, section)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt {
            offset: at,
            detail: format!("{section} is not valid UTF-8"),
        })
    }

    pub fn str16(&mut self, section: &str) -> Result<String> {
        let n = self.u16(section)? as usize;
        self.string(n, section)
    }

    pub fn str32(&mut self, section: &str) -> Result<String> {
        let n = self.u32(section)? as usize;
        self.string(n, section)
    }

    pub fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.pos,
            detail: detail.into(),
        }
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.corrupt(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
