//! Binary tensor format, PGM images and `key=value` text blocks.
//!
//! FPT1 layout: magic `FPT1`, u8 dtype tag (0 = f32, 1 = f64), u8 rank,
//! `rank` little-endian u32 dims, then the values row-major, little-endian.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Real, Tensor};

pub const FPT1_MAGIC: &[u8; 4] = b"FPT1";

/// Cursor over an in-memory file that reports byte offsets on failure.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let at = self.pos;
        let got = self.bytes(expected.len())?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    /// u32 length prefix followed by UTF-8 text.
    pub fn text(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at, "text is not UTF-8"))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_text(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_fpt1<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(FPT1_MAGIC);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.dims() {
        put_u32(out, d as u32);
    }
    out.reserve(t.len() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Decodes one FPT1 tensor, converting the stored element type to `T`.
pub fn decode_fpt1<T: Real>(r: &mut ByteReader) -> Result<Tensor<T>> {
    r.magic(FPT1_MAGIC)?;
    let at = r.position();
    let tag = r.u8()?;
    let dtype = Dtype::from_tag(tag).ok_or_else(|| Error::format(at, format!("unknown dtype tag {tag}")))?;
    let at = r.position();
    let rank = r.u8()? as usize;
    if rank == 0 {
        return Err(Error::format(at, "rank 0 tensor"));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.position();
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::format(at, "zero dimension"));
        }
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(at, "dims overflow"))?;
    let width = dtype.size();
    let raw = r.bytes(count.checked_mul(width).ok_or_else(|| Error::format(at, "dims overflow"))?)?;
    let data: Vec<T> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|b| T::lit(f32::read_le(b) as f64))
            .collect(),
        Dtype::F64 => raw.chunks_exact(8).map(|b| T::lit(f64::read_le(b))).collect(),
    };
    Tensor::new(dims, data)
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut out = Vec::new();
    encode_fpt1(t, &mut out);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    let t = decode_fpt1(&mut r)?;
    r.finish()?;
    Ok(t)
}

/// Maps `[0, 2]` linearly to 16-bit grey levels, clamping outside.
pub fn encode_pgm16(img: &Tensor<f64>) -> Result<Vec<u8>> {
    let (ch, rows, cols) = img.shape3()?;
    if ch != 1 {
        return Err(Error::dim(format!("PGM export needs 1 channel, got {ch}")));
    }
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in img.data() {
        let level = ((v / 2.0).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm16(path: impl AsRef<Path>, img: &Tensor<f64>) -> Result<()> {
    std::fs::write(path, encode_pgm16(img)?)?;
    Ok(())
}

/// Reads a binary PGM (8 or 16 bit), mapping `[0, maxval]` back to `[0, 2]`.
pub fn decode_pgm(buf: &[u8]) -> Result<Tensor<f64>> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&buf[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(0, format!("expected P5, got {}", fields[0].1)));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::format(fields[i].0, format!("bad PGM field '{}'", fields[i].1)))
    };
    let (cols, rows, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 65535 || rows == 0 || cols == 0 {
        return Err(Error::format(fields[3].0, "bad PGM geometry"));
    }
    pos += 1;
    let width = if maxval > 255 { 2 } else { 1 };
    let mut r = ByteReader::new(buf);
    r.bytes(pos)?;
    let raw = r.bytes(rows * cols * width)?;
    let scale = 2.0 / maxval as f64;
    let data = if width == 2 {
        raw.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale)
            .collect()
    } else {
        raw.iter().map(|&b| b as f64 * scale).collect()
    };
    Tensor::chw(1, rows, cols, data)
}

/// Loads an image from FPT1 or PGM, chosen by content.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let buf = std::fs::read(path)?;
    let img = if buf.starts_with(FPT1_MAGIC) {
        let mut r = ByteReader::new(&buf);
        let t = decode_fpt1::<f64>(&mut r)?;
        r.finish()?;
        match t.dims() {
            [_, _, _] => t,
            &[rows, cols] => t.reshape(&[1, rows, cols])?,
            other => return Err(Error::dim(format!("image must be rank 2 or 3, got {other:?}"))),
        }
    } else {
        decode_pgm(&buf)?
    };
    Ok(img)
}

/// Ordered `key=value` lines. Blank lines and `#` comments are ignored on parse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            let k = k.trim();
            if kv.get(k).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
            kv.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    pub fn parsed<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Errors on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k}={v}")?;
        }
        f.write_str(&s)
    }
}
