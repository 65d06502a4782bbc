//! `GTSR1` tensor files and 8-bit PGM export.
//!
//! `GTSR1` layout: the magic `GTSR1\n`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then the values as little-endian `f32` in
//! row-major order.

use std::io::{Read, Write};

use super::{numel, Tensor};
use crate::error::{Error, Result};

pub const GTSR_MAGIC: &[u8; 6] = b"GTSR1\n";

pub fn write_gtsr<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(10 + 4 * t.shape().len() + 4 * t.len());
    buf.extend_from_slice(GTSR_MAGIC);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_gtsr<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |d: &str| Error::format("GTSR1 tensor", d);
    let rest = bytes
        .strip_prefix(GTSR_MAGIC.as_slice())
        .ok_or_else(|| bad("missing magic"))?;
    let mut words = rest.chunks_exact(4);
    let mut next_u32 = || -> Result<u32> {
        let w = words.next().ok_or_else(|| bad("truncated header"))?;
        Ok(u32::from_le_bytes(w.try_into().expect("4 bytes")))
    };
    let rank = next_u32()? as usize;
    if rank == 0 || rank > 16 {
        return Err(bad(&format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| next_u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(bad("zero extent"));
    }
    let n = numel(&shape);
    let payload = &rest[4 * (rank + 1)..];
    if payload.len() != 4 * n {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            4 * n,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(&shape, data)
}

/// Binary PGM (P5) of a single plane after min-max scaling to 0..=255.
/// Accepts `[H,W]` or `[1,H,W]`. A constant map renders as all zeros.
pub fn write_pgm<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let (h, wd) = match *t.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => return Err(Error::shape(format!("PGM export needs one plane, got {s:?}"))),
    };
    let (lo, hi) = (t.min(), t.max());
    let range = hi - lo;
    let mut buf = format!("P5\n{wd} {h}\n255\n").into_bytes();
    buf.extend(t.data().iter().map(|&v| {
        if range > 0.0 {
            ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    w.write_all(&buf)?;
    Ok(())
}

/// Reads an 8-bit binary PGM into a `[1,H,W]` tensor scaled to `[0,1]`.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |d: &str| Error::format("PGM image", d);
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 || w == 0 || h == 0 {
        return Err(bad("unsupported header values"));
    }
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixels"))?;
    let data = pixels.iter().map(|&p| p as f64 / maxval as f64).collect();
    Tensor::new(&[1, h, w], data)
}
