//! Little-endian primitives shared by the checkpoint and optimizer-state files.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn put_u64s<W: Write>(w: &mut W, values: &[u64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::InvalidHeader(format!("file ends inside {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn get_magic<R: Read>(r: &mut R, expected: [u8; 8]) -> Result<()> {
    let buf = take(r, 8, "magic")?;
    let found: [u8; 8] = buf.try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4, "u32 field")?.try_into().unwrap()))
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8, "u64 field")?.try_into().unwrap()))
}

pub(crate) fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::InvalidHeader(format!("string field of {len} bytes")));
    }
    String::from_utf8(take(r, len, "string field")?)
        .map_err(|_| Error::InvalidHeader("string field is not UTF-8".into()))
}

pub(crate) fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let buf = take(r, n * 4, "f32 blob")?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn get_u64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u64>> {
    let buf = take(r, n * 8, "u64 blob")?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::InvalidHeader("unexpected trailing bytes".into())),
    }
}
