//! SAE checkpoint file.
//!
//! ```text
//! magic b"SDLSAE\0\0" | version u32 | d u64 | h u64 | k u64 | seed u64 | step u64
//! | scheme (u32 length + UTF-8)
//! | w_enc f32[h·d] | b_enc f32[h] | w_dec f32[h·d] (feature-major) | b_dec f32[d]
//! ```
//!
//! Blobs use the little-endian f32 layout of the activation files.

use std::io::{Read, Write};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::sae::SaeParams;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SDLSAE\0\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SaeCheckpoint {
    pub params: SaeParams<f32>,
    pub scheme: String,
    pub seed: u64,
    pub step: u64,
}

pub fn write_checkpoint<W: Write>(ckpt: &SaeCheckpoint, mut w: W) -> Result<()> {
    let p = &ckpt.params;
    w.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    put_u64(&mut w, p.d() as u64)?;
    put_u64(&mut w, p.h() as u64)?;
    put_u64(&mut w, p.k() as u64)?;
    put_u64(&mut w, ckpt.seed)?;
    put_u64(&mut w, ckpt.step)?;
    put_str(&mut w, &ckpt.scheme)?;
    put_f32s(&mut w, &p.w_enc)?;
    put_f32s(&mut w, &p.b_enc)?;
    put_f32s(&mut w, &p.w_dec)?;
    put_f32s(&mut w, &p.b_dec)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SaeCheckpoint> {
    get_magic(&mut r, CHECKPOINT_MAGIC)?;
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = get_u64(&mut r)? as usize;
    let h = get_u64(&mut r)? as usize;
    let k = get_u64(&mut r)? as usize;
    let seed = get_u64(&mut r)?;
    let step = get_u64(&mut r)?;
    let scheme = get_str(&mut r)?;
    if d == 0 || h == 0 || d.checked_mul(h).is_none_or(|v| v > 1 << 34) {
        return Err(Error::InvalidHeader(format!("implausible SAE shape d={d}, h={h}")));
    }
    let w_enc = get_f32s(&mut r, h * d)?;
    let b_enc = get_f32s(&mut r, h)?;
    let w_dec = get_f32s(&mut r, h * d)?;
    let b_dec = get_f32s(&mut r, d)?;
    expect_eof(&mut r)?;
    let params = SaeParams::from_parts(d, h, k, w_enc, b_enc, w_dec, b_dec)?;
    Ok(SaeCheckpoint {
        params,
        scheme,
        seed,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut params = SaeParams::<f32>::zeros(3, 4, 2).unwrap();
        params.w_enc.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.25);
        params.w_dec = params.w_enc.clone();
        params.b_dec = vec![1.0, -1.0, 0.5];
        let ckpt = SaeCheckpoint {
            params,
            scheme: "asi".into(),
            seed: 9,
            step: 123,
        };
        let mut bytes = Vec::new();
        write_checkpoint(&ckpt, &mut bytes).unwrap();
        assert_eq!(read_checkpoint(&bytes[..]).unwrap(), ckpt);
        assert!(read_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        bytes[1] = 0;
        assert!(matches!(read_checkpoint(&bytes[..]), Err(Error::BadMagic { .. })));
    }
}
