//! Binary activation file format.
//!
//! ```text
//! offset  size  field
//!      0     8  magic  b"SDLACTV\0"
//!      8     4  version (u32, currently 1)
//!     12     4  dtype code (u32, 0 = f32)
//!     16     8  d (u64)
//!     24     8  n (u64)
//!     32     4  descriptor length L (u32)
//!     36     L  descriptor: hook point string, then key/value metadata pairs,
//!               each string as u32 byte length + UTF-8 bytes, pairs preceded
//!               by a u32 count
//!      …        zero padding up to HEADER_LEN
//!   4096   4nd  payload: n records of d little-endian f32, row-major
//! ```
//!
//! All integers are little-endian. Metadata keys are written in sorted order,
//! so equal headers serialize to equal bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::store::ActivationBatch;

pub const MAGIC: [u8; 8] = *b"SDLACTV\0";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 4096;
const FIXED_LEN: usize = 36;

/// Where in the network an activation was captured.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HookPoint {
    AttnOut,
    MlpOut,
    ResidPost,
    ZConcat,
    /// Free-form label; serialized as `custom` or `custom:<label>`.
    Custom(String),
}

impl HookPoint {
    pub fn label(&self) -> String {
        match self {
            HookPoint::AttnOut => "attn_out".into(),
            HookPoint::MlpOut => "mlp_out".into(),
            HookPoint::ResidPost => "resid_post".into(),
            HookPoint::ZConcat => "z_concat".into(),
            HookPoint::Custom(s) if s.is_empty() => "custom".into(),
            HookPoint::Custom(s) => format!("custom:{s}"),
        }
    }
}

impl fmt::Display for HookPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for HookPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "attn_out" => HookPoint::AttnOut,
            "mlp_out" => HookPoint::MlpOut,
            "resid_post" => HookPoint::ResidPost,
            "z_concat" => HookPoint::ZConcat,
            "custom" => HookPoint::Custom(String::new()),
            other => match other.strip_prefix("custom:") {
                Some(rest) => HookPoint::Custom(rest.to_string()),
                None => {
                    return Err(Error::InvalidHeader(format!("unknown hook point {other:?}")))
                }
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFileHeader {
    pub version: u32,
    pub dtype: u32,
    pub d: u64,
    pub n: u64,
    pub hook_point: HookPoint,
    /// Model name, layer index, dataset, and similar annotations.
    pub metadata: BTreeMap<String, String>,
}

impl ActivationFileHeader {
    pub fn new(hook_point: HookPoint, n: usize, d: usize) -> Self {
        Self {
            version: VERSION,
            dtype: DTYPE_F32,
            d: d as u64,
            n: n as u64,
            hook_point,
            metadata: BTreeMap::new(),
        }
    }

    /// Header describing `batch` exactly.
    pub fn for_batch(hook_point: HookPoint, batch: &ActivationBatch) -> Self {
        Self::new(hook_point, batch.n(), batch.d())
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut desc = Vec::new();
        put_str(&mut desc, &self.hook_point.label());
        desc.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut desc, k);
            put_str(&mut desc, v);
        }
        if FIXED_LEN + desc.len() > HEADER_LEN {
            return Err(Error::InvalidHeader(format!(
                "hook point and metadata take {} bytes, limit is {}",
                desc.len(),
                HEADER_LEN - FIXED_LEN
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.dtype.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(&desc);
        out.resize(HEADER_LEN, 0);
        Ok(out)
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        let mut found = [0u8; 8];
        found.copy_from_slice(&buf[..8]);
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        let version = u32_at(buf, 8);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = u32_at(buf, 12);
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let d = u64_at(buf, 16);
        let n = u64_at(buf, 24);
        if d == 0 {
            return Err(Error::InvalidHeader("d must be at least 1".into()));
        }
        let desc_len = u32_at(buf, 32) as usize;
        if FIXED_LEN + desc_len > HEADER_LEN {
            return Err(Error::InvalidHeader(format!(
                "descriptor length {desc_len} overruns the header"
            )));
        }
        let mut cur = &buf[FIXED_LEN..FIXED_LEN + desc_len];
        let hook_point: HookPoint = take_str(&mut cur)?.parse()?;
        let pairs = take_u32(&mut cur)?;
        let mut metadata = BTreeMap::new();
        for _ in 0..pairs {
            let k = take_str(&mut cur)?;
            let v = take_str(&mut cur)?;
            metadata.insert(k, v);
        }
        Ok(Self {
            version,
            dtype,
            d,
            n,
            hook_point,
            metadata,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn u64_at(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn take_u32(cur: &mut &[u8]) -> Result<u32> {
    if cur.len() < 4 {
        return Err(Error::InvalidHeader("descriptor ends early".into()));
    }
    let v = u32_at(cur, 0);
    *cur = &cur[4..];
    Ok(v)
}

fn take_str(cur: &mut &[u8]) -> Result<String> {
    let len = take_u32(cur)? as usize;
    if cur.len() < len {
        return Err(Error::InvalidHeader("descriptor string ends early".into()));
    }
    let s = std::str::from_utf8(&cur[..len])
        .map_err(|_| Error::InvalidHeader("descriptor string is not UTF-8".into()))?
        .to_string();
    *cur = &cur[len..];
    Ok(s)
}

/// Writes `header` followed by the row-major payload of `batch`. Returns the
/// number of bytes written.
pub fn write_activations<W: Write>(
    batch: &ActivationBatch,
    header: &ActivationFileHeader,
    sink: W,
) -> Result<u64> {
    if header.n != batch.n() as u64 {
        return Err(Error::DimensionMismatch {
            what: "header n vs batch rows",
            expected: header.n as usize,
            found: batch.n(),
        });
    }
    let mut writer = ActivationWriter::new(header, sink)?;
    writer.write_batch(batch)?;
    writer.finish()
}

/// Incremental writer: the header declares `n` up front and [`finish`]
/// checks that exactly that many rows arrived.
///
/// [`finish`]: ActivationWriter::finish
pub struct ActivationWriter<W: Write> {
    sink: W,
    d: usize,
    n: u64,
    rows: u64,
    written: u64,
    buf: Vec<u8>,
}

impl<W: Write> ActivationWriter<W> {
    pub fn new(header: &ActivationFileHeader, mut sink: W) -> Result<Self> {
        let head = header.encode()?;
        sink.write_all(&head)?;
        Ok(Self {
            sink,
            d: header.d as usize,
            n: header.n,
            rows: 0,
            written: head.len() as u64,
            buf: Vec::with_capacity(64 * 1024),
        })
    }

    pub fn write_batch(&mut self, batch: &ActivationBatch) -> Result<()> {
        if batch.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "header d vs batch columns",
                expected: self.d,
                found: batch.d(),
            });
        }
        if self.rows + batch.n() as u64 > self.n {
            return Err(Error::invalid(format!(
                "writing {} more rows would exceed the declared {}",
                batch.n(),
                self.n
            )));
        }
        for chunk in batch.as_slice().chunks(16 * 1024) {
            self.buf.clear();
            for v in chunk {
                self.buf.extend_from_slice(&v.to_le_bytes());
            }
            self.sink.write_all(&self.buf)?;
            self.written += self.buf.len() as u64;
        }
        self.rows += batch.n() as u64;
        Ok(())
    }

    /// Flushes and returns the total number of bytes written.
    pub fn finish(mut self) -> Result<u64> {
        if self.rows != self.n {
            return Err(Error::Truncated {
                expected: self.n,
                found: self.rows,
            });
        }
        self.sink.flush()?;
        Ok(self.written)
    }
}

/// Reads and fully validates an activation file.
pub fn read_activations<R: Read>(source: R) -> Result<(ActivationFileHeader, ActivationBatch)> {
    let mut reader = ActivationReader::new(source)?;
    let header = reader.header().clone();
    let d = header.d as usize;
    let mut data = Vec::with_capacity(header.n as usize * d);
    while reader.read_rows(64 * 1024, &mut data)? > 0 {}
    reader.finish()?;
    let n = data.len() / d;
    let batch = ActivationBatch::new(data, n, d)?;
    Ok((header, batch))
}

/// Incremental reader that validates records as they stream past.
pub struct ActivationReader<R> {
    inner: R,
    header: ActivationFileHeader,
    rows_read: u64,
    scratch: Vec<u8>,
}

impl ActivationReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref())?;
        Self::new(BufReader::with_capacity(1 << 20, f))
    }
}

impl<R: Read> ActivationReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = vec![0u8; HEADER_LEN];
        let got = read_full(&mut inner, &mut buf)?;
        if got < 8 || buf[..8] != MAGIC {
            let mut found = [0u8; 8];
            found[..got.min(8)].copy_from_slice(&buf[..got.min(8)]);
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        if got < HEADER_LEN {
            return Err(Error::InvalidHeader(format!(
                "header truncated at {got} of {HEADER_LEN} bytes"
            )));
        }
        let header = ActivationFileHeader::decode(&buf)?;
        Ok(Self {
            inner,
            header,
            rows_read: 0,
            scratch: Vec::new(),
        })
    }

    pub fn header(&self) -> &ActivationFileHeader {
        &self.header
    }

    pub fn rows_remaining(&self) -> u64 {
        self.header.n - self.rows_read
    }

    /// Appends up to `max_rows` records to `out`; returns how many were read.
    /// A short payload is reported as [`Error::Truncated`].
    pub fn read_rows(&mut self, max_rows: usize, out: &mut Vec<f32>) -> Result<usize> {
        let d = self.header.d as usize;
        let want = (self.rows_remaining() as usize).min(max_rows);
        if want == 0 {
            return Ok(0);
        }
        let bytes = want * d * 4;
        self.scratch.resize(bytes, 0);
        let got = read_full(&mut self.inner, &mut self.scratch)?;
        let complete = got / (d * 4);
        if complete < want {
            return Err(Error::Truncated {
                expected: self.header.n,
                found: self.rows_read + complete as u64,
            });
        }
        let start = out.len();
        out.extend(
            self.scratch
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        if let Some(pos) = out[start..].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: self.rows_read as usize + pos / d,
                col: pos % d,
            });
        }
        self.rows_read += want as u64;
        Ok(want)
    }

    /// Confirms the payload holds no bytes past the declared records.
    pub fn finish(mut self) -> Result<()> {
        if self.rows_remaining() > 0 {
            return Err(Error::Truncated {
                expected: self.header.n,
                found: self.rows_read,
            });
        }
        let mut probe = [0u8; 1];
        if read_full(&mut self.inner, &mut probe)? != 0 {
            return Err(Error::InvalidHeader(format!(
                "payload holds more than the declared {} records",
                self.header.n
            )));
        }
        Ok(())
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> (ActivationFileHeader, ActivationBatch) {
        let batch =
            ActivationBatch::from_rows(&[[1.5f32, -2.0], [0.0, 3.25], [-0.0, 1e-30]]).unwrap();
        let header = ActivationFileHeader::for_batch(HookPoint::AttnOut, &batch)
            .with_meta("model", "tiny")
            .with_meta("layer", "1");
        (header, batch)
    }

    fn encoded(h: &ActivationFileHeader, b: &ActivationBatch) -> Vec<u8> {
        let mut out = Vec::new();
        write_activations(b, h, &mut out).unwrap();
        out
    }

    #[test]
    fn single_zero_round_trips() {
        let b = ActivationBatch::from_rows(&[[0.0f32]]).unwrap();
        let h = ActivationFileHeader::for_batch(HookPoint::MlpOut, &b);
        let bytes = encoded(&h, &b);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        let (h2, b2) = read_activations(&bytes[..]).unwrap();
        assert_eq!((h2, b2), (h, b));
    }

    #[test]
    fn three_by_two_round_trips_bit_exactly() {
        let (h, b) = sample();
        let bytes = encoded(&h, &b);
        let (h2, b2) = read_activations(&bytes[..]).unwrap();
        assert_eq!(h2, h);
        let before: Vec<u32> = b.as_slice().iter().map(|v| v.to_bits()).collect();
        let after: Vec<u32> = b2.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        // payload bytes are the little-endian encoding of every value in order
        let payload: Vec<u8> = b.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(&bytes[HEADER_LEN..], &payload[..]);
    }

    #[test]
    fn header_row_count_mismatch_is_rejected() {
        let (mut h, b) = sample();
        h.n = 5;
        let err = write_activations(&b, &h, Vec::new()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn wrong_magic() {
        let (h, b) = sample();
        let mut bytes = encoded(&h, &b);
        bytes[0] = b'X';
        assert!(matches!(
            read_activations(&bytes[..]).unwrap_err(),
            Error::BadMagic { .. }
        ));
        assert!(matches!(
            read_activations(&b"nope"[..]).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }

    #[test]
    fn truncated_mid_record_names_counts() {
        let (h, b) = sample();
        let bytes = encoded(&h, &b);
        // cut inside the third record: two complete records remain
        let cut = &bytes[..HEADER_LEN + 2 * 8 + 3];
        match read_activations(cut).unwrap_err() {
            Error::Truncated { expected, found } => {
                assert_eq!((expected, found), (3, 2));
                let msg = Error::Truncated { expected, found }.to_string();
                assert!(msg.contains("expected 3") && msg.contains("found 2"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_finite_and_version_and_trailing_bytes() {
        let (h, b) = sample();
        let mut bytes = encoded(&h, &b);
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            read_activations(&bytes[..]).unwrap_err(),
            Error::NonFinite { row: 0, col: 0 }
        ));

        let mut bytes = encoded(&h, &b);
        bytes[8] = 9;
        assert!(matches!(
            read_activations(&bytes[..]).unwrap_err(),
            Error::UnsupportedVersion(9)
        ));

        let mut bytes = encoded(&h, &b);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(read_activations(&bytes[..]).is_err());
    }

    #[test]
    fn hook_point_labels() {
        for label in ["attn_out", "mlp_out", "resid_post", "z_concat", "custom", "custom:w_o"] {
            assert_eq!(label.parse::<HookPoint>().unwrap().label(), label);
        }
        assert!("attention".parse::<HookPoint>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            n in 1usize..12,
            d in 1usize..9,
            seed in any::<u64>(),
            meta in proptest::collection::btree_map("[a-z]{1,8}", "[ -~]{0,16}", 0..4),
        ) {
            let data: Vec<f32> = (0..n * d)
                .map(|i| f32::from_bits(((seed.wrapping_mul(i as u64 + 1) >> 11) as u32) & 0x3fff_ffff))
                .collect();
            let b = ActivationBatch::new(data, n, d).unwrap();
            let mut h = ActivationFileHeader::for_batch(HookPoint::Custom("x".into()), &b);
            h.metadata = meta;
            let bytes = encoded(&h, &b);
            let (h2, b2) = read_activations(&bytes[..]).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(
                b2.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
