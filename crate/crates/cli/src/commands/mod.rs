pub mod decompose;
pub mod generate;
pub mod report;
pub mod spectrum;
pub mod sweep;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sparsedict::spectra::StreamingMoments;
use sparsedict::store::{default_data_dir, ActivationReader};
use sparsedict::{ActivationBatch, ActivationFileHeader, Error};

/// Rows read per chunk when streaming files.
const CHUNK_ROWS: usize = 65_536;

/// Explicit path, else `name` inside the data directory.
fn output_path(given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| default_data_dir().join(name))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

/// One streaming pass over `paths`, validating every record.
fn file_moments(paths: &[PathBuf]) -> anyhow::Result<(StreamingMoments, Vec<ActivationFileHeader>)> {
    let mut moments: Option<StreamingMoments> = None;
    let mut headers = Vec::with_capacity(paths.len());
    let mut buf = Vec::new();
    for path in paths {
        let mut reader =
            ActivationReader::open(path).with_context(|| format!("opening {}", path.display()))?;
        let d = reader.header().d as usize;
        let m = moments.get_or_insert_with(|| StreamingMoments::new(d));
        if m.d() != d {
            return Err(Error::DimensionMismatch {
                what: "activation file dimension",
                expected: m.d(),
                found: d,
            })
            .with_context(|| path.display().to_string());
        }
        headers.push(reader.header().clone());
        loop {
            buf.clear();
            let rows = reader
                .read_rows(CHUNK_ROWS, &mut buf)
                .with_context(|| format!("reading {}", path.display()))?;
            if rows == 0 {
                break;
            }
            m.accumulate(&ActivationBatch::new(std::mem::take(&mut buf), rows, d)?)?;
        }
        reader.finish().with_context(|| path.display().to_string())?;
    }
    let moments = moments.ok_or_else(|| crate::usage("no input files"))?;
    Ok((moments, headers))
}
