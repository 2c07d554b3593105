use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sparsedict::store::{parse_spectrum, ActivationWriter, SyntheticGenerator, SyntheticSpectrumSpec};
use sparsedict::{ActivationFileHeader, HookPoint};

use super::{ensure_parent, output_path, CHUNK_ROWS};
use crate::manifest::{sidecar, RunManifest};
use crate::settings::{resolve, ConfigMap};
use crate::usage;

#[derive(Args, Serialize)]
pub struct Flags {
    /// Vector dimension. Optional when --spectrum names a file.
    #[arg(long)]
    dim: Option<usize>,
    /// File of values, `powerlaw:<exponent>`, `step:<rank>` or
    /// `step:<rank>:<floor>`.
    #[arg(long)]
    spectrum: Option<String>,
    /// Number of rows.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hook point recorded in the header.
    #[arg(long)]
    hook: Option<String>,
    /// Output file [default: $SPARSEDICT_DATA_DIR/synthetic.actbin].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub dim: Option<usize>,
    pub spectrum: String,
    pub n: usize,
    pub seed: u64,
    pub hook: String,
    pub out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            dim: None,
            spectrum: "powerlaw:1".into(),
            n: 100_000,
            seed: 0,
            hook: "custom:synthetic".into(),
            out: None,
        }
    }
}

/// Values from a file, skipping one non-numeric header line if present.
fn spectrum_file(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().peekable();
    if let Some(first) = lines.peek() {
        let token = first.split([',', ' ', '\t']).find(|t| !t.is_empty()).unwrap_or("");
        if token.parse::<f64>().is_err() {
            lines.next();
        }
    }
    let body: Vec<&str> = lines.collect();
    let body = body.join("\n");
    let count = body
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .count();
    Ok(parse_spectrum(&body, count)?)
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    let spectrum_path = PathBuf::from(&s.spectrum);
    let from_file = spectrum_path.is_file();
    let values = if from_file {
        let v = spectrum_file(&spectrum_path)?;
        if let Some(d) = s.dim.filter(|d| *d != v.len()) {
            return Err(usage(format!("--dim {d} but the spectrum file has {} values", v.len())).into());
        }
        v
    } else {
        let d = s.dim.ok_or_else(|| usage("--dim is required with a spectrum preset"))?;
        parse_spectrum(&s.spectrum, d)?
    };
    let d = values.len();
    s.dim = Some(d);
    if s.n == 0 {
        return Err(usage("--n must be positive").into());
    }
    let hook: HookPoint = s.hook.parse().map_err(|e| usage(format!("--hook: {e}")))?;
    let out = output_path(&s.out, "synthetic.actbin");
    s.out = Some(out.clone());

    let mut manifest = RunManifest::new("gen-synthetic", &s, Some(s.seed))?;
    if from_file {
        manifest.hash_inputs([&spectrum_path])?;
    }
    let header = ActivationFileHeader::new(hook, s.n, d)
        .with_meta("generator", "synthetic")
        .with_meta("spectrum", s.spectrum.clone())
        .with_meta("seed", s.seed.to_string());
    let mut gen = SyntheticGenerator::new(&SyntheticSpectrumSpec::new(values, s.seed))?;
    ensure_parent(&out)?;
    let sink = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    let mut writer = ActivationWriter::new(&header, sink)?;
    let mut left = s.n;
    while left > 0 {
        let rows = left.min(CHUNK_ROWS);
        writer.write_batch(&gen.sample(rows)?)?;
        left -= rows;
    }
    let bytes = writer.finish()?;
    log::info!("wrote {} rows of dimension {d} to {} ({bytes} bytes)", s.n, out.display());
    manifest.outputs.push(out.clone());
    manifest.write(&sidecar(&out))
}
