use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sparsedict::spectra::{spectrum, DEFAULT_FRACTIONS, DEFAULT_THRESHOLDS};

use super::{ensure_parent, file_moments, output_path};
use crate::manifest::{sidecar, RunManifest};
use crate::settings::{resolve, ConfigMap};
use crate::usage;

#[derive(Args, Serialize)]
pub struct Flags {
    /// Activation files; all must share one dimension.
    #[arg(long = "in", num_args = 1..)]
    inputs: Option<Vec<PathBuf>>,
    /// Cumulative-variance thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Fractions of the leading singular value, comma separated.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Report JSON [default: $SPARSEDICT_DATA_DIR/spectrum.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub inputs: Vec<PathBuf>,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
            out: None,
        }
    }
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    if s.inputs.is_empty() {
        return Err(usage("--in needs at least one activation file").into());
    }
    if let Some(f) = s.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(usage(format!("fraction {f} outside (0, 1]")).into());
    }
    let out = output_path(&s.out, "spectrum.json");
    s.out = Some(out.clone());
    let mut manifest = RunManifest::new("analyze-spectrum", &s, None)?;
    manifest.hash_inputs(&s.inputs)?;

    let (moments, headers) = file_moments(&s.inputs)?;
    let mut report = spectrum(&moments, &s.thresholds, &s.fractions)?;
    let first = &headers[0];
    if headers.iter().any(|h| h.hook_point != first.hook_point) {
        log::warn!("inputs mix hook points; reporting {}", first.hook_point);
    }
    report.hook_point = first.hook_point.label();
    report.metadata = first.metadata.clone();
    for (tau, k) in &report.intrinsic_dims {
        log::info!("intrinsic dimension at {tau}: {k} of {}", report.d);
    }
    ensure_parent(&out)?;
    fs::write(&out, report.to_json()? + "\n").with_context(|| format!("writing {}", out.display()))?;
    manifest.outputs.push(out.clone());
    manifest.write(&sidecar(&out))
}
