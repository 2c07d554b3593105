use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sparsedict::report::{
    build_report, load_metrics_csv, load_spectrum_json, load_sweep_csv, write_report, ReportInputs,
};

use super::output_path;
use crate::manifest::RunManifest;
use crate::settings::{resolve, ConfigMap};
use crate::usage;

#[derive(Args, Serialize)]
pub struct Flags {
    /// Sweep CSVs from scaling-sweep.
    #[arg(long, num_args = 1..)]
    sweep: Option<Vec<PathBuf>>,
    /// Metrics CSVs from train-sae.
    #[arg(long, num_args = 1..)]
    metrics: Option<Vec<PathBuf>>,
    /// Spectrum JSONs from analyze-spectrum.
    #[arg(long, num_args = 1..)]
    spectrum: Option<Vec<PathBuf>>,
    /// Output directory [default: $SPARSEDICT_DATA_DIR/report].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub sweep: Vec<PathBuf>,
    pub metrics: Vec<PathBuf>,
    pub spectrum: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Labels inputs by file stem, or by full path when stems collide.
fn disambiguate<T>(named: &mut [(String, T)], paths: &[PathBuf]) {
    let unique: BTreeSet<&String> = named.iter().map(|(n, _)| n).collect();
    if unique.len() < named.len() {
        for ((name, _), p) in named.iter_mut().zip(paths) {
            *name = p.display().to_string();
        }
    }
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    if s.sweep.is_empty() && s.metrics.is_empty() && s.spectrum.is_empty() {
        return Err(usage("give at least one of --sweep, --metrics, --spectrum").into());
    }
    let out = output_path(&s.out, "report");
    s.out = Some(out.clone());
    let mut manifest = RunManifest::new("report", &s, None)?;
    manifest.hash_inputs(s.sweep.iter().chain(&s.metrics).chain(&s.spectrum))?;

    let ctx = |p: &PathBuf| format!("loading {}", p.display());
    let inputs = ReportInputs {
        sweeps: s.sweep.iter().map(|p| load_sweep_csv(p).with_context(|| ctx(p))).collect::<anyhow::Result<_>>()?,
        metrics: s.metrics.iter().map(|p| load_metrics_csv(p).with_context(|| ctx(p))).collect::<anyhow::Result<_>>()?,
        spectra: s.spectrum.iter().map(|p| load_spectrum_json(p).with_context(|| ctx(p))).collect::<anyhow::Result<_>>()?,
    };
    let mut inputs = inputs;
    disambiguate(&mut inputs.sweeps, &s.sweep);
    disambiguate(&mut inputs.metrics, &s.metrics);
    disambiguate(&mut inputs.spectra, &s.spectrum);
    let files = build_report(&inputs)?;
    for f in &files {
        log::info!("{}: {} rows", f.name, f.rows);
    }
    manifest.outputs = write_report(&files, &out)?;
    manifest.write(&out.join("manifest.json"))
}
