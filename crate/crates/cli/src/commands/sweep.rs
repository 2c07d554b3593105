use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sparsedict::store::{parse_spectrum, ShuffleBuffer, ShuffledStream, SyntheticGenerator, SyntheticSpectrumSpec};
use sparsedict::trainer::{
    scaling_sweep, write_sweep_csv, DataSource, StreamSource, SweepVariant, TrainConfig,
};

use super::{ensure_parent, output_path};
use crate::manifest::{sidecar, RunManifest};
use crate::settings::{resolve, ConfigMap};
use crate::usage;

#[derive(Args, Serialize)]
pub struct Flags {
    /// Grid description (JSON).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Result CSV [default: $SPARSEDICT_DATA_DIR/sweep.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the grid's training token budget.
    #[arg(long)]
    tokens: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub grid: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tokens: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridData {
    /// Activation files, reshuffled per seed.
    Files(Vec<PathBuf>),
    /// Generated data; each run seed offsets the generator seed.
    Synthetic {
        dim: usize,
        spectrum: String,
        #[serde(default)]
        seed: u64,
    },
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_basis_rows() -> usize {
    4096
}

fn default_shuffle_buffer() -> usize {
    ShuffleBuffer::default().capacity
}

/// Contents of the `--grid` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Feature counts, strictly ascending.
    pub hs: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub variants: Vec<SweepVariant>,
    /// Shared training settings; `h`, `seed`, `optimizer`, `aux` and `lr`
    /// are set per cell.
    #[serde(default)]
    pub train: TrainConfig,
    pub data: GridData,
    /// Rows used to estimate the principal subspace.
    #[serde(default = "default_basis_rows")]
    pub basis_rows: usize,
    #[serde(default = "default_shuffle_buffer")]
    pub shuffle_buffer: usize,
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    let grid_path = s.grid.clone().ok_or_else(|| usage("--grid is required"))?;
    let text = fs::read_to_string(&grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
    let mut grid: Grid =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", grid_path.display())))?;
    if let Some(t) = s.tokens {
        grid.train.total_tokens = t;
    }
    let out = output_path(&s.out, "sweep.csv");
    s.out = Some(out.clone());

    let mut manifest = RunManifest::new("scaling-sweep", &json!({ "settings": &s, "grid": &grid }), None)?;
    manifest.hash_inputs([&grid_path])?;
    let make_source: Box<dyn FnMut(u64) -> sparsedict::Result<Box<dyn DataSource>>> = match &grid.data {
        GridData::Files(paths) => {
            manifest.hash_inputs(paths)?;
            let (paths, capacity, batch) = (paths.clone(), grid.shuffle_buffer, grid.train.batch_size);
            Box::new(move |seed| {
                let buffer = ShuffleBuffer {
                    capacity,
                    seed,
                    ..ShuffleBuffer::default()
                };
                let stream = ShuffledStream::open(&paths, buffer, batch)?;
                Ok(Box::new(StreamSource::new(stream)) as Box<dyn DataSource>)
            })
        }
        GridData::Synthetic { dim, spectrum, seed: base } => {
            let values = parse_spectrum(spectrum, *dim)?;
            let base = *base;
            Box::new(move |seed| {
                let spec = SyntheticSpectrumSpec::new(values.clone(), base.wrapping_add(seed));
                Ok(Box::new(SyntheticGenerator::new(&spec)?) as Box<dyn DataSource>)
            })
        }
    };
    let cells = scaling_sweep(&grid.train, &grid.hs, &grid.variants, &grid.seeds, grid.basis_rows, make_source)?;
    ensure_parent(&out)?;
    let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_sweep_csv(&cells, BufWriter::new(f))?;
    let failed = cells.iter().filter(|c| c.status != "completed").count();
    if failed > 0 {
        log::warn!("{failed} of {} cells did not complete", cells.len());
    }
    manifest.outputs.push(out.clone());
    manifest.result = Some(json!({ "cells": cells.len(), "not_completed": failed }));
    manifest.write(&sidecar(&out))
}
