use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::sae::{DecoderBiasInit, InitScheme, InitSpec};
use crate::spectra::{random_subspace, top_subspace, ProjectionBasis, StreamingMoments};
use crate::store::ActivationBatch;
use crate::trainer::{train, AuxConfig, DataSource, TrainConfig};

/// Column order of the sweep CSV.
pub const SWEEP_COLUMNS: [&str; 10] = [
    "variant",
    "h",
    "seed",
    "params",
    "final_nmse",
    "dead_count",
    "alive_count",
    "dead_frac",
    "alive_params",
    "status",
];

/// Stream offset for random-subspace bases so they never coincide with the
/// init stream of the same seed.
pub const RANDOM_BASIS_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// One column of a sweep: how to initialize and optimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepVariant {
    pub name: String,
    pub init: InitScheme,
    #[serde(default)]
    pub d_init: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub aux: Option<AuxConfig>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub decoder_bias: DecoderBiasInit,
}

impl SweepVariant {
    pub fn new(name: &str, init: InitScheme, d_init: Option<usize>, optimizer: OptimizerKind) -> Self {
        Self {
            name: name.to_string(),
            init,
            d_init,
            optimizer,
            aux: None,
            lr: None,
            decoder_bias: DecoderBiasInit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: String,
    pub h: usize,
    pub seed: u64,
    pub params: usize,
    pub final_nmse: f64,
    pub dead_count: usize,
    pub alive_count: usize,
    pub dead_frac: f64,
    /// Parameters belonging to alive features plus the decoder bias.
    pub alive_params: usize,
    pub status: String,
}

/// Basis for a subspace scheme: the leading principal directions of `sample`
/// or a random orthonormal frame. `None` for the full-space scheme.
pub fn subspace_basis(
    scheme: InitScheme,
    d_init: usize,
    sample: &ActivationBatch,
    seed: u64,
) -> Result<Option<ProjectionBasis>> {
    match scheme {
        InitScheme::TiedRandom => Ok(None),
        InitScheme::ActiveSubspace => {
            top_subspace(&StreamingMoments::from_batch(sample), d_init).map(Some)
        }
        InitScheme::RandomSubspace => {
            random_subspace(sample.d(), d_init, seed ^ RANDOM_BASIS_STREAM).map(Some)
        }
    }
}

/// Trains every `(h, variant, seed)` cell. `make_source(seed)` must return
/// the same stream each time it is called with the same seed, so cells that
/// share a seed see identical data. Divergent cells are recorded and the
/// sweep carries on.
pub fn scaling_sweep<F>(
    base: &TrainConfig,
    hs: &[usize],
    variants: &[SweepVariant],
    seeds: &[u64],
    basis_rows: usize,
    mut make_source: F,
) -> Result<Vec<SweepCell>>
where
    F: FnMut(u64) -> Result<Box<dyn DataSource>>,
{
    if hs.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one width, variant and seed"));
    }
    if hs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("feature counts must be strictly ascending: {hs:?}")));
    }
    for v in variants {
        if v.init.needs_basis() && v.d_init.is_none() {
            return Err(Error::invalid(format!("variant {} needs d_init", v.name)));
        }
    }
    let mut samples = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut src = make_source(seed)?;
        let sample = src
            .next_batch(basis_rows.max(2))?
            .ok_or_else(|| Error::invalid("data source is empty"))?;
        samples.push(sample);
    }

    let mut cells = Vec::new();
    for &h in hs {
        for v in variants {
            for (&seed, sample) in seeds.iter().zip(&samples) {
                let config = TrainConfig {
                    h,
                    optimizer: v.optimizer,
                    aux: v.aux,
                    lr: v.lr.or(base.lr),
                    seed,
                    ..base.clone()
                };
                let basis = subspace_basis(v.init, v.d_init.unwrap_or(0), sample, seed)?;
                let spec = InitSpec {
                    scheme: v.init,
                    basis,
                    seed,
                    decoder_bias: v.decoder_bias,
                };
                let mut src = make_source(seed)?;
                let run = train(&config, &mut src, &spec)?;
                let d = run.params.d();
                let f = &run.final_metrics;
                log::info!(
                    "sweep cell {} h={h} seed={seed}: nmse {:.5}, dead {}",
                    v.name,
                    f.nmse,
                    f.dead_count
                );
                cells.push(SweepCell {
                    variant: v.name.clone(),
                    h,
                    seed,
                    params: run.params.num_params(),
                    final_nmse: f.nmse,
                    dead_count: f.dead_count,
                    alive_count: f.alive_count,
                    dead_frac: f.dead_frac,
                    alive_params: f.alive_count * (2 * d + 1) + d,
                    status: run.status.label().to_string(),
                });
            }
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if cells.is_empty() {
        out.write_record(SWEEP_COLUMNS)?;
    }
    for c in cells {
        out.serialize(c)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepCell>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
