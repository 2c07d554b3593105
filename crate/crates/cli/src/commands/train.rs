use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sparsedict::optim::OptimizerKind;
use sparsedict::sae::{write_checkpoint, DecoderBiasInit, InitScheme, InitSpec, SaeCheckpoint};
use sparsedict::spectra::{random_subspace, top_subspace, ProjectionBasis};
use sparsedict::store::{ShuffleBuffer, ShuffledStream};
use sparsedict::trainer::{
    train_with_observer, write_metrics_csv, AuxConfig, RunStatus, StreamSource, TrainConfig,
    TrainRun, RANDOM_BASIS_STREAM,
};
use sparsedict::Error;

use super::file_moments;
use crate::manifest::RunManifest;
use crate::settings::{resolve, ConfigMap};
use crate::usage;

pub const CHECKPOINT_FILE: &str = "sae.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.state";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Args, Serialize)]
pub struct Flags {
    /// Activation files to train on.
    #[arg(long, num_args = 1..)]
    data: Option<Vec<PathBuf>>,
    /// Number of features h.
    #[arg(long)]
    dim_hidden: Option<usize>,
    /// Active features per input.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = ["tied", "asi", "random-subspace"])]
    init: Option<String>,
    /// Subspace width for asi and random-subspace.
    #[arg(long)]
    d_init: Option<usize>,
    #[arg(long, value_parser = ["adam", "sparse-adam"])]
    optimizer: Option<String>,
    #[arg(long, value_parser = ["off", "auxk"])]
    aux: Option<String>,
    /// AuxK loss weight [default: 1/32].
    #[arg(long)]
    alpha: Option<f64>,
    /// Dead features used by AuxK [default: min(512, h/8)].
    #[arg(long)]
    k_aux: Option<usize>,
    /// Learning rate [default: 4e-5 for adam, 6e-5 for sparse-adam].
    #[arg(long)]
    lr: Option<f64>,
    /// Rows per step.
    #[arg(long)]
    batch: Option<usize>,
    /// Training token budget.
    #[arg(long)]
    tokens: Option<u64>,
    /// Tokens without firing before a feature counts as dead
    /// [default: min(10M, tokens/4)].
    #[arg(long)]
    dead_window: Option<u64>,
    /// Tokens between evaluations [default: tokens/50].
    #[arg(long)]
    eval_every: Option<u64>,
    /// Held-out rows for initialization scale and evaluation.
    #[arg(long)]
    eval_rows: Option<usize>,
    #[arg(long, value_parser = ["zero", "mean"])]
    decoder_bias: Option<String>,
    /// Shuffle buffer size in rows.
    #[arg(long)]
    shuffle_buffer: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $SPARSEDICT_DATA_DIR/sae].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxMode {
    #[default]
    Off,
    Auxk,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub data: Vec<PathBuf>,
    pub dim_hidden: usize,
    pub k: usize,
    pub init: InitScheme,
    pub d_init: Option<usize>,
    pub optimizer: OptimizerKind,
    pub aux: AuxMode,
    pub alpha: Option<f64>,
    pub k_aux: Option<usize>,
    pub lr: Option<f64>,
    pub batch: usize,
    pub tokens: u64,
    pub dead_window: Option<u64>,
    pub eval_every: Option<u64>,
    pub eval_rows: usize,
    pub decoder_bias: DecoderBiasInit,
    pub shuffle_buffer: usize,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            data: Vec::new(),
            dim_hidden: c.h,
            k: c.k,
            init: InitScheme::TiedRandom,
            d_init: None,
            optimizer: c.optimizer,
            aux: AuxMode::Off,
            alpha: None,
            k_aux: None,
            lr: c.lr,
            batch: c.batch_size,
            tokens: c.total_tokens,
            dead_window: c.dead_window,
            eval_every: c.eval_every,
            eval_rows: c.eval_rows,
            decoder_bias: DecoderBiasInit::default(),
            shuffle_buffer: ShuffleBuffer::default().capacity,
            weight_decay: c.weight_decay,
            max_grad_norm: c.max_grad_norm,
            seed: c.seed,
            out: None,
        }
    }
}

impl Settings {
    fn aux_config(&self) -> Option<AuxConfig> {
        (self.aux == AuxMode::Auxk).then(|| {
            let d = AuxConfig::for_width(self.dim_hidden);
            AuxConfig {
                alpha: self.alpha.unwrap_or(d.alpha),
                k_aux: self.k_aux.unwrap_or(d.k_aux),
            }
        })
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            h: self.dim_hidden,
            k: self.k,
            batch_size: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            aux: self.aux_config(),
            total_tokens: self.tokens,
            dead_window: self.dead_window,
            eval_every: self.eval_every,
            eval_rows: self.eval_rows,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }

    /// Fills every derived default so the manifest alone fixes the run.
    fn materialize(&mut self, config: &TrainConfig) {
        let r = config.resolved();
        self.lr = r.lr;
        self.dead_window = r.dead_window;
        self.eval_every = r.eval_every;
        if let Some(aux) = r.aux {
            self.alpha = Some(aux.alpha);
            self.k_aux = Some(aux.k_aux);
        }
    }
}

fn basis(s: &Settings, d: usize) -> anyhow::Result<Option<ProjectionBasis>> {
    let Some(m) = s.d_init else { return Ok(None) };
    Ok(match s.init {
        InitScheme::TiedRandom => None,
        InitScheme::ActiveSubspace => {
            let (moments, _) = file_moments(&s.data)?;
            Some(top_subspace(&moments, m)?)
        }
        InitScheme::RandomSubspace => Some(random_subspace(d, m, s.seed ^ RANDOM_BASIS_STREAM)?),
    })
}

fn write_outputs(run: &TrainRun, s: &Settings, dir: &Path, with_state: bool) -> anyhow::Result<Vec<PathBuf>> {
    let create = |name: &str| -> anyhow::Result<(PathBuf, BufWriter<File>)> {
        let p = dir.join(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok((p, BufWriter::new(f)))
    };
    let mut written = Vec::new();
    let (p, w) = create(CHECKPOINT_FILE)?;
    let ckpt = SaeCheckpoint {
        params: run.params.clone(),
        scheme: s.init.label().to_string(),
        seed: s.seed,
        step: run.steps,
    };
    write_checkpoint(&ckpt, w)?;
    written.push(p);
    if with_state {
        let (p, w) = create(OPTIMIZER_FILE)?;
        run.optimizer.write_state(w)?;
        written.push(p);
    }
    let (p, w) = create(METRICS_FILE)?;
    write_metrics_csv(&run.metrics, w)?;
    written.push(p);
    Ok(written)
}

pub fn run(file: &ConfigMap, flags: &Flags) -> anyhow::Result<()> {
    let mut s: Settings = resolve(file, flags)?;
    if s.init.needs_basis() && s.d_init.is_none() {
        return Err(usage(format!("--init {} needs --d-init", s.init.label())).into());
    }
    if s.d_init.is_some() && !s.init.needs_basis() {
        log::warn!("--d-init is ignored with --init tied");
        s.d_init = None;
    }
    if s.data.is_empty() {
        return Err(usage("--data needs at least one activation file").into());
    }
    if s.shuffle_buffer < s.batch {
        return Err(usage("--shuffle-buffer must be at least --batch").into());
    }
    let config = s.train_config();
    config.validate()?;
    s.materialize(&config);
    let out = super::output_path(&s.out, "sae");
    s.out = Some(out.clone());

    let buffer = ShuffleBuffer {
        capacity: s.shuffle_buffer,
        seed: s.seed,
        ..ShuffleBuffer::default()
    };
    let stream = ShuffledStream::open(&s.data, buffer, s.batch)?;
    let d = stream.d();
    if let Some(m) = s.d_init.filter(|m| *m == 0 || *m > d) {
        return Err(usage(format!("--d-init {m} must lie in 1..={d}")).into());
    }
    let mut manifest = RunManifest::new("train-sae", &s, Some(s.seed))?;
    manifest.hash_inputs(&s.data)?;
    let spec = InitSpec {
        scheme: s.init,
        basis: basis(&s, d)?,
        seed: s.seed,
        decoder_bias: s.decoder_bias,
    };

    let mut source = StreamSource::new(stream);
    let report_every = (config.total_tokens / 10).max(1);
    let mut next_report = report_every;
    let run = train_with_observer(&config, &mut source, &spec, &mut |ev| {
        let seen = ev.tokens_before + ev.rows as u64;
        if seen >= next_report {
            log::info!("step {} ({seen} tokens)", ev.step);
            next_report += report_every;
        }
    })?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let diverged = matches!(run.status, RunStatus::Diverged { .. });
    manifest.outputs = write_outputs(&run, &s, &out, !diverged)?;
    let f = &run.final_metrics;
    manifest.result = Some(json!({
        "status": run.status,
        "steps": run.steps,
        "tokens": run.tokens,
        "final": f,
    }));
    manifest.write(&out.join(MANIFEST_FILE))?;
    log::info!(
        "{}: nmse {:.5}, dead {} of {} after {} tokens",
        run.status.label(),
        f.nmse,
        f.dead_count,
        config.h,
        run.tokens
    );
    match run.status {
        RunStatus::Diverged { step, reason } => Err(Error::Diverged { step, reason })
            .context(format!("last good checkpoint written to {}", out.display())),
        RunStatus::Exhausted { tokens } => {
            log::warn!("data ran out after {tokens} tokens");
            Ok(())
        }
        RunStatus::Completed => Ok(()),
    }
}
