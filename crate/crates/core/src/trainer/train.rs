use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SaeOptimizer;
use crate::sae::{aux_forward, aux_loss_value, backward, forward, init, residual, InitSpec};
use crate::sae::{reconstruction_loss, SaeParams};
use crate::trainer::{
    normalized_mse, DataSource, DeadFeatureTracker, FinalMetrics, MetricsRecord, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// The data ran out before the token budget was spent.
    Exhausted { tokens: u64 },
    /// A loss or gradient went non-finite; parameters are from the last
    /// evaluation before that step.
    Diverged { step: u64, reason: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Exhausted { .. } => "exhausted",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

/// What one optimizer step did, for callers that replay or audit a run.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub step: u64,
    /// Tokens seen before this step.
    pub tokens_before: u64,
    pub rows: usize,
    /// Features in any main-path or AuxK active set of the batch.
    pub fired: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: SaeParams<f32>,
    pub optimizer: SaeOptimizer<f32>,
    pub tracker: DeadFeatureTracker,
    pub metrics: Vec<MetricsRecord>,
    pub final_metrics: FinalMetrics,
    pub status: RunStatus,
    pub steps: u64,
    pub tokens: u64,
}

pub fn train<S: DataSource + ?Sized>(
    config: &TrainConfig,
    source: &mut S,
    init_spec: &InitSpec,
) -> Result<TrainRun> {
    train_with_observer(config, source, init_spec, &mut |_| {})
}

/// Draws the held-out rows, initializes, then runs forward, loss, backward
/// and one optimizer step per batch until the token budget is spent.
pub fn train_with_observer<S: DataSource + ?Sized>(
    config: &TrainConfig,
    source: &mut S,
    init_spec: &InitSpec,
    observer: &mut dyn FnMut(&StepEvent),
) -> Result<TrainRun> {
    config.validate()?;
    let d = source.d();
    let (h, k) = (config.h, config.k);
    let heldout = source
        .next_batch(config.eval_rows)?
        .ok_or_else(|| Error::invalid("data source is empty"))?;
    if heldout.n() < 2 {
        return Err(Error::invalid("data source has fewer than 2 rows"));
    }
    let mut params: SaeParams<f32> = init(init_spec, d, h, k, &heldout)?;
    let mut optimizer = SaeOptimizer::<f32>::new(config.optimizer, config.adam(), d, h);
    let mut tracker = DeadFeatureTracker::new(h, config.dead_window());
    let eval_every = config.eval_every();

    let evaluate = |params: &SaeParams<f32>| -> Result<(f64, f64)> {
        let fwd = forward(params, &heldout)?;
        Ok((normalized_mse(&heldout, &fwd.recon)?, fwd.mean_l0()))
    };

    let mut metrics = Vec::new();
    let mut last_good = params.clone();
    let (mut tokens, mut step) = (0u64, 0u64);
    let (mut next_eval, mut acc_recon, mut acc_aux, mut acc_rows) = (eval_every, 0.0, 0.0, 0u64);
    let mut status = RunStatus::Completed;

    while tokens < config.total_tokens {
        let want = (config.total_tokens - tokens).min(config.batch_size as u64) as usize;
        let Some(batch) = source.next_batch(want)? else {
            log::warn!("data exhausted after {tokens} of {} tokens", config.total_tokens);
            status = RunStatus::Exhausted { tokens };
            break;
        };
        if batch.d() != d {
            return Err(Error::DimensionMismatch {
                what: "batch dimension",
                expected: d,
                found: batch.d(),
            });
        }
        let rows = batch.n();
        step += 1;

        let fwd = forward(&params, &batch)?;
        let loss_recon = reconstruction_loss(&fwd, &batch)?;
        let res = residual(&fwd, &batch);
        let aux = match &config.aux {
            Some(a) => aux_forward(&params, &fwd, &tracker.dead_mask(), a.k_aux)?
                .map(|af| (af, a.alpha as f32)),
            None => None,
        };
        let loss_aux = aux.as_ref().map(|(af, _)| aux_loss_value(af, &res)).unwrap_or(0.0);
        let alpha = aux.as_ref().map(|(_, a)| *a as f64).unwrap_or(0.0);
        let total = loss_recon + alpha * loss_aux;
        if !total.is_finite() {
            status = RunStatus::Diverged {
                step,
                reason: format!("non-finite loss {total}"),
            };
            break;
        }
        let grads = backward(
            &params,
            &batch,
            &fwd,
            aux.as_ref().map(|(af, a)| (af, res.as_slice(), *a)),
        )?;
        match optimizer.step(&mut params, &grads) {
            Ok(()) => {}
            Err(Error::Numeric(reason)) => {
                status = RunStatus::Diverged { step, reason };
                break;
            }
            Err(e) => return Err(e),
        }
        tracker.observe(&grads.touched, rows as u64);
        observer(&StepEvent {
            step,
            tokens_before: tokens,
            rows,
            fired: &grads.touched,
        });
        tokens += rows as u64;
        acc_recon += loss_recon * rows as f64;
        acc_aux += loss_aux * rows as f64;
        acc_rows += rows as u64;

        if tokens >= next_eval || tokens >= config.total_tokens {
            let (nmse, l0) = evaluate(&params)?;
            if !nmse.is_finite() {
                status = RunStatus::Diverged {
                    step,
                    reason: format!("held-out normalized MSE is {nmse}"),
                };
                break;
            }
            metrics.push(record(step, tokens, nmse, l0, &tracker, acc_recon, acc_aux, acc_rows));
            last_good.clone_from(&params);
            (acc_recon, acc_aux, acc_rows) = (0.0, 0.0, 0);
            while next_eval <= tokens {
                next_eval += eval_every;
            }
        }
    }

    if matches!(status, RunStatus::Exhausted { .. }) && (acc_rows > 0 || metrics.is_empty()) {
        let (nmse, l0) = evaluate(&params)?;
        metrics.push(record(step, tokens, nmse, l0, &tracker, acc_recon, acc_aux, acc_rows));
    }
    if matches!(status, RunStatus::Diverged { .. }) {
        params = last_good;
    }
    if metrics.is_empty() {
        // diverged before the first evaluation
        let (nmse, l0) = evaluate(&params)?;
        metrics.push(record(step, tokens, nmse, l0, &tracker, 0.0, 0.0, 0));
    }
    let tail = &metrics[metrics.len().saturating_sub(3)..];
    let dead_count = tracker.dead_count();
    let final_metrics = FinalMetrics {
        nmse: tail.iter().map(|m| m.nmse).sum::<f64>() / tail.len() as f64,
        dead_count,
        alive_count: h - dead_count,
        dead_frac: dead_count as f64 / h as f64,
    };
    Ok(TrainRun {
        params,
        optimizer,
        tracker,
        metrics,
        final_metrics,
        status,
        steps: step,
        tokens,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    step: u64,
    tokens: u64,
    nmse: f64,
    l0: f64,
    tracker: &DeadFeatureTracker,
    acc_recon: f64,
    acc_aux: f64,
    acc_rows: u64,
) -> MetricsRecord {
    let dead_count = tracker.dead_count();
    let mean = |acc: f64| if acc_rows == 0 { f64::NAN } else { acc / acc_rows as f64 };
    MetricsRecord {
        step,
        tokens,
        nmse,
        dead_count,
        dead_frac: tracker.dead_fraction(),
        l0,
        loss_recon: mean(acc_recon),
        loss_aux: mean(acc_aux),
    }
}
