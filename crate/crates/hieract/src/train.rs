//! AdamW, the warmup-cosine schedule, and the training loop that wires
//! projections, modality fusion, the interaction units and the losses into
//! one differentiable graph per mini-batch.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{InfoNceDirection, SoftmaxAxes, Tape, Var};
use crate::data::{Dataset, Splits};
use crate::encoding::{EmbeddingSet, ProjectionParams};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::fusion;
use crate::hier::{self, HierOptions};
use crate::objective::{self, KlDirection, ObjectiveOptions};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Every knob of a training run. Serialized verbatim into reports so a run
/// can be reproduced from its output directory alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Rate for the projection matrices (the "fine-tuned" group).
    pub lr_finetune: f64,
    /// Rate for newly introduced scalars, currently just the temperature.
    pub lr_new: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Entrywise stddev of the noise added to the identity init.
    pub init_sigma: f64,
    /// Global-norm gradient clip; disabled when absent.
    pub grad_clip: Option<f64>,
    // Ablation switches.
    pub no_cross: bool,
    pub no_hier_units: bool,
    pub video_only: bool,
    pub text_only: bool,
    pub ce_loss: bool,
    // Variant switches.
    pub kl_direction: KlDirection,
    pub strict_mask: bool,
    pub learnable_temperature: bool,
    pub hard_targets: bool,
    pub c2_softmax: SoftmaxAxes,
    pub infonce_direction: InfoNceDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr_finetune: 2e-3,
            lr_new: 2e-2,
            weight_decay: 0.2,
            warmup_epochs: 5,
            lambda1: 1.0,
            lambda2: 1.0,
            seed: 0,
            init_sigma: 0.01,
            grad_clip: None,
            no_cross: false,
            no_hier_units: false,
            video_only: false,
            text_only: false,
            ce_loss: false,
            kl_direction: KlDirection::PredTarget,
            strict_mask: false,
            learnable_temperature: true,
            hard_targets: false,
            c2_softmax: SoftmaxAxes::FlatLastTwo,
            infonce_direction: InfoNceDirection::Symmetric,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        let rate = |n: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{n} must be a positive rate, got {v}")));
            }
            Ok(())
        };
        rate("lr_finetune", self.lr_finetune)?;
        rate("lr_new", self.lr_new)?;
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (n, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{n} must be non-negative, got {v}")));
            }
        }
        if !self.init_sigma.is_finite() || self.init_sigma < 0.0 {
            return Err(Error::Config(format!(
                "init_sigma must be non-negative, got {}",
                self.init_sigma
            )));
        }
        if let Some(c) = self.grad_clip {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.video_only && self.text_only {
            return Err(Error::Config(
                "video_only and text_only are mutually exclusive".into(),
            ));
        }
        if self.strict_mask && self.kl_direction == KlDirection::TargetPred {
            return Err(Error::Config(
                "strict_mask zeroes belief entries, which the target_pred \
                 divergence cannot absorb; use pred_target"
                    .into(),
            ));
        }
        if self.hard_targets && !self.ce_loss {
            ObjectiveOptions {
                kl_direction: self.kl_direction,
                hard_targets: true,
                c2_axes: self.c2_softmax,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn forward_flags(&self) -> ForwardFlags {
        ForwardFlags {
            no_hier_units: self.no_hier_units,
            video_only: self.video_only,
            text_only: self.text_only,
            strict_mask: self.strict_mask,
            c2_softmax: self.c2_softmax,
        }
    }
}

/// The switches that change what the forward pass computes (as opposed to
/// which loss is attached to it). Evaluation shares these with training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardFlags {
    pub no_hier_units: bool,
    pub video_only: bool,
    pub text_only: bool,
    pub strict_mask: bool,
    pub c2_softmax: SoftmaxAxes,
}

impl Default for ForwardFlags {
    fn default() -> Self {
        TrainConfig::default().forward_flags()
    }
}

/// Tape handles for the parameters and the projected, renormalized towers.
pub struct ModelVars {
    pub p_v: Var,
    pub p_t: Var,
    pub log_t: Var,
    pub h_v: Var,
    pub h_a: Var,
    pub h_c1: Var,
    pub h_c2_flat: Var,
}

/// Puts the projections on the tape and runs every tower through its map
/// plus row renormalization. `trainable` decides whether the projection
/// matrices (and, if `learnable_temperature`, the log-temperature) receive
/// gradients; evaluation passes `false` and reuses the identical graph.
pub fn model_vars(
    tape: &mut Tape,
    set: &EmbeddingSet,
    params: &ProjectionParams,
    trainable: bool,
    learnable_temperature: bool,
) -> Result<ModelVars> {
    params.validate()?;
    if set.dim() != params.dim() {
        return Err(Error::shape(
            "model_vars",
            format!(
                "embedding dim {} vs projection dim {}",
                set.dim(),
                params.dim()
            ),
        ));
    }
    let lift = |tape: &mut Tape, t: Tensor, on: bool| {
        if on {
            tape.param(t)
        } else {
            tape.input(t)
        }
    };
    let p_v = lift(tape, params.p_v.clone(), trainable);
    let p_t = lift(tape, params.p_t.clone(), trainable);
    let log_t = lift(
        tape,
        Tensor::scalar(params.log_temperature),
        trainable && learnable_temperature,
    );
    let project = |tape: &mut Tape, raw: Tensor, p: Var| -> Result<Var> {
        let x = tape.input(raw);
        let mapped = tape.matmul(x, p)?;
        tape.row_normalize(mapped)
    };
    let h_v = project(tape, set.h_v().clone(), p_v)?;
    let h_a = project(tape, set.h_a().clone(), p_t)?;
    let h_c1 = project(tape, set.h_c1().clone(), p_t)?;
    let h_c2_flat = project(tape, set.h_c2_flat(), p_t)?;
    Ok(ModelVars {
        p_v,
        p_t,
        log_t,
        h_v,
        h_a,
        h_c1,
        h_c2_flat,
    })
}

/// Belief surfaces for one batch.
pub struct Surfaces {
    /// Item beliefs, `n x J`: drives the C1 prediction and the level-1 loss.
    pub c1: Var,
    /// Score beliefs before filtering, `n x J x K`: the independent metric.
    pub c2_pre: Var,
    /// The surface the level-2 loss sees (filtered unless units are off).
    pub c2_loss: Var,
    /// Temperature-scaled sample-to-sample logits when both modalities run.
    pub cross: Option<Var>,
}

/// Shared forward pass: level similarities per modality, fusion, then
/// either the interaction units plus filter or the flat softmax fallback.
///
/// Single-modality modes anchor the unit re-matching on the surviving
/// modality and never produce cross logits (a contrast needs both towers).
pub fn forward_surfaces(
    tape: &mut Tape,
    m: &ModelVars,
    flags: ForwardFlags,
    want_cross: bool,
) -> Result<Surfaces> {
    let n = tape.value(m.h_v).shape()[0];
    let j = tape.value(m.h_c1).shape()[0];
    let leaves = tape.value(m.h_c2_flat).shape()[0];
    let k = leaves / j;

    let fused_of = |tape: &mut Tape, level: Var| -> Result<Var> {
        if flags.video_only {
            fusion::level_similarity(tape, m.h_v, level)
        } else if flags.text_only {
            fusion::level_similarity(tape, m.h_a, level)
        } else {
            let sv = fusion::level_similarity(tape, m.h_v, level)?;
            let sa = fusion::level_similarity(tape, m.h_a, level)?;
            fusion::fuse_modalities(tape, sv, sa)
        }
    };
    let fused_c1 = fused_of(tape, m.h_c1)?;
    let fused_c2_flat = fused_of(tape, m.h_c2_flat)?;
    let fused_c2 = tape.reshape(fused_c2_flat, vec![n, j, k])?;

    let cross = if want_cross && !flags.video_only && !flags.text_only {
        let s_va = fusion::cross_modal_similarity(tape, m.h_v, m.h_a)?;
        Some(tape.temp_scale(s_va, m.log_t)?)
    } else {
        None
    };

    if flags.no_hier_units {
        let c1 = tape.softmax(fused_c1, SoftmaxAxes::Last)?;
        let c2 = tape.softmax(fused_c2, flags.c2_softmax)?;
        return Ok(Surfaces {
            c1,
            c2_pre: c2,
            c2_loss: c2,
            cross,
        });
    }

    let probe = if flags.text_only { m.h_a } else { m.h_v };
    let out = hier::hier_forward(
        tape,
        fused_c1,
        fused_c2,
        m.h_c1,
        m.h_c2_flat,
        probe,
        HierOptions {
            c2_axes: flags.c2_softmax,
            strict_mask: flags.strict_mask,
        },
    )?;
    Ok(Surfaces {
        c1: out.s2i.s_hat_c1,
        c2_pre: out.i2s.s_hat_c2,
        c2_loss: out.filtered_c2,
        cross,
    })
}

/// Scalar loss nodes for one batch.
pub struct BatchLosses {
    pub total: Var,
    pub cross: Option<Var>,
    pub hier1: Var,
    pub hier2: Var,
}

pub fn batch_losses(
    tape: &mut Tape,
    m: &ModelVars,
    cfg: &TrainConfig,
    labels: &[(usize, usize)],
) -> Result<BatchLosses> {
    let want_cross = !cfg.no_cross && !cfg.video_only && !cfg.text_only;
    let surf = forward_surfaces(tape, m, cfg.forward_flags(), want_cross)?;
    let (hier1, hier2) = if cfg.ce_loss {
        objective::ce_variant(tape, surf.c1, surf.c2_loss, labels)?
    } else {
        objective::hier_losses(
            tape,
            surf.c1,
            surf.c2_loss,
            labels,
            ObjectiveOptions {
                kl_direction: cfg.kl_direction,
                hard_targets: cfg.hard_targets,
                c2_axes: cfg.c2_softmax,
            },
        )?
    };
    let cross = match surf.cross {
        Some(logits) => Some(fusion::info_nce(tape, logits, cfg.infonce_direction)?),
        None => None,
    };
    let total = objective::total_loss(tape, cross, hier1, hier2, cfg.lambda1, cfg.lambda2)?;
    Ok(BatchLosses {
        total,
        cross,
        hier1,
        hier2,
    })
}

/// First and second Adam moments for one parameter tensor.
#[derive(Debug, Clone)]
pub struct MomentState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        MomentState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One decoupled-decay Adam update in place. `step` counts updates applied
/// to this tensor so far, starting at 1, and drives bias correction.
pub fn adamw_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut MomentState,
    step: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "param {} vs grad {} vs moments {}",
                theta.len(),
                grad.len(),
                state.m.len()
            ),
        ));
    }
    if step == 0 {
        return Err(Error::numeric("adamw_step", "step count must start at 1"));
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(
            "adamw_step",
            format!("non-finite gradient {} at flat index {pos}", grad[pos]),
        ));
    }
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..theta.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + lr * weight_decay * theta[i];
    }
    Ok(())
}

/// Optimizer state across the whole parameter set.
pub struct TrainState {
    pub step: u64,
    p_v: MomentState,
    p_t: MomentState,
    log_t: MomentState,
}

impl TrainState {
    pub fn new(dim: usize) -> Self {
        TrainState {
            step: 0,
            p_v: MomentState::new(dim * dim),
            p_t: MomentState::new(dim * dim),
            log_t: MomentState::new(1),
        }
    }
}

/// Warmup-cosine rate at `step` of `total_steps`: linear 0 to `peak` over
/// `warmup_steps`, then a half-cosine from `peak` to exactly 0 at the end.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> Result<f64> {
    if warmup_steps > total_steps {
        return Err(Error::Config(format!(
            "warmup {warmup_steps} exceeds total steps {total_steps}"
        )));
    }
    if step > total_steps {
        return Err(Error::numeric(
            "lr_at",
            format!("step {step} outside 0..={total_steps}"),
        ));
    }
    if warmup_steps > 0 && step <= warmup_steps {
        return Ok(peak * step as f64 / warmup_steps as f64);
    }
    if total_steps == warmup_steps {
        return Ok(peak);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Rate actually applied during 0-based `epoch`. The ramp is indexed by the
/// epoch's end so the first epoch is not frozen at zero, the decay by its
/// start so the last epoch keeps a nonzero rate; both conventions meet at
/// `peak` when warmup ends.
pub fn applied_lr(epoch: usize, epochs: usize, warmup_epochs: usize, peak: f64) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::numeric(
            "applied_lr",
            format!("epoch {epoch} outside 0..{epochs}"),
        ));
    }
    if epoch < warmup_epochs {
        lr_at(epoch + 1, epochs, warmup_epochs, peak)
    } else {
        lr_at(epoch, epochs, warmup_epochs, peak)
    }
}

/// Loss means and the rates in force for one epoch, plus validation
/// metrics when a validation split exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub cross_loss: Option<f64>,
    pub hier1_loss: f64,
    pub hier2_loss: f64,
    pub lr_finetune: f64,
    pub lr_new: f64,
    pub val: Option<MetricsReport>,
}

/// Everything a run produces besides the parameters themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub test: Option<MetricsReport>,
    pub wall_time_secs: f64,
}

fn diverged(epoch: usize, batch: usize, detail: impl std::fmt::Display) -> Error {
    Error::numeric("train", format!("epoch {epoch} batch {batch}: {detail}"))
}

fn grad_or_zero(tape: &Tape, v: Var, len: usize) -> Vec<f64> {
    tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
}

/// Schedule values and position for one step, fixed by the epoch loop.
#[derive(Clone, Copy)]
struct StepCtx {
    lr_finetune: f64,
    lr_new: f64,
    epoch: usize,
    batch: usize,
}

/// Runs one optimization step on `chunk` and returns the loss values.
fn step_batch(
    ds: &Dataset,
    chunk: &[usize],
    cfg: &TrainConfig,
    params: &mut ProjectionParams,
    state: &mut TrainState,
    ctx: StepCtx,
) -> Result<(f64, Option<f64>, f64, f64)> {
    let subset = ds.embeddings.select_samples(chunk)?;
    let labels: Vec<(usize, usize)> = chunk.iter().map(|&i| ds.labels[i]).collect();

    let mut tape = Tape::new();
    let m = model_vars(&mut tape, &subset, params, true, cfg.learnable_temperature)?;
    let losses = batch_losses(&mut tape, &m, cfg, &labels)?;
    let total = tape.value(losses.total).item()?;
    if !total.is_finite() {
        return Err(diverged(ctx.epoch, ctx.batch, format!("non-finite loss {total}")));
    }
    let cross = losses
        .cross
        .map(|c| tape.value(c).item())
        .transpose()?;
    let hier1 = tape.value(losses.hier1).item()?;
    let hier2 = tape.value(losses.hier2).item()?;
    tape.backward(losses.total)?;

    let dim = params.dim();
    let mut g_pv = grad_or_zero(&tape, m.p_v, dim * dim);
    let mut g_pt = grad_or_zero(&tape, m.p_t, dim * dim);
    let mut g_lt = grad_or_zero(&tape, m.log_t, 1);
    if let Some(limit) = cfg.grad_clip {
        let sq: f64 = g_pv
            .iter()
            .chain(&g_pt)
            .chain(&g_lt)
            .map(|g| g * g)
            .sum();
        let norm = sq.sqrt();
        if norm > limit {
            let s = limit / norm;
            for g in g_pv.iter_mut().chain(&mut g_pt).chain(&mut g_lt) {
                *g *= s;
            }
        }
    }

    state.step += 1;
    adamw_step(
        params.p_v.data_mut(),
        &g_pv,
        &mut state.p_v,
        state.step,
        ctx.lr_finetune,
        cfg.weight_decay,
    )
    .map_err(|e| diverged(ctx.epoch, ctx.batch, e))?;
    adamw_step(
        params.p_t.data_mut(),
        &g_pt,
        &mut state.p_t,
        state.step,
        ctx.lr_finetune,
        cfg.weight_decay,
    )
    .map_err(|e| diverged(ctx.epoch, ctx.batch, e))?;
    if cfg.learnable_temperature {
        // The temperature is a scale, not a weight: it is never decayed.
        let mut lt = [params.log_temperature];
        adamw_step(&mut lt, &g_lt, &mut state.log_t, state.step, ctx.lr_new, 0.0)
            .map_err(|e| diverged(ctx.epoch, ctx.batch, e))?;
        params.log_temperature = lt[0];
    }
    Ok((total, cross, hier1, hier2))
}

/// Trains on the train split and reports per-epoch losses, per-epoch
/// validation metrics and final test metrics. An empty train split (the
/// zero-shot mode) skips straight to evaluation of the initial parameters.
pub fn train(ds: &Dataset, splits: &Splits, cfg: &TrainConfig) -> Result<(ProjectionParams, TrainReport)> {
    cfg.validate()?;
    ds.validate()?;
    let start = Instant::now();
    let mut params = ProjectionParams::init(ds.embeddings.dim(), cfg.seed, cfg.init_sigma)?;
    let mut records = Vec::with_capacity(cfg.epochs);

    if !splits.train.is_empty() {
        let mut state = TrainState::new(params.dim());
        let mut order = splits.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for epoch in 0..cfg.epochs {
            let lr_ft = applied_lr(epoch, cfg.epochs, cfg.warmup_epochs, cfg.lr_finetune)?;
            let lr_new = applied_lr(epoch, cfg.epochs, cfg.warmup_epochs, cfg.lr_new)?;
            order.shuffle(&mut rng);
            let mut sum = (0.0, 0.0, 0.0, 0.0);
            let mut batches = 0usize;
            let mut saw_cross = false;
            for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let ctx = StepCtx {
                    lr_finetune: lr_ft,
                    lr_new,
                    epoch,
                    batch,
                };
                let (total, cross, h1, h2) =
                    step_batch(ds, chunk, cfg, &mut params, &mut state, ctx)?;
                sum.0 += total;
                if let Some(c) = cross {
                    sum.1 += c;
                    saw_cross = true;
                }
                sum.2 += h1;
                sum.3 += h2;
                batches += 1;
            }
            let denom = batches as f64;
            let val = if splits.val.is_empty() {
                None
            } else {
                Some(crate::eval::evaluate(
                    &params,
                    ds,
                    &splits.val,
                    cfg.forward_flags(),
                )?)
            };
            log::info!(
                "epoch {}/{}: train loss {:.6}{}",
                epoch + 1,
                cfg.epochs,
                sum.0 / denom,
                val.as_ref()
                    .map(|v| format!(", val c1 top1 {:.3} c2 coherent {:.3}", v.c1_top1, v.c2_top1_coherent))
                    .unwrap_or_default()
            );
            records.push(EpochRecord {
                epoch: epoch + 1,
                train_loss: sum.0 / denom,
                cross_loss: saw_cross.then(|| sum.1 / denom),
                hier1_loss: sum.2 / denom,
                hier2_loss: sum.3 / denom,
                lr_finetune: lr_ft,
                lr_new,
                val,
            });
        }
    }

    let test = if splits.test.is_empty() {
        None
    } else {
        Some(crate::eval::evaluate(
            &params,
            ds,
            &splits.test,
            cfg.forward_flags(),
        )?)
    };
    let report = TrainReport {
        config: cfg.clone(),
        seed: cfg.seed,
        epochs: records,
        test,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

/// Per-epoch curves in a fixed column order:
/// `epoch,train_loss,cross_loss,hier1_loss,hier2_loss,lr_finetune,lr_new,
/// val_c1_top1,val_c1_top3,val_c2_top1_independent,val_c2_top1_coherent`.
/// Absent values (no cross term, no validation split) are empty cells.
/// Contains no timing, so identical runs produce identical bytes.
pub fn write_metrics_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    let fmt = |v: f64| format!("{v}");
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    w.write_record([
        "epoch",
        "train_loss",
        "cross_loss",
        "hier1_loss",
        "hier2_loss",
        "lr_finetune",
        "lr_new",
        "val_c1_top1",
        "val_c1_top3",
        "val_c2_top1_independent",
        "val_c2_top1_coherent",
    ])
    .and_then(|()| {
        for r in &report.epochs {
            w.write_record([
                r.epoch.to_string(),
                fmt(r.train_loss),
                opt(r.cross_loss),
                fmt(r.hier1_loss),
                fmt(r.hier2_loss),
                fmt(r.lr_finetune),
                fmt(r.lr_new),
                opt(r.val.as_ref().map(|v| v.c1_top1)),
                opt(r.val.as_ref().map(|v| v.c1_top3)),
                opt(r.val.as_ref().map(|v| v.c2_top1_independent)),
                opt(r.val.as_ref().map(|v| v.c2_top1_coherent)),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })
    .map_err(|e| Error::Csv {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn save_report(path: &Path, report: &TrainReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
