//! Full model: residual → corrector → head → ε-prediction, with its exact gradient.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::head::{head_backward, head_forward_taped};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::field::{check_same_grid, ScalarField};
use crate::mgcorr::{assemble_residual, corrector_backward, corrector_forward, gate_backward, gate_forward};
use crate::physics::PhysicsConfig;
use crate::sampler::TimestepSchedule;
use crate::transfer::LevelHierarchy;

/// Everything besides the learnable parameters that a forward pass needs.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub hierarchy: LevelHierarchy,
    pub physics: PhysicsConfig,
    pub schedule: TimestepSchedule,
    /// Fixed gate values replacing the MLP output (no gate gradients).
    pub gate_override: Option<Vec<f64>>,
}

impl ModelContext {
    pub fn new(hierarchy: LevelHierarchy, physics: PhysicsConfig, schedule: TimestepSchedule) -> Self {
        Self {
            hierarchy,
            physics,
            schedule,
            gate_override: None,
        }
    }

    pub fn with_gates(mut self, gates: Vec<f64>) -> Self {
        self.gate_override = Some(gates);
        self
    }
}

/// Terms of one reverse update before scaling by `α_t`, `β_t`.
#[derive(Debug, Clone)]
pub struct Drift {
    pub residual: ScalarField,
    pub gates: Vec<f64>,
    /// `e_t = S_t(r(u_t))`
    pub correction: ScalarField,
    /// `g_θ(u_t, t)`
    pub head: ScalarField,
}

pub fn model_drift(
    params: &ModelParams,
    ctx: &ModelContext,
    u_t: &ScalarField,
    t: usize,
    u_lr: &ScalarField,
    anchor: &ScalarField,
) -> Result<Drift> {
    Ok(forward(params, ctx, u_t, t, u_lr, anchor)?.drift)
}

struct Forward {
    drift: Drift,
    gate_tape: Option<crate::mgcorr::GateTape>,
    corrector_tape: crate::mgcorr::CorrectorTape,
    head_tape: super::head::HeadTape,
}

fn forward(
    params: &ModelParams,
    ctx: &ModelContext,
    u_t: &ScalarField,
    t: usize,
    u_lr: &ScalarField,
    anchor: &ScalarField,
) -> Result<Forward> {
    check_same_grid(u_t.grid(), ctx.hierarchy.finest())?;
    let total = ctx.schedule.total;
    let fb = &ctx.hierarchy.filterbank;
    let residual = assemble_residual(u_t, u_lr, anchor, &ctx.physics, fb, t, total)?;
    let (gates, gate_tape) = match &ctx.gate_override {
        Some(g) => (g.clone(), None),
        None => {
            let tape = gate_forward(t, total, &params.gates)?;
            (tape.gates.clone(), Some(tape))
        }
    };
    let (correction, corrector_tape) = corrector_forward(&residual, &gates, &params.smoothers, &ctx.hierarchy, None)?;
    let (head, head_tape) = head_forward_taped(u_t, t, total, &params.head)?;
    Ok(Forward {
        drift: Drift {
            residual,
            gates,
            correction,
            head,
        },
        gate_tape,
        corrector_tape,
        head_tape,
    })
}

fn eps_scale(sched: &TimestepSchedule, t: usize) -> Result<f64> {
    let s = sched.noise_level(t);
    if s <= 0.0 {
        return Err(Error::param("t", format!("noise level is zero at t = {t}")));
    }
    Ok(s)
}

/// `ε̂ = -(α_t e_t + β_t g_θ) / √(1-ᾱ_t)`.
fn eps_from_drift(drift: &Drift, sched: &TimestepSchedule, t: usize) -> Result<ScalarField> {
    let s = eps_scale(sched, t)?;
    let mut out = drift.correction.scale(-sched.alpha[t] / s);
    out.add_scaled(-sched.beta[t] / s, &drift.head)?;
    Ok(out)
}

pub fn predict_eps(
    params: &ModelParams,
    ctx: &ModelContext,
    u_t: &ScalarField,
    t: usize,
    u_lr: &ScalarField,
    anchor: &ScalarField,
) -> Result<ScalarField> {
    let drift = model_drift(params, ctx, u_t, t, u_lr, anchor)?;
    eps_from_drift(&drift, &ctx.schedule, t)
}

/// One training example: the diffused state, its timestep and injected noise,
/// the LR observation and the physics anchor.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub u_t: ScalarField,
    pub t: usize,
    pub eps: ScalarField,
    pub u_lr: ScalarField,
    pub anchor: ScalarField,
}

fn item_loss_and_grad(params: &ModelParams, ctx: &ModelContext, item: &TrainItem, norm: f64) -> Result<(f64, Vec<f64>)> {
    if item.t > ctx.schedule.total {
        return Err(Error::param("t", format!("{} exceeds T", item.t)));
    }
    check_same_grid(item.eps.grid(), item.u_t.grid())?;
    let fwd = forward(params, ctx, &item.u_t, item.t, &item.u_lr, &item.anchor)?;
    let eps_hat = eps_from_drift(&fwd.drift, &ctx.schedule, item.t)?;
    let diff = item.eps.sub(&eps_hat)?;
    let loss = diff.values().iter().map(|d| d * d).sum::<f64>() / norm;

    let s = eps_scale(&ctx.schedule, item.t)?;
    let (alpha, beta) = (ctx.schedule.alpha[item.t], ctx.schedule.beta[item.t]);
    // dL/dε̂ = -2(ε - ε̂)/norm; ε̂ = -(α e + β g)/s
    let d_eps_hat = diff.scale(-2.0 / norm);
    let mut grad = ModelParams::zeros(&params.shape());
    if alpha != 0.0 {
        let grad_e = d_eps_hat.scale(-alpha / s);
        let d_gates = corrector_backward(
            &fwd.corrector_tape,
            &fwd.drift.gates,
            &ctx.hierarchy,
            &grad_e,
            &mut grad.smoothers,
        )?;
        if let Some(tape) = &fwd.gate_tape {
            gate_backward(tape, &params.gates, &d_gates, &mut grad.gates);
        }
    }
    if beta != 0.0 {
        let grad_g = d_eps_hat.scale(-beta / s);
        head_backward(&fwd.head_tape, &params.head, &item.u_t, &grad_g, &mut grad.head);
    }
    Ok((loss, grad.flatten()))
}

/// Mean squared ε-prediction error over all cells of all items, and its
/// exact gradient with respect to the flat parameter vector. Items are
/// reduced in batch order, so results do not depend on thread scheduling.
pub fn loss_and_grad(params: &ModelParams, ctx: &ModelContext, batch: &[TrainItem]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    params.validate()?;
    let norm = batch.iter().map(|b| b.u_t.values().len()).sum::<usize>() as f64;

    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|item| item_loss_and_grad(params, ctx, item, norm))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .iter()
        .map(|item| item_loss_and_grad(params, ctx, item, norm))
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; params.param_count()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}
