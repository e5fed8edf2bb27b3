//! Desk-scale training loop for the ε-prediction objective.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::nnet::{loss_and_grad, optimizer_step, save_checkpoint, Checkpoint, ModelContext, ModelParams, OptimizerState, TrainItem};
use crate::rng::rng_for;
use crate::sampler::{forward_diffuse, gaussian_field};
use crate::transfer::restrict_avg_n;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scale_factor: usize,
    pub grid_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            scale_factor: 2,
            grid_size: 32,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("train.learning_rate", "must be positive"));
        }
        if !matches!(self.scale_factor, 2 | 4) {
            return Err(Error::param("train.scale_factor", format!("must be 2 or 4, got {}", self.scale_factor)));
        }
        if self.grid_size == 0 || self.grid_size % self.scale_factor != 0 {
            return Err(Error::NotDivisible {
                dim: self.grid_size,
                divisor: self.scale_factor,
            });
        }
        Ok(())
    }

    pub fn scale_levels(&self) -> usize {
        self.scale_factor.trailing_zeros() as usize
    }
}

/// `(restrict_avg^log2(scale)(u_hr), u_hr)`.
pub fn make_pair(u_hr: &ScalarField, scale: usize) -> Result<(ScalarField, ScalarField)> {
    if scale == 0 || !scale.is_power_of_two() {
        return Err(Error::param("scale", format!("must be a power of two, got {scale}")));
    }
    let lr = restrict_avg_n(u_hr, scale.trailing_zeros() as usize)?;
    Ok((lr, u_hr.clone()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Loss of each iteration, starting at `start_iteration`.
    pub losses: Vec<f64>,
    pub start_iteration: usize,
}

impl TrainOutcome {
    /// `iter,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,loss\n");
        for (k, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{},{:e}", self.start_iteration + k, l);
        }
        s
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

/// Dataset index for the `pos`-th draw: epochs are seed-deterministic permutations.
struct Shuffler {
    seed: u64,
    n: usize,
    epoch: usize,
    order: Vec<usize>,
}

impl Shuffler {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            epoch: usize::MAX,
            order: Vec::new(),
        }
    }

    fn index(&mut self, pos: usize) -> usize {
        let epoch = pos / self.n;
        if epoch != self.epoch {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng_for(self.seed, &format!("shuffle/{epoch}")));
            self.epoch = epoch;
        }
        self.order[pos % self.n]
    }
}

/// Builds the batch for iteration `iter`. Every random draw comes from a
/// stream keyed by `(seed, iter)`, so resumed runs see the same batches.
fn make_batch(
    cfg: &TrainConfig,
    ctx: &ModelContext,
    pairs: &[(ScalarField, ScalarField)],
    shuffler: &mut Shuffler,
    iter: usize,
) -> Result<Vec<TrainItem>> {
    let mut rng = rng_for(cfg.seed, &format!("train/{iter}"));
    let total = ctx.schedule.total;
    (0..cfg.batch_size)
        .map(|b| {
            let (u_lr, u_hr) = &pairs[shuffler.index(iter * cfg.batch_size + b)];
            let t = rng.random_range(1..=total);
            let eps = gaussian_field(*u_hr.grid(), &mut rng);
            let u_t = forward_diffuse(u_hr, t, &ctx.schedule, &eps)?;
            Ok(TrainItem {
                u_t,
                t,
                eps,
                u_lr: u_lr.clone(),
                anchor: u_lr.clone(),
            })
        })
        .collect()
}

/// Trains from fresh or resumed state. Checkpoints (`ckpt_{iter}.rmdp`) go to
/// `out_dir` when given and `checkpoint_every > 0`.
pub fn train_from(
    cfg: &TrainConfig,
    ctx: &ModelContext,
    dataset: &[ScalarField],
    params: ModelParams,
    optimizer: OptimizerState,
    start_iteration: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::param("dataset", "must be nonempty"));
    }
    for u in dataset {
        crate::field::check_same_grid(u.grid(), ctx.hierarchy.finest())?;
    }
    let pairs = dataset
        .iter()
        .map(|u| make_pair(u, cfg.scale_factor))
        .collect::<Result<Vec<_>>>()?;
    let mut shuffler = Shuffler::new(cfg.seed, pairs.len());
    let mut out = TrainOutcome {
        params,
        optimizer,
        losses: Vec::with_capacity(cfg.iterations),
        start_iteration,
    };
    for iter in start_iteration..start_iteration + cfg.iterations {
        let batch = make_batch(cfg, ctx, &pairs, &mut shuffler, iter)?;
        let (loss, grad) = loss_and_grad(&out.params, ctx, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: iter, loss });
        }
        optimizer_step(&mut out.optimizer, &mut out.params, &grad)?;
        out.losses.push(loss);
        let done = iter + 1;
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("ckpt_{done:06}.rmdp")), &out.checkpoint())?;
            }
        }
    }
    Ok(out)
}

/// Fresh training run: parameters initialized from the `init` sub-seed.
pub fn train(
    cfg: &TrainConfig,
    ctx: &ModelContext,
    shape: &crate::nnet::ModelShape,
    dataset: &[ScalarField],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(shape, &mut rng_for(cfg.seed, "init"))?;
    if params.smoothers.levels() != ctx.hierarchy.levels {
        return Err(Error::param("mg.levels", "model and hierarchy disagree"));
    }
    let optimizer = OptimizerState::new(params.param_count(), cfg.learning_rate);
    train_from(cfg, ctx, dataset, params, optimizer, 0, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;
    use crate::field::Grid2D;
    use crate::nnet::{load_checkpoint, ModelShape};
    use crate::physics::PhysicsConfig;
    use crate::sampler::{make_cosine_schedule, DEFAULT_S_OFFSET};
    use crate::transfer::{build_hierarchy, restrict_avg, WaveletFilterBank};

    fn setup(n: usize, levels: usize, count: usize) -> (ModelContext, ModelShape, Vec<ScalarField>) {
        let g = Grid2D::square(n).unwrap();
        let ctx = ModelContext::new(
            build_hierarchy(g, levels, WaveletFilterBank::haar()).unwrap(),
            PhysicsConfig::default(),
            make_cosine_schedule(1000, DEFAULT_S_OFFSET).unwrap(),
        );
        let shape = ModelShape {
            levels,
            ..ModelShape::default()
        };
        (ctx, shape, make_dataset(count, g, -5.0 / 3.0, 11).unwrap())
    }

    #[test]
    fn make_pair_examples() {
        let g = Grid2D::square(64).unwrap();
        let u = crate::data::gen_grf(g, -2.0, 1).unwrap();
        let (lr, hr) = make_pair(&u, 2).unwrap();
        assert_eq!((lr.grid().nx, lr.grid().ny), (32, 32));
        assert_eq!(hr, u);
        let (lr, _) = make_pair(&ScalarField::filled(g, 3.25), 4).unwrap();
        assert!(lr.values().iter().all(|&v| v == 3.25));
        let (lr4, _) = make_pair(&u, 4).unwrap();
        let twice = restrict_avg(&restrict_avg(&u).unwrap()).unwrap();
        for (a, b) in lr4.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(make_pair(&u, 3).is_err());
        assert!(make_pair(&ScalarField::zeros(Grid2D::square(6).unwrap()), 4).is_err());
    }

    #[test]
    fn zero_iterations_return_initial_params() {
        let (ctx, shape, data) = setup(16, 2, 4);
        let cfg = TrainConfig {
            iterations: 0,
            grid_size: 16,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ctx, &shape, &data, None).unwrap();
        let init = ModelParams::init(&shape, &mut rng_for(cfg.seed, "init")).unwrap();
        assert_eq!(out.params, init);
        assert!(out.params.head.conv2_w.iter().flatten().all(|&w| w == 0.0));
        assert!(out.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (ctx, shape, data) = setup(16, 2, 6);
        let cfg = TrainConfig {
            iterations: 10,
            batch_size: 4,
            grid_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &ctx, &shape, &data, None).unwrap();
        let b = train(&cfg, &ctx, &shape, &data, None).unwrap();
        assert_eq!(a.loss_csv(), b.loss_csv());
        assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.loss_csv().starts_with("iter,loss\n0,"));
    }

    #[test]
    fn checkpoint_resume_reproduces_losses() {
        let (ctx, shape, data) = setup(16, 2, 5);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            iterations: 6,
            batch_size: 3,
            grid_size: 16,
            checkpoint_every: 3,
            seed: 2,
            ..TrainConfig::default()
        };
        let full = train(&cfg, &ctx, &shape, &data, Some(dir.path())).unwrap();
        let ck = load_checkpoint(&dir.path().join("ckpt_000003.rmdp")).unwrap();
        let rest = TrainConfig { iterations: 3, ..cfg.clone() };
        let resumed = train_from(&rest, &ctx, &data, ck.params, ck.optimizer, 3, None).unwrap();
        assert_eq!(resumed.losses, full.losses[3..].to_vec());
        assert_eq!(resumed.params, full.params);
        assert!(dir.path().join("ckpt_000006.rmdp").exists());
    }

    #[test]
    fn shuffling_visits_every_item_each_epoch() {
        let mut s = Shuffler::new(9, 7);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|k| s.index(epoch * 7 + k)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
        let mut a = Shuffler::new(9, 7);
        let mut b = Shuffler::new(9, 7);
        assert!((0..30).all(|p| a.index(p) == b.index(p)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { scale_factor: 3, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { grid_size: 30, scale_factor: 4, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let (ctx, shape, _) = setup(16, 2, 1);
        assert!(train(&TrainConfig::default(), &ctx, &shape, &[], None).is_err());
    }
}
