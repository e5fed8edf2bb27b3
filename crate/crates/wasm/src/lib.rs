//! Browser bindings for the demo page in `www/`.
//!
//! A [`Session`] holds one ground-truth field, its block-averaged LR version
//! and a small model that can be trained a few iterations at a time. Fields
//! cross the boundary as row-major `Float64Array`s.

use remd_core::data::{gen_grf, make_dataset};
use remd_core::nnet::{ModelContext, ModelParams, ModelShape, OptimizerState};
use remd_core::physics::PhysicsConfig;
use remd_core::rng::rng_for;
use remd_core::sampler::{make_cosine_schedule, sample, SampleOptions, DEFAULT_S_OFFSET};
use remd_core::spectral::{full_nbins, radial_error_spectrum, radial_power_spectrum};
use remd_core::training::{make_pair, train_from, TrainConfig};
use remd_core::transfer::{build_hierarchy, prolong_bilinear, WaveletFilterBank};
use remd_core::{Grid2D, ScalarField};
use wasm_bindgen::prelude::*;

type JsResult<T> = Result<T, String>;

fn js<T>(r: remd_core::Result<T>) -> JsResult<T> {
    r.map_err(|e| e.to_string())
}

/// Radial power spectrum of a row-major `n×n` field, one value per shell.
#[wasm_bindgen]
pub fn radial_spectrum(values: Vec<f64>, n: usize) -> JsResult<Vec<f64>> {
    let grid = js(Grid2D::square(n))?;
    let u = js(ScalarField::new(grid, values))?;
    Ok(js(radial_power_spectrum(&u, full_nbins(&grid)))?.power)
}

#[wasm_bindgen]
pub struct Session {
    grid: Grid2D,
    slope: f64,
    seed: u64,
    gt: ScalarField,
    lr: ScalarField,
    train_set: Vec<ScalarField>,
    ctx: ModelContext,
    params: ModelParams,
    optimizer: OptimizerState,
    iterations: usize,
    last: Option<ScalarField>,
}

#[wasm_bindgen]
impl Session {
    /// `n×n` fields with energy spectrum `∝ k^slope`; `n` must be a multiple
    /// of 8.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, slope: f64, seed: u64) -> JsResult<Session> {
        let grid = js(Grid2D::square(n))?;
        let shape = ModelShape::default();
        let ctx = ModelContext::new(
            js(build_hierarchy(grid, shape.levels, WaveletFilterBank::haar()))?,
            PhysicsConfig::default(),
            js(make_cosine_schedule(1000, DEFAULT_S_OFFSET))?,
        );
        let params = js(ModelParams::init(&shape, &mut rng_for(seed, "init")))?;
        let optimizer = OptimizerState::new(params.param_count(), TrainConfig::default().learning_rate);
        let gt = js(gen_grf(grid, slope, seed))?;
        let (lr, _) = js(make_pair(&gt, 2))?;
        Ok(Session {
            grid,
            slope,
            seed,
            gt,
            lr,
            train_set: Vec::new(),
            ctx,
            params,
            optimizer,
            iterations: 0,
            last: None,
        })
    }

    pub fn size(&self) -> usize {
        self.grid.nx
    }

    /// Replaces the ground truth with a fresh draw; the model is kept.
    pub fn regenerate(&mut self, seed: u64) -> JsResult<()> {
        self.gt = js(gen_grf(self.grid, self.slope, seed))?;
        self.lr = js(make_pair(&self.gt, 2))?.0;
        self.last = None;
        Ok(())
    }

    pub fn ground_truth(&self) -> Vec<f64> {
        self.gt.values().to_vec()
    }

    /// LR input, `n/2 × n/2`.
    pub fn low_res(&self) -> Vec<f64> {
        self.lr.values().to_vec()
    }

    pub fn bilinear(&self) -> JsResult<Vec<f64>> {
        Ok(js(prolong_bilinear(&self.lr, &self.grid))?.into_values())
    }

    /// Runs `count` more training iterations on a fixed set of generated
    /// fields and returns their losses.
    pub fn train(&mut self, count: usize) -> JsResult<Vec<f64>> {
        if self.train_set.is_empty() {
            self.train_set = js(make_dataset(16, self.grid, self.slope, self.seed ^ 0x5eed))?;
        }
        let cfg = TrainConfig {
            iterations: count,
            batch_size: 4,
            grid_size: self.grid.nx,
            seed: self.seed,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let out = js(train_from(
            &cfg,
            &self.ctx,
            &self.train_set,
            self.params.clone(),
            self.optimizer.clone(),
            self.iterations,
            None,
        ))?;
        self.params = out.params;
        self.optimizer = out.optimizer;
        self.iterations += count;
        Ok(out.losses)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Super-resolves the LR input in `nfe` reverse steps.
    pub fn super_resolve(&mut self, nfe: usize, seed: u64) -> JsResult<Vec<f64>> {
        let sched = js(self.ctx.schedule.clone().with_nfe(nfe))?;
        let opts = SampleOptions { seed, init_noise: 1.0 };
        let u = js(sample(&self.lr, &self.params, &sched, &self.ctx, &opts))?;
        let out = u.values().to_vec();
        self.last = Some(u);
        Ok(out)
    }

    /// `[rmse of last super-resolution, rmse of bilinear]`.
    pub fn rmse(&self) -> JsResult<Vec<f64>> {
        let bil = js(prolong_bilinear(&self.lr, &self.grid))?;
        let n = self.gt.values().len() as f64;
        let err = |u: &ScalarField| -> JsResult<f64> { Ok(js(u.sub(&self.gt))?.norm() / n.sqrt()) };
        let model = match &self.last {
            Some(u) => err(u)?,
            None => f64::NAN,
        };
        Ok(vec![model, err(&bil)?])
    }

    /// Radial error spectra: shells `0..m` for the last super-resolution,
    /// then `m..2m` for bilinear.
    pub fn error_spectra(&self) -> JsResult<Vec<f64>> {
        let nb = full_nbins(&self.grid);
        let bil = js(prolong_bilinear(&self.lr, &self.grid))?;
        let model = match &self.last {
            Some(u) => js(radial_error_spectrum(u, &self.gt, nb))?.power,
            None => vec![f64::NAN; nb],
        };
        let mut out = model;
        out.extend(js(radial_error_spectrum(&bil, &self.gt, nb))?.power);
        Ok(out)
    }
}
