//! Learnable parameters, the learned head, the ε-prediction loss with a
//! hand-written backward pass, the Adam optimizer and checkpoints.
//!
//! Flat parameter order:
//! 1. smoothers, per level `0..=L`: 9 kernel taps (row-major) then the bias;
//! 2. gates: `w1`, `b1`, `w2`, `b2`;
//! 3. head: `conv1_w`, `conv1_b`, `film_scale_w`, `film_scale_b`,
//!    `film_shift_w`, `film_shift_b`, `conv2_w`, `conv2_b`.

mod checkpoint;
mod head;
mod model;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use head::{head_forward, HeadParams};
pub use model::{loss_and_grad, model_drift, predict_eps, Drift, ModelContext, TrainItem};
pub use optim::{optimizer_step, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgcorr::{GateParams, SmootherParams};

/// Architecture hyper-parameters; together with a flat vector they fully
/// determine a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub levels: usize,
    pub d_emb: usize,
    pub hidden: usize,
    pub channels: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            levels: 3,
            d_emb: 32,
            hidden: 32,
            channels: 8,
        }
    }
}

impl ModelShape {
    pub fn with_levels(levels: usize) -> Self {
        Self {
            levels,
            ..Self::default()
        }
    }

    pub fn param_count(&self) -> usize {
        let smoothers = 10 * (self.levels + 1);
        let gates = self.hidden * self.d_emb + self.hidden + self.levels * self.hidden + self.levels;
        let c = self.channels;
        let head = 9 * c + c + 2 * (c * self.d_emb + c) + 9 * c + 1;
        smoothers + gates + head
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_emb % 2 != 0 {
            return Err(Error::param("mg.d_emb", format!("must be even and positive, got {}", self.d_emb)));
        }
        if self.hidden == 0 {
            return Err(Error::param("mg.hidden", "must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::param("model.channels", "must be positive"));
        }
        Ok(())
    }
}

/// Standard deviation of the noise added to identity smoother kernels at init.
pub const SMOOTHER_INIT_NOISE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub smoothers: SmootherParams,
    pub gates: GateParams,
    pub head: HeadParams,
}

impl ModelParams {
    /// Near-identity smoothers, small random gate MLP, head with a zero last layer.
    pub fn init(shape: &ModelShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            smoothers: SmootherParams::init(shape.levels, SMOOTHER_INIT_NOISE, rng),
            gates: GateParams::init(shape.levels, shape.d_emb, shape.hidden, rng)?,
            head: HeadParams::init(shape.channels, shape.d_emb, rng)?,
        })
    }

    pub fn zeros(shape: &ModelShape) -> Self {
        Self {
            smoothers: SmootherParams::zeros(shape.levels),
            gates: GateParams::zeros(shape.levels, shape.d_emb, shape.hidden),
            head: HeadParams::zeros(shape.channels, shape.d_emb),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            levels: self.smoothers.levels(),
            d_emb: self.gates.d_emb,
            hidden: self.gates.hidden,
            channels: self.head.channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.smoothers.param_count() + self.gates.param_count() + self.head.param_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothers.validate()?;
        self.gates.validate()?;
        self.head.validate()?;
        if self.gates.levels != self.smoothers.levels() || self.gates.d_emb != self.head.d_emb {
            return Err(Error::param("model", "component shapes disagree"));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(|slice| out.extend_from_slice(slice));
        out
    }

    pub fn unflatten(shape: &ModelShape, flat: &[f64]) -> Result<Self> {
        shape.validate()?;
        let expected = shape.param_count();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut p = Self::zeros(shape);
        let mut offset = 0;
        p.visit_mut(|slice| {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        });
        Ok(p)
    }

    /// Overwrites every parameter from `flat` (same layout as [`Self::flatten`]).
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        *self = Self::unflatten(&self.shape(), flat)?;
        Ok(())
    }

    fn visit(&self, mut f: impl FnMut(&[f64])) {
        for (k, b) in self.smoothers.kernels.iter().zip(&self.smoothers.biases) {
            f(k);
            f(std::slice::from_ref(b));
        }
        let g = &self.gates;
        for v in [&g.w1, &g.b1, &g.w2, &g.b2] {
            f(v);
        }
        let h = &self.head;
        f(h.conv1_w.as_flattened());
        f(&h.conv1_b);
        f(&h.film_scale_w);
        f(&h.film_scale_b);
        f(&h.film_shift_w);
        f(&h.film_shift_b);
        f(h.conv2_w.as_flattened());
        f(std::slice::from_ref(&h.conv2_b));
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for (k, b) in self.smoothers.kernels.iter_mut().zip(&mut self.smoothers.biases) {
            f(k);
            f(std::slice::from_mut(b));
        }
        let g = &mut self.gates;
        for v in [&mut g.w1, &mut g.b1, &mut g.w2, &mut g.b2] {
            f(v);
        }
        let h = &mut self.head;
        f(h.conv1_w.as_flattened_mut());
        f(&mut h.conv1_b);
        f(&mut h.film_scale_w);
        f(&mut h.film_scale_b);
        f(&mut h.film_shift_w);
        f(&mut h.film_shift_b);
        f(h.conv2_w.as_flattened_mut());
        f(std::slice::from_mut(&mut h.conv2_b));
    }
}
