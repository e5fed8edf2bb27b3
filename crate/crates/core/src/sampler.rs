//! Noise schedule, forward diffusion and the few-step reverse sampler
//! `u_{t-1} = u_t + α_t e_t + β_t g_θ(u_t, t) + σ_t ε`.

use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{field_axpy, Grid2D, ScalarField};
use crate::nnet::{model_drift, ModelContext, ModelParams};
use crate::transfer::{scale_levels, wavelet_lift};

pub const DEFAULT_S_OFFSET: f64 = 0.008;

/// Per-timestep coefficients on the full training grid `t = 0..=T`, plus the
/// descending subsequence visited at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepSchedule {
    pub total: usize,
    pub alphabar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub ddim_steps: Vec<usize>,
}

/// Drift strengths: `α_t = scale·(1-ᾱ_t)/(1-ᾱ_{t-1})` clipped to `[floor, clip]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCoefficients {
    pub scale: f64,
    pub floor: f64,
    pub clip: f64,
}

impl Default for DriftCoefficients {
    fn default() -> Self {
        Self {
            scale: 0.5,
            floor: 0.05,
            clip: 1.0,
        }
    }
}

/// `ᾱ_t = f(t)/f(0)`, `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`.
pub fn cosine_alphabar(total: usize, s_offset: f64) -> Vec<f64> {
    let f = |t: usize| {
        let x = (t as f64 / total as f64 + s_offset) / (1.0 + s_offset) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    (0..=total).map(|t| (f(t) / f0).clamp(0.0, 1.0)).collect()
}

/// Evenly spaced descending steps `round(T·(k-i)/k)`, `i = 0..k`.
pub fn ddim_subsequence(total: usize, nfe: usize) -> Result<Vec<usize>> {
    if nfe > total {
        return Err(Error::param("sampler.nfe", format!("{nfe} exceeds T = {total}")));
    }
    Ok((0..nfe)
        .map(|i| ((total * (nfe - i)) as f64 / nfe as f64).round() as usize)
        .collect())
}

fn drift_coefficients(alphabar: &[f64], c: &DriftCoefficients) -> Vec<f64> {
    let mut out = vec![0.0; alphabar.len()];
    for t in 1..alphabar.len() {
        let den = 1.0 - alphabar[t - 1];
        let raw = if den > 0.0 {
            c.scale * (1.0 - alphabar[t]) / den
        } else {
            f64::INFINITY
        };
        out[t] = raw.clamp(c.floor, c.clip);
    }
    out
}

pub fn make_cosine_schedule(total: usize, s_offset: f64) -> Result<TimestepSchedule> {
    if total < 1 {
        return Err(Error::param("sampler.T", "must be at least 1"));
    }
    if !(s_offset >= 0.0 && s_offset.is_finite()) {
        return Err(Error::param("s_offset", format!("must be finite and >= 0, got {s_offset}")));
    }
    let alphabar = cosine_alphabar(total, s_offset);
    let alpha = drift_coefficients(&alphabar, &DriftCoefficients::default());
    Ok(TimestepSchedule {
        total,
        beta: alpha.clone(),
        alpha,
        sigma: vec![0.0; total + 1],
        ddim_steps: ddim_subsequence(total, 5.min(total))?,
        alphabar,
    })
}

impl TimestepSchedule {
    pub fn with_nfe(mut self, nfe: usize) -> Result<Self> {
        self.ddim_steps = ddim_subsequence(self.total, nfe)?;
        Ok(self)
    }

    pub fn with_drift(mut self, c: DriftCoefficients) -> Result<Self> {
        if !(c.floor >= 0.0 && c.floor <= c.clip && c.scale >= 0.0 && c.clip.is_finite()) {
            return Err(Error::param("sampler.alpha_clip", format!("inconsistent drift coefficients {c:?}")));
        }
        self.alpha = drift_coefficients(&self.alphabar, &c);
        self.beta = self.alpha.clone();
        Ok(self)
    }

    /// Stochastic variant: `σ_t = η·sqrt((1-ᾱ_{t-1})/(1-ᾱ_t)·(1-ᾱ_t/ᾱ_{t-1}))`;
    /// `η = 0` is the deterministic sampler.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::param("sampler.eta", format!("must be >= 0, got {eta}")));
        }
        self.sigma = vec![0.0; self.total + 1];
        if eta > 0.0 {
            for t in 1..=self.total {
                let (a, ap) = (self.alphabar[t], self.alphabar[t - 1]);
                if 1.0 - a > 0.0 && ap > 0.0 {
                    let v = (1.0 - ap) / (1.0 - a) * (1.0 - a / ap);
                    self.sigma[t] = eta * v.max(0.0).sqrt();
                }
            }
        }
        Ok(self)
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// `√(1-ᾱ_t)`, the noise level at `t`.
    pub fn noise_level(&self, t: usize) -> f64 {
        (1.0 - self.alphabar[t]).max(0.0).sqrt()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.total {
            return Err(Error::param("t", format!("{t} exceeds T = {}", self.total)));
        }
        Ok(())
    }
}

/// `u_t = √ᾱ_t u0 + √(1-ᾱ_t) ε`.
pub fn forward_diffuse(u0: &ScalarField, t: usize, sched: &TimestepSchedule, eps: &ScalarField) -> Result<ScalarField> {
    sched.check_t(t)?;
    let a = sched.alphabar[t];
    if a == 1.0 {
        return Ok(u0.clone());
    }
    field_axpy(sched.noise_level(t), eps, &u0.scale(a.sqrt()))
}

/// Standard normal field drawn from a seeded ChaCha20 stream.
pub fn gaussian_field(grid: Grid2D, rng: &mut ChaCha20Rng) -> ScalarField {
    ScalarField::from_fn(grid, |_, _| StandardNormal.sample(rng))
}

/// One reverse update from `t`. `noise` is only read when `σ_t > 0`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    u_t: &ScalarField,
    t: usize,
    sched: &TimestepSchedule,
    params: &ModelParams,
    ctx: &ModelContext,
    u_lr: &ScalarField,
    anchor: &ScalarField,
    noise: Option<&ScalarField>,
) -> Result<ScalarField> {
    sched.check_t(t)?;
    let (alpha, beta, sigma) = (sched.alpha[t], sched.beta[t], sched.sigma[t]);
    let mut next = u_t.clone();
    if alpha == 0.0 && beta == 0.0 && sigma == 0.0 {
        return Ok(next);
    }
    let drift = model_drift(params, ctx, u_t, t, u_lr, anchor)?;
    next.add_scaled(alpha, &drift.correction)?;
    next.add_scaled(beta, &drift.head)?;
    if sigma > 0.0 {
        let z = noise.ok_or_else(|| Error::param("noise", "required when sigma_t > 0"))?;
        next.add_scaled(sigma, z)?;
    }
    Ok(next)
}

/// Sampling options that are not part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub seed: u64,
    /// Multiplier on the initial noise `√(1-ᾱ_T) ε`.
    pub init_noise: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            init_noise: 1.0,
        }
    }
}

/// Lifted LR field on the model's finest grid.
pub fn lift_lr(u_lr: &ScalarField, ctx: &ModelContext) -> Result<ScalarField> {
    let fine = ctx.hierarchy.finest();
    let s = scale_levels(fine, u_lr.grid())?;
    let lifted = wavelet_lift(u_lr, &ctx.hierarchy.filterbank, s)?;
    ScalarField::new(*fine, lifted.into_values())
}

/// `u_T = lift(u_lr) + init_noise·√(1-ᾱ_T)·ε`, then reverse steps over the
/// schedule's subsequence; with no steps the result is the plain lift.
/// The LR field doubles as the physics anchor.
pub fn sample(
    u_lr: &ScalarField,
    params: &ModelParams,
    sched: &TimestepSchedule,
    ctx: &ModelContext,
    opts: &SampleOptions,
) -> Result<ScalarField> {
    use rand::SeedableRng;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut u = lift_lr(u_lr, ctx)?;
    // An empty subsequence is the plain lift: no noise to remove.
    let init_scale = match sched.ddim_steps.first() {
        Some(&t) => opts.init_noise * sched.noise_level(t),
        None => 0.0,
    };
    let z = gaussian_field(*u.grid(), &mut rng);
    if init_scale != 0.0 {
        u.add_scaled(init_scale, &z)?;
    }
    for &t in &sched.ddim_steps {
        let noise = if sched.sigma[t] > 0.0 {
            Some(gaussian_field(*u.grid(), &mut rng))
        } else {
            None
        };
        u = reverse_step(&u, t, sched, params, ctx, u_lr, u_lr, noise.as_ref())?;
        if !u.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                loss: f64::NAN,
            });
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgcorr::SmootherParams;
    use crate::nnet::{ModelParams, ModelShape};
    use crate::physics::PhysicsConfig;
    use crate::transfer::{build_hierarchy, restrict_avg, WaveletFilterBank};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_field(grid: Grid2D, seed: u64) -> ScalarField {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ScalarField::from_fn(grid, |_, _| rng.random_range(-1.0..1.0))
    }

    fn untrained(levels: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ModelParams::init(&ModelShape::with_levels(levels), &mut rng).unwrap()
    }

    fn context(n: usize, levels: usize, physics: PhysicsConfig, total: usize) -> ModelContext {
        ModelContext::new(
            build_hierarchy(Grid2D::square(n).unwrap(), levels, WaveletFilterBank::haar()).unwrap(),
            physics,
            make_cosine_schedule(total, DEFAULT_S_OFFSET).unwrap(),
        )
    }

    fn zero_coefficients(mut s: TimestepSchedule) -> TimestepSchedule {
        s.alpha.iter_mut().for_each(|a| *a = 0.0);
        s.beta.iter_mut().for_each(|a| *a = 0.0);
        s
    }

    #[test]
    fn cosine_schedule_examples() {
        let s = make_cosine_schedule(1000, DEFAULT_S_OFFSET).unwrap();
        assert_eq!(s.alphabar[0], 1.0);
        assert!(s.alphabar[1000] < 1e-3 && s.alphabar[1000] >= 0.0);
        assert!(s.is_deterministic());
        assert_eq!(s.ddim_steps, vec![1000, 800, 600, 400, 200]);
        assert!(make_cosine_schedule(0, 0.008).is_err());
        for total in [2, 3, 7, 50, 999, 1000] {
            let s = make_cosine_schedule(total, DEFAULT_S_OFFSET).unwrap();
            assert!(s.alphabar.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.alphabar[total] < 0.05);
        }
        // hand evaluation at the midpoint
        let f = |x: f64| (((x + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        assert!((s.alphabar[500] - f(0.5) / f(0.0)).abs() < 1e-15);
    }

    #[test]
    fn drift_coefficients_follow_formula() {
        let s = make_cosine_schedule(1000, DEFAULT_S_OFFSET).unwrap();
        assert_eq!(s.alpha[0], 0.0);
        assert_eq!(s.alpha[1], 1.0);
        for t in [2usize, 10, 200, 600, 1000] {
            let raw = 0.5 * (1.0 - s.alphabar[t]) / (1.0 - s.alphabar[t - 1]);
            assert!((s.alpha[t] - raw.clamp(0.05, 1.0)).abs() < 1e-15);
            assert_eq!(s.alpha[t], s.beta[t]);
        }
        let capped = s
            .clone()
            .with_drift(DriftCoefficients {
                clip: 0.3,
                ..DriftCoefficients::default()
            })
            .unwrap();
        assert!(capped.alpha.iter().all(|&a| a <= 0.3));
    }

    #[test]
    fn ddim_subsequences() {
        assert_eq!(ddim_subsequence(1000, 2).unwrap(), vec![1000, 500]);
        assert_eq!(ddim_subsequence(1000, 0).unwrap(), Vec::<usize>::new());
        assert_eq!(ddim_subsequence(10, 3).unwrap(), vec![10, 7, 3]);
        assert!(ddim_subsequence(3, 4).is_err());
    }

    #[test]
    fn eta_controls_sigma() {
        let s = make_cosine_schedule(100, DEFAULT_S_OFFSET).unwrap();
        assert!(s.clone().with_eta(0.0).unwrap().is_deterministic());
        let st = s.with_eta(1.0).unwrap();
        assert!(!st.is_deterministic());
        assert!(st.sigma.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn forward_diffuse_examples() {
        let s = make_cosine_schedule(100, DEFAULT_S_OFFSET).unwrap();
        let g = Grid2D::square(8).unwrap();
        let u0 = random_field(g, 1);
        let eps = random_field(g, 2);
        assert_eq!(forward_diffuse(&u0, 0, &s, &eps).unwrap(), u0);
        let ut = forward_diffuse(&u0, 40, &s, &ScalarField::zeros(g)).unwrap();
        assert_eq!(ut, u0.scale(s.alphabar[40].sqrt()));
    }

    #[test]
    fn forward_diffuse_variance() {
        let s = make_cosine_schedule(1000, DEFAULT_S_OFFSET).unwrap();
        let g = Grid2D::square(2).unwrap();
        let u0 = ScalarField::new(g, vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let t = 350;
        let mean = u0.scale(s.alphabar[t].sqrt());
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let eps = gaussian_field(g, &mut rng);
            let ut = forward_diffuse(&u0, t, &s, &eps).unwrap();
            acc += ut.sub(&mean).unwrap().values().iter().map(|d| d * d).sum::<f64>();
        }
        let var = acc / (draws * 4) as f64;
        let expected = 1.0 - s.alphabar[t];
        assert!((var - expected).abs() <= 0.05 * expected, "{var} vs {expected}");
    }

    #[test]
    fn reverse_step_examples() {
        let ctx = context(8, 1, PhysicsConfig::disabled(), 100);
        let sched = ctx.schedule.clone();
        let params = untrained(1, 4);
        let u = random_field(Grid2D::square(8).unwrap(), 5);
        let lr = random_field(Grid2D::square(4).unwrap(), 6);

        let frozen = zero_coefficients(sched.clone());
        assert_eq!(reverse_step(&u, 50, &frozen, &params, &ctx, &lr, &lr, None).unwrap(), u);

        let mut identity = params.clone();
        identity.smoothers = SmootherParams::identity(1);
        let forced = ctx.clone().with_gates(vec![0.0]);
        let mut no_head = sched.clone();
        no_head.beta.iter_mut().for_each(|b| *b = 0.0);
        let consistent_lr = restrict_avg(&u).unwrap();
        let next = reverse_step(&u, 50, &no_head, &identity, &forced, &consistent_lr, &consistent_lr, None).unwrap();
        assert!(next.sub(&u).unwrap().norm() < 1e-13);

        let mut unit = no_head.clone();
        unit.alpha[50] = 1.0;
        let c = ScalarField::filled(Grid2D::square(4).unwrap(), 1.7);
        let zero = ScalarField::zeros(Grid2D::square(8).unwrap());
        let next = reverse_step(&zero, 50, &unit, &identity, &forced, &c, &c, None).unwrap();
        assert!(next.values().iter().all(|v| (v - 1.7).abs() < 1e-14));
    }

    #[test]
    fn sampling_examples() {
        let ctx = context(8, 1, PhysicsConfig::default(), 100);
        let params = untrained(1, 7);
        let lr = random_field(Grid2D::square(4).unwrap(), 8);
        let empty = ctx.schedule.clone().with_nfe(0).unwrap();
        let out = sample(
            &lr,
            &params,
            &empty,
            &ctx,
            &SampleOptions {
                seed: 1,
                init_noise: 0.0,
            },
        )
        .unwrap();
        assert_eq!(out, lift_lr(&lr, &ctx).unwrap());
        let noisy_opts = SampleOptions { seed: 1, init_noise: 1.0 };
        assert_eq!(sample(&lr, &params, &empty, &ctx, &noisy_opts).unwrap(), out);

        let opts = SampleOptions {
            seed: 42,
            init_noise: 1.0,
        };
        let a = sample(&lr, &params, &ctx.schedule, &ctx, &opts).unwrap();
        let b = sample(&lr, &params, &ctx.schedule, &ctx, &opts).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample(&lr, &params, &ctx.schedule, &ctx, &SampleOptions { seed: 43, ..opts }).unwrap();
        assert_ne!(a.values(), c.values());

        let stochastic = ctx.schedule.clone().with_eta(1.0).unwrap();
        let s1 = sample(&lr, &params, &stochastic, &ctx, &opts).unwrap();
        assert!(s1.is_finite());
    }

    fn coarse_gap(u: &ScalarField, lr: &ScalarField) -> f64 {
        restrict_avg(u).unwrap().sub(lr).unwrap().norm()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn data_drift_is_monotone(seed in 0u64..1000) {
            // pure data drift with the default schedule: gates from the untrained MLP
            let ctx = context(16, 2, PhysicsConfig::disabled(), 1000);
            let mut sched = ctx.schedule.clone().with_nfe(10).unwrap();
            sched.beta.iter_mut().for_each(|b| *b = 0.0);
            let mut params = untrained(2, seed);
            params.smoothers = SmootherParams::identity(2);
            let lr = random_field(Grid2D::square(16).unwrap().coarsen().unwrap(), seed + 1);
            let mut u = random_field(Grid2D::square(16).unwrap(), seed + 2);
            let mut prev = coarse_gap(&u, &lr);
            for &t in &sched.ddim_steps {
                u = reverse_step(&u, t, &sched, &params, &ctx, &lr, &lr, None).unwrap();
                let gap = coarse_gap(&u, &lr);
                prop_assert!(gap <= prev * (1.0 + 1e-12));
                prev = gap;
            }
        }
    }
}
