//! Time-gated multilevel residual corrector
//! `S_t(r) = Smooth_0(r) + Σ_ℓ w_ℓ(t) P_ℓ Smooth_ℓ(R_ℓ r)` and the residual it acts on.
//!
//! Coarse corrections are accumulated in nested (Horner) form, so every
//! transfer touches only one pair of adjacent levels:
//! `acc_L = w_L y_L`, `acc_ℓ = w_ℓ y_ℓ + P acc_{ℓ+1}`, `e = y_0 + P acc_1`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{check_same_grid, pad_index, Grid2D, ScalarField};
use crate::physics::{combine_physics, lambda_schedule, PhysicsConfig};
use crate::transfer::{
    restrict_avg_n, scale_levels, wavelet_lift, wavelet_prolong, wavelet_restrict, LevelHierarchy,
    WaveletFilterBank,
};

pub type Kernel3 = [f64; 9];

pub const IDENTITY_KERNEL: Kernel3 = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

/// Per-level depthwise 3×3 smoothers, level 0 (finest) first.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherParams {
    pub kernels: Vec<Kernel3>,
    pub biases: Vec<f64>,
}

impl SmootherParams {
    /// Pass-through smoothers for levels `0..=levels`.
    pub fn identity(levels: usize) -> Self {
        Self {
            kernels: vec![IDENTITY_KERNEL; levels + 1],
            biases: vec![0.0; levels + 1],
        }
    }

    pub fn zeros(levels: usize) -> Self {
        Self {
            kernels: vec![[0.0; 9]; levels + 1],
            biases: vec![0.0; levels + 1],
        }
    }

    /// Identity plus zero-mean Gaussian noise of standard deviation `noise`.
    pub fn init(levels: usize, noise: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, noise).expect("noise scale is finite");
        let mut sp = Self::identity(levels);
        for k in &mut sp.kernels {
            for w in k.iter_mut() {
                *w += normal.sample(rng);
            }
        }
        sp
    }

    /// Coarse level count `L`.
    pub fn levels(&self) -> usize {
        self.kernels.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() * 10
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() || self.kernels.len() != self.biases.len() {
            return Err(Error::param(
                "smoothers",
                format!("{} kernels vs {} biases", self.kernels.len(), self.biases.len()),
            ));
        }
        Ok(())
    }
}

/// Timestep embedding followed by `d_emb → hidden → L` MLP with SiLU and sigmoid.
/// Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub d_emb: usize,
    pub hidden: usize,
    pub levels: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GateParams {
    pub fn zeros(levels: usize, d_emb: usize, hidden: usize) -> Self {
        Self {
            d_emb,
            hidden,
            levels,
            w1: vec![0.0; hidden * d_emb],
            b1: vec![0.0; hidden],
            w2: vec![0.0; levels * hidden],
            b2: vec![0.0; levels],
        }
    }

    /// Uniform weights in `±1/√fan_in` (second layer scaled by 0.1), zero biases.
    pub fn init(levels: usize, d_emb: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        check_embedding_dim(d_emb)?;
        if hidden == 0 {
            return Err(Error::param("mg.hidden", "must be positive"));
        }
        let mut gp = Self::zeros(levels, d_emb, hidden);
        let a1 = 1.0 / (d_emb as f64).sqrt();
        gp.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = 0.1 / (hidden as f64).sqrt();
        gp.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        Ok(gp)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_embedding_dim(self.d_emb)?;
        let ok = self.w1.len() == self.hidden * self.d_emb
            && self.b1.len() == self.hidden
            && self.w2.len() == self.levels * self.hidden
            && self.b2.len() == self.levels;
        if !ok {
            return Err(Error::param("gates", "weight shapes disagree with d_emb/hidden/levels"));
        }
        Ok(())
    }
}

fn check_embedding_dim(d_emb: usize) -> Result<()> {
    if d_emb == 0 || d_emb % 2 != 0 {
        return Err(Error::param("mg.d_emb", format!("must be even and positive, got {d_emb}")));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the position `1000·t/T`: `d/2` sines then `d/2`
/// cosines at frequencies `10000^(-j/(d/2))`.
pub fn timestep_embedding(t: usize, total: usize, d_emb: usize) -> Result<Vec<f64>> {
    check_embedding_dim(d_emb)?;
    if total == 0 || t > total {
        return Err(Error::param("t", format!("need 0 <= t <= T, got t={t}, T={total}")));
    }
    let half = d_emb / 2;
    let pos = 1000.0 * t as f64 / total as f64;
    let mut out = vec![0.0; d_emb];
    for j in 0..half {
        let freq = 10000f64.powf(-(j as f64) / half as f64);
        out[j] = (pos * freq).sin();
        out[half + j] = (pos * freq).cos();
    }
    Ok(out)
}

/// Intermediate values of the gate MLP, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GateTape {
    pub emb: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub gates: Vec<f64>,
}

pub(crate) fn gate_forward(t: usize, total: usize, gp: &GateParams) -> Result<GateTape> {
    gp.validate()?;
    let emb = timestep_embedding(t, total, gp.d_emb)?;
    let pre: Vec<f64> = (0..gp.hidden)
        .map(|h| gp.b1[h] + dot(&gp.w1[h * gp.d_emb..(h + 1) * gp.d_emb], &emb))
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&p| silu(p)).collect();
    let gates = (0..gp.levels)
        .map(|l| sigmoid(gp.b2[l] + dot(&gp.w2[l * gp.hidden..(l + 1) * gp.hidden], &hidden)))
        .collect();
    Ok(GateTape {
        emb,
        pre,
        hidden,
        gates,
    })
}

/// Accumulates `∂L/∂(gate params)` given `∂L/∂gates`.
pub(crate) fn gate_backward(tape: &GateTape, gp: &GateParams, d_gates: &[f64], grad: &mut GateParams) {
    let mut d_hidden = vec![0.0; gp.hidden];
    for l in 0..gp.levels {
        let s = tape.gates[l];
        let dz = d_gates[l] * s * (1.0 - s);
        grad.b2[l] += dz;
        for h in 0..gp.hidden {
            grad.w2[l * gp.hidden + h] += dz * tape.hidden[h];
            d_hidden[h] += dz * gp.w2[l * gp.hidden + h];
        }
    }
    for h in 0..gp.hidden {
        let dp = d_hidden[h] * silu_derivative(tape.pre[h]);
        grad.b1[h] += dp;
        for (k, e) in tape.emb.iter().enumerate() {
            grad.w1[h * gp.d_emb + k] += dp * e;
        }
    }
}

/// Gate values `w_ℓ(t) ∈ (0, 1)`, one per coarse level.
pub fn gate_weights(t: usize, total: usize, gp: &GateParams) -> Result<Vec<f64>> {
    Ok(gate_forward(t, total, gp)?.gates)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Padded neighbour indices `[i-1, i, i+1]` along each axis.
fn neighbour_table(n: usize, periodic: bool) -> Vec<[usize; 3]> {
    (0..n as isize)
        .map(|i| {
            [
                pad_index(i - 1, n, periodic),
                i as usize,
                pad_index(i + 1, n, periodic),
            ]
        })
        .collect()
}

fn tables(g: &Grid2D) -> (Vec<[usize; 3]>, Vec<[usize; 3]>) {
    (neighbour_table(g.nx, g.periodic_x), neighbour_table(g.ny, g.periodic_y))
}

/// 3×3 cross-correlation plus bias: `y(i,j) = Σ_ab k[b][a] x(i+a-1, j+b-1) + bias`,
/// kernel row-major with rows along y. Out-of-range taps follow the grid's boundary rule.
pub fn smoother_apply(x: &ScalarField, kernel: &Kernel3, bias: f64) -> ScalarField {
    let g = *x.grid();
    let (tx, ty) = tables(&g);
    let xs = x.values();
    let mut out = vec![bias; g.len()];
    for j in 0..g.ny {
        let rows = ty[j].map(|jj| jj * g.nx);
        for i in 0..g.nx {
            let cols = &tx[i];
            let mut acc = 0.0;
            for b in 0..3 {
                for a in 0..3 {
                    acc += kernel[b * 3 + a] * xs[rows[b] + cols[a]];
                }
            }
            out[j * g.nx + i] += acc;
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

/// Adjoint of [`smoother_apply`] (without bias) with respect to its input.
pub fn smoother_transpose(gy: &ScalarField, kernel: &Kernel3) -> ScalarField {
    let g = *gy.grid();
    let (tx, ty) = tables(&g);
    let gs = gy.values();
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny {
        let rows = ty[j].map(|jj| jj * g.nx);
        for i in 0..g.nx {
            let v = gs[j * g.nx + i];
            if v == 0.0 {
                continue;
            }
            let cols = &tx[i];
            for b in 0..3 {
                for a in 0..3 {
                    out[rows[b] + cols[a]] += kernel[b * 3 + a] * v;
                }
            }
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

/// Gradient of `⟨gy, smoother_apply(x, k, ·)⟩` with respect to `k`.
pub fn smoother_kernel_grad(x: &ScalarField, gy: &ScalarField) -> Kernel3 {
    let g = *x.grid();
    let (tx, ty) = tables(&g);
    let (xs, gs) = (x.values(), gy.values());
    let mut k = [0.0; 9];
    for j in 0..g.ny {
        let rows = ty[j].map(|jj| jj * g.nx);
        for i in 0..g.nx {
            let v = gs[j * g.nx + i];
            let cols = &tx[i];
            for b in 0..3 {
                for a in 0..3 {
                    k[b * 3 + a] += v * xs[rows[b] + cols[a]];
                }
            }
        }
    }
    k
}

/// Multiply counts attributed to each level (smoother, gate scaling, and the
/// transfers between that level and the next coarser one).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCount {
    pub per_level: Vec<usize>,
}

impl OpCount {
    pub fn total(&self) -> usize {
        self.per_level.iter().sum()
    }

    pub fn finest(&self) -> usize {
        self.per_level.first().copied().unwrap_or(0)
    }

    fn add(&mut self, level: usize, n: usize) {
        if self.per_level.len() <= level {
            self.per_level.resize(level + 1, 0);
        }
        self.per_level[level] += n;
    }
}

fn transfer_multiplies(fine: &Grid2D, taps: usize) -> usize {
    let half_x = fine.nx / 2;
    taps * (half_x * fine.ny + half_x * (fine.ny / 2))
}

/// Level inputs `R_ℓ r` and smoothed outputs, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct CorrectorTape {
    pub inputs: Vec<ScalarField>,
    pub smoothed: Vec<ScalarField>,
}

fn check_corrector_shapes(r: &ScalarField, gates: &[f64], sp: &SmootherParams, hier: &LevelHierarchy) -> Result<()> {
    sp.validate()?;
    check_same_grid(r.grid(), hier.finest())?;
    if sp.levels() != hier.levels {
        return Err(Error::param(
            "smoothers",
            format!("{} coarse levels, hierarchy has {}", sp.levels(), hier.levels),
        ));
    }
    if gates.len() != hier.levels {
        return Err(Error::LengthMismatch {
            expected: hier.levels,
            actual: gates.len(),
        });
    }
    Ok(())
}

pub(crate) fn corrector_forward(
    r: &ScalarField,
    gates: &[f64],
    sp: &SmootherParams,
    hier: &LevelHierarchy,
    mut count: Option<&mut OpCount>,
) -> Result<(ScalarField, CorrectorTape)> {
    check_corrector_shapes(r, gates, sp, hier)?;
    let fb = &hier.filterbank;
    let taps = fb.h.len();
    let levels = hier.levels;

    let mut inputs = Vec::with_capacity(levels + 1);
    inputs.push(r.clone());
    for l in 1..=levels {
        let next = wavelet_restrict(&inputs[l - 1], fb)?;
        if let Some(c) = count.as_deref_mut() {
            c.add(l - 1, transfer_multiplies(&hier.grids[l - 1], taps));
        }
        inputs.push(next);
    }
    let smoothed: Vec<ScalarField> = inputs
        .iter()
        .enumerate()
        .map(|(l, x)| {
            if let Some(c) = count.as_deref_mut() {
                c.add(l, 9 * x.grid().len());
            }
            smoother_apply(x, &sp.kernels[l], sp.biases[l])
        })
        .collect();

    let mut acc: Option<ScalarField> = None;
    for l in (1..=levels).rev() {
        let mut level = smoothed[l].scale(gates[l - 1]);
        if let Some(c) = count.as_deref_mut() {
            c.add(l, level.grid().len());
        }
        if let Some(coarser) = acc.take() {
            level.add_scaled(1.0, &wavelet_prolong(&coarser, fb, &hier.grids[l])?)?;
            if let Some(c) = count.as_deref_mut() {
                c.add(l, transfer_multiplies(&hier.grids[l], taps));
            }
        }
        acc = Some(level);
    }
    let mut e = smoothed[0].clone();
    if let Some(coarse) = acc {
        e.add_scaled(1.0, &wavelet_prolong(&coarse, fb, &hier.grids[0])?)?;
        if let Some(c) = count.as_deref_mut() {
            c.add(0, transfer_multiplies(&hier.grids[0], taps));
        }
    }
    Ok((e, CorrectorTape { inputs, smoothed }))
}

/// Gradients of `⟨grad_e, S(r)⟩` with respect to smoothers and gate values.
/// Returns `∂/∂gates`; smoother gradients are accumulated into `grad_sp`.
pub(crate) fn corrector_backward(
    tape: &CorrectorTape,
    gates: &[f64],
    hier: &LevelHierarchy,
    grad_e: &ScalarField,
    grad_sp: &mut SmootherParams,
) -> Result<Vec<f64>> {
    let fb = &hier.filterbank;
    let mut d_gates = vec![0.0; hier.levels];
    accumulate_smoother_grad(grad_sp, 0, &tape.inputs[0], grad_e);
    // adjoint of P is R: a_ℓ = R a_{ℓ-1}, the cotangent of acc_ℓ
    let mut a = grad_e.clone();
    for l in 1..=hier.levels {
        a = wavelet_restrict(&a, fb)?;
        d_gates[l - 1] = a.dot(&tape.smoothed[l])?;
        let dy = a.scale(gates[l - 1]);
        accumulate_smoother_grad(grad_sp, l, &tape.inputs[l], &dy);
    }
    Ok(d_gates)
}

fn accumulate_smoother_grad(grad_sp: &mut SmootherParams, level: usize, x: &ScalarField, dy: &ScalarField) {
    let k = smoother_kernel_grad(x, dy);
    for (g, v) in grad_sp.kernels[level].iter_mut().zip(k) {
        *g += v;
    }
    grad_sp.biases[level] += dy.sum();
}

/// `S_t(r)` with gates from the timestep MLP.
pub fn corrector_apply(
    r: &ScalarField,
    t: usize,
    total: usize,
    sp: &SmootherParams,
    gp: &GateParams,
    hier: &LevelHierarchy,
) -> Result<ScalarField> {
    let gates = gate_weights(t, total, gp)?;
    corrector_apply_gated(r, &gates, sp, hier)
}

/// `S(r)` with caller-supplied gate values (forced gates, classical multigrid).
pub fn corrector_apply_gated(
    r: &ScalarField,
    gates: &[f64],
    sp: &SmootherParams,
    hier: &LevelHierarchy,
) -> Result<ScalarField> {
    Ok(corrector_forward(r, gates, sp, hier, None)?.0)
}

/// Like [`corrector_apply_gated`], also reporting multiply counts per level.
pub fn corrector_apply_counted(
    r: &ScalarField,
    gates: &[f64],
    sp: &SmootherParams,
    hier: &LevelHierarchy,
) -> Result<(ScalarField, OpCount)> {
    let mut count = OpCount::default();
    let (e, _) = corrector_forward(r, gates, sp, hier, Some(&mut count))?;
    Ok((e, count))
}

/// Damped-Jacobi smoothers for a constant-coefficient operator: level ℓ gets
/// `omega / diag(R_ℓ A P_ℓ)` at the kernel centre. The Galerkin diagonal is
/// probed with a unit impulse, which is exact for translation-invariant `A`.
pub fn damped_jacobi_smoothers(
    hier: &LevelHierarchy,
    apply_op: impl Fn(&ScalarField) -> ScalarField,
    omega: f64,
) -> Result<SmootherParams> {
    let mut sp = SmootherParams::zeros(hier.levels);
    for l in 0..=hier.levels {
        let mut delta = ScalarField::zeros(hier.grids[l]);
        delta.values_mut()[0] = 1.0;
        let fine = hier.prolong_from(&delta, l)?;
        let diag = hier.restrict_to(&apply_op(&fine), l)?.values()[0];
        if !(diag > 0.0) {
            return Err(Error::param("operator", format!("Galerkin diagonal {diag} at level {l}")));
        }
        sp.kernels[l][4] = omega / diag;
    }
    Ok(sp)
}

/// Coarse residual `u_lr - restrict_avg^s(u_t)` before lifting.
pub fn coarse_data_residual(u_t: &ScalarField, u_lr: &ScalarField) -> Result<ScalarField> {
    let s = scale_levels(u_t.grid(), u_lr.grid())?;
    let ru = restrict_avg_n(u_t, s)?;
    if !ru.grid().same_shape(u_lr.grid()) {
        return Err(Error::GridMismatch {
            left: ru.grid().describe(),
            right: u_lr.grid().describe(),
        });
    }
    ScalarField::new(*u_lr.grid(), ru.into_values())
        .and_then(|ru| u_lr.sub(&ru))
}

/// Fine-resolution residual
/// `r = lift(u_lr - restrict_avg^s(u_t)) + λ(t) ρ(u_t; anchor)`,
/// with `lift` the mean-preserving wavelet prolongation.
pub fn assemble_residual(
    u_t: &ScalarField,
    u_lr: &ScalarField,
    anchor: &ScalarField,
    cfg: &PhysicsConfig,
    fb: &WaveletFilterBank,
    t: usize,
    total: usize,
) -> Result<ScalarField> {
    let coarse = coarse_data_residual(u_t, u_lr)?;
    let s = scale_levels(u_t.grid(), u_lr.grid())?;
    let lifted = wavelet_lift(&coarse, fb, s)?;
    let mut r = ScalarField::new(*u_t.grid(), lifted.into_values())?;
    let lambda = lambda_schedule(t, total, cfg.lambda_max)?;
    if lambda != 0.0 && !cfg.is_disabled() {
        r.add_scaled(lambda, &combine_physics(u_t, anchor, cfg, fb, t, total)?)?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Boundary;
    use crate::stencils::laplacian;
    use crate::transfer::{build_hierarchy, restrict_avg};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid2D, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(grid, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng) -> Kernel3 {
        std::array::from_fn(|_| rng.random_range(-1.0..1.0))
    }

    fn hier(n: usize, levels: usize, fb: WaveletFilterBank) -> LevelHierarchy {
        build_hierarchy(Grid2D::square(n).unwrap(), levels, fb).unwrap()
    }

    fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn smoother_examples() {
        let g = Grid2D::square(5).unwrap();
        let x = random_field(g, 1);
        assert_eq!(smoother_apply(&x, &IDENTITY_KERNEL, 0.0), x);
        let avg = [1.0 / 9.0; 9];
        let c = smoother_apply(&ScalarField::filled(g, 2.5), &avg, 0.0);
        assert!(c.values().iter().all(|v| (v - 2.5).abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = random_kernel(&mut rng);
        let y = smoother_apply(&x, &k, 0.3);
        for j in 0..5usize {
            for i in 0..5usize {
                let mut acc = 0.3;
                for b in 0..3usize {
                    for a in 0..3usize {
                        let ii = (i + 5 + a - 1) % 5;
                        let jj = (j + 5 + b - 1) % 5;
                        acc += k[b * 3 + a] * x.values()[jj * 5 + ii];
                    }
                }
                assert!((y.at(i, j) - acc).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn smoother_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for boundary in [Boundary::Periodic, Boundary::Reflect] {
            let g = Grid2D::new(6, 4, 1.0, 1.0, boundary).unwrap();
            let x = random_field(g, 4);
            let y = random_field(g, 5);
            let k = random_kernel(&mut rng);
            let lhs = smoother_apply(&x, &k, 0.0).dot(&y).unwrap();
            let rhs = x.dot(&smoother_transpose(&y, &k)).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            // the output is linear in the kernel, so <y, S_k x> = <grad, k>
            let kg = smoother_kernel_grad(&x, &y);
            let via_grad: f64 = kg.iter().zip(&k).map(|(a, b)| a * b).sum();
            assert!((lhs - via_grad).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_and_gates() {
        assert_eq!(timestep_embedding(0, 100, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(timestep_embedding(0, 100, 3).is_err());
        assert!(timestep_embedding(101, 100, 4).is_err());
        let e = timestep_embedding(37, 100, 8).unwrap();
        for j in 0..4 {
            assert!((e[j].powi(2) + e[4 + j].powi(2) - 1.0).abs() < 1e-14);
        }
        let gp = GateParams::zeros(3, 32, 32);
        assert_eq!(gate_weights(500, 1000, &gp).unwrap(), vec![0.5; 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let mut gp = GateParams::zeros(2, 8, 4);
            for w in gp.w1.iter_mut().chain(&mut gp.b1).chain(&mut gp.w2).chain(&mut gp.b2) {
                *w = rng.random_range(-1.0..1.0);
            }
            let t = rng.random_range(0..=1000);
            for w in gate_weights(t, 1000, &gp).unwrap() {
                assert!(w > 0.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn gate_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gp = GateParams::init(3, 6, 5, &mut rng).unwrap();
        gp.b1.iter_mut().chain(&mut gp.b2).for_each(|b| *b = rng.random_range(-0.5..0.5));
        let weights = [0.3, -1.2, 0.7];
        let objective = |p: &GateParams| -> f64 {
            gate_weights(420, 1000, p).unwrap().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let tape = gate_forward(420, 1000, &gp).unwrap();
        let mut grad = GateParams::zeros(3, 6, 5);
        gate_backward(&tape, &gp, &weights, &mut grad);
        let h = 1e-6;
        let fields: [fn(&mut GateParams) -> &mut Vec<f64>; 4] =
            [|p| &mut p.w1, |p| &mut p.b1, |p| &mut p.w2, |p| &mut p.b2];
        for f in fields {
            let n = f(&mut gp.clone()).len();
            for k in 0..n {
                let mut p = gp.clone();
                f(&mut p)[k] += h;
                let mut m = gp.clone();
                f(&mut m)[k] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                let an = f(&mut grad.clone())[k];
                assert!((fd - an).abs() < 1e-8, "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn corrector_examples() {
        let h = hier(16, 2, WaveletFilterBank::haar());
        let r = random_field(*h.finest(), 8);
        let id = SmootherParams::identity(2);
        assert_eq!(corrector_apply_gated(&r, &[0.0, 0.0], &id, &h).unwrap(), r);
        let zero = corrector_apply_gated(&r, &[0.7, 0.2], &SmootherParams::zeros(2), &h).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let h1 = hier(16, 1, WaveletFilterBank::haar());
        let e = corrector_apply_gated(&r, &[1.0], &SmootherParams::identity(1), &h1).unwrap();
        // hand-composed: r + P R r using the dense 1D haar operator
        let n = 16;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut coarse = vec![0.0; 64];
        for cj in 0..8 {
            for ci in 0..8 {
                let mut acc = 0.0;
                for (dj, di) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += s * s * r.values()[(2 * cj + dj) * n + 2 * ci + di];
                }
                coarse[cj * 8 + ci] = acc;
            }
        }
        for j in 0..n {
            for i in 0..n {
                let expected = r.at(i, j) + s * s * coarse[(j / 2) * 8 + i / 2];
                assert!((e.at(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrector_matches_direct_sum_over_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for fb in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let h = hier(32, 3, fb);
            let r = random_field(*h.finest(), 10);
            let sp = SmootherParams {
                kernels: (0..4).map(|_| random_kernel(&mut rng)).collect(),
                biases: (0..4).map(|_| rng.random_range(-0.1..0.1)).collect(),
            };
            let gates = [0.2, 0.5, 0.9];
            let mut expected = smoother_apply(&r, &sp.kernels[0], sp.biases[0]);
            for l in 1..=3 {
                let y = smoother_apply(&h.restrict_to(&r, l).unwrap(), &sp.kernels[l], sp.biases[l]);
                expected.add_scaled(gates[l - 1], &h.prolong_from(&y, l).unwrap()).unwrap();
            }
            let got = corrector_apply_gated(&r, &gates, &sp, &h).unwrap();
            assert!(max_abs_diff(&got, &expected) < 1e-12);
        }
    }

    #[test]
    fn corrector_cost_is_geometric() {
        for fb in [WaveletFilterBank::haar(), WaveletFilterBank::db2()] {
            let h = hier(64, 3, fb);
            let r = random_field(*h.finest(), 11);
            let (_, count) =
                corrector_apply_counted(&r, &[0.5; 3], &SmootherParams::identity(3), &h).unwrap();
            assert_eq!(count.per_level.len(), 4);
            assert!(count.total() <= 2 * count.finest(), "{count:?}");
        }
    }

    #[test]
    fn corrector_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = hier(8, 2, WaveletFilterBank::db2());
        let r = random_field(*h.finest(), 13);
        let w = random_field(*h.finest(), 14);
        let sp = SmootherParams {
            kernels: (0..3).map(|_| random_kernel(&mut rng)).collect(),
            biases: (0..3).map(|_| rng.random_range(-0.1..0.1)).collect(),
        };
        let gates = vec![0.3, 0.8];
        let objective = |sp: &SmootherParams, gates: &[f64]| {
            corrector_apply_gated(&r, gates, sp, &h).unwrap().dot(&w).unwrap()
        };
        let (_, tape) = corrector_forward(&r, &gates, &sp, &h, None).unwrap();
        let mut gsp = SmootherParams::zeros(2);
        let dg = corrector_backward(&tape, &gates, &h, &w, &mut gsp).unwrap();
        let eps = 1e-6;
        for l in 0..3 {
            for k in 0..10 {
                let bump = |d: f64| {
                    let mut p = sp.clone();
                    if k < 9 {
                        p.kernels[l][k] += d;
                    } else {
                        p.biases[l] += d;
                    }
                    objective(&p, &gates)
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let an = if k < 9 { gsp.kernels[l][k] } else { gsp.biases[l] };
                assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "level {l} k {k}: {fd} vs {an}");
            }
        }
        for l in 0..2 {
            let mut gpl = gates.clone();
            gpl[l] += eps;
            let mut gml = gates.clone();
            gml[l] -= eps;
            let fd = (objective(&sp, &gpl) - objective(&sp, &gml)) / (2.0 * eps);
            assert!((fd - dg[l]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn residual_examples() {
        let fb = WaveletFilterBank::haar();
        let g = Grid2D::square(16).unwrap();
        let u_lr = random_field(g.coarsen().unwrap(), 15);
        let u_t = wavelet_lift(&u_lr, &fb, 1).unwrap();
        let u_t = ScalarField::new(g, u_t.into_values()).unwrap();
        let r = assemble_residual(&u_t, &u_lr, &u_lr, &PhysicsConfig::disabled(), &fb, 600, 1000).unwrap();
        assert!(r.norm() <= 1e-12);

        let u_t = random_field(g, 16);
        let cfg = PhysicsConfig::default();
        let r0 = assemble_residual(&u_t, &u_lr, &u_lr, &cfg, &fb, 0, 1000).unwrap();
        let data = assemble_residual(&u_t, &u_lr, &u_lr, &PhysicsConfig::disabled(), &fb, 0, 1000).unwrap();
        assert_eq!(r0, data);

        let coarse = coarse_data_residual(&u_t, &u_lr).unwrap();
        let ru = restrict_avg(&u_t).unwrap();
        for (k, v) in coarse.values().iter().enumerate() {
            assert!((v - (u_lr.values()[k] - ru.values()[k])).abs() < 1e-13);
        }

        let cst = ScalarField::filled(g.coarsen().unwrap(), 0.75);
        let r = assemble_residual(&ScalarField::zeros(g), &cst, &cst, &PhysicsConfig::disabled(), &fb, 5, 10)
            .unwrap();
        assert!(r.values().iter().all(|v| (v - 0.75).abs() < 1e-14));

        assert!(assemble_residual(&u_t, &random_field(Grid2D::square(6).unwrap(), 1), &u_lr, &cfg, &fb, 1, 2)
            .is_err());
    }

    #[test]
    fn jacobi_smoothers_use_galerkin_diagonal() {
        let h = hier(16, 2, WaveletFilterBank::haar());
        let neg_lap = |x: &ScalarField| laplacian(x).scale(-1.0);
        let sp = damped_jacobi_smoothers(&h, neg_lap, 0.8).unwrap();
        // for haar, the level-ℓ Galerkin diagonal of -Δ is 4 / 2^ℓ
        for l in 0..3 {
            let diag = 4.0 / (1 << l) as f64;
            assert!((sp.kernels[l][4] - 0.8 / diag).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn corrector_is_linear(a in -3.0..3.0f64, s1 in 0u64..200, s2 in 0u64..200, t in 0usize..=1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(s1 ^ 0xabc);
            let h = hier(16, 2, WaveletFilterBank::db2());
            let sp = SmootherParams::init(2, 0.3, &mut rng);
            let gp = GateParams::init(2, 8, 8, &mut rng).unwrap();
            let r1 = random_field(*h.finest(), s1);
            let r2 = random_field(*h.finest(), s2 + 500);
            let mut comb = r2.clone();
            comb.add_scaled(a, &r1).unwrap();
            let lhs = corrector_apply(&comb, t, 1000, &sp, &gp, &h).unwrap();
            let mut rhs = corrector_apply(&r2, t, 1000, &sp, &gp, &h).unwrap();
            rhs.add_scaled(a, &corrector_apply(&r1, t, 1000, &sp, &gp, &h).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-11);
            let zero = corrector_apply(&ScalarField::zeros(*h.finest()), t, 1000, &sp, &gp, &h).unwrap();
            prop_assert!(zero.values().iter().all(|&v| v == 0.0));
        }
    }
}
