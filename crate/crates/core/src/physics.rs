//! Equation-free physics cues.
//!
//! Every residual returns a field-shaped direction. The smoothing terms are
//! negative gradients of their energies, so adding a small multiple of them
//! to `u` lowers that energy:
//!
//! * `rho_lap   =  Δu`          for `E = ½ Σ_faces (Δ_face u / h)²`
//! * `rho_bi    = -Δ(Δu)`       for `E = ½ Σ (Δu)²`
//! * `rho_aniso =  ∇·(g ∇u)`    with `g = 1 / (1 + (|∇u_a| / κ)²)` frozen from an anchor
//! * `rho_spec` moves each radial band's log-power toward the anchor's.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{apply_mask, check_same_grid, FluidMask, ScalarField};
use crate::spectral::{full_nbins, radial_power_spectrum, spectral_filter};
use crate::stencils::{biharmonic, gradient, laplacian};
use crate::transfer::{scale_levels, wavelet_lift, WaveletFilterBank};

/// Floor added to band powers before taking logarithms.
pub const LOG_POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub w_lap: f64,
    pub w_bi: f64,
    pub w_aniso: f64,
    pub w_spec: f64,
    /// Perona–Malik contrast; `None` uses a tenth of the anchor's median
    /// gradient magnitude.
    pub kappa: Option<f64>,
    pub huber_delta: f64,
    pub lambda_max: f64,
    #[serde(skip)]
    pub mask: Option<FluidMask>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            w_lap: 1.0,
            w_bi: 1.0,
            w_aniso: 1.0,
            w_spec: 1.0,
            kappa: None,
            huber_delta: 1.0,
            lambda_max: 0.1,
            mask: None,
        }
    }
}

impl PhysicsConfig {
    /// All weights zero: the physics residual vanishes identically.
    pub fn disabled() -> Self {
        Self {
            w_lap: 0.0,
            w_bi: 0.0,
            w_aniso: 0.0,
            w_spec: 0.0,
            ..Self::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.w_lap == 0.0 && self.w_bi == 0.0 && self.w_aniso == 0.0 && self.w_spec == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("physics.w_lap", self.w_lap),
            ("physics.w_bi", self.w_bi),
            ("physics.w_aniso", self.w_aniso),
            ("physics.w_spec", self.w_spec),
            ("physics.lambda_max", self.lambda_max),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {w}")));
            }
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::param("physics.kappa", format!("must be > 0, got {k}")));
            }
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(Error::param(
                "physics.huber_delta",
                format!("must be > 0, got {}", self.huber_delta),
            ));
        }
        Ok(())
    }
}

pub fn rho_lap(u: &ScalarField) -> ScalarField {
    laplacian(u)
}

pub fn rho_bi(u: &ScalarField) -> ScalarField {
    biharmonic(u).scale(-1.0)
}

/// Edge-stopping function `g(s) = 1 / (1 + (s/κ)²)`.
#[inline]
pub fn edge_stop(s: f64, kappa: f64) -> f64 {
    let r = s / kappa;
    1.0 / (1.0 + r * r)
}

/// Cell-centred diffusivity `g(|∇u_a|)`.
pub fn anchor_diffusivity(u_a: &ScalarField, kappa: f64) -> ScalarField {
    let grad = gradient(u_a);
    grad.u.zip_map(&grad.v, |gx, gy| edge_stop(gx.hypot(gy), kappa))
        .expect("gradient components share a grid")
}

/// Flux-form `∇·(g ∇u)` with face diffusivities averaged from the two
/// adjacent cells.
pub fn rho_aniso(u: &ScalarField, u_a: &ScalarField, kappa: f64) -> Result<ScalarField> {
    check_same_grid(u.grid(), u_a.grid())?;
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    let gcell = anchor_diffusivity(u_a, kappa);
    Ok(diffuse_flux_form(u, &gcell))
}

pub(crate) fn diffuse_flux_form(u: &ScalarField, gcell: &ScalarField) -> ScalarField {
    let grid = *u.grid();
    let (cx, cy) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
    ScalarField::from_fn(grid, |i, j| {
        let (ii, jj) = (i as isize, j as isize);
        let c = u.at(i, j);
        let gc = gcell.at(i, j);
        let face = |di: isize, dj: isize| {
            let gn = gcell.at_padded(ii + di, jj + dj);
            0.5 * (gc + gn) * (u.at_padded(ii + di, jj + dj) - c)
        };
        cx * (face(1, 0) + face(-1, 0)) + cy * (face(0, 1) + face(0, -1))
    })
}

/// Derivative of the Huber loss: `d` inside `[-δ, δ]`, `±δ` outside.
#[inline]
pub fn huber_derivative(d: f64, delta: f64) -> f64 {
    d.clamp(-delta, delta)
}

/// Per-annulus weights `W(m) = -huber'(log P_u(m) - log P_anchor(m))`;
/// the DC bin is left at zero.
pub fn spectrum_weights(u: &ScalarField, anchor: &ScalarField, huber_delta: f64) -> Result<Vec<f64>> {
    check_same_grid(u.grid(), anchor.grid())?;
    let nbins = full_nbins(u.grid());
    let pu = radial_power_spectrum(u, nbins)?;
    let pa = radial_power_spectrum(anchor, nbins)?;
    let mut w: Vec<f64> = pu
        .power
        .iter()
        .zip(&pa.power)
        .map(|(&a, &b)| {
            let d = (a + LOG_POWER_FLOOR).ln() - (b + LOG_POWER_FLOOR).ln();
            -huber_derivative(d, huber_delta)
        })
        .collect();
    w[0] = 0.0;
    Ok(w)
}

pub fn rho_spec(u: &ScalarField, u_anchor: &ScalarField, huber_delta: f64) -> Result<ScalarField> {
    let w = spectrum_weights(u, u_anchor, huber_delta)?;
    spectral_filter(u, &w)
}

/// `λ(t) = λ_max · ½(1 + cos(π (T - t) / T))`: peak at `t = T`, zero at `t = 0`.
pub fn lambda_schedule(t: usize, total: usize, lambda_max: f64) -> Result<f64> {
    Ok(lambda_max * cosine_gate(t, total)?)
}

fn cosine_gate(t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::param("T", "must be positive"));
    }
    if t > total {
        return Err(Error::param("t", format!("{t} exceeds T = {total}")));
    }
    let phase = std::f64::consts::PI * (total - t) as f64 / total as f64;
    Ok(0.5 * (1.0 + phase.cos()))
}

/// Median of `|∇x|` over all cells.
pub fn median_gradient_magnitude(x: &ScalarField) -> f64 {
    let grad = gradient(x);
    let mut mags: Vec<f64> = grad
        .u
        .values()
        .iter()
        .zip(grad.v.values())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    let n = mags.len();
    if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

/// Contrast used by the anisotropic term for a given anchor.
pub fn effective_kappa(cfg: &PhysicsConfig, anchor: &ScalarField) -> f64 {
    cfg.kappa
        .unwrap_or_else(|| (0.1 * median_gradient_magnitude(anchor)).max(f64::EPSILON))
}

/// Lifts a coarse anchor onto `u`'s grid; fields already on that grid pass through.
pub fn lift_anchor(u: &ScalarField, anchor: &ScalarField, fb: &WaveletFilterBank) -> Result<ScalarField> {
    let steps = scale_levels(u.grid(), anchor.grid())?;
    let lifted = wavelet_lift(anchor, fb, steps)?;
    if !u.grid().same_shape(lifted.grid()) {
        return Err(Error::GridMismatch {
            left: u.grid().describe(),
            right: lifted.grid().describe(),
        });
    }
    ScalarField::new(*u.grid(), lifted.into_values())
}

/// Weighted, masked sum of the four residuals; `anchor` must already be on
/// `u`'s grid (see [`lift_anchor`]). The anisotropic term is additionally
/// gated by the normalized cosine schedule so it relaxes at late steps.
pub fn combine_physics_lifted(
    u: &ScalarField,
    anchor: &ScalarField,
    cfg: &PhysicsConfig,
    t: usize,
    total: usize,
) -> Result<ScalarField> {
    check_same_grid(u.grid(), anchor.grid())?;
    let mut out = ScalarField::zeros(*u.grid());
    if cfg.w_lap != 0.0 {
        out.add_scaled(cfg.w_lap, &rho_lap(u))?;
    }
    if cfg.w_bi != 0.0 {
        out.add_scaled(cfg.w_bi, &rho_bi(u))?;
    }
    if cfg.w_aniso != 0.0 {
        let gate = cosine_gate(t, total)?;
        if gate != 0.0 {
            let kappa = effective_kappa(cfg, anchor);
            out.add_scaled(cfg.w_aniso * gate, &rho_aniso(u, anchor, kappa)?)?;
        }
    }
    if cfg.w_spec != 0.0 {
        out.add_scaled(cfg.w_spec, &rho_spec(u, anchor, cfg.huber_delta)?)?;
    }
    match &cfg.mask {
        Some(m) => apply_mask(&out, m),
        None => Ok(out),
    }
}

/// `ρ(u) = Σ_k w_k ρ_k(u; u0, M)` with the anchor `u0` lifted to `u`'s grid.
pub fn combine_physics(
    u: &ScalarField,
    u0: &ScalarField,
    cfg: &PhysicsConfig,
    fb: &WaveletFilterBank,
    t: usize,
    total: usize,
) -> Result<ScalarField> {
    let anchor = lift_anchor(u, u0, fb)?;
    combine_physics_lifted(u, &anchor, cfg, t, total)
}
