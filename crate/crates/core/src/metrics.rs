//! Evaluation metrics: pointwise errors, SSIM, vorticity/enstrophy and
//! spectral energy diagnostics.

use crate::error::{Error, Result};
use crate::field::{check_same_grid, FluidMask, ScalarField, VectorField2D};
use crate::spectral::{full_nbins, radial_error_spectrum, radial_power_spectrum, RadialSpectrum};
use crate::stencils::{divergence, vorticity};

pub const SSIM_WINDOW: usize = 7;

pub fn rmse(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    rmse_masked(pred, gt, None)
}

/// RMSE over fluid cells only when a mask is given.
pub fn rmse_masked(pred: &ScalarField, gt: &ScalarField, mask: Option<&FluidMask>) -> Result<f64> {
    check_same_grid(pred.grid(), gt.grid())?;
    let pairs = pred.values().iter().zip(gt.values());
    let (sum, n) = match mask {
        Some(m) => {
            check_same_grid(pred.grid(), m.grid())?;
            pairs
                .zip(m.values())
                .filter(|(_, &fluid)| fluid)
                .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b) * (a - b), n + 1))
        }
        None => pairs.fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b) * (a - b), n + 1)),
    };
    if n == 0 {
        return Err(Error::param("mask", "no fluid cells"));
    }
    Ok((sum / n as f64).sqrt())
}

/// `max - min` of the field.
pub fn data_range(x: &ScalarField) -> f64 {
    let (lo, hi) = x
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// PSNR in dB from an RMSE; `+inf` when the RMSE is zero.
pub fn psnr_from_rmse(rmse: f64, range: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (range / rmse).log10()
    }
}

/// `20·log10(range / rmse)`; the range defaults to the ground truth's.
pub fn psnr(pred: &ScalarField, gt: &ScalarField, range: Option<f64>) -> Result<f64> {
    let range = range.unwrap_or_else(|| data_range(gt));
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::param("data_range", format!("must be positive, got {range}")));
    }
    Ok(psnr_from_rmse(rmse(pred, gt)?, range))
}

/// Mean SSIM over every fully contained 7×7 window (uniform weights,
/// population statistics), `C1 = (0.01 L)²`, `C2 = (0.03 L)²` with `L` the
/// ground truth's range (1 for a flat ground truth).
pub fn ssim(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    check_same_grid(pred.grid(), gt.grid())?;
    let g = *gt.grid();
    let w = SSIM_WINDOW;
    if g.nx < w || g.ny < w {
        return Err(Error::InvalidGrid(format!(
            "{}x{} is smaller than the {w}x{w} SSIM window",
            g.nx, g.ny
        )));
    }
    let range = match data_range(gt) {
        r if r > 0.0 => r,
        _ => 1.0,
    };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let x = pred.values();
    let y = gt.values();

    // Summed-area tables make each window O(1).
    let sat = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let (nx, ny) = (g.nx, g.ny);
        let mut s = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..ny {
            let mut row = 0.0;
            for i in 0..nx {
                row += f(j * nx + i);
                s[(j + 1) * (nx + 1) + i + 1] = s[j * (nx + 1) + i + 1] + row;
            }
        }
        s
    };
    let sx = sat(&|k| x[k]);
    let sy = sat(&|k| y[k]);
    let sxx = sat(&|k| x[k] * x[k]);
    let syy = sat(&|k| y[k] * y[k]);
    let sxy = sat(&|k| x[k] * y[k]);
    let stride = g.nx + 1;
    let window_sum = |s: &[f64], i: usize, j: usize| {
        s[(j + w) * stride + i + w] - s[j * stride + i + w] - s[(j + w) * stride + i] + s[j * stride + i]
    };
    let area = (w * w) as f64;
    let (wx, wy) = (g.nx - w + 1, g.ny - w + 1);
    let mut total = 0.0;
    for j in 0..wy {
        for i in 0..wx {
            let mx = window_sum(&sx, i, j) / area;
            let my = window_sum(&sy, i, j) / area;
            let vx = window_sum(&sxx, i, j) / area - mx * mx;
            let vy = window_sum(&syy, i, j) / area - my * my;
            let cov = window_sum(&sxy, i, j) / area - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
        }
    }
    Ok(total / (wx * wy) as f64)
}

/// `(ve, ee)` from two vorticity fields: mean squared difference and the
/// absolute enstrophy gap with `Z = ½·mean(ω²)`.
pub fn enstrophy_errors(omega_pred: &ScalarField, omega_gt: &ScalarField) -> Result<(f64, f64)> {
    check_same_grid(omega_pred.grid(), omega_gt.grid())?;
    let n = omega_gt.values().len() as f64;
    let ve = omega_pred.sub(omega_gt)?.values().iter().map(|d| d * d).sum::<f64>() / n;
    let z = |w: &ScalarField| 0.5 * w.values().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((ve, (z(omega_pred) - z(omega_gt)).abs()))
}

pub fn vorticity_error(pred: &VectorField2D, gt: &VectorField2D) -> Result<(f64, f64)> {
    check_same_grid(pred.grid(), gt.grid())?;
    enstrophy_errors(&vorticity(pred)?, &vorticity(gt)?)
}

/// `Σ_m |E_pred(m) - E_gt(m)| / Σ_m E_gt(m)` over radial shells.
pub fn energy_discrepancy(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    check_same_grid(pred.grid(), gt.grid())?;
    let nb = full_nbins(gt.grid());
    let ep = radial_power_spectrum(pred, nb)?.energy();
    let eg = radial_power_spectrum(gt, nb)?.energy();
    let denom: f64 = eg.iter().sum();
    if denom <= 0.0 {
        return Err(Error::param("gt", "ground truth has zero spectral energy"));
    }
    Ok(ep.iter().zip(&eg).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

/// Euclidean norm of the central-difference divergence.
pub fn divergence_l2(w: &VectorField2D) -> Result<f64> {
    Ok(divergence(w)?.norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub psnr: f64,
    pub data_range: f64,
    pub ssim: f64,
    /// `NaN` when no vector parts were supplied.
    pub ve: f64,
    pub ee: f64,
    pub ged: f64,
    pub div_l2: f64,
    pub error_spectrum: RadialSpectrum,
    pub steps_used: usize,
    pub wall_seconds: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "rmse,psnr,data_range,ssim,ve,ee,ged,div_l2,steps_used,wall_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            self.rmse,
            self.psnr,
            self.data_range,
            self.ssim,
            self.ve,
            self.ee,
            self.ged,
            self.div_l2,
            self.steps_used,
            self.wall_seconds
        )
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn with_timing(mut self, steps_used: usize, wall_seconds: f64) -> Self {
        self.steps_used = steps_used;
        self.wall_seconds = wall_seconds;
        self
    }
}

/// Full report for one prediction. SSIM is `NaN` on grids smaller than the
/// window; vector metrics are `NaN` unless `(pred, gt)` velocity parts are
/// supplied. `nbins = 0` selects every radial shell.
pub fn evaluate(
    pred: &ScalarField,
    gt: &ScalarField,
    vectors: Option<(&VectorField2D, &VectorField2D)>,
    nbins: usize,
) -> Result<EvalReport> {
    check_same_grid(pred.grid(), gt.grid())?;
    let g = *gt.grid();
    let nbins = if nbins == 0 { full_nbins(&g) } else { nbins };
    let rmse = rmse(pred, gt)?;
    let range = match data_range(gt) {
        r if r > 0.0 => r,
        _ => 1.0,
    };
    let ssim = if g.nx >= SSIM_WINDOW && g.ny >= SSIM_WINDOW {
        ssim(pred, gt)?
    } else {
        f64::NAN
    };
    let ged = match energy_discrepancy(pred, gt) {
        Ok(v) => v,
        Err(_) if rmse == 0.0 => 0.0,
        Err(_) => f64::NAN,
    };
    let (ve, ee, div_l2) = match vectors {
        Some((wp, wg)) => {
            let (ve, ee) = vorticity_error(wp, wg)?;
            (ve, ee, divergence_l2(wp)?)
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(EvalReport {
        rmse,
        psnr: psnr_from_rmse(rmse, range),
        data_range: range,
        ssim,
        ve,
        ee,
        ged,
        div_l2,
        error_spectrum: radial_error_spectrum(pred, gt, nbins)?,
        steps_used: 0,
        wall_seconds: 0.0,
    })
}
