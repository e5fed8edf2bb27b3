//! 2D Fourier machinery: transforms, radial spectra, band filtering and
//! Helmholtz projection.
//!
//! Forward transforms are unnormalized and the inverse divides by `nx*ny`.
//! Radial spectra are normalized so that `sum(power * count)` is the field's
//! mean square.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::{check_same_grid, Grid2D, ScalarField, VectorField2D};

/// Fourier coefficients in standard DFT order: mode `(kx, ky)` at
/// `ky * nx + kx`, frequencies `0..n` with wrap-around.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub grid: Grid2D,
    pub coefficients: Vec<Complex64>,
}

/// Signed integer frequency of DFT index `m` on an axis of length `n`.
#[inline]
pub fn signed_frequency(m: usize, n: usize) -> f64 {
    if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

fn fft2_in_place(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    row.process(data);
    let mut column = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            column[j] = data[j * nx + i];
        }
        col.process(&mut column);
        for j in 0..ny {
            data[j * nx + i] = column[j];
        }
    }
}

pub fn dft2(x: &ScalarField) -> Spectrum2D {
    let g = *x.grid();
    let mut data: Vec<Complex64> = x.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, g.nx, g.ny, false);
    Spectrum2D {
        grid: g,
        coefficients: data,
    }
}

/// Inverse transform returning the complex field (already divided by `nx*ny`).
pub fn idft2_complex(s: &Spectrum2D) -> Vec<Complex64> {
    let g = s.grid;
    let mut data = s.coefficients.clone();
    fft2_in_place(&mut data, g.nx, g.ny, true);
    let scale = 1.0 / g.len() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Inverse transform keeping the real part.
pub fn idft2(s: &Spectrum2D) -> ScalarField {
    let data = idft2_complex(s);
    ScalarField::from_vec_unchecked(s.grid, data.iter().map(|c| c.re).collect())
}

/// Radius `|k|` of every mode in DFT order, in integer wavenumber units.
pub fn mode_radii(grid: &Grid2D) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        let ky = signed_frequency(j, grid.ny);
        for i in 0..grid.nx {
            let kx = signed_frequency(i, grid.nx);
            out.push((kx * kx + ky * ky).sqrt());
        }
    }
    out
}

/// Number of integer annuli needed to hold every mode without clamping.
pub fn full_nbins(grid: &Grid2D) -> usize {
    let kx = (grid.nx / 2) as f64;
    let ky = (grid.ny / 2) as f64;
    (kx * kx + ky * ky).sqrt().floor() as usize + 1
}

/// Integer annulus index of each mode, clamped into `nbins - 1`.
fn mode_bins(grid: &Grid2D, nbins: usize) -> Vec<usize> {
    mode_radii(grid)
        .into_iter()
        .map(|r| (r.floor() as usize).min(nbins - 1))
        .collect()
}

/// Per-bin mean power over integer annuli `m <= |k| < m + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    /// `nbins + 1` edges `0, 1, ..., nbins`.
    pub bin_edges: Vec<f64>,
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadialSpectrum {
    pub fn nbins(&self) -> usize {
        self.power.len()
    }

    /// Shell-summed energy `power * count` per bin.
    pub fn energy(&self) -> Vec<f64> {
        self.power
            .iter()
            .zip(&self.counts)
            .map(|(p, &c)| p * c as f64)
            .collect()
    }

    /// Sum over all bins of `power * count`; equals the field's mean square.
    pub fn total(&self) -> f64 {
        self.energy().iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `k,power,count` CSV with a header row; `k` is the bin's lower edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,power,count\n");
        for (m, (p, c)) in self.power.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{m},{p:e},{c}\n"));
        }
        out
    }
}

pub fn radial_power_spectrum(x: &ScalarField, nbins: usize) -> Result<RadialSpectrum> {
    if nbins == 0 {
        return Err(Error::param("nbins", "must be at least 1"));
    }
    let g = *x.grid();
    let spec = dft2(x);
    let bins = mode_bins(&g, nbins);
    let norm = 1.0 / (g.len() as f64 * g.len() as f64);
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for (c, &b) in spec.coefficients.iter().zip(&bins) {
        sums[b] += c.norm_sqr() * norm;
        counts[b] += 1;
    }
    let power = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RadialSpectrum {
        bin_edges: (0..=nbins).map(|m| m as f64).collect(),
        power,
        counts,
    })
}

/// Radial spectrum of `pred - gt`.
pub fn radial_error_spectrum(pred: &ScalarField, gt: &ScalarField, nbins: usize) -> Result<RadialSpectrum> {
    radial_power_spectrum(&pred.sub(gt)?, nbins)
}

/// Multiplies every Fourier coefficient by the weight of its annulus.
pub fn spectral_filter(x: &ScalarField, weights: &[f64]) -> Result<ScalarField> {
    let g = *x.grid();
    let needed = full_nbins(&g);
    if weights.len() < needed {
        return Err(Error::param(
            "weights",
            format!("{} bin weights given, {needed} required", weights.len()),
        ));
    }
    let mut spec = dft2(x);
    for (c, r) in spec.coefficients.iter_mut().zip(mode_radii(&g)) {
        *c *= weights[r.floor() as usize];
    }
    let data = idft2_complex(&spec);
    let residue = data.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let scale = data.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    assert!(
        residue <= 1e-9 * scale,
        "spectral filter produced imaginary residue {residue}"
    );
    Ok(ScalarField::from_vec_unchecked(g, data.iter().map(|c| c.re).collect()))
}

/// Fourier symbol of the central difference along one axis,
/// `sin(2π m / n) / h`. Vanishes at DC and at Nyquist.
fn central_symbol(m: usize, n: usize, h: f64) -> f64 {
    (2.0 * std::f64::consts::PI * m as f64 / n as f64).sin() / h
}

/// Removes the gradient part of `w` in Fourier space.
///
/// The projection uses the central-difference symbols, so the output has
/// zero divergence under [`crate::stencils::divergence`] and stencil
/// gradients `∇φ` are annihilated exactly.
pub fn helmholtz_project(w: &VectorField2D) -> Result<VectorField2D> {
    let g = *w.grid();
    if !(g.periodic_x && g.periodic_y) {
        return Err(Error::InvalidGrid("Helmholtz projection needs a periodic grid".into()));
    }
    let mut su = dft2(&w.u);
    let mut sv = dft2(&w.v);
    for j in 0..g.ny {
        let ky = central_symbol(j, g.ny, g.dy);
        for i in 0..g.nx {
            let kx = central_symbol(i, g.nx, g.dx);
            let k2 = kx * kx + ky * ky;
            if k2 < 1e-300 {
                continue;
            }
            let idx = j * g.nx + i;
            let (a, b) = (su.coefficients[idx], sv.coefficients[idx]);
            let kdot = a * kx + b * ky;
            su.coefficients[idx] = a - kdot * (kx / k2);
            sv.coefficients[idx] = b - kdot * (ky / k2);
        }
    }
    VectorField2D::new(idft2(&su), idft2(&sv))
}

/// Divergence evaluated in Fourier space with central-difference symbols.
pub fn spectral_divergence(w: &VectorField2D) -> Result<ScalarField> {
    check_same_grid(w.u.grid(), w.v.grid())?;
    let g = *w.grid();
    let su = dft2(&w.u);
    let sv = dft2(&w.v);
    let i_unit = Complex64::new(0.0, 1.0);
    let mut out = su.clone();
    for j in 0..g.ny {
        let ky = central_symbol(j, g.ny, g.dy);
        for i in 0..g.nx {
            let kx = central_symbol(i, g.nx, g.dx);
            let idx = j * g.nx + i;
            out.coefficients[idx] = i_unit * (su.coefficients[idx] * kx + sv.coefficients[idx] * ky);
        }
    }
    Ok(idft2(&out))
}
