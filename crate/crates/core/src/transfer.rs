//! Inter-resolution operators.
//!
//! Two families live here. The data-space pair ([`restrict_avg`],
//! [`prolong_bilinear`]) is mean preserving and models how a coarse
//! observation relates to the fine field. The wavelet pair
//! ([`wavelet_restrict`], [`wavelet_prolong`]) is the separable low-pass
//! filter `H_y ⊗ H_x` with stride 2 and its exact transpose; with an
//! orthonormal filter bank `R P = I` on the coarse space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_same_grid, Grid2D, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    #[default]
    Haar,
    Db2,
}

impl std::str::FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(Self::Haar),
            "db2" => Ok(Self::Db2),
            other => Err(Error::UnknownWavelet(other.to_string())),
        }
    }
}

/// Fixed 1D scaling (`h`) and wavelet (`g`) filters.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterBank {
    pub name: &'static str,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub orthonormal: bool,
}

impl WaveletFilterBank {
    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            name: "haar",
            h: vec![s, s],
            g: vec![s, -s],
            orthonormal: true,
        }
    }

    /// Daubechies-2 (four taps, two vanishing moments).
    pub fn db2() -> Self {
        let r3 = 3.0_f64.sqrt();
        let d = 4.0 * 2.0_f64.sqrt();
        let h = vec![(1.0 + r3) / d, (3.0 + r3) / d, (3.0 - r3) / d, (1.0 - r3) / d];
        Self {
            name: "db2",
            g: quadrature_mirror(&h),
            h,
            orthonormal: true,
        }
    }

    pub fn from_kind(kind: WaveletKind) -> Self {
        match kind {
            WaveletKind::Haar => Self::haar(),
            WaveletKind::Db2 => Self::db2(),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::from_kind(name.parse()?))
    }
}

/// `g_k = (-1)^k h_{N-1-k}`.
fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } * h[n - 1 - k])
        .collect()
}

/// Mean of each 2x2 block.
pub fn restrict_avg(x: &ScalarField) -> Result<ScalarField> {
    let fine = x.grid();
    let coarse = fine.coarsen()?;
    Ok(ScalarField::from_fn(coarse, |i, j| {
        0.25 * (x.at(2 * i, 2 * j)
            + x.at(2 * i + 1, 2 * j)
            + x.at(2 * i, 2 * j + 1)
            + x.at(2 * i + 1, 2 * j + 1))
    }))
}

/// [`restrict_avg`] applied `times` times.
pub fn restrict_avg_n(x: &ScalarField, times: usize) -> Result<ScalarField> {
    let mut out = x.clone();
    for _ in 0..times {
        out = restrict_avg(&out)?;
    }
    Ok(out)
}

fn check_refinement(coarse: &Grid2D, fine: &Grid2D) -> Result<()> {
    if fine.nx != 2 * coarse.nx || fine.ny != 2 * coarse.ny {
        return Err(Error::GridMismatch {
            left: format!("coarse {}x{}", coarse.nx, coarse.ny),
            right: format!("fine {}x{} (expected double)", fine.nx, fine.ny),
        });
    }
    Ok(())
}

/// Linear weights of fine cell `i` on the coarse axis: cell centres sit at
/// `i/2 - 1/4` in coarse index units.
fn bilinear_taps(i: usize) -> [(isize, f64); 2] {
    let m = (i / 2) as isize;
    if i % 2 == 0 {
        [(m - 1, 0.25), (m, 0.75)]
    } else {
        [(m, 0.75), (m + 1, 0.25)]
    }
}

/// Cell-centred bilinear interpolation onto a grid with twice the cells.
pub fn prolong_bilinear(xc: &ScalarField, fine_grid: &Grid2D) -> Result<ScalarField> {
    let coarse = xc.grid();
    check_refinement(coarse, fine_grid)?;
    Ok(ScalarField::from_fn(*fine_grid, |i, j| {
        let mut acc = 0.0;
        for (cj, wy) in bilinear_taps(j) {
            for (ci, wx) in bilinear_taps(i) {
                acc += wx * wy * xc.at_padded(ci, cj);
            }
        }
        acc
    }))
}

/// [`prolong_bilinear`] applied `times` times, doubling the grid each time.
pub fn prolong_bilinear_n(xc: &ScalarField, times: usize) -> Result<ScalarField> {
    let mut out = xc.clone();
    for _ in 0..times {
        let fine = out.grid().refine();
        out = prolong_bilinear(&out, &fine)?;
    }
    Ok(out)
}

/// Stride-2 low-pass filtering along x: `out[i] = sum_k h_k x[2i + k]`.
fn filter_down_x(x: &ScalarField, h: &[f64], out_grid: Grid2D) -> ScalarField {
    let g = x.grid();
    let mut out = vec![0.0; out_grid.nx * g.ny];
    for j in 0..g.ny {
        for i in 0..out_grid.nx {
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                acc += hk * x.at(g.wrap_x((2 * i + k) as isize), j);
            }
            out[j * out_grid.nx + i] = acc;
        }
    }
    let mid = Grid2D {
        ny: g.ny,
        dy: g.dy,
        ..out_grid
    };
    ScalarField::from_vec_unchecked(mid, out)
}

fn filter_down_y(x: &ScalarField, h: &[f64], out_grid: Grid2D) -> ScalarField {
    let g = x.grid();
    let mut out = vec![0.0; out_grid.len()];
    for j in 0..out_grid.ny {
        for i in 0..g.nx {
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                acc += hk * x.at(i, g.wrap_y((2 * j + k) as isize));
            }
            out[j * g.nx + i] = acc;
        }
    }
    ScalarField::from_vec_unchecked(out_grid, out)
}

/// Transpose of [`filter_down_x`]: scatter `h_k * c[i]` to `2i + k`.
fn filter_up_x(xc: &ScalarField, h: &[f64], fine: &Grid2D) -> ScalarField {
    let cg = xc.grid();
    let mid = Grid2D {
        nx: fine.nx,
        dx: fine.dx,
        ..*cg
    };
    let mut out = vec![0.0; mid.len()];
    for j in 0..cg.ny {
        for i in 0..cg.nx {
            let c = xc.at(i, j);
            for (k, &hk) in h.iter().enumerate() {
                out[j * mid.nx + fine.wrap_x((2 * i + k) as isize)] += hk * c;
            }
        }
    }
    ScalarField::from_vec_unchecked(mid, out)
}

fn filter_up_y(xc: &ScalarField, h: &[f64], fine: &Grid2D) -> ScalarField {
    let cg = xc.grid();
    let mut out = vec![0.0; fine.len()];
    for j in 0..cg.ny {
        for i in 0..cg.nx {
            let c = xc.at(i, j);
            for (k, &hk) in h.iter().enumerate() {
                out[fine.wrap_y((2 * j + k) as isize) * fine.nx + i] += hk * c;
            }
        }
    }
    ScalarField::from_vec_unchecked(*fine, out)
}

/// Separable low-pass restriction `(H_y ⊗ H_x) x`, periodic overhang.
pub fn wavelet_restrict(x: &ScalarField, fb: &WaveletFilterBank) -> Result<ScalarField> {
    let coarse = x.grid().coarsen()?;
    let tmp = filter_down_x(x, &fb.h, coarse);
    Ok(filter_down_y(&tmp, &fb.h, coarse))
}

/// Exact transpose of [`wavelet_restrict`].
pub fn wavelet_prolong(
    xc: &ScalarField,
    fb: &WaveletFilterBank,
    fine_grid: &Grid2D,
) -> Result<ScalarField> {
    check_refinement(xc.grid(), fine_grid)?;
    let tmp = filter_up_y(xc, &fb.h, fine_grid);
    Ok(filter_up_x(&tmp, &fb.h, fine_grid))
}

/// Mean-preserving lift of a coarse field `steps` dyadic levels up:
/// `(2 P)^steps`, so a constant coarse field lifts to the same constant.
pub fn wavelet_lift(xc: &ScalarField, fb: &WaveletFilterBank, steps: usize) -> Result<ScalarField> {
    let mut out = xc.clone();
    for _ in 0..steps {
        let fine = out.grid().refine();
        out = wavelet_prolong(&out, fb, &fine)?.scale(2.0);
    }
    Ok(out)
}

/// Number of dyadic levels separating `coarse` from `fine`.
pub fn scale_levels(fine: &Grid2D, coarse: &Grid2D) -> Result<usize> {
    let mismatch = || Error::GridMismatch {
        left: fine.describe(),
        right: coarse.describe(),
    };
    if coarse.nx == 0 || fine.nx % coarse.nx != 0 || fine.ny % coarse.ny != 0 {
        return Err(mismatch());
    }
    let (rx, ry) = (fine.nx / coarse.nx, fine.ny / coarse.ny);
    if rx != ry || !rx.is_power_of_two() {
        return Err(mismatch());
    }
    Ok(rx.trailing_zeros() as usize)
}

/// Fixed wavelet transfer hierarchy; `grids[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelHierarchy {
    pub levels: usize,
    pub grids: Vec<Grid2D>,
    pub filterbank: WaveletFilterBank,
}

impl LevelHierarchy {
    pub fn finest(&self) -> &Grid2D {
        &self.grids[0]
    }

    /// `R_level x` for a field on the finest grid.
    pub fn restrict_to(&self, x: &ScalarField, level: usize) -> Result<ScalarField> {
        check_same_grid(x.grid(), self.finest())?;
        let mut out = x.clone();
        for _ in 0..level {
            out = wavelet_restrict(&out, &self.filterbank)?;
        }
        Ok(out)
    }

    /// `P_level x` for a field on grid `level`.
    pub fn prolong_from(&self, x: &ScalarField, level: usize) -> Result<ScalarField> {
        check_same_grid(x.grid(), &self.grids[level])?;
        let mut out = x.clone();
        for l in (0..level).rev() {
            out = wavelet_prolong(&out, &self.filterbank, &self.grids[l])?;
        }
        Ok(out)
    }
}

pub fn build_hierarchy(grid: Grid2D, levels: usize, fb: WaveletFilterBank) -> Result<LevelHierarchy> {
    let factor = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::param("levels", format!("{levels} is too deep")))?;
    for dim in [grid.nx, grid.ny] {
        if dim % factor != 0 {
            return Err(Error::NotDivisible {
                dim,
                divisor: factor,
            });
        }
    }
    let mut grids = vec![grid];
    for _ in 0..levels {
        let next = grids.last().expect("nonempty").coarsen()?;
        grids.push(next);
    }
    Ok(LevelHierarchy {
        levels,
        grids,
        filterbank: fb,
    })
}
