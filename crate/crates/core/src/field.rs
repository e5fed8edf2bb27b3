//! Grid and field primitives.
//!
//! Values are stored row-major with index `j * nx + i`, where `i` runs
//! along x and `j` along y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary rule used by stencils and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Half-sample symmetric padding (`x[-1] = x[0]`), i.e. zero flux
    /// through the outer cell faces.
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub periodic_x: bool,
    pub periodic_y: bool,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, boundary: Boundary) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2x2 cells, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite() && dy > 0.0 && dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got dx={dx}, dy={dy}"
            )));
        }
        let periodic = boundary == Boundary::Periodic;
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            periodic_x: periodic,
            periodic_y: periodic,
        })
    }

    /// Periodic grid with unit spacing.
    pub fn periodic(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0, 1.0, Boundary::Periodic)
    }

    /// Square periodic grid with unit spacing.
    pub fn square(n: usize) -> Result<Self> {
        Self::periodic(n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundary_x(&self) -> Boundary {
        if self.periodic_x {
            Boundary::Periodic
        } else {
            Boundary::Reflect
        }
    }

    pub fn boundary_y(&self) -> Boundary {
        if self.periodic_y {
            Boundary::Periodic
        } else {
            Boundary::Reflect
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Grid with half as many cells per axis and doubled spacing.
    pub fn coarsen(&self) -> Result<Self> {
        if self.nx % 2 != 0 {
            return Err(Error::NotDivisible {
                dim: self.nx,
                divisor: 2,
            });
        }
        if self.ny % 2 != 0 {
            return Err(Error::NotDivisible {
                dim: self.ny,
                divisor: 2,
            });
        }
        Ok(Self {
            nx: self.nx / 2,
            ny: self.ny / 2,
            dx: self.dx * 2.0,
            dy: self.dy * 2.0,
            ..*self
        })
    }

    /// Grid with twice as many cells per axis and halved spacing.
    pub fn refine(&self) -> Self {
        Self {
            nx: self.nx * 2,
            ny: self.ny * 2,
            dx: self.dx / 2.0,
            dy: self.dy / 2.0,
            ..*self
        }
    }

    /// Same cell counts and boundary; spacing is ignored.
    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.periodic_x == other.periodic_x
            && self.periodic_y == other.periodic_y
    }

    /// Wrap or reflect a possibly out-of-range index along x.
    #[inline]
    pub fn wrap_x(&self, i: isize) -> usize {
        pad_index(i, self.nx, self.periodic_x)
    }

    #[inline]
    pub fn wrap_y(&self, j: isize) -> usize {
        pad_index(j, self.ny, self.periodic_y)
    }

    pub(crate) fn describe(&self) -> String {
        format!(
            "{}x{} (dx={}, dy={}, periodic=({}, {}))",
            self.nx, self.ny, self.dx, self.dy, self.periodic_x, self.periodic_y
        )
    }
}

#[inline]
pub(crate) fn pad_index(i: isize, n: usize, periodic: bool) -> usize {
    let n = n as isize;
    if periodic {
        i.rem_euclid(n) as usize
    } else {
        // half-sample symmetric: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
        let period = 2 * n;
        let m = i.rem_euclid(period);
        if m < n {
            m as usize
        } else {
            (period - 1 - m) as usize
        }
    }
}

pub(crate) fn check_same_grid(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            left: a.describe(),
            right: b.describe(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    /// Root mean square.
    pub l2: f64,
    pub linf: f64,
    pub mean: f64,
}

impl ScalarField {
    /// Builds a field, validating length and finiteness.
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "values",
                format!("non-finite entry {} at index {pos}", values[pos]),
            ));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Field whose value at cell `(i, j)` is `f(i, j)`.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(i, j));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    /// Value with boundary padding applied to out-of-range indices.
    #[inline]
    pub fn at_padded(&self, i: isize, j: isize) -> f64 {
        self.at(self.grid.wrap_x(i), self.grid.wrap_y(j))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &Self) -> Result<()> {
        check_same_grid(&self.grid, &x.grid)?;
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    /// Unweighted inner product `sum a_i b_i`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Euclidean norm `sqrt(sum v^2)` (not the RMS reported by [`field_norms`]).
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Constant field.
pub fn field_fill(grid: Grid2D, c: f64) -> ScalarField {
    ScalarField::filled(grid, c)
}

/// Returns `a * x + y`.
pub fn field_axpy(a: f64, x: &ScalarField, y: &ScalarField) -> Result<ScalarField> {
    x.zip_map(y, |xv, yv| a * xv + yv)
}

pub fn field_norms(x: &ScalarField) -> FieldNorms {
    let n = x.values.len() as f64;
    let (sq, linf, sum) = x.values.iter().fold((0.0, 0.0_f64, 0.0), |(sq, m, s), &v| {
        (sq + v * v, m.max(v.abs()), s + v)
    });
    FieldNorms {
        l2: (sq / n).sqrt(),
        linf,
        mean: sum / n,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl VectorField2D {
    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        check_same_grid(u.grid(), v.grid())?;
        Ok(Self { u, v })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            u: ScalarField::zeros(grid),
            v: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        self.u.grid()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            u: self.u.sub(&other.u)?,
            v: self.v.sub(&other.v)?,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.u.norm().powi(2) + self.v.norm().powi(2)).sqrt()
    }
}

/// Binary fluid mask, `true` = fluid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidMask {
    grid: Grid2D,
    values: Vec<bool>,
}

impl FluidMask {
    pub fn new(grid: Grid2D, values: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Accepts numeric 0/1 entries; anything else is rejected.
    pub fn from_numeric(grid: Grid2D, values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(Error::param("mask", format!("entry {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, bits)
    }

    pub fn all_fluid(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![true; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn fluid_count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }
}

/// Zeroes `x` wherever the mask marks land.
pub fn apply_mask(x: &ScalarField, m: &FluidMask) -> Result<ScalarField> {
    check_same_grid(x.grid(), m.grid())?;
    Ok(ScalarField::from_vec_unchecked(
        *x.grid(),
        x.values()
            .iter()
            .zip(m.values())
            .map(|(&v, &fluid)| if fluid { v } else { 0.0 })
            .collect(),
    ))
}
