//! Second-order finite-difference operators.
//!
//! The boundary rule comes from the grid: periodic axes wrap, the others use
//! half-sample symmetric padding (zero flux).

use crate::error::Result;
use crate::field::{check_same_grid, ScalarField, VectorField2D};

/// Central-difference gradient `((x[i+1] - x[i-1]) / 2dx, ...)`.
pub fn gradient(x: &ScalarField) -> VectorField2D {
    let g = *x.grid();
    let (sx, sy) = (0.5 / g.dx, 0.5 / g.dy);
    let u = ScalarField::from_fn(g, |i, j| {
        let (i, j) = (i as isize, j as isize);
        sx * (x.at_padded(i + 1, j) - x.at_padded(i - 1, j))
    });
    let v = ScalarField::from_fn(g, |i, j| {
        let (i, j) = (i as isize, j as isize);
        sy * (x.at_padded(i, j + 1) - x.at_padded(i, j - 1))
    });
    VectorField2D { u, v }
}

/// Central-difference divergence `du/dx + dv/dy`.
pub fn divergence(w: &VectorField2D) -> Result<ScalarField> {
    check_same_grid(w.u.grid(), w.v.grid())?;
    let g = *w.u.grid();
    let (sx, sy) = (0.5 / g.dx, 0.5 / g.dy);
    Ok(ScalarField::from_fn(g, |i, j| {
        let (i, j) = (i as isize, j as isize);
        sx * (w.u.at_padded(i + 1, j) - w.u.at_padded(i - 1, j))
            + sy * (w.v.at_padded(i, j + 1) - w.v.at_padded(i, j - 1))
    }))
}

/// Five-point Laplacian; anisotropic spacing uses separate `1/dx²`, `1/dy²`.
pub fn laplacian(x: &ScalarField) -> ScalarField {
    let g = *x.grid();
    let (cx, cy) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    ScalarField::from_fn(g, |i, j| {
        let c = x.at(i, j);
        let (i, j) = (i as isize, j as isize);
        cx * (x.at_padded(i + 1, j) + x.at_padded(i - 1, j) - 2.0 * c)
            + cy * (x.at_padded(i, j + 1) + x.at_padded(i, j - 1) - 2.0 * c)
    })
}

/// `Δ(Δx)`, composed so it shares the Laplacian's boundary rule.
pub fn biharmonic(x: &ScalarField) -> ScalarField {
    laplacian(&laplacian(x))
}

/// `dv/dx - du/dy`.
pub fn vorticity(w: &VectorField2D) -> Result<ScalarField> {
    check_same_grid(w.u.grid(), w.v.grid())?;
    let g = *w.u.grid();
    let (sx, sy) = (0.5 / g.dx, 0.5 / g.dy);
    Ok(ScalarField::from_fn(g, |i, j| {
        let (i, j) = (i as isize, j as isize);
        sx * (w.v.at_padded(i + 1, j) - w.v.at_padded(i - 1, j))
            - sy * (w.u.at_padded(i, j + 1) - w.u.at_padded(i, j - 1))
    }))
}
