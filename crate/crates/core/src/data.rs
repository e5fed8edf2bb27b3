//! Synthetic fields and the `RMD1` field-file format.
//!
//! File layout: magic `RMD1`, `u32` version, `u32` nx, ny, channels, `f64`
//! dx, dy, a `u8` boundary flag (bit 0 set: x reflects, bit 1 set: y
//! reflects), then channel-major, row-major little-endian `f64` values.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::binio::{memory_path, read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::field::{Grid2D, ScalarField, VectorField2D};
use crate::rng::rng_for;
use crate::spectral::{dft2, idft2, mode_radii};

pub const FIELD_MAGIC: &[u8; 4] = b"RMD1";
pub const FIELD_VERSION: u32 = 1;

fn require_periodic(grid: &Grid2D) -> Result<()> {
    if !(grid.periodic_x && grid.periodic_y) {
        return Err(Error::InvalidGrid(format!("{} must be periodic", grid.describe())));
    }
    Ok(())
}

/// Gaussian random field whose shell-summed spectrum follows `E(k) ∝ k^slope`
/// (per-mode power `k^(slope-1)`), rescaled to zero mean and unit variance.
pub fn gen_grf(grid: Grid2D, slope: f64, seed: u64) -> Result<ScalarField> {
    require_periodic(&grid)?;
    if !slope.is_finite() {
        return Err(Error::param("slope", "must be finite"));
    }
    let mut rng = rng_for(seed, "grf");
    let white = ScalarField::from_fn(grid, |_, _| StandardNormal.sample(&mut rng));
    let mut spec = dft2(&white);
    let exponent = 0.5 * (slope - 1.0);
    for (c, k) in spec.coefficients.iter_mut().zip(mode_radii(&grid)) {
        *c *= if k == 0.0 { 0.0 } else { k.powf(exponent) };
    }
    let x = idft2(&spec);
    Ok(normalize(&x))
}

fn normalize(x: &ScalarField) -> ScalarField {
    let mean = x.mean();
    let centered = x.map(|v| v - mean);
    let var = centered.values().iter().map(|v| v * v).sum::<f64>() / centered.values().len() as f64;
    if var == 0.0 {
        return centered;
    }
    let inv = 1.0 / var.sqrt();
    let mut out = centered.map(|v| v * inv);
    // one more centering pass absorbs rounding in the scale step
    let m = out.mean();
    out.values_mut().iter_mut().for_each(|v| *v -= m);
    out
}

/// Taylor–Green vortex on the unit square sampled at cell centres:
/// `u = A cos(2πx) sin(2πy)`, `v = -A sin(2πx) cos(2πy)`.
pub fn gen_taylor_green(grid: Grid2D, amplitude: f64) -> Result<VectorField2D> {
    require_periodic(&grid)?;
    let x = |i: usize| 2.0 * PI * (i as f64 + 0.5) / grid.nx as f64;
    let y = |j: usize| 2.0 * PI * (j as f64 + 0.5) / grid.ny as f64;
    VectorField2D::new(
        ScalarField::from_fn(grid, |i, j| amplitude * x(i).cos() * y(j).sin()),
        ScalarField::from_fn(grid, |i, j| -amplitude * x(i).sin() * y(j).cos()),
    )
}

/// `n` independent GRFs; item `i` uses the sub-seed for `grf/{i}`.
pub fn make_dataset(n: usize, grid: Grid2D, slope: f64, seed: u64) -> Result<Vec<ScalarField>> {
    (0..n)
        .map(|i| gen_grf(grid, slope, crate::rng::derive_seed(seed, &format!("grf/{i}"))))
        .collect()
}

fn boundary_flag(g: &Grid2D) -> u8 {
    u8::from(!g.periodic_x) | (u8::from(!g.periodic_y) << 1)
}

pub fn encode_fields(fields: &[ScalarField]) -> Result<Vec<u8>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::param("fields", "need at least one channel"))?;
    let g = *first.grid();
    for f in fields {
        crate::field::check_same_grid(&g, f.grid())?;
    }
    let mut w = Writer::new(FIELD_MAGIC, FIELD_VERSION);
    w.u32(g.nx as u32);
    w.u32(g.ny as u32);
    w.u32(fields.len() as u32);
    w.f64(g.dx);
    w.f64(g.dy);
    w.u8(boundary_flag(&g));
    for f in fields {
        w.f64s(f.values());
    }
    Ok(w.buf)
}

pub fn decode_fields(bytes: &[u8], path: &Path) -> Result<Vec<ScalarField>> {
    let mut r = Reader::open(bytes, path, FIELD_MAGIC, FIELD_VERSION)?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let dx = r.f64()?;
    let dy = r.f64()?;
    let flag = r.u8()?;
    if flag > 3 {
        return Err(Error::InvalidGrid(format!("boundary flag {flag}")));
    }
    let mut grid = Grid2D::new(nx, ny, dx, dy, crate::field::Boundary::Periodic)?;
    grid.periodic_x = flag & 1 == 0;
    grid.periodic_y = flag & 2 == 0;
    let payload = r.f64s(channels * nx * ny)?;
    r.finish()?;
    payload
        .chunks_exact(nx * ny)
        .map(|c| ScalarField::new(grid, c.to_vec()))
        .collect()
}

pub fn write_field(path: &Path, fields: &[ScalarField]) -> Result<()> {
    write_file(path, &encode_fields(fields)?)
}

pub fn read_field(path: &Path) -> Result<Vec<ScalarField>> {
    decode_fields(&read_file(path)?, path)
}

/// Reads a file that must hold exactly one channel.
pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let mut fields = read_field(path)?;
    if fields.len() != 1 {
        return Err(Error::param("channels", format!("{} holds {} channels, expected 1", path.display(), fields.len())));
    }
    Ok(fields.remove(0))
}

/// Decodes in-memory bytes (no file path available for diagnostics).
pub fn decode_fields_in_memory(bytes: &[u8]) -> Result<Vec<ScalarField>> {
    decode_fields(bytes, &memory_path())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Boundary;
    use crate::spectral::{full_nbins, radial_power_spectrum, spectral_divergence};
    use crate::stencils::vorticity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Least-squares slope of log E(k) against log(k + ½) over `k ∈ [lo, hi]`.
    fn fitted_slope(fields: &[ScalarField], lo: usize, hi: usize) -> f64 {
        let g = *fields[0].grid();
        let nb = full_nbins(&g);
        let mut energy = vec![0.0; nb];
        for f in fields {
            for (e, v) in energy.iter_mut().zip(radial_power_spectrum(f, nb).unwrap().energy()) {
                *e += v;
            }
        }
        let pts: Vec<(f64, f64)> = (lo..=hi).map(|k| ((k as f64 + 0.5).ln(), energy[k].ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn grf_slope_recovery() {
        let g = Grid2D::square(128).unwrap();
        for slope in [-1.0, -5.0 / 3.0, -3.0] {
            let fields: Vec<ScalarField> = (0..16).map(|s| gen_grf(g, slope, s).unwrap()).collect();
            let fit = fitted_slope(&fields, 3, 20);
            assert!((fit - slope).abs() <= 0.15, "slope {slope}: fitted {fit}");
        }
    }

    #[test]
    fn grf_normalization_and_determinism() {
        let g = Grid2D::square(32).unwrap();
        let a = gen_grf(g, -5.0 / 3.0, 9).unwrap();
        assert!(a.mean().abs() < 1e-10);
        let var = a.values().iter().map(|v| v * v).sum::<f64>() / a.values().len() as f64;
        assert!((var - 1.0).abs() < 1e-10);
        assert_eq!(a.values(), gen_grf(g, -5.0 / 3.0, 9).unwrap().values());
        assert_ne!(a.values(), gen_grf(g, -5.0 / 3.0, 10).unwrap().values());
        let r = Grid2D::new(8, 8, 1.0, 1.0, Boundary::Reflect).unwrap();
        assert!(gen_grf(r, -1.0, 0).is_err());
    }

    #[test]
    fn taylor_green_examples() {
        let n = 32;
        let h = 1.0 / n as f64;
        let g = Grid2D::new(n, n, h, h, Boundary::Periodic).unwrap();
        let a = 1.5;
        let tg = gen_taylor_green(g, a).unwrap();
        assert!(spectral_divergence(&tg).unwrap().values().iter().all(|d| d.abs() <= 1e-10 * a));

        let om = vorticity(&tg).unwrap();
        // central differences scale the analytic curl by sin(2πh)/(2πh)
        let damp = (2.0 * PI * h).sin() / (2.0 * PI * h);
        let bound = 4.0 * PI * a * (1.0 - damp) + 1e-12;
        for j in 0..n {
            for i in 0..n {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let exact = -4.0 * PI * a * (2.0 * PI * x).cos() * (2.0 * PI * y).cos();
                assert!((om.at(i, j) - exact).abs() <= bound);
                assert!((om.at(i, j) - damp * exact).abs() < 1e-10);
            }
        }
        assert_eq!(gen_taylor_green(g, 0.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn dataset_examples() {
        let g = Grid2D::square(16).unwrap();
        assert!(make_dataset(0, g, -5.0 / 3.0, 1).unwrap().is_empty());
        let d = make_dataset(4, g, -5.0 / 3.0, 1).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(d[i].values(), d[j].values());
            }
        }
        assert_eq!(d, make_dataset(4, g, -5.0 / 3.0, 1).unwrap());
    }

    #[test]
    fn field_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid2D::new(6, 4, 0.25, 0.5, Boundary::Reflect).unwrap();
        let a = ScalarField::from_fn(g, |_, _| rng.random_range(-1e3..1e3));
        let b = ScalarField::from_fn(g, |_, _| rng.random::<f64>() * 1e-300);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/x.rmd");
        write_field(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        for (x, y) in back[0].values().iter().zip(a.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 12 + 16 + 1 + 2 * 24 * 8);
        assert!(read_scalar(&path).is_err());
    }

    #[test]
    fn corrupt_field_files_are_rejected() {
        let g = Grid2D::square(4).unwrap();
        let bytes = encode_fields(&[ScalarField::filled(g, 1.0)]).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        assert!(matches!(decode_fields_in_memory(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_fields_in_memory(&bad), Err(Error::BadVersion { .. })));
        match decode_fields_in_memory(&bytes[..bytes.len() - 8]) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 8);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(encode_fields(&[]).is_err());
    }
}
