//! Subcommand implementations. Every command writes the effective config
//! next to its outputs so a run can be replayed from that file alone.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use remd_core::data::{make_dataset, read_field, read_scalar, write_field};
use remd_core::metrics::evaluate;
use remd_core::nnet::{load_checkpoint, save_checkpoint, ModelParams};
use remd_core::sampler::sample;
use remd_core::spectral::{full_nbins, radial_power_spectrum};
use remd_core::training::{make_pair, train};
use remd_core::transfer::restrict_avg_n;
use remd_core::{ScalarField, VectorField2D};

use crate::config::RunConfig;

pub const CONFIG_ECHO: &str = "config.toml";
pub const MODEL_FILE: &str = "model.rmdp";
pub const LOSS_FILE: &str = "loss.csv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the config into `dir/config.toml`.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CONFIG_ECHO);
    write_text(&path, &cfg.to_toml())?;
    Ok(path)
}

/// Writes the config as `<output>.config.toml` beside a single output file.
fn echo_beside(cfg: &RunConfig, output: &Path) -> Result<()> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".config.toml");
    write_text(&output.with_file_name(name), &cfg.to_toml())
}

fn field_name(i: usize) -> String {
    format!("{i:04}.rmd")
}

/// Sorted `*.rmd` files of a directory.
pub fn list_fields(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rmd"))
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no .rmd files in {}", dir.display());
    }
    Ok(out)
}

fn load_dir(dir: &Path) -> Result<Vec<ScalarField>> {
    list_fields(dir)?
        .iter()
        .map(|p| read_scalar(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join("data").join("train")
}

pub fn test_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join("data").join("test")
}

/// Seeded random fields under `run_dir/data/{train,test}`. Returns the two
/// directories.
pub fn cmd_gen(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let grid = cfg.hr_grid()?;
    let mut dirs = Vec::new();
    for (split, count, dir) in [
        ("train", cfg.data.count, train_dir(cfg)),
        ("test", cfg.data.test_count, test_dir(cfg)),
    ] {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let fields = make_dataset(count, grid, cfg.data.slope, cfg.data_seed(split))?;
        for (i, u) in fields.iter().enumerate() {
            write_field(&dir.join(field_name(i)), std::slice::from_ref(u))?;
        }
        dirs.push(dir);
    }
    echo_config(cfg, &cfg.run_dir)?;
    let test = dirs.pop().expect("two splits");
    Ok((dirs.pop().expect("two splits"), test))
}

/// Block-averages a field file, or every `.rmd` file of a directory, by
/// `scale`. Directory inputs keep their file names under `output`.
pub fn cmd_degrade(cfg: &RunConfig, input: &Path, scale: usize, output: &Path) -> Result<Vec<PathBuf>> {
    if !scale.is_power_of_two() || scale < 2 {
        bail!("scale must be a power of two >= 2, got {scale}");
    }
    let times = scale.trailing_zeros() as usize;
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        list_fields(input)?
            .into_iter()
            .map(|p| {
                let dst = output.join(p.file_name().expect("file"));
                (p, dst)
            })
            .collect()
    } else {
        vec![(input.to_path_buf(), output.to_path_buf())]
    };
    for (src, dst) in &jobs {
        let fields = read_field(src).with_context(|| format!("reading {}", src.display()))?;
        let lr = fields
            .iter()
            .map(|f| restrict_avg_n(f, times))
            .collect::<remd_core::Result<Vec<_>>>()?;
        write_field(dst, &lr)?;
    }
    if input.is_dir() {
        echo_config(cfg, output)?;
    } else {
        echo_beside(cfg, output)?;
    }
    Ok(jobs.into_iter().map(|(_, d)| d).collect())
}

/// Trains on the HR fields in `data` (default: `run_dir/data/train`, which
/// is generated first when missing). Writes `model.rmdp`, `loss.csv` and
/// periodic checkpoints into `run_dir`.
pub fn cmd_train(cfg: &RunConfig, data: Option<&Path>) -> Result<PathBuf> {
    let dir = match data {
        Some(d) => d.to_path_buf(),
        None => {
            let d = train_dir(cfg);
            if !d.is_dir() {
                cmd_gen(cfg)?;
            }
            d
        }
    };
    let dataset = load_dir(&dir)?;
    let grid = *dataset[0].grid();
    let ctx = cfg.context_for(grid, cfg.mg.levels)?;
    std::fs::create_dir_all(&cfg.run_dir).with_context(|| format!("creating {}", cfg.run_dir.display()))?;
    let outcome = train(&cfg.train_config(), &ctx, &cfg.mg, &dataset, Some(&cfg.run_dir))?;
    write_text(&cfg.run_dir.join(LOSS_FILE), &outcome.loss_csv())?;
    let model = cfg.run_dir.join(MODEL_FILE);
    save_checkpoint(&model, &outcome.checkpoint())?;
    echo_config(cfg, &cfg.run_dir)?;
    Ok(model)
}

/// Loads parameters, or builds the untrained model when `checkpoint` is
/// `None`.
pub fn load_params(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ModelParams> {
    match checkpoint {
        Some(p) => Ok(load_checkpoint(p)
            .with_context(|| format!("loading checkpoint {}", p.display()))?
            .params),
        None => Ok(ModelParams::init(
            &cfg.mg,
            &mut remd_core::rng::rng_for(cfg.train_config().seed, "init"),
        )?),
    }
}

/// Super-resolves `lr` by the configured scale with `nfe` steps; `item`
/// selects the noise sub-seed.
pub fn super_resolve(cfg: &RunConfig, params: &ModelParams, lr: &ScalarField, nfe: usize, item: usize) -> Result<ScalarField> {
    let mut grid = *lr.grid();
    for _ in 0..cfg.train.scale_factor.trailing_zeros() {
        grid = grid.refine();
    }
    let ctx = cfg.context_for(grid, params.shape().levels)?;
    let sched = ctx.schedule.clone().with_nfe(nfe)?;
    Ok(sample(lr, params, &sched, &ctx, &cfg.sample_options(item))?)
}

/// Super-resolves one LR field with `sampler.nfe` steps.
pub fn cmd_sample(cfg: &RunConfig, checkpoint: Option<&Path>, lr_file: &Path, output: &Path) -> Result<ScalarField> {
    let params = load_params(cfg, checkpoint)?;
    let lr = read_scalar(lr_file).with_context(|| format!("reading {}", lr_file.display()))?;
    let hr = super_resolve(cfg, &params, &lr, cfg.sampler.nfe, 0)?;
    write_field(output, std::slice::from_ref(&hr))?;
    echo_beside(cfg, output)?;
    Ok(hr)
}

/// Report CSV at `out_prefix.csv` and error spectrum at
/// `out_prefix.spectrum.csv`. Two-channel files are read as velocity
/// `(u, v)`: scalar metrics use `u`, and vorticity/divergence are filled.
pub fn cmd_eval(cfg: &RunConfig, pred: &Path, gt: &Path, out_prefix: &Path) -> Result<remd_core::metrics::EvalReport> {
    let p = read_field(pred).with_context(|| format!("reading {}", pred.display()))?;
    let g = read_field(gt).with_context(|| format!("reading {}", gt.display()))?;
    if p.len() != g.len() {
        bail!("channel count differs: {} vs {}", p.len(), g.len());
    }
    let vectors = if p.len() == 2 {
        Some((
            VectorField2D::new(p[0].clone(), p[1].clone())?,
            VectorField2D::new(g[0].clone(), g[1].clone())?,
        ))
    } else {
        None
    };
    let report = evaluate(&p[0], &g[0], vectors.as_ref().map(|(a, b)| (a, b)), 0)?;
    let with_ext = |ext: &str| {
        let mut name = out_prefix.file_name().unwrap_or_default().to_os_string();
        name.push(ext);
        out_prefix.with_file_name(name)
    };
    write_text(&with_ext(".csv"), &report.to_csv())?;
    write_text(&with_ext(".spectrum.csv"), &report.error_spectrum.to_csv())?;
    echo_beside(cfg, &with_ext(".csv"))?;
    Ok(report)
}

/// Radial power spectrum CSV (`k,power,count`); `nbins = 0` uses every shell.
pub fn cmd_spectrum(cfg: &RunConfig, field: &Path, nbins: usize, output: &Path) -> Result<()> {
    let u = read_scalar(field).with_context(|| format!("reading {}", field.display()))?;
    let nbins = if nbins == 0 { full_nbins(u.grid()) } else { nbins };
    write_text(output, &radial_power_spectrum(&u, nbins)?.to_csv())?;
    echo_beside(cfg, output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub steps: usize,
    pub rmse: f64,
    pub seconds: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("steps,rmse,seconds\n");
    for r in rows {
        s.push_str(&format!("{},{:e},{:e}\n", r.steps, r.rmse, r.seconds));
    }
    s
}

/// For each step count, super-resolves every LR field in `lr_dir` and reports
/// the pooled RMSE against the same-named HR fields in `gt_dir`.
pub fn sweep_fields(cfg: &RunConfig, params: &ModelParams, lrs: &[ScalarField], gts: &[ScalarField], steps: &[usize]) -> Result<Vec<SweepRow>> {
    if lrs.len() != gts.len() || lrs.is_empty() {
        bail!("need matching nonempty LR and GT sets ({} vs {})", lrs.len(), gts.len());
    }
    let mut rows = Vec::new();
    for &k in steps {
        let start = Instant::now();
        let mut sq = 0.0;
        let mut n = 0usize;
        for (i, (lr, gt)) in lrs.iter().zip(gts).enumerate() {
            let pred = super_resolve(cfg, params, lr, k, i)?;
            let d = pred.sub(gt)?;
            sq += d.values().iter().map(|v| v * v).sum::<f64>();
            n += d.values().len();
        }
        rows.push(SweepRow {
            steps: k,
            rmse: (sq / n as f64).sqrt(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// Writes `run_dir/sweep.csv` (or `output`) and returns the rows.
pub fn cmd_sweep(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    lr_dir: &Path,
    gt_dir: &Path,
    steps: &[usize],
    output: &Path,
) -> Result<Vec<SweepRow>> {
    let params = load_params(cfg, checkpoint)?;
    let lr_files = list_fields(lr_dir)?;
    let gts = lr_files
        .iter()
        .map(|p| {
            let gp = gt_dir.join(p.file_name().expect("file"));
            read_scalar(&gp).with_context(|| format!("reading {}", gp.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let lrs = load_dir(lr_dir)?;
    let rows = sweep_fields(cfg, &params, &lrs, &gts, steps)?;
    write_text(output, &sweep_csv(&rows))?;
    echo_beside(cfg, output)?;
    Ok(rows)
}

/// LR counterparts of HR fields at the configured scale.
pub fn degrade_all(cfg: &RunConfig, hr: &[ScalarField]) -> Result<Vec<ScalarField>> {
    hr.iter()
        .map(|u| Ok(make_pair(u, cfg.train.scale_factor)?.0))
        .collect()
}
