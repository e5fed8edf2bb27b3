//! Run configuration: a TOML file with one section per module, `--set
//! key=value` overrides applied on top (last wins), unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use remd_core::nnet::{ModelContext, ModelShape};
use remd_core::physics::PhysicsConfig;
use remd_core::rng::derive_seed;
use remd_core::sampler::{make_cosine_schedule, DriftCoefficients, SampleOptions, TimestepSchedule, DEFAULT_S_OFFSET};
use remd_core::training::TrainConfig;
use remd_core::transfer::{build_hierarchy, WaveletFilterBank, WaveletKind};
use remd_core::{Boundary, Grid2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Training fields written by `gen`.
    pub count: usize,
    /// Held-out fields written by `gen`.
    pub test_count: usize,
    /// High-resolution side length.
    pub grid: usize,
    /// Energy-spectrum slope of the random fields.
    pub slope: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            count: 64,
            test_count: 16,
            grid: 32,
            slope: -5.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scale_factor: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            scale_factor: t.scale_factor,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    #[serde(rename = "T")]
    pub total: usize,
    pub nfe: usize,
    /// Overrides the seed derived from the top-level `seed`.
    pub seed: Option<u64>,
    pub alpha_scale: f64,
    pub alpha_floor: f64,
    pub alpha_clip: f64,
    pub s_offset: f64,
    pub eta: f64,
    pub init_noise: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = DriftCoefficients::default();
        Self {
            total: 1000,
            nfe: 5,
            seed: None,
            alpha_scale: d.scale,
            alpha_floor: d.floor,
            alpha_clip: d.clip,
            s_offset: DEFAULT_S_OFFSET,
            eta: 0.0,
            init_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub wavelet: WaveletKind,
    pub boundary: Boundary,
    pub data: DataSection,
    pub train: TrainSection,
    pub mg: ModelShape,
    pub physics: PhysicsConfig,
    pub sampler: SamplerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            wavelet: WaveletKind::default(),
            boundary: Boundary::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            mg: ModelShape::default(),
            physics: PhysicsConfig::default(),
            sampler: SamplerSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads an optional file, then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| anyhow!("{}: {}", p.display(), e.message()))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Self::from_table(table)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse::<toml::Table>().map_err(|e| anyhow!("{}", e.message()))?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.mg.validate()?;
        self.physics.validate()?;
        if self.data.grid % self.train.scale_factor != 0 {
            bail!("data.grid {} is not divisible by train.scale_factor {}", self.data.grid, self.train.scale_factor);
        }
        if self.data.grid >> self.mg.levels == 0 || self.data.grid % (1 << self.mg.levels) != 0 {
            bail!("data.grid {} does not support mg.levels = {}", self.data.grid, self.mg.levels);
        }
        if self.sampler.nfe > self.sampler.total {
            bail!("sampler.nfe {} exceeds sampler.T {}", self.sampler.nfe, self.sampler.total);
        }
        if !(self.sampler.init_noise >= 0.0 && self.sampler.init_noise.is_finite()) {
            bail!("sampler.init_noise must be finite and non-negative");
        }
        Ok(())
    }

    pub fn hr_grid(&self) -> Result<Grid2D> {
        let n = self.data.grid;
        Ok(Grid2D::new(n, n, 1.0, 1.0, self.boundary)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            scale_factor: self.train.scale_factor,
            grid_size: self.data.grid,
            seed: derive_seed(self.seed, "train"),
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    pub fn schedule(&self) -> Result<TimestepSchedule> {
        let s = &self.sampler;
        Ok(make_cosine_schedule(s.total, s.s_offset)?
            .with_drift(DriftCoefficients {
                scale: s.alpha_scale,
                floor: s.alpha_floor,
                clip: s.alpha_clip,
            })?
            .with_eta(s.eta)?
            .with_nfe(s.nfe)?)
    }

    /// Model context on the given fine grid with the configured depth.
    pub fn context_for(&self, grid: Grid2D, levels: usize) -> Result<ModelContext> {
        let hierarchy = build_hierarchy(grid, levels, WaveletFilterBank::from_kind(self.wavelet))?;
        Ok(ModelContext::new(hierarchy, self.physics.clone(), self.schedule()?))
    }

    pub fn sample_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or_else(|| derive_seed(self.seed, "sample"))
    }

    /// Options for the `item`-th sample of a run.
    pub fn sample_options(&self, item: usize) -> SampleOptions {
        SampleOptions {
            seed: derive_seed(self.sample_seed(), &format!("item/{item}")),
            init_noise: self.sampler.init_noise,
        }
    }

    pub fn data_seed(&self, split: &str) -> u64 {
        derive_seed(self.seed, &format!("data/{split}"))
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        bail!("override `{item}` has an empty key");
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(text.contains("[sampler]") && text.contains("T = 1000"));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml_str("[train]\nitertions = 5\n").unwrap_err().to_string();
        assert!(err.contains("itertions"), "{err}");
        let err = RunConfig::from_toml_str("sead = 1\n").unwrap_err().to_string();
        assert!(err.contains("sead"), "{err}");
        let err = RunConfig::load(None, &["physics.w_lapp=2".into()]).unwrap_err().to_string();
        assert!(err.contains("w_lapp"), "{err}");
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(
            None,
            &[
                "sampler.nfe=2".into(),
                "sampler.nfe=10".into(),
                "wavelet=db2".into(),
                "physics.kappa=0.3".into(),
                "run_dir=out/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.sampler.nfe, 10);
        assert_eq!(cfg.wavelet, WaveletKind::Db2);
        assert_eq!(cfg.physics.kappa, Some(0.3));
        assert_eq!(cfg.run_dir, PathBuf::from("out/x"));
        assert_eq!(cfg.schedule().unwrap().ddim_steps.len(), 10);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[mg]\nlevels = 2\n[sampler]\nseed = 3\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["mg.levels=1".into()]).unwrap();
        assert_eq!((cfg.seed, cfg.mg.levels, cfg.sample_seed()), (7, 1, 3));
        assert_eq!(cfg.mg.d_emb, ModelShape::default().d_emb);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::load(None, &["train.scale_factor=3".into()]).is_err());
        assert!(RunConfig::load(None, &["sampler.nfe=2000".into()]).is_err());
        assert!(RunConfig::load(None, &["boundary=open".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
        assert!(RunConfig::load(None, &["data.grid=30".into()]).is_err());
    }

    #[test]
    fn seeds_are_derived_per_purpose() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.data_seed("train"), cfg.data_seed("test"));
        assert_ne!(cfg.sample_options(0).seed, cfg.sample_options(1).seed);
        assert_eq!(cfg.train_config().seed, derive_seed(0, "train"));
    }
}
