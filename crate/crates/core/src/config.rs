//! Run configuration: a sectioned TOML file plus `section.key=value`
//! overrides, resolved into the typed parameters of every component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic_cohort, load_manifest, ImageCheck, SlideManifestEntry, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{fingerprint_of, ExperimentConfig, DEFAULT_SWEEP_MPP};
use crate::models::{Aggregation, EncoderConfig, MilConfig, ModelKind, TrainingConfig};
use crate::patches::{Augmentation, BankParams, StainScope};
use crate::seed::derive_seed;
use crate::stain::{MacenkoParams, DEFAULT_EPSILON, DEFAULT_LAMBDA};
use crate::tiling::GridParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_patients: usize,
    pub slides_per_patient: usize,
    pub resections_per_patient: usize,
    pub image_size_px: u32,
    /// Defaults to a sub-seed of the root seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_native_mpp")]
    pub native_mpp: f64,
    #[serde(default = "default_drift")]
    pub drift: f64,
    #[serde(default = "default_stain_jitter")]
    pub stain_jitter: f64,
}

fn default_native_mpp() -> f64 {
    SynthConfig::new(1, 1, 1, 256, 0).native_mpp
}
fn default_drift() -> f64 {
    SynthConfig::new(1, 1, 1, 256, 0).drift
}
fn default_stain_jitter() -> f64 {
    SynthConfig::new(1, 1, 1, 256, 0).stain_jitter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingSection {
    pub size_px: u32,
    pub target_mpp: f64,
    /// Defaults to `size_px` (non-overlapping grid).
    pub stride_px: Option<u32>,
    pub min_coverage: f64,
    pub downscale_factor: u32,
    pub max_patches_per_slide: usize,
}

impl Default for TilingSection {
    fn default() -> Self {
        TilingSection {
            size_px: 512,
            target_mpp: 0.88,
            stride_px: None,
            min_coverage: 0.7,
            downscale_factor: 32,
            max_patches_per_slide: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StainSection {
    pub lambda: f64,
    pub epsilon: f64,
    pub od_floor: f64,
    pub angle_percentile: f64,
    pub concentration_percentile: f64,
    pub scope: StainScope,
    pub flips: bool,
}

impl Default for StainSection {
    fn default() -> Self {
        let m = MacenkoParams::default();
        StainSection {
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            od_floor: m.od_floor,
            angle_percentile: m.angle_percentile,
            concentration_percentile: m.concentration_percentile,
            scope: StainScope::PerPatch,
            flips: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kinds: Vec<ModelKind>,
    pub aggregation: Aggregation,
    pub bag_size: usize,
    pub attention_hidden: usize,
    pub inference_cap: usize,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub mil_training: TrainingConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let mil = MilConfig::default();
        ModelSection {
            kinds: vec![ModelKind::Patch, ModelKind::Mil],
            aggregation: Aggregation::Mean,
            bag_size: mil.bag_size,
            attention_hidden: mil.attention_hidden,
            inference_cap: mil.inference_cap,
            encoder: EncoderConfig::default(),
            training: TrainingConfig::default(),
            mil_training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub folds: usize,
    pub repeats: usize,
    pub ratios: [f64; 3],
    pub val_fraction: f64,
    pub ks: Vec<usize>,
    pub sweep_mpp: Vec<f64>,
    pub permute_labels: bool,
    pub latent_patches_per_slide: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            folds: 10,
            repeats: 10,
            ratios: [0.6, 0.15, 0.25],
            val_fraction: 0.2,
            ks: vec![1, 5],
            sweep_mpp: DEFAULT_SWEEP_MPP.to_vec(),
            permute_labels: false,
            latent_patches_per_slide: crate::latent::DEFAULT_PATCHES_PER_SLIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub tiling: TilingSection,
    #[serde(default)]
    pub stain: StainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/out")
}

fn default_workers() -> usize {
    1
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides (flags win over the file) and
    /// validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if !table.contains_key("dataset") {
            return Err(Error::Config("missing required section [dataset]".into()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (None, None) => {
                return Err(Error::Config("[dataset] needs either `manifest` or a [dataset.synthetic] table".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config("[dataset] takes `manifest` or [dataset.synthetic], not both".into()))
            }
            _ => {}
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tiling.min_coverage) || self.tiling.size_px == 0 {
            return Err(Error::Config("tiling: size_px must be positive and min_coverage in [0, 1]".into()));
        }
        if !(self.stain.lambda >= 0.0) {
            return Err(Error::Config("stain.lambda must be non-negative".into()));
        }
        self.experiment_config(0).validate()
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        self.dataset.synthetic.as_ref().map(|s| SynthConfig {
            n_patients: s.n_patients,
            slides_per_patient: s.slides_per_patient,
            resections_per_patient: s.resections_per_patient,
            image_size_px: s.image_size_px,
            seed: s.seed.unwrap_or_else(|| self.synth_seed()),
            native_mpp: s.native_mpp,
            drift: s.drift,
            stain_jitter: s.stain_jitter,
        })
    }

    fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, "synth", 0)
    }

    /// Loads the manifest, or generates the synthetic cohort under
    /// `<output_dir>/cohort`.
    pub fn load_entries(&self) -> Result<Vec<SlideManifestEntry>> {
        match (&self.dataset.manifest, self.synth_config()) {
            (Some(path), _) => load_manifest(path, ImageCheck::AtLoad),
            (None, Some(sc)) => Ok(generate_synthetic_cohort(&sc, &self.output_dir.join("cohort"))?.entries),
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }

    pub fn macenko(&self) -> MacenkoParams {
        MacenkoParams {
            od_floor: self.stain.od_floor,
            angle_percentile: self.stain.angle_percentile,
            concentration_percentile: self.stain.concentration_percentile,
            epsilon: self.stain.epsilon,
        }
    }

    pub fn augmentation(&self) -> Augmentation {
        Augmentation {
            lambda: self.stain.lambda,
            flips: self.stain.flips,
            macenko: self.macenko(),
        }
    }

    pub fn bank_params(&self) -> BankParams {
        BankParams {
            grid: GridParams {
                size_px: self.tiling.size_px,
                target_mpp: self.tiling.target_mpp,
                stride_px: self.tiling.stride_px.unwrap_or(self.tiling.size_px),
                min_coverage: self.tiling.min_coverage,
            },
            downscale_factor: self.tiling.downscale_factor,
            max_patches_per_slide: self.tiling.max_patches_per_slide,
            stain_scope: self.stain.scope,
            seed: derive_seed(self.seed, "patches", 0),
        }
    }

    pub fn mil_config(&self) -> MilConfig {
        MilConfig {
            bag_size: self.model.bag_size,
            attention_hidden: self.model.attention_hidden,
            inference_cap: self.model.inference_cap,
        }
    }

    /// Experiment parameters with `n_folds` folds (or repeats).
    pub fn experiment_config(&self, n_folds: usize) -> ExperimentConfig {
        let [a, b, c] = self.experiment.ratios;
        ExperimentConfig {
            kinds: self.model.kinds.clone(),
            n_folds: n_folds.max(1),
            base_seed: self.seed,
            ratios: (a, b, c),
            val_fraction: self.experiment.val_fraction,
            ks: self.experiment.ks.clone(),
            encoder: self.model.encoder.clone(),
            patch_training: self.model.training.clone(),
            mil_training: self.model.mil_training.clone(),
            mil: self.mil_config(),
            aggregation: self.model.aggregation,
            augmentation: self.augmentation(),
            permute_labels: self.experiment.permute_labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub name: String,
    pub value: u64,
}

/// Written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub config_fingerprint: String,
    pub root_seed: u64,
    pub seeds: Vec<SeedRecord>,
    pub artifacts: Vec<String>,
    pub effective_config: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut seeds = vec![
            SeedRecord {
                name: "root".into(),
                value: cfg.seed,
            },
            SeedRecord {
                name: "patches".into(),
                value: cfg.bank_params().seed,
            },
        ];
        if let Some(sc) = cfg.synth_config() {
            seeds.push(SeedRecord {
                name: "synth".into(),
                value: sc.seed,
            });
        }
        RunManifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_fingerprint: cfg.fingerprint(),
            root_seed: cfg.seed,
            seeds,
            artifacts: Vec::new(),
            effective_config: cfg.to_toml(),
        }
    }

    pub fn seed(&mut self, name: impl Into<String>, value: u64) {
        self.seeds.push(SeedRecord {
            name: name.into(),
            value,
        });
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, &self.effective_config).map_err(|e| Error::io(&cfg_path, e))?;
        Ok(path)
    }
}
