use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{compute_metrics, mean_std, MetricsReport};
use crate::dataset::{
    build_patient_index, monte_carlo_split, permute_patient_labels, slide_labels, temporal_split, PatientIndex,
    SlideManifestEntry, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::models::{
    build_encoder, predict_slide_mil, predict_slide_patchwise, train_mil, train_patch_classifier, Aggregation,
    EncoderConfig, EncoderVariant, History, MilConfig, MilModel, ModelKind, PatchClassifier, SlidePrediction,
    TrainingConfig, TrainingData,
};
use crate::patches::{Augmentation, BankParams, PatchBank};
use crate::seed::derive_seed;

/// Everything an experiment run depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kinds: Vec<ModelKind>,
    /// Folds (Monte Carlo) or repeats (temporal).
    pub n_folds: usize,
    pub base_seed: u64,
    /// Train/validation/test ratios of the Monte Carlo split.
    pub ratios: (f64, f64, f64),
    /// Share of earliest-resection slides used for validation in the
    /// temporal split.
    pub val_fraction: f64,
    pub ks: Vec<usize>,
    pub encoder: EncoderConfig,
    pub patch_training: TrainingConfig,
    pub mil_training: TrainingConfig,
    pub mil: MilConfig,
    pub aggregation: Aggregation,
    pub augmentation: Augmentation,
    /// Shuffle patient labels across slides before splitting (chance control).
    pub permute_labels: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kinds: vec![ModelKind::Patch, ModelKind::Mil],
            n_folds: 10,
            base_seed: 0,
            ratios: (0.6, 0.15, 0.25),
            val_fraction: 0.2,
            ks: vec![1, 5],
            encoder: EncoderConfig::default(),
            patch_training: TrainingConfig::default(),
            mil_training: TrainingConfig::default(),
            mil: MilConfig::default(),
            aggregation: Aggregation::Mean,
            augmentation: Augmentation::default(),
            permute_labels: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one model kind is required".into()));
        }
        if self.n_folds == 0 {
            return Err(Error::Config("n_folds must be at least 1".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty and positive".into()));
        }
        self.encoder.validate()?;
        self.patch_training.validate()?;
        self.mil_training.validate()?;
        self.mil.validate()
    }

    /// Short content hash of the configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    MonteCarlo,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub split_fingerprint: String,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-fold reports of one model kind plus their mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub protocol: Protocol,
    pub kind: ModelKind,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<MetricStat>,
    pub config_fingerprint: String,
    pub base_seed: u64,
    pub n_classes: usize,
}

impl ExperimentResult {
    fn new(protocol: Protocol, kind: ModelKind, folds: Vec<FoldResult>, cfg: &ExperimentConfig, n_classes: usize) -> Self {
        let mut summary = Vec::new();
        let mut push = |name: String, f: &dyn Fn(&MetricsReport) -> f64| {
            let values: Vec<f64> = folds.iter().map(|r| f(&r.metrics)).collect();
            let (mean, std) = mean_std(&values);
            summary.push(MetricStat { name, mean, std });
        };
        for (i, k) in cfg.ks.iter().enumerate() {
            push(format!("recall@{k}"), &|m| m.macro_recall[i]);
        }
        push("precision".into(), &|m| m.macro_precision);
        push("f1".into(), &|m| m.macro_f1);
        ExperimentResult {
            protocol,
            kind,
            folds,
            summary,
            config_fingerprint: cfg.fingerprint(),
            base_seed: cfg.base_seed,
            n_classes,
        }
    }

    pub fn stat(&self, name: &str) -> Option<&MetricStat> {
        self.summary.iter().find(|s| s.name == name)
    }

    pub fn mean_recall_at(&self, k: usize) -> f64 {
        self.stat(&format!("recall@{k}")).map(|s| s.mean).unwrap_or(f64::NAN)
    }

    pub fn fold_recall_at(&self, k: usize) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.metrics.recall_at(k)).collect()
    }
}

/// Trained models and predictions of one fold, kept for post-hoc analysis.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub split: SplitAssignment,
    /// slide id → class, after any label permutation.
    pub labels: BTreeMap<String, usize>,
    pub patch_model: Option<PatchClassifier>,
    pub patch_history: Option<History>,
    pub mil_model: Option<MilModel>,
    pub mil_history: Option<History>,
    pub predictions: BTreeMap<ModelKind, Vec<SlidePrediction>>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub results: Vec<ExperimentResult>,
    pub artifacts: Vec<FoldArtifacts>,
    pub patient_index: PatientIndex,
}

impl Experiment {
    pub fn result(&self, kind: ModelKind) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.kind == kind)
    }
}

fn run_fold(
    fold: usize,
    split: SplitAssignment,
    labels: BTreeMap<String, usize>,
    n_classes: usize,
    bank: &PatchBank,
    cfg: &ExperimentConfig,
) -> Result<(FoldArtifacts, Vec<(ModelKind, MetricsReport, usize)>)> {
    let train_seed = derive_seed(cfg.base_seed, "train", fold as u64);
    let data = TrainingData {
        bank,
        labels: &labels,
        n_classes,
    };
    let wants_mil = cfg.kinds.contains(&ModelKind::Mil);
    // MIL needs a frozen encoder: either supplied weights, or the encoder the
    // patch classifier learned on this fold's training slides.
    let mil_needs_patch = wants_mil && cfg.encoder.weights_path.is_none();
    let needs_patch = cfg.kinds.contains(&ModelKind::Patch) || mil_needs_patch;
    let mut artifacts = FoldArtifacts {
        fold,
        split: split.clone(),
        labels: labels.clone(),
        patch_model: None,
        patch_history: None,
        mil_model: None,
        mil_history: None,
        predictions: BTreeMap::new(),
    };
    let test_ids: Vec<&String> = split.test.iter().filter(|id| !bank.patches(id).is_empty()).collect();
    if test_ids.len() < split.test.len() {
        log::warn!("fold {fold}: {} test slides without patches skipped", split.test.len() - test_ids.len());
    }
    let mut out = Vec::new();
    if needs_patch {
        let mut tc = cfg.patch_training.clone();
        tc.seed = derive_seed(train_seed, "patch", 0);
        let encoder = build_encoder(&cfg.encoder, tc.seed)?;
        let (model, history) = train_patch_classifier(&data, &split, encoder, &tc, &cfg.augmentation)?;
        if cfg.kinds.contains(&ModelKind::Patch) {
            let preds = test_ids
                .iter()
                .map(|id| predict_slide_patchwise(&model, id, bank.patches(id), cfg.aggregation))
                .collect::<Result<Vec<_>>>()?;
            let metrics = compute_metrics(&preds, &labels, &cfg.ks)?;
            out.push((ModelKind::Patch, metrics, history.best_epoch));
            artifacts.predictions.insert(ModelKind::Patch, preds);
        }
        artifacts.patch_model = Some(model);
        artifacts.patch_history = Some(history);
    }
    if wants_mil {
        let encoder = match (&artifacts.patch_model, cfg.encoder.variant) {
            (Some(m), EncoderVariant::TaskTrained | EncoderVariant::TinySynthetic) if mil_needs_patch => {
                m.encoder.clone()
            }
            _ => build_encoder(&cfg.encoder, derive_seed(train_seed, "mil-encoder", 0))?,
        };
        let mut tc = cfg.mil_training.clone();
        tc.seed = derive_seed(train_seed, "mil", 0);
        let (model, history) = train_mil(&data, &split, &encoder, &tc, &cfg.mil, &cfg.augmentation)?;
        let inference_seed = derive_seed(train_seed, "mil-inference", 0);
        let preds = test_ids
            .iter()
            .map(|id| predict_slide_mil(&model, id, bank.patches(id), cfg.mil.inference_cap, inference_seed))
            .collect::<Result<Vec<_>>>()?;
        let metrics = compute_metrics(&preds, &labels, &cfg.ks)?;
        out.push((ModelKind::Mil, metrics, history.best_epoch));
        artifacts.predictions.insert(ModelKind::Mil, preds);
        artifacts.mil_model = Some(model);
        artifacts.mil_history = Some(history);
    }
    Ok((artifacts, out))
}

fn run_protocol(
    protocol: Protocol,
    entries: &[SlideManifestEntry],
    bank: &PatchBank,
    cfg: &ExperimentConfig,
) -> Result<Experiment> {
    cfg.validate()?;
    let index = build_patient_index(entries)?;
    let n_classes = index.len();
    let mut per_kind: BTreeMap<ModelKind, Vec<FoldResult>> = BTreeMap::new();
    let mut artifacts = Vec::with_capacity(cfg.n_folds);
    for fold in 0..cfg.n_folds {
        let split_seed = cfg.base_seed.wrapping_add(fold as u64);
        let fold_entries = if cfg.permute_labels {
            permute_patient_labels(entries, derive_seed(cfg.base_seed, "permute", fold as u64))
        } else {
            entries.to_vec()
        };
        let split = match protocol {
            Protocol::MonteCarlo => monte_carlo_split(&fold_entries, cfg.ratios, split_seed)?,
            Protocol::Temporal => temporal_split(&fold_entries, cfg.val_fraction, split_seed)?,
        };
        let labels = slide_labels(&fold_entries, &index);
        log::info!("{protocol:?} fold {fold}: split {}", split.fingerprint());
        let fingerprint = split.fingerprint();
        let (art, reports) = run_fold(fold, split, labels, n_classes, bank, cfg)?;
        for (kind, metrics, best_epoch) in reports {
            per_kind.entry(kind).or_default().push(FoldResult {
                fold,
                split_seed,
                train_seed: derive_seed(cfg.base_seed, "train", fold as u64),
                split_fingerprint: fingerprint.clone(),
                metrics,
                best_epoch,
            });
        }
        artifacts.push(art);
    }
    let results = cfg
        .kinds
        .iter()
        .filter_map(|k| per_kind.remove(k).map(|folds| ExperimentResult::new(protocol, *k, folds, cfg, n_classes)))
        .collect();
    Ok(Experiment {
        results,
        artifacts,
        patient_index: index,
    })
}

/// Monte Carlo cross-validation: fold `i` splits slides at random with seed
/// `base_seed + i`, trains the requested model kinds and evaluates them on
/// the fold's test slides.
pub fn run_experiment1(entries: &[SlideManifestEntry], bank: &PatchBank, cfg: &ExperimentConfig) -> Result<Experiment> {
    run_protocol(Protocol::MonteCarlo, entries, bank, cfg)
}

/// Temporal protocol: training and validation come from each patient's
/// earliest resection, the test set is every later-resection slide. Repeat
/// `i` redraws only the train/validation partition (seed `base_seed + i`).
pub fn run_experiment2(entries: &[SlideManifestEntry], bank: &PatchBank, cfg: &ExperimentConfig) -> Result<Experiment> {
    run_protocol(Protocol::Temporal, entries, bank, cfg)
}

/// Spatial resolutions (µm per pixel) compared in the magnification sweep.
pub const DEFAULT_SWEEP_MPP: [f64; 6] = [0.22, 0.44, 0.88, 1.76, 3.52, 7.04];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mpp: f64,
    pub result: ExperimentResult,
}

/// Runs Experiment 1 once per resolution, re-tiling the slides each time.
pub fn resolution_sweep(
    entries: &[SlideManifestEntry],
    mpp_list: &[f64],
    bank_params: &BankParams,
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    let kind = *cfg
        .kinds
        .first()
        .ok_or_else(|| Error::Config("sweep needs a model kind".into()))?;
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.kinds = vec![kind];
    let mut rows = Vec::with_capacity(mpp_list.len());
    for &mpp in mpp_list {
        let mut params = *bank_params;
        params.grid.target_mpp = mpp;
        let bank = PatchBank::build(entries, &params, &cfg.augmentation.macenko)?;
        let exp = run_experiment1(entries, &bank, &sweep_cfg)?;
        let result = exp
            .results
            .into_iter()
            .next()
            .ok_or_else(|| Error::Evaluation(format!("no result at {mpp} mpp")))?;
        rows.push(SweepRow { mpp, result });
    }
    Ok(rows)
}
