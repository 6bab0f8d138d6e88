//! Re-identification models: a patch-level N-way classifier aggregated per
//! slide, and gated-attention MIL over bags of patch embeddings produced by a
//! frozen encoder.

mod attention;
mod checkpoint;
mod encoder;
mod mil;
mod patch;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::PatchBank;
use crate::seed::derived_rng;

pub use attention::{gradient_check, AttentionCache, GatedAttention, MilHead};
pub use checkpoint::{Checkpoint, CheckpointModel};
pub use encoder::{Encoder, EncoderArch, EncoderCache, EncoderWeights};
pub use mil::{
    embed_patches, make_bags, predict_slide_mil, sample_bag_indices, train_mil, Bag, MilConfig, MilModel,
};
pub use patch::{aggregate_patch_probabilities, predict_slide_patchwise, train_patch_classifier, PatchClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Patch,
    Mil,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Patch => "Patch",
            ModelKind::Mil => "MIL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Trained end to end by the patch classifier.
    TaskTrained,
    ImagenetPretrained,
    SslPretrained,
    /// Small residual CNN, randomly initialized.
    TinySynthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub embedding_dim: usize,
    /// Channel count of the stem; doubled once inside the network.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
}

fn default_width() -> usize {
    8
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::TinySynthetic,
            embedding_dim: 32,
            width: default_width(),
            weights_path: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.width == 0 {
            return Err(Error::Config("encoder embedding_dim and width must be positive".into()));
        }
        if matches!(self.variant, EncoderVariant::ImagenetPretrained | EncoderVariant::SslPretrained)
            && self.weights_path.is_none()
        {
            return Err(Error::Config(format!("encoder variant {:?} requires weights_path", self.variant)));
        }
        Ok(())
    }
}

/// Builds the encoder described by `config`.
///
/// Pretrained variants load weights in this crate's own JSON format; the
/// others start from a seeded random initialization unless a weights file is
/// given.
pub fn build_encoder(config: &EncoderConfig, seed: u64) -> Result<Encoder> {
    config.validate()?;
    let enc = match &config.weights_path {
        Some(path) => Encoder::load_weights(path)?,
        None => Encoder::new(
            EncoderArch {
                width: config.width,
                embedding_dim: config.embedding_dim,
            },
            &mut derived_rng(seed, "init/encoder", 0),
        )?,
    };
    if enc.embedding_dim() != config.embedding_dim {
        return Err(Error::Model(format!(
            "encoder weights produce {}-d embeddings, config expects {}",
            enc.embedding_dim(),
            config.embedding_dim
        )));
    }
    Ok(enc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Patches per optimizer step (patch model).
    pub batch_size: usize,
    /// Bags per optimizer step (MIL).
    pub bags_per_step: usize,
    pub patches_per_slide_per_epoch: usize,
    pub bags_per_slide_per_epoch: usize,
    /// Cap on patches per validation slide when computing validation loss.
    pub val_patches_per_slide: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` at epoch 0 down to 1% of it at the
    /// last of `max_epochs`.
    Cosine,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-4,
            max_epochs: 50,
            patience: 10,
            batch_size: 16,
            bags_per_step: 4,
            patches_per_slide_per_epoch: 32,
            bags_per_slide_per_epoch: 2,
            val_patches_per_slide: 32,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / (self.max_epochs.max(2) - 1) as f64;
                let floor = 0.01;
                self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("bags_per_step", self.bags_per_step),
            ("patches_per_slide_per_epoch", self.patches_per_slide_per_epoch),
            ("bags_per_slide_per_epoch", self.bags_per_slide_per_epoch),
            ("val_patches_per_slide", self.val_patches_per_slide),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Slide-level aggregation of patch predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-patch probability vectors.
    #[default]
    Mean,
    /// Fraction of patches voting for each class.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub class_scores: Vec<f64>,
    pub predicted_class: usize,
    /// All classes, best first; ties broken by ascending class index.
    pub ranking: Vec<usize>,
}

impl SlidePrediction {
    pub fn from_scores(slide_id: impl Into<String>, class_scores: Vec<f64>) -> Result<Self> {
        if class_scores.is_empty() {
            return Err(Error::Model("empty score vector".into()));
        }
        let sum: f64 = class_scores.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || class_scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Model(format!("class scores must be a distribution (sum {sum})")));
        }
        let mut ranking: Vec<usize> = (0..class_scores.len()).collect();
        ranking.sort_by(|&a, &b| class_scores[b].total_cmp(&class_scores[a]).then(a.cmp(&b)));
        Ok(SlidePrediction {
            slide_id: slide_id.into(),
            predicted_class: ranking[0],
            class_scores,
            ranking,
        })
    }

    /// 1-based rank of `class`.
    pub fn rank_of(&self, class: usize) -> Option<usize> {
        self.ranking.iter().position(|&c| c == class).map(|p| p + 1)
    }

    pub fn topk(&self, k: usize) -> &[usize] {
        &self.ranking[..k.min(self.ranking.len())]
    }
}

/// Everything a training loop needs besides the split: patches and labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub bank: &'a PatchBank,
    /// slide id → patient class.
    pub labels: &'a BTreeMap<String, usize>,
    pub n_classes: usize,
}

impl TrainingData<'_> {
    pub(crate) fn label(&self, slide_id: &str) -> Result<usize> {
        self.labels
            .get(slide_id)
            .copied()
            .ok_or_else(|| Error::Training(format!("slide {slide_id} has no label")))
    }

    /// Fails unless every class owns at least one training patch.
    pub(crate) fn check_trainable<'s>(&self, train: impl IntoIterator<Item = &'s String>) -> Result<()> {
        let mut seen = vec![false; self.n_classes];
        let mut any = false;
        for id in train {
            if !self.bank.patches(id).is_empty() {
                seen[self.label(id)?] = true;
                any = true;
            }
        }
        if !any {
            return Err(Error::Training("empty training set".into()));
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Training(format!("class {c} has no training patches")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_recall_at_1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("epoch,train_loss,val_loss,val_recall@1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.4}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_recall_at_1
            ));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Shared epoch loop: runs `train_epoch`, evaluates, keeps the parameters
/// with the lowest validation loss (earliest on ties) and stops after
/// `patience` epochs without improvement.
pub(crate) fn fit<M: Clone>(
    model: &mut M,
    cfg: &TrainingConfig,
    mut train_epoch: impl FnMut(&mut M, usize) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<(f64, f64)>,
) -> Result<(M, History)> {
    let mut history = History::default();
    let mut best: Option<(f64, M)> = None;
    for epoch in 0..cfg.max_epochs {
        let train_loss = train_epoch(model, epoch)?;
        let (val_loss, val_recall_at_1) = validate(model)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch} (train loss {train_loss})"
            )));
        }
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} recall@1 {val_recall_at_1:.3}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_recall_at_1,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    let (_, m) = best.expect("max_epochs >= 1");
    Ok((m, history))
}

/// Macro recall@1 over classes present in `preds` (NaN when empty).
pub(crate) fn macro_recall_at_1(preds: &[(usize, usize)]) -> f64 {
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(truth, pred) in preds {
        let e = per.entry(truth).or_default();
        e.1 += 1;
        if truth == pred {
            e.0 += 1;
        }
    }
    if per.is_empty() {
        return f64::NAN;
    }
    per.values().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / per.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_index() {
        let p = SlidePrediction::from_scores("s", vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(p.ranking, vec![1, 0, 2]);
        assert_eq!(p.rank_of(2), Some(3));
        let t = SlidePrediction::from_scores("s", vec![0.5, 0.5]).unwrap();
        assert_eq!(t.predicted_class, 0);
        assert!(SlidePrediction::from_scores("s", vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let mut cfg = TrainingConfig { learning_rate: 1e-3, max_epochs: 11, ..Default::default() };
        assert_eq!(cfg.lr_at(7), 1e-3);
        cfg.lr_schedule = LrSchedule::Cosine;
        assert!((cfg.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((cfg.lr_at(5) - 0.505e-3).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1e-5).abs() < 1e-15);
        assert!((1..11).all(|e| cfg.lr_at(e) < cfg.lr_at(e - 1)));
    }

    #[test]
    fn pretrained_requires_weights() {
        let cfg = EncoderConfig {
            variant: EncoderVariant::ImagenetPretrained,
            ..EncoderConfig::default()
        };
        assert!(build_encoder(&cfg, 0).is_err());
        let tiny = build_encoder(&EncoderConfig::default(), 0).unwrap();
        assert_eq!(tiny.embedding_dim(), 32);
    }

    #[test]
    fn pretrained_weights_must_match_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        build_encoder(&EncoderConfig::default(), 1).unwrap().save_weights(&path).unwrap();
        let mut cfg = EncoderConfig {
            variant: EncoderVariant::SslPretrained,
            weights_path: Some(path),
            ..EncoderConfig::default()
        };
        assert!(build_encoder(&cfg, 0).is_ok());
        cfg.embedding_dim = 16;
        assert!(build_encoder(&cfg, 0).is_err());
    }

    #[test]
    fn fit_returns_minimum_validation_checkpoint() {
        let losses = [3.0, 2.0, 2.5, 1.5, 1.7, 1.9, 1.6];
        let cfg = TrainingConfig {
            max_epochs: losses.len(),
            patience: 3,
            ..TrainingConfig::default()
        };
        let mut state = 0usize;
        let (best, hist) = fit(&mut state, &cfg, |m, e| {
            *m = e;
            Ok(0.0)
        }, |m| Ok((losses[*m], 0.0)))
        .unwrap();
        assert_eq!(best, 3);
        assert_eq!(hist.best_epoch, 3);
        let min = hist.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(hist.best().unwrap().val_loss, min);
        // Stopped after three epochs without improvement.
        assert_eq!(hist.epochs.len(), 7);
    }
}
