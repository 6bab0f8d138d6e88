use std::cell::Cell;

use rand::seq::{index::sample, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, macro_recall_at_1, Aggregation, Encoder, History, SlidePrediction, TrainingConfig, TrainingData};
use crate::dataset::SplitAssignment;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, sum_in_order, Adam, Linear, Params};
use crate::patches::Augmentation;
use crate::seed::{derive_seed, derived_rng};
use crate::tiling::RgbPatch;

/// Encoder followed by a linear layer with one output per patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchClassifier {
    pub encoder: Encoder,
    pub head: Linear,
}

impl PatchClassifier {
    pub fn new(encoder: Encoder, n_classes: usize, seed: u64) -> Self {
        let head = Linear::new(encoder.embedding_dim(), n_classes, 1.0, &mut derived_rng(seed, "init/head", 0));
        PatchClassifier { encoder, head }
    }

    pub fn n_classes(&self) -> usize {
        self.head.dout
    }

    pub fn logits(&self, patch: &RgbPatch) -> Vec<f64> {
        self.head.forward(&self.encoder.embed(patch))
    }

    pub fn probabilities(&self, patch: &RgbPatch) -> Vec<f64> {
        softmax(&self.logits(patch))
    }

    /// Loss and flattened gradient for one labelled patch.
    fn loss_and_grad(&self, patch: &RgbPatch, target: usize) -> (f64, Vec<f64>) {
        let (emb, cache) = self.encoder.forward_train(patch);
        let logits = self.head.forward(&emb);
        let (loss, d_logits) = cross_entropy(&logits, target);
        let mut grad = PatchClassifier {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        };
        let d_emb = self.head.backward(&emb, &d_logits, &mut grad.head);
        self.encoder.backward(&cache, &d_emb, &mut grad.encoder);
        (loss, grad.flatten())
    }
}

impl Params for PatchClassifier {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Combines per-patch probability vectors into a slide prediction.
pub fn aggregate_patch_probabilities(
    slide_id: &str,
    probs: &[Vec<f64>],
    aggregation: Aggregation,
) -> Result<SlidePrediction> {
    let first = probs
        .first()
        .ok_or_else(|| Error::Model(format!("slide {slide_id}: no patches to aggregate")))?;
    let n = first.len();
    let mut scores = vec![0.0; n];
    match aggregation {
        Aggregation::Mean => {
            for p in probs {
                scores.iter_mut().zip(p).for_each(|(s, v)| *s += v);
            }
        }
        Aggregation::MajorityVote => {
            for p in probs {
                let best = (0..n).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                scores[best] += 1.0;
            }
        }
    }
    let m = probs.len() as f64;
    scores.iter_mut().for_each(|s| *s /= m);
    SlidePrediction::from_scores(slide_id, scores)
}

pub fn predict_slide_patchwise(
    model: &PatchClassifier,
    slide_id: &str,
    patches: &[RgbPatch],
    aggregation: Aggregation,
) -> Result<SlidePrediction> {
    if patches.is_empty() {
        return Err(Error::Model(format!("slide {slide_id}: no patches to predict")));
    }
    let probs: Vec<Vec<f64>> = patches.par_iter().map(|p| model.probabilities(p)).collect();
    aggregate_patch_probabilities(slide_id, &probs, aggregation)
}

/// Evenly spaced subset of at most `cap` indices out of `n`.
pub(crate) fn spread(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

fn validate_patch_model(data: &TrainingData, val: &[(&String, usize)], model: &PatchClassifier, cfg: &TrainingConfig) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut outcomes = Vec::new();
    for &(id, label) in val {
        let patches = data.bank.patches(id);
        let idx = spread(patches.len(), cfg.val_patches_per_slide);
        if idx.is_empty() {
            continue;
        }
        let logits: Vec<Vec<f64>> = idx.par_iter().map(|&i| model.logits(&patches[i])).collect();
        let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
        for l in &logits {
            total += cross_entropy(l, label).0;
            count += 1;
        }
        let pred = aggregate_patch_probabilities(id, &probs, Aggregation::Mean)?;
        outcomes.push((label, pred.predicted_class));
    }
    Ok((total / count as f64, macro_recall_at_1(&outcomes)))
}

/// Trains encoder and head on augmented training patches.
///
/// Each epoch draws up to `patches_per_slide_per_epoch` patches from every
/// training slide, shuffles them and takes Adam steps over mini-batches.
/// Per-sample gradients are computed in parallel and summed in sample order.
/// Returns the parameters with the lowest validation loss; without
/// validation slides the training loss stands in.
pub fn train_patch_classifier(
    data: &TrainingData,
    split: &SplitAssignment,
    encoder: Encoder,
    cfg: &TrainingConfig,
    augmentation: &Augmentation,
) -> Result<(PatchClassifier, History)> {
    cfg.validate()?;
    data.check_trainable(&split.train)?;
    let train: Vec<(&String, usize)> = split
        .train
        .iter()
        .filter(|id| !data.bank.patches(id).is_empty())
        .map(|id| Ok((id, data.label(id)?)))
        .collect::<Result<_>>()?;
    let val: Vec<(&String, usize)> = split
        .val
        .iter()
        .filter(|id| !data.bank.patches(id).is_empty())
        .map(|id| Ok((id, data.label(id)?)))
        .collect::<Result<_>>()?;
    if val.is_empty() {
        log::warn!("no validation patches: model selection uses the training loss");
    }
    let mut model = PatchClassifier::new(encoder, data.n_classes, cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate, model.num_params());
    let latest = Cell::new(f64::NAN);

    let train_epoch = |model: &mut PatchClassifier, epoch: usize| -> Result<f64> {
        opt.lr = cfg.lr_at(epoch);
        let mut rng = derived_rng(cfg.seed, "epoch-patches", epoch as u64);
        let mut items: Vec<(&RgbPatch, usize, Option<&crate::stain::StainModel>)> = Vec::new();
        for &(id, label) in &train {
            let sp = data.bank.get(id).expect("checked above");
            let n = sp.patches.len();
            let k = cfg.patches_per_slide_per_epoch.min(n);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            items.extend(idx.into_iter().map(|i| (&sp.patches[i], label, sp.stain_model.as_ref())));
        }
        items.shuffle(&mut rng);
        let aug_seed = derive_seed(cfg.seed, "augment", epoch as u64);
        let n_params = model.num_params();
        let mut epoch_loss = 0.0;
        for (b, batch) in items.chunks(cfg.batch_size).enumerate() {
            let m: &PatchClassifier = model;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &(patch, label, stain))| {
                    let mut r = derived_rng(aug_seed, "sample", (b * cfg.batch_size + j) as u64);
                    let augmented = augmentation.apply(patch, stain, &mut r);
                    m.loss_and_grad(&augmented, label)
                })
                .collect();
            let batch_loss: f64 = results.iter().map(|r| r.0).sum();
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b} (learning rate {}, previous epoch loss {})",
                    cfg.learning_rate,
                    latest.get()
                )));
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = sum_in_order(n_params, results.into_iter().map(|r| r.1));
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(model, &grad);
        }
        latest.set(epoch_loss / items.len() as f64);
        Ok(latest.get())
    };

    let (best, history) = fit(
        &mut model,
        cfg,
        train_epoch,
        |m| {
            if val.is_empty() {
                Ok((latest.get(), f64::NAN))
            } else {
                validate_patch_model(data, &val, m, cfg)
            }
        },
    )?;
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_aggregation_by_hand() {
        let p = aggregate_patch_probabilities("s", &[vec![0.6, 0.4], vec![0.2, 0.8]], Aggregation::Mean).unwrap();
        assert!((p.class_scores[0] - 0.4).abs() < 1e-12);
        assert!((p.class_scores[1] - 0.6).abs() < 1e-12);
        assert_eq!(p.predicted_class, 1);
    }

    #[test]
    fn unanimity_and_ties() {
        let one_hot = vec![0.0, 0.0, 0.0, 1.0];
        let p = aggregate_patch_probabilities("s", &[one_hot.clone(), one_hot], Aggregation::Mean).unwrap();
        assert_eq!(p.predicted_class, 3);
        assert_eq!(p.class_scores[3], 1.0);
        let t = aggregate_patch_probabilities("s", &[vec![0.5, 0.5]], Aggregation::Mean).unwrap();
        assert_eq!(t.predicted_class, 0);
        assert!(aggregate_patch_probabilities("s", &[], Aggregation::Mean).is_err());
    }

    #[test]
    fn majority_vote_counts_argmaxes() {
        let probs = [vec![0.6, 0.4], vec![0.45, 0.55], vec![0.49, 0.51]];
        let v = aggregate_patch_probabilities("s", &probs, Aggregation::MajorityVote).unwrap();
        assert_eq!(v.predicted_class, 1);
        assert!((v.class_scores[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spread_is_even() {
        assert_eq!(spread(3, 5), vec![0, 1, 2]);
        assert_eq!(spread(10, 5), vec![0, 2, 4, 6, 8]);
    }
}
