use std::cell::Cell;

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::patch::spread;
use super::{fit, macro_recall_at_1, Encoder, History, MilHead, SlidePrediction, TrainingConfig, TrainingData};
use crate::dataset::SplitAssignment;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, Adam, Params};
use crate::patches::Augmentation;
use crate::seed::{derive_seed, derived_rng};
use crate::tiling::RgbPatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilConfig {
    pub bag_size: usize,
    pub attention_hidden: usize,
    /// Maximum patches in the single inference bag of a slide.
    pub inference_cap: usize,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            bag_size: 40,
            attention_hidden: 16,
            inference_cap: 500,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bag_size == 0 || self.attention_hidden == 0 || self.inference_cap == 0 {
            return Err(Error::Config("bag_size, attention_hidden and inference_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub slide_id: String,
    pub instances: Vec<RgbPatch>,
    pub label: usize,
}

/// Indices of one bag: without replacement when `n ≥ bag_size`, otherwise
/// with replacement.
pub fn sample_bag_indices(n: usize, bag_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Model("cannot draw a bag from zero patches".into()));
    }
    Ok(if n >= bag_size {
        sample(rng, n, bag_size).into_vec()
    } else {
        (0..bag_size).map(|_| rng.random_range(0..n)).collect()
    })
}

pub fn make_bags(
    slide_id: &str,
    patches: &[RgbPatch],
    label: usize,
    bag_size: usize,
    n_bags: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Bag>> {
    (0..n_bags)
        .map(|_| {
            let idx = sample_bag_indices(patches.len(), bag_size, rng)?;
            Ok(Bag {
                slide_id: slide_id.to_string(),
                instances: idx.into_iter().map(|i| patches[i].clone()).collect(),
                label,
            })
        })
        .collect()
}

/// Evaluation-mode embeddings, one row per patch.
pub fn embed_patches(encoder: &Encoder, patches: &[RgbPatch]) -> Vec<Vec<f64>> {
    patches.par_iter().map(|p| encoder.embed(p)).collect()
}

/// Frozen encoder plus the trainable attention/classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilModel {
    pub encoder: Encoder,
    pub head: MilHead,
    pub config: MilConfig,
}

impl MilModel {
    pub fn predict_embeddings(&self, slide_id: &str, embeddings: &[Vec<f64>]) -> Result<SlidePrediction> {
        if embeddings.is_empty() {
            return Err(Error::Model(format!("slide {slide_id}: no patches to predict")));
        }
        let (logits, _) = self.head.forward(embeddings);
        SlidePrediction::from_scores(slide_id, softmax(&logits))
    }
}

/// Indices of the inference bag: everything, or a seeded sample of `cap`.
fn inference_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = sample(&mut derived_rng(seed, "mil-inference", 0), n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// One bag holding all patches of the slide (or a seeded sample of `cap`).
pub fn predict_slide_mil(
    model: &MilModel,
    slide_id: &str,
    patches: &[RgbPatch],
    cap: usize,
    seed: u64,
) -> Result<SlidePrediction> {
    if patches.is_empty() {
        return Err(Error::Model(format!("slide {slide_id}: no patches to predict")));
    }
    let idx = inference_indices(patches.len(), cap, seed);
    let emb: Vec<Vec<f64>> = idx.par_iter().map(|&i| model.encoder.embed(&patches[i])).collect();
    model.predict_embeddings(slide_id, &emb)
}

/// Trains attention and classifier over bags of independently augmented
/// instances embedded by the frozen `encoder`.
pub fn train_mil(
    data: &TrainingData,
    split: &SplitAssignment,
    encoder: &Encoder,
    cfg: &TrainingConfig,
    mil: &MilConfig,
    augmentation: &Augmentation,
) -> Result<(MilModel, History)> {
    cfg.validate()?;
    mil.validate()?;
    data.check_trainable(&split.train)?;
    let train: Vec<(&String, usize)> = split
        .train
        .iter()
        .filter(|id| !data.bank.patches(id).is_empty())
        .map(|id| Ok((id, data.label(id)?)))
        .collect::<Result<_>>()?;
    // The encoder is frozen and validation is unaugmented, so validation
    // embeddings are computed once.
    let val: Vec<(String, usize, Vec<Vec<f64>>)> = split
        .val
        .iter()
        .filter(|id| !data.bank.patches(id).is_empty())
        .map(|id| {
            let patches = data.bank.patches(id);
            let idx = spread(patches.len(), cfg.val_patches_per_slide.max(mil.bag_size));
            let emb = idx.par_iter().map(|&i| encoder.embed(&patches[i])).collect();
            Ok((id.clone(), data.label(id)?, emb))
        })
        .collect::<Result<_>>()?;
    if val.is_empty() {
        log::warn!("no validation patches: model selection uses the training loss");
    }
    let mut head = MilHead::new(
        encoder.embedding_dim(),
        mil.attention_hidden,
        data.n_classes,
        &mut derived_rng(cfg.seed, "init/mil-head", 0),
    );
    let mut opt = Adam::new(cfg.learning_rate, head.num_params());
    let latest = Cell::new(f64::NAN);

    let train_epoch = |head: &mut MilHead, epoch: usize| -> Result<f64> {
        opt.lr = cfg.lr_at(epoch);
        let bag_seed = derive_seed(cfg.seed, "bags", epoch as u64);
        let mut bags: Vec<(&String, usize, Vec<usize>)> = Vec::new();
        for &(id, label) in &train {
            let mut rng = derived_rng(bag_seed, id, 0);
            for _ in 0..cfg.bags_per_slide_per_epoch {
                bags.push((id, label, sample_bag_indices(data.bank.patches(id).len(), mil.bag_size, &mut rng)?));
            }
        }
        bags.shuffle(&mut derived_rng(cfg.seed, "bag-order", epoch as u64));
        let aug_seed = derive_seed(cfg.seed, "augment-mil", epoch as u64);
        let mut epoch_loss = 0.0;
        let mut bag_no = 0u64;
        for (step, chunk) in bags.chunks(cfg.bags_per_step).enumerate() {
            let mut grad = head.zeros_like();
            let mut step_loss = 0.0;
            for (id, label, idx) in chunk {
                let sp = data.bank.get(id).expect("checked above");
                let inst_seed = derive_seed(aug_seed, "bag", bag_no);
                bag_no += 1;
                let emb: Vec<Vec<f64>> = idx
                    .par_iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let mut r = derived_rng(inst_seed, "instance", j as u64);
                        encoder.embed(&augmentation.apply(&sp.patches[i], sp.stain_model.as_ref(), &mut r))
                    })
                    .collect();
                step_loss += head.loss_and_grad(&emb, *label, &mut grad);
            }
            if !step_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite MIL loss at epoch {epoch}, step {step} (learning rate {}, previous epoch loss {})",
                    cfg.learning_rate,
                    latest.get()
                )));
            }
            epoch_loss += step_loss;
            let scale = 1.0 / chunk.len() as f64;
            let mut flat = grad.flatten();
            flat.iter_mut().for_each(|g| *g *= scale);
            opt.step(head, &flat);
        }
        latest.set(epoch_loss / bags.len() as f64);
        Ok(latest.get())
    };

    let validate = |head: &MilHead| -> Result<(f64, f64)> {
        if val.is_empty() {
            return Ok((latest.get(), f64::NAN));
        }
        let mut total = 0.0;
        let mut outcomes = Vec::with_capacity(val.len());
        for (_, label, emb) in &val {
            let (logits, _) = head.forward(emb);
            total += cross_entropy(&logits, *label).0;
            let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
            outcomes.push((*label, best));
        }
        Ok((total / val.len() as f64, macro_recall_at_1(&outcomes)))
    };

    let (head, history) = fit(&mut head, cfg, train_epoch, validate)?;
    Ok((
        MilModel {
            encoder: encoder.clone(),
            head,
            config: *mil,
        },
        history,
    ))
}
