//! Latent-space anchors: the mean training embedding of each patient, and
//! how far test slides land from their own patient's anchor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Experiment;
use crate::models::{embed_patches, Encoder, ModelKind, SlidePrediction};
use crate::patches::PatchBank;
use crate::seed::derived_rng;
use crate::stain::percentile;

/// Patches embedded per slide unless configured otherwise.
pub const DEFAULT_PATCHES_PER_SLIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAnchor {
    pub class: usize,
    pub anchor: Vec<f64>,
    /// Number of slide embeddings averaged.
    pub n_contributing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub slide_id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    pub distance_to_own_anchor: f64,
    pub correct: bool,
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let n = rows.len() as f64;
    acc.into_iter().map(|v| v / n).collect()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean embedding of a seeded sample of at most `cap` patches of a slide.
pub fn slide_embedding(
    encoder: &Encoder,
    bank: &PatchBank,
    slide_id: &str,
    cap: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let patches = bank.patches(slide_id);
    if patches.is_empty() {
        return Err(Error::Evaluation(format!("slide {slide_id} has no patches to embed")));
    }
    let chosen: Vec<_> = if patches.len() > cap {
        let mut idx = sample(&mut derived_rng(seed, slide_id, 0), patches.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| patches[i].clone()).collect()
    } else {
        patches.to_vec()
    };
    Ok(mean_rows(&embed_patches(encoder, &chosen)))
}

/// Anchors from slide embeddings: the mean over each class's slides.
pub fn anchors_from_slide_embeddings(slides: &[(usize, Vec<f64>)]) -> BTreeMap<usize, LatentAnchor> {
    let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (c, e) in slides {
        by_class.entry(*c).or_default().push(e.clone());
    }
    by_class
        .into_iter()
        .map(|(class, rows)| {
            (
                class,
                LatentAnchor {
                    class,
                    anchor: mean_rows(&rows),
                    n_contributing: rows.len(),
                },
            )
        })
        .collect()
}

/// Patient anchors: patch embeddings are averaged per slide, then slide
/// embeddings per patient.
pub fn compute_anchors(
    encoder: &Encoder,
    train: &[(String, usize)],
    bank: &PatchBank,
    patches_per_slide: usize,
    seed: u64,
) -> Result<BTreeMap<usize, LatentAnchor>> {
    let mut slides = Vec::new();
    let mut classes = std::collections::BTreeSet::new();
    for (id, class) in train {
        classes.insert(*class);
        if bank.patches(id).is_empty() {
            continue;
        }
        slides.push((*class, slide_embedding(encoder, bank, id, patches_per_slide, seed)?));
    }
    let anchors = anchors_from_slide_embeddings(&slides);
    if let Some(c) = classes.iter().find(|c| !anchors.contains_key(c)) {
        return Err(Error::Evaluation(format!("class {c} has no encodable training patches")));
    }
    Ok(anchors)
}

/// Joins slide embeddings with their true-class anchors and predictions.
pub fn distance_records(
    slides: &[(String, usize, Vec<f64>)],
    anchors: &BTreeMap<usize, LatentAnchor>,
    predictions: &[SlidePrediction],
) -> Result<Vec<DistanceRecord>> {
    let preds: BTreeMap<&str, usize> = predictions.iter().map(|p| (p.slide_id.as_str(), p.predicted_class)).collect();
    slides
        .iter()
        .map(|(id, class, emb)| {
            let anchor = anchors
                .get(class)
                .ok_or_else(|| Error::Evaluation(format!("no anchor for class {class} (slide {id})")))?;
            let predicted = *preds
                .get(id.as_str())
                .ok_or_else(|| Error::Evaluation(format!("no prediction for slide {id}")))?;
            Ok(DistanceRecord {
                slide_id: id.clone(),
                true_class: *class,
                predicted_class: predicted,
                distance_to_own_anchor: l2_distance(emb, &anchor.anchor),
                correct: predicted == *class,
            })
        })
        .collect()
}

/// One record per test slide with its distance to its own patient's anchor.
pub fn anchor_distances(
    encoder: &Encoder,
    test: &[(String, usize)],
    bank: &PatchBank,
    anchors: &BTreeMap<usize, LatentAnchor>,
    predictions: &[SlidePrediction],
    patches_per_slide: usize,
    seed: u64,
) -> Result<Vec<DistanceRecord>> {
    let mut slides = Vec::with_capacity(test.len());
    for (id, class) in test {
        if bank.patches(id).is_empty() {
            log::warn!("test slide {id} has no patches; skipped");
            continue;
        }
        slides.push((id.clone(), *class, slide_embedding(encoder, bank, id, patches_per_slide, seed)?));
    }
    distance_records(&slides, anchors, predictions)
}

/// Distance records of every fold of an experiment, pooled. Each fold uses
/// its own patch-trained encoder, its training slides for the anchors and
/// the `kind` predictions on its test slides.
pub fn experiment_distances(
    experiment: &Experiment,
    bank: &PatchBank,
    kind: ModelKind,
    patches_per_slide: usize,
    seed: u64,
) -> Result<Vec<DistanceRecord>> {
    let mut out = Vec::new();
    for fold in &experiment.artifacts {
        let encoder = match (kind, &fold.patch_model, &fold.mil_model) {
            (ModelKind::Mil, _, Some(m)) => &m.encoder,
            (_, Some(p), _) => &p.encoder,
            _ => return Err(Error::Evaluation(format!("fold {} kept no trained encoder", fold.fold))),
        };
        let predictions = fold
            .predictions
            .get(&kind)
            .ok_or_else(|| Error::Evaluation(format!("fold {} has no {} predictions", fold.fold, kind.name())))?;
        let labelled = |ids: &std::collections::BTreeSet<String>| -> Vec<(String, usize)> {
            ids.iter().filter_map(|id| fold.labels.get(id).map(|&c| (id.clone(), c))).collect()
        };
        let fold_seed = crate::seed::derive_seed(seed, "latent", fold.fold as u64);
        let anchors = compute_anchors(encoder, &labelled(&fold.split.train), bank, patches_per_slide, fold_seed)?;
        out.extend(anchor_distances(
            encoder,
            &labelled(&fold.split.test),
            bank,
            &anchors,
            predictions,
            patches_per_slide,
            fold_seed,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub groups: Vec<GroupSummary>,
    pub notes: Vec<String>,
}

impl DistanceReport {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Distance to own latent anchor\n\n");
        writeln!(s, "{:<10}{:>5}{:>10}{:>10}{:>10}{:>10}{:>10}", "group", "n", "min", "q1", "median", "q3", "max").unwrap();
        for g in &self.groups {
            writeln!(
                s,
                "{:<10}{:>5}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                g.group, g.n, g.min, g.q1, g.median, g.q3, g.max
            )
            .unwrap();
        }
        for n in &self.notes {
            writeln!(s, "note: {n}").unwrap();
        }
        s
    }
}

fn summarize(group: &str, mut values: Vec<f64>) -> GroupSummary {
    values.sort_by(f64::total_cmp);
    GroupSummary {
        group: group.into(),
        n: values.len(),
        min: values[0],
        q1: percentile(&values, 25.0),
        median: percentile(&values, 50.0),
        q3: percentile(&values, 75.0),
        max: values[values.len() - 1],
        values,
    }
}

/// Five-number summaries of the distances of correctly and incorrectly
/// classified slides. An empty group is omitted with a note.
pub fn distance_report(records: &[DistanceRecord]) -> Result<DistanceReport> {
    if records.is_empty() {
        return Err(Error::Evaluation("no distance records".into()));
    }
    let mut groups = Vec::new();
    let mut notes = Vec::new();
    for (name, flag) in [("correct", true), ("incorrect", false)] {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.correct == flag)
            .map(|r| r.distance_to_own_anchor)
            .collect();
        if values.is_empty() {
            notes.push(format!("no {name} records; group omitted"));
        } else {
            groups.push(summarize(name, values));
        }
    }
    Ok(DistanceReport { groups, notes })
}

pub fn write_records_csv(path: &Path, records: &[DistanceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
