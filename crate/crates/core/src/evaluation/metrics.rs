use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SlidePrediction;

/// Slide-level retrieval metrics for one test set.
///
/// Macro values are unweighted means over the classes that have at least one
/// test slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    /// class → recall@k for each entry of `ks`.
    pub per_class_recall: BTreeMap<usize, Vec<f64>>,
    /// Macro recall@k for each entry of `ks`.
    pub macro_recall: Vec<f64>,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// `k / n_classes` for each entry of `ks`.
    pub random_baseline: Vec<f64>,
    pub n_test_slides: usize,
    pub n_classes_evaluated: usize,
    pub n_classes: usize,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.macro_recall[i])
    }
}

/// Recall@k, precision and F1 from ranked slide predictions.
///
/// A class that is never predicted at rank 1 gets precision 0. F1 is the mean
/// of per-class F1 scores (0 when precision and recall are both 0).
pub fn compute_metrics(
    predictions: &[SlidePrediction],
    truth: &BTreeMap<String, usize>,
    ks: &[usize],
) -> Result<MetricsReport> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::Evaluation("no predictions to evaluate".into()))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Evaluation("ks must be non-empty and positive".into()));
    }
    let n_classes = first.class_scores.len();
    // class → (slides, hits per k)
    let mut per: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
    let mut predicted = vec![0usize; n_classes];
    let mut true_pos = vec![0usize; n_classes];
    for p in predictions {
        if p.class_scores.len() != n_classes {
            return Err(Error::Evaluation("predictions disagree on the class count".into()));
        }
        let t = *truth
            .get(&p.slide_id)
            .ok_or_else(|| Error::Evaluation(format!("no truth label for slide {}", p.slide_id)))?;
        if t >= n_classes {
            return Err(Error::Evaluation(format!("truth class {t} out of range for slide {}", p.slide_id)));
        }
        let rank = p.rank_of(t).expect("ranking covers all classes");
        let e = per.entry(t).or_insert_with(|| (0, vec![0; ks.len()]));
        e.0 += 1;
        for (i, &k) in ks.iter().enumerate() {
            if rank <= k {
                e.1[i] += 1;
            }
        }
        predicted[p.predicted_class] += 1;
        if p.predicted_class == t {
            true_pos[t] += 1;
        }
    }
    let per_class_recall: BTreeMap<usize, Vec<f64>> = per
        .iter()
        .map(|(&c, (n, hits))| (c, hits.iter().map(|&h| h as f64 / *n as f64).collect()))
        .collect();
    let m = per.len() as f64;
    let macro_recall = (0..ks.len())
        .map(|i| per_class_recall.values().map(|r| r[i]).sum::<f64>() / m)
        .collect();
    let mut prec_sum = 0.0;
    let mut f1_sum = 0.0;
    for (&c, (n, _)) in &per {
        let precision = if predicted[c] == 0 {
            0.0
        } else {
            true_pos[c] as f64 / predicted[c] as f64
        };
        let recall = true_pos[c] as f64 / *n as f64;
        prec_sum += precision;
        f1_sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    Ok(MetricsReport {
        ks: ks.to_vec(),
        per_class_recall,
        macro_recall,
        macro_precision: prec_sum / m,
        macro_f1: f1_sum / m,
        random_baseline: ks.iter().map(|&k| (k as f64 / n_classes as f64).min(1.0)).collect(),
        n_test_slides: predictions.len(),
        n_classes_evaluated: per.len(),
        n_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub k: usize,
    pub n_classes: usize,
    /// `k / n_classes`.
    pub analytic: f64,
    pub simulated_mean: f64,
    pub simulated_std: f64,
    pub n_sim: usize,
}

impl RandomBaseline {
    pub fn standard_error(&self) -> f64 {
        self.simulated_std / (self.n_sim as f64).sqrt()
    }

    /// Whether the simulation agrees with `k/N` within `n_se` standard errors.
    pub fn agrees(&self, n_se: f64) -> bool {
        (self.simulated_mean - self.analytic).abs() <= n_se * self.standard_error()
    }
}

/// A prediction whose ranking is a uniformly random permutation.
pub fn random_prediction(slide_id: &str, n_classes: usize, rng: &mut impl Rng) -> SlidePrediction {
    let mut ranking: Vec<usize> = (0..n_classes).collect();
    ranking.shuffle(rng);
    // Scores decreasing along the ranking, normalized to a distribution.
    let total = (n_classes * (n_classes + 1) / 2) as f64;
    let mut class_scores = vec![0.0; n_classes];
    for (pos, &c) in ranking.iter().enumerate() {
        class_scores[c] = (n_classes - pos) as f64 / total;
    }
    SlidePrediction {
        slide_id: slide_id.to_string(),
        predicted_class: ranking[0],
        class_scores,
        ranking,
    }
}

/// Chance level of macro recall@k: analytic `k/N` and a simulation that
/// scores uniformly random rankings of the given test composition with
/// [`compute_metrics`].
pub fn random_baseline(
    n_classes: usize,
    test_labels: &[usize],
    k: usize,
    n_sim: usize,
    rng: &mut impl Rng,
) -> Result<RandomBaseline> {
    if k == 0 || k > n_classes {
        return Err(Error::Evaluation(format!("k = {k} must lie in 1..={n_classes}")));
    }
    if n_sim < 1000 {
        return Err(Error::Evaluation("random baseline needs at least 1000 simulations".into()));
    }
    if test_labels.is_empty() || test_labels.iter().any(|&c| c >= n_classes) {
        return Err(Error::Evaluation("test composition must be non-empty and within range".into()));
    }
    let truth: BTreeMap<String, usize> = test_labels.iter().enumerate().map(|(i, &c)| (format!("t{i}"), c)).collect();
    let ids: Vec<String> = (0..test_labels.len()).map(|i| format!("t{i}")).collect();
    let mut values = Vec::with_capacity(n_sim);
    for _ in 0..n_sim {
        let preds: Vec<SlidePrediction> = ids.iter().map(|id| random_prediction(id, n_classes, rng)).collect();
        let report = compute_metrics(&preds, &truth, &[k])?;
        values.push(report.macro_recall[0]);
    }
    let (mean, std) = mean_std(&values);
    Ok(RandomBaseline {
        k,
        n_classes,
        analytic: k as f64 / n_classes as f64,
        simulated_mean: mean,
        simulated_std: std,
        n_sim,
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
