use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SlideManifestEntry;
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    MonteCarlo,
    Temporal,
}

/// Disjoint train/val/test partition of slide ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub kind: SplitKind,
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Stable content hash, recorded in checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("split serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Checks disjointness, coverage and the "every tested patient is
    /// trainable" constraint against the manifest the split came from.
    pub fn check(&self, entries: &[SlideManifestEntry]) -> Result<()> {
        let patient_of: BTreeMap<&str, &str> =
            entries.iter().map(|e| (e.slide_id.as_str(), e.patient_id.as_str())).collect();
        let sets = [("train", &self.train), ("val", &self.val), ("test", &self.test)];
        for (i, (na, a)) in sets.iter().enumerate() {
            for (nb, b) in sets.iter().skip(i + 1) {
                if let Some(s) = a.intersection(b).next() {
                    return Err(Error::Split(format!("slide `{s}` in both {na} and {nb}")));
                }
            }
            if let Some(s) = a.iter().find(|s| !patient_of.contains_key(s.as_str())) {
                return Err(Error::Split(format!("slide `{s}` in {na} is not in the manifest")));
            }
        }
        let trainable: BTreeSet<&str> = self.train.iter().map(|s| patient_of[s.as_str()]).collect();
        for s in self.val.iter().chain(&self.test) {
            let p = patient_of[s.as_str()];
            if !trainable.contains(p) {
                return Err(Error::Split(format!("patient `{p}` of slide `{s}` has no training slide")));
            }
        }
        Ok(())
    }
}

fn by_patient(entries: &[SlideManifestEntry]) -> BTreeMap<&str, Vec<&SlideManifestEntry>> {
    let mut map: BTreeMap<&str, Vec<&SlideManifestEntry>> = BTreeMap::new();
    for e in entries {
        map.entry(e.patient_id.as_str()).or_default().push(e);
    }
    map
}

/// Random slide-level split with the trainability constraint.
///
/// One slide per patient is reserved for training; the remaining slides are
/// shuffled and dealt to test, then validation, then training, with counts
/// taken from the ratios over the full slide count.
pub fn monte_carlo_split(
    entries: &[SlideManifestEntry],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !r.is_finite() || *r < 0.0) || r_train <= 0.0 {
        return Err(Error::Split(format!("invalid ratios {ratios:?}")));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Split("ratios must sum to 1".into()));
    }
    if entries.is_empty() {
        return Err(Error::Split("empty manifest".into()));
    }
    let mut rng = rng_from(seed);
    let n = entries.len();
    let mut train = BTreeSet::new();
    let mut pool = Vec::new();
    for slides in by_patient(entries).values() {
        let mut ids: Vec<&str> = slides.iter().map(|e| e.slide_id.as_str()).collect();
        ids.shuffle(&mut rng);
        train.insert(ids[0].to_owned());
        pool.extend(ids[1..].iter().map(|s| s.to_string()));
    }
    pool.shuffle(&mut rng);

    let n_test = ((r_test * n as f64).round() as usize).min(pool.len());
    let n_val = ((r_val * n as f64).round() as usize).min(pool.len() - n_test);
    let test = pool[..n_test].iter().cloned().collect();
    let val = pool[n_test..n_test + n_val].iter().cloned().collect();
    train.extend(pool[n_test + n_val..].iter().cloned());

    Ok(SplitAssignment {
        kind: SplitKind::MonteCarlo,
        seed,
        train,
        val,
        test,
    })
}

/// Earliest-resection split: ordinal-0 slides are divided into train and
/// validation, every later-resection slide goes to test.
pub fn temporal_split(entries: &[SlideManifestEntry], val_fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Split(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let test: BTreeSet<String> = entries
        .iter()
        .filter(|e| e.resection_ordinal >= 1)
        .map(|e| e.slide_id.clone())
        .collect();
    if test.is_empty() {
        return Err(Error::Split(
            "temporal split impossible: no slide from a later resection".into(),
        ));
    }
    let mut rng = rng_from(seed);
    let mut train = BTreeSet::new();
    let mut pool = Vec::new();
    let mut n_early = 0usize;
    for (patient, slides) in by_patient(entries) {
        let mut ids: Vec<&str> = slides
            .iter()
            .filter(|e| e.resection_ordinal == 0)
            .map(|e| e.slide_id.as_str())
            .collect();
        if ids.is_empty() {
            return Err(Error::Split(format!("patient `{patient}` has no earliest-resection slide")));
        }
        n_early += ids.len();
        ids.shuffle(&mut rng);
        train.insert(ids[0].to_owned());
        pool.extend(ids[1..].iter().map(|s| s.to_string()));
    }
    pool.shuffle(&mut rng);
    let n_val = ((val_fraction * n_early as f64).round() as usize).min(pool.len());
    let val = pool[..n_val].iter().cloned().collect();
    train.extend(pool[n_val..].iter().cloned());
    Ok(SplitAssignment {
        kind: SplitKind::Temporal,
        seed,
        train,
        val,
        test,
    })
}

/// Shuffles patient labels across slides (label-permutation control).
///
/// The multiset of patient ids is preserved, so every patient keeps the same
/// slide count, but the pairing of images to patients becomes random.
/// Resection ordinals travel with the label so each patient still has an
/// ordinal-0 slide whenever it had one.
pub fn permute_patient_labels(entries: &[SlideManifestEntry], seed: u64) -> Vec<SlideManifestEntry> {
    let mut rng = rng_from(seed);
    let mut labels: Vec<(String, u32, Option<u32>)> = entries
        .iter()
        .map(|e| (e.patient_id.clone(), e.resection_ordinal, e.days_since_first_resection))
        .collect();
    labels.shuffle(&mut rng);
    entries
        .iter()
        .zip(labels)
        .map(|(e, (patient_id, resection_ordinal, days))| SlideManifestEntry {
            patient_id,
            resection_ordinal,
            days_since_first_resection: days,
            ..e.clone()
        })
        .collect()
}
