//! Slide manifests, patient indexing, train/val/test splits and the synthetic
//! slide cohort used for desk-scale runs.

mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{monte_carlo_split, permute_patient_labels, temporal_split, SplitAssignment, SplitKind};
pub use synth::{
    generate_synthetic_cohort, PatientSignature, SlideTruth, SynthConfig, SyntheticCohort, TissueGeometry,
};

/// One row of a slide manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideManifestEntry {
    pub slide_id: String,
    pub patient_id: String,
    /// 0 is the earliest resection of the patient.
    pub resection_ordinal: u32,
    pub days_since_first_resection: Option<u32>,
    pub image_path: PathBuf,
    /// Native resolution in microns per pixel.
    pub native_mpp: f64,
}

/// When to verify that image files referenced by a manifest exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageCheck {
    #[default]
    AtLoad,
    /// Defer to the first read of the slide.
    Lazy,
}

const MANIFEST_HEADER: [&str; 6] = [
    "slide_id",
    "patient_id",
    "resection_ordinal",
    "days_since_first_resection",
    "image_path",
    "native_mpp",
];

/// Loads and validates a manifest.
///
/// Relative image paths are resolved against the manifest's directory.
/// Patients with fewer than two slides are dropped with a warning.
pub fn load_manifest(path: &Path, check: ImageCheck) -> Result<Vec<SlideManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        log::warn!("manifest {} is empty", path.display());
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries = parse_manifest(&text, base)?;
    let entries = validate_entries(entries)?;
    if check == ImageCheck::AtLoad {
        for e in &entries {
            if !e.image_path.is_file() {
                return Err(Error::Manifest(format!(
                    "image for slide `{}` not found at {}",
                    e.slide_id,
                    e.image_path.display()
                )));
            }
        }
    }
    Ok(entries)
}

fn parse_manifest(text: &str, base: &Path) -> Result<Vec<SlideManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Manifest(format!(
            "expected header `{}`, found `{}`",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.deserialize::<SlideManifestEntry>().enumerate() {
        let mut e = rec.map_err(|err| Error::Manifest(format!("row {}: {err}", row + 1)))?;
        if e.image_path.is_relative() {
            e.image_path = base.join(&e.image_path);
        }
        out.push(e);
    }
    Ok(out)
}

/// Applies the manifest invariants and the two-slide inclusion rule.
pub fn validate_entries(entries: Vec<SlideManifestEntry>) -> Result<Vec<SlideManifestEntry>> {
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.slide_id.as_str()) {
            return Err(Error::DuplicateSlideId(e.slide_id.clone()));
        }
        if !(e.native_mpp > 0.0) || !e.native_mpp.is_finite() {
            return Err(Error::Manifest(format!(
                "slide `{}` has non-positive mpp {}",
                e.slide_id, e.native_mpp
            )));
        }
    }

    let mut per_patient: BTreeMap<&str, Vec<&SlideManifestEntry>> = BTreeMap::new();
    for e in &entries {
        per_patient.entry(e.patient_id.as_str()).or_default().push(e);
    }
    let mut excluded = BTreeSet::new();
    for (patient, slides) in &per_patient {
        if slides.len() < 2 {
            log::warn!("patient `{patient}` has only {} slide(s); excluded", slides.len());
            excluded.insert(patient.to_string());
            continue;
        }
        let min_ordinal = slides.iter().map(|s| s.resection_ordinal).min().unwrap_or(0);
        if min_ordinal != 0 {
            return Err(Error::Manifest(format!(
                "patient `{patient}` has no resection ordinal 0 (earliest is {min_ordinal})"
            )));
        }
    }
    Ok(entries
        .into_iter()
        .filter(|e| !excluded.contains(&e.patient_id))
        .collect())
}

/// Writes entries in manifest format. Image paths are written as given.
pub fn write_manifest(path: &Path, entries: &[SlideManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.slide_id.clone(),
            e.patient_id.clone(),
            e.resection_ordinal.to_string(),
            e.days_since_first_resection.map(|d| d.to_string()).unwrap_or_default(),
            e.image_path.to_string_lossy().into_owned(),
            format!("{}", e.native_mpp),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Bijection between patient ids and class indices `0..N`.
///
/// Indices follow lexicographic order of the patient ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatientIndexRepr", into = "PatientIndexRepr")]
pub struct PatientIndex {
    patients: Vec<String>,
    lookup: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct PatientIndexRepr {
    patients: Vec<String>,
}

impl TryFrom<PatientIndexRepr> for PatientIndex {
    type Error = Error;
    fn try_from(r: PatientIndexRepr) -> Result<Self> {
        PatientIndex::from_ordered(r.patients)
    }
}

impl From<PatientIndex> for PatientIndexRepr {
    fn from(p: PatientIndex) -> Self {
        PatientIndexRepr { patients: p.patients }
    }
}

impl PatientIndex {
    fn from_ordered(patients: Vec<String>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        for (i, p) in patients.iter().enumerate() {
            if lookup.insert(p.clone(), i).is_some() {
                return Err(Error::Manifest(format!("patient `{p}` listed twice in index")));
            }
        }
        Ok(PatientIndex { patients, lookup })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn class_of(&self, patient_id: &str) -> Option<usize> {
        self.lookup.get(patient_id).copied()
    }

    pub fn patient(&self, class: usize) -> Option<&str> {
        self.patients.get(class).map(String::as_str)
    }

    pub fn patients(&self) -> &[String] {
        &self.patients
    }
}

pub fn build_patient_index(entries: &[SlideManifestEntry]) -> Result<PatientIndex> {
    if entries.is_empty() {
        return Err(Error::Manifest("cannot index an empty manifest".into()));
    }
    let ids: BTreeSet<&str> = entries.iter().map(|e| e.patient_id.as_str()).collect();
    PatientIndex::from_ordered(ids.into_iter().map(str::to_owned).collect())
}

/// Maps every slide id to its class index.
pub fn slide_labels(entries: &[SlideManifestEntry], index: &PatientIndex) -> BTreeMap<String, usize> {
    entries
        .iter()
        .filter_map(|e| index.class_of(&e.patient_id).map(|c| (e.slide_id.clone(), c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(slide: &str, patient: &str, ordinal: u32) -> SlideManifestEntry {
        SlideManifestEntry {
            slide_id: slide.into(),
            patient_id: patient.into(),
            resection_ordinal: ordinal,
            days_since_first_resection: None,
            image_path: PathBuf::from(format!("{slide}.png")),
            native_mpp: 0.22,
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str = "slide_id,patient_id,resection_ordinal,days_since_first_resection,image_path,native_mpp\n";

    #[test]
    fn single_slide_patient_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}a1,A,0,,a1.png,0.22\na2,A,0,,a2.png,0.22\np1,P,0,,p1.png,0.22\n");
        let m = load_manifest(&write(dir.path(), &body), ImageCheck::Lazy).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|e| e.patient_id == "A"));
        assert_eq!(m[0].image_path, dir.path().join("a1.png"));
        assert_eq!(m[0].days_since_first_resection, None);
    }

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_manifest(&write(dir.path(), ""), ImageCheck::AtLoad).unwrap().is_empty());
    }

    #[test]
    fn duplicate_slide_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s,A,0,,a.png,0.22\ns,A,0,,b.png,0.22\n");
        let err = load_manifest(&write(dir.path(), &body), ImageCheck::Lazy).unwrap_err();
        assert!(err.to_string().contains("duplicate slide id"), "{err}");
    }

    #[test]
    fn non_positive_mpp_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s1,A,0,,a.png,0\ns2,A,0,,b.png,0.22\n");
        assert!(load_manifest(&write(dir.path(), &body), ImageCheck::Lazy).is_err());
    }

    #[test]
    fn missing_image_checked_at_load_only_when_eager() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}s1,A,0,12,a.png,0.22\ns2,A,1,400,b.png,0.22\n");
        let path = write(dir.path(), &body);
        assert!(load_manifest(&path, ImageCheck::AtLoad).is_err());
        let m = load_manifest(&path, ImageCheck::Lazy).unwrap();
        assert_eq!(m[1].days_since_first_resection, Some(400));
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = "slide,patient\ns,A\n";
        assert!(load_manifest(&write(dir.path(), body), ImageCheck::Lazy).is_err());
    }

    #[test]
    fn patient_index_is_lexicographic_and_round_trips() {
        let entries = vec![entry("b1", "B", 0), entry("a1", "A", 0), entry("b2", "B", 0)];
        let idx = build_patient_index(&entries).unwrap();
        assert_eq!(idx.class_of("A"), Some(0));
        assert_eq!(idx.class_of("B"), Some(1));
        let json = serde_json::to_string(&idx).unwrap();
        let back: PatientIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, idx);

        let single = build_patient_index(&[entry("x", "X", 0)]).unwrap();
        assert_eq!(single.class_of("X"), Some(0));
        assert!(build_patient_index(&[]).is_err());
    }

    #[test]
    fn manifest_write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = vec![entry("a1", "A", 0), entry("a2", "A", 1)];
        entries[1].days_since_first_resection = Some(30);
        let path = dir.path().join("m.csv");
        write_manifest(&path, &entries).unwrap();
        let back = load_manifest(&path, ImageCheck::Lazy).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].days_since_first_resection, Some(30));
        assert_eq!(back[0].image_path, dir.path().join("a1.png"));
    }
}
