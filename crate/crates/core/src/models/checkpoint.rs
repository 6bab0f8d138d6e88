use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig, EncoderWeights, MilConfig, MilHead, MilModel, PatchClassifier, TrainingConfig};
use crate::dataset::PatientIndex;
use crate::error::{Error, Result};
use crate::nn::{Linear, Params};

const FORMAT: &str = "histo-reid-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointModel {
    Patch {
        encoder: EncoderWeights,
        head: Vec<f64>,
    },
    Mil {
        encoder: EncoderWeights,
        mil: MilConfig,
        head: Vec<f64>,
    },
}

/// Self-describing model file: parameters plus everything needed to
/// interpret and replay them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder_config: EncoderConfig,
    pub training_config: TrainingConfig,
    pub patient_index: PatientIndex,
    pub split_fingerprint: String,
    pub model: CheckpointModel,
}

impl Checkpoint {
    pub fn patch(
        model: &PatchClassifier,
        encoder_config: EncoderConfig,
        training_config: TrainingConfig,
        patient_index: PatientIndex,
        split_fingerprint: String,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            encoder_config,
            training_config,
            patient_index,
            split_fingerprint,
            model: CheckpointModel::Patch {
                encoder: model.encoder.to_weights(),
                head: model.head.flatten(),
            },
        }
    }

    pub fn mil(
        model: &MilModel,
        encoder_config: EncoderConfig,
        training_config: TrainingConfig,
        patient_index: PatientIndex,
        split_fingerprint: String,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            encoder_config,
            training_config,
            patient_index,
            split_fingerprint,
            model: CheckpointModel::Mil {
                encoder: model.encoder.to_weights(),
                mil: model.config,
                head: model.head.flatten(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Model(format!("corrupt checkpoint {}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Model(format!(
                "unsupported checkpoint {} v{} in {}",
                ck.format,
                ck.version,
                path.display()
            )));
        }
        Ok(ck)
    }

    pub fn encoder(&self) -> Result<Encoder> {
        match &self.model {
            CheckpointModel::Patch { encoder, .. } | CheckpointModel::Mil { encoder, .. } => {
                Encoder::from_weights(encoder)
            }
        }
    }

    pub fn patch_model(&self) -> Result<PatchClassifier> {
        let CheckpointModel::Patch { head, .. } = &self.model else {
            return Err(Error::Model("checkpoint holds a MIL model".into()));
        };
        let encoder = self.encoder()?;
        let mut lin = Linear::new(encoder.embedding_dim(), self.patient_index.len(), 1.0, &mut crate::seed::rng_from(0));
        lin.load_flat(head).map_err(Error::Model)?;
        Ok(PatchClassifier { encoder, head: lin })
    }

    pub fn mil_model(&self) -> Result<MilModel> {
        let CheckpointModel::Mil { head, mil, .. } = &self.model else {
            return Err(Error::Model("checkpoint holds a patch model".into()));
        };
        let encoder = self.encoder()?;
        let mut h = MilHead::new(
            encoder.embedding_dim(),
            mil.attention_hidden,
            self.patient_index.len(),
            &mut crate::seed::rng_from(0),
        );
        h.load_flat(head).map_err(Error::Model)?;
        Ok(MilModel {
            encoder,
            head: h,
            config: *mil,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_patient_index, SlideManifestEntry};
    use crate::models::{build_encoder, EncoderConfig};

    #[test]
    fn patch_checkpoint_round_trip() {
        let entries: Vec<SlideManifestEntry> = ["a", "a", "b", "b"]
            .iter()
            .enumerate()
            .map(|(i, p)| SlideManifestEntry {
                slide_id: format!("s{i}"),
                patient_id: p.to_string(),
                resection_ordinal: 0,
                days_since_first_resection: None,
                image_path: "x.png".into(),
                native_mpp: 0.5,
            })
            .collect();
        let index = build_patient_index(&entries).unwrap();
        let enc = build_encoder(&EncoderConfig::default(), 3).unwrap();
        let model = PatchClassifier::new(enc, 2, 4);
        let ck = Checkpoint::patch(&model, EncoderConfig::default(), TrainingConfig::default(), index, "abc".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.patch_model().unwrap(), model);
        assert!(back.mil_model().is_err());
        assert_eq!(back.split_fingerprint, "abc");
    }
}
