//! Versioned JSON checkpoints.
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnModel;
use crate::gcrn::Gcrn;
use crate::ooc::ContextFreeClassifier;
use crate::optim::AdamWConfig;
use crate::scene::GEOMETRY_DIM;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Gcrn { repg: GcnModel, cong: GcnModel },
    ContextFree { model: GcnModel },
    /// A representation graph on its own.
    Repg { model: GcnModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub num_classes: usize,
    pub appearance_dim: usize,
    pub optimizer: AdamWConfig,
    pub payload: Payload,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn from_gcrn(model: &Gcrn) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            num_classes: model.num_classes(),
            appearance_dim: model.appearance_dim(),
            optimizer: model.optimizer_config(),
            payload: Payload::Gcrn {
                repg: model.repg.clone(),
                cong: model.cong.clone(),
            },
        }
    }

    pub fn from_classifier(clf: &ContextFreeClassifier, appearance_dim: usize, optimizer: AdamWConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            num_classes: clf.num_classes(),
            appearance_dim,
            optimizer,
            payload: Payload::ContextFree {
                model: clf.model.clone(),
            },
        }
    }

    pub fn from_repg(model: &GcnModel, appearance_dim: usize, optimizer: AdamWConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            num_classes: model.num_classes(),
            appearance_dim,
            optimizer,
            payload: Payload::Repg { model: model.clone() },
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Decodes and checks a checkpoint. Truncation, version and shape problems
    /// each map to their own error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let eof = |e: serde_json::Error| {
            if e.is_eof() {
                Error::Truncated
            } else {
                Error::Json(e)
            }
        };
        let probe: VersionProbe = serde_json::from_slice(bytes).map_err(eof)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_slice(bytes).map_err(eof)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        let expect = |model: &GcnModel, input: usize, what: &str| -> Result<()> {
            model
                .validate_structure()
                .map_err(|e| Error::DimensionMismatch(format!("{what}: {e}")))?;
            if model.input_dim() != input || model.num_classes() != self.num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "{what} maps {} -> {}, checkpoint declares {input} -> {}",
                    model.input_dim(),
                    model.num_classes(),
                    self.num_classes
                )));
            }
            Ok(())
        };
        match &self.payload {
            Payload::Gcrn { repg, cong } => {
                expect(repg, self.appearance_dim + GEOMETRY_DIM, "repg")?;
                expect(cong, self.num_classes + GEOMETRY_DIM, "cong")
            }
            Payload::ContextFree { model } => expect(model, self.appearance_dim + GEOMETRY_DIM, "classifier"),
            Payload::Repg { model } => expect(model, self.appearance_dim + GEOMETRY_DIM, "repg"),
        }
    }

    pub fn into_gcrn(self) -> Result<Gcrn> {
        match self.payload {
            Payload::Gcrn { repg, cong } => {
                Gcrn::from_models(repg, cong, self.num_classes, self.appearance_dim, self.optimizer)
            }
            _ => Err(Error::State("checkpoint does not hold a GCRN model".into())),
        }
    }

    pub fn into_classifier(self) -> Result<ContextFreeClassifier> {
        match self.payload {
            Payload::ContextFree { model } => Ok(ContextFreeClassifier::from_model(model, self.optimizer)),
            _ => Err(Error::State("checkpoint does not hold a context-free classifier".into())),
        }
    }

    pub fn into_repg(self) -> Result<GcnModel> {
        match self.payload {
            Payload::Repg { model } => Ok(model),
            _ => Err(Error::State("checkpoint does not hold a standalone RepG".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_gcrn(path: impl AsRef<Path>, model: &Gcrn) -> Result<()> {
    fs::write(path, Checkpoint::from_gcrn(model).to_bytes()?)?;
    Ok(())
}

pub fn load_gcrn(path: impl AsRef<Path>) -> Result<Gcrn> {
    Checkpoint::from_bytes(&fs::read(path)?)?.into_gcrn()
}

pub fn save_classifier(
    path: impl AsRef<Path>,
    clf: &ContextFreeClassifier,
    appearance_dim: usize,
    optimizer: AdamWConfig,
) -> Result<()> {
    fs::write(path, Checkpoint::from_classifier(clf, appearance_dim, optimizer).to_bytes()?)?;
    Ok(())
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<ContextFreeClassifier> {
    Checkpoint::from_bytes(&fs::read(path)?)?.into_classifier()
}
