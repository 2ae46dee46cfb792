//! The native dataset file: a single JSON document holding the world model,
//! every scene of both splits and the injection manifest.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{build_scene_graph, BoundingBox, EdgePolicy, ObjectNode, SceneGraph, Violation};
use crate::synth::{Dataset, Injection, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub bbox: [f64; 4],
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Vec<f64>>,
    #[serde(default)]
    pub is_ooc: bool,
    #[serde(default)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: u64,
    /// Scenes without a split are treated as test scenes.
    #[serde(default)]
    pub split: Split,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    #[serde(default)]
    pub world: Option<WorldModel>,
    pub scenes: Vec<SceneRecord>,
    #[serde(default)]
    pub manifest: Vec<Injection>,
}

impl SceneRecord {
    pub fn from_scene(scene: &SceneGraph, split: Split) -> Self {
        let (width, height) = scene.image_size();
        let objects = scene
            .nodes()
            .iter()
            .map(|n| ObjectRecord {
                bbox: n.bbox.corners(),
                label: n.label,
                appearance: n.appearance.clone(),
                is_ooc: n.is_ooc,
                violation: n.violation,
            })
            .collect();
        Self {
            id: scene.id,
            split,
            width,
            height,
            objects,
        }
    }

    pub fn to_scene(&self) -> Result<SceneGraph> {
        let nodes = self
            .objects
            .iter()
            .map(|o| {
                let [xmin, ymin, xmax, ymax] = o.bbox;
                ObjectNode {
                    bbox: BoundingBox::new(xmin, ymin, xmax, ymax),
                    label: o.label,
                    appearance: o.appearance.clone(),
                    is_ooc: o.is_ooc,
                    violation: o.violation,
                }
            })
            .collect();
        Ok(build_scene_graph(nodes, self.width, self.height, EdgePolicy::FullyConnected)?.with_id(self.id))
    }
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        let scenes = ds
            .train
            .iter()
            .map(|s| SceneRecord::from_scene(s, Split::Train))
            .chain(ds.test.iter().map(|s| SceneRecord::from_scene(s, Split::Test)))
            .collect();
        Self {
            world: ds.world.clone(),
            scenes,
            manifest: ds.manifest.clone(),
        }
    }
}

impl TryFrom<&DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(file: &DatasetFile) -> Result<Self> {
        if let Some(world) = &file.world {
            world.validate()?;
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for record in &file.scenes {
            let scene = record
                .to_scene()
                .map_err(|e| Error::Validation(format!("scene {}: {e}", record.id)))?;
            match record.split {
                Split::Train => train.push(scene),
                Split::Test => test.push(scene),
            }
        }
        Ok(Dataset {
            world: file.world.clone(),
            train,
            test,
            manifest: file.manifest.clone(),
        })
    }
}

/// Converts a 1-based line/column pair from serde_json into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(bytes.len())
}

/// Deserializes JSON, reporting syntax and schema errors with a byte offset.
pub(crate) fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn to_json_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&DatasetFile::from(dataset))?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_json_bytes(bytes: &[u8]) -> Result<Dataset> {
    let file: DatasetFile = parse_json(bytes)?;
    Dataset::try_from(&file)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    fs::write(path, to_json_bytes(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    from_json_bytes(&fs::read(path)?)
}
