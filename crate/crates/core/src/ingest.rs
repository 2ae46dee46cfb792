//! COCO-style annotation import, plus the two transformations that connect
//! external annotations to the synthetic pipeline: oracle appearance features
//! and label corruption.
//!
//! Only the `images`, `annotations` and `categories` arrays are read. Other
//! top-level keys and extra per-entry fields (segmentation, iscrowd, ...) are
//! ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::parse_json;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scene::{build_scene_graph, BoundingBox, EdgePolicy, ObjectNode, SceneGraph};
use crate::synth::WorldModel;

#[derive(Debug, Deserialize)]
struct AnnotationFile {
    images: Vec<ImageEntry>,
    #[serde(default)]
    annotations: Vec<AnnotationEntry>,
    #[serde(default)]
    categories: Vec<CategoryEntry>,
}

#[derive(Debug, Deserialize)]
struct ImageEntry {
    id: i64,
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize)]
struct AnnotationEntry {
    image_id: i64,
    bbox: [f64; 4],
    category_id: i64,
}

#[derive(Debug, Deserialize)]
struct CategoryEntry {
    id: i64,
    #[serde(default)]
    name: String,
}

/// Maps one external category id to its dense class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRemap {
    pub category_id: i64,
    pub class_index: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Skip (and count) annotations with invalid boxes instead of failing.
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub scenes: Vec<SceneGraph>,
    pub remap: Vec<CategoryRemap>,
    pub skipped: usize,
}

/// `[x, y, w, h]` to corner form. `xmax - xmin == w` whenever `x + w` is exact.
pub fn coco_box(bbox: [f64; 4]) -> BoundingBox {
    let [x, y, w, h] = bbox;
    BoundingBox::new(x, y, x + w, y + h)
}

/// Parses a COCO-style annotation file into one scene per annotated image.
///
/// Scenes follow the order of the `images` array and take the image id as
/// their id; nodes follow annotation order. Category ids that are actually
/// used are remapped, in ascending id order, to `0..K`.
pub fn parse_coco_annotations(bytes: &[u8], options: IngestOptions) -> Result<IngestOutput> {
    let file: AnnotationFile = parse_json(bytes)?;

    let mut images = HashMap::with_capacity(file.images.len());
    for (pos, img) in file.images.iter().enumerate() {
        if img.id < 0 {
            return Err(Error::Validation(format!("negative image id {}", img.id)));
        }
        if !(img.width > 0.0 && img.height > 0.0 && img.width.is_finite() && img.height.is_finite()) {
            return Err(Error::Validation(format!(
                "image {} has size {}x{}",
                img.id, img.width, img.height
            )));
        }
        if images.insert(img.id, pos).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", img.id)));
        }
    }
    let mut names = BTreeMap::new();
    for cat in &file.categories {
        if names.insert(cat.id, cat.name.clone()).is_some() {
            return Err(Error::Validation(format!("duplicate category id {}", cat.id)));
        }
    }

    let mut per_image: Vec<Vec<(BoundingBox, i64)>> = vec![Vec::new(); file.images.len()];
    let mut used = BTreeSet::new();
    let mut skipped = 0;
    for (k, ann) in file.annotations.iter().enumerate() {
        let &pos = images.get(&ann.image_id).ok_or(Error::Reference {
            kind: "image",
            id: ann.image_id,
        })?;
        if !names.contains_key(&ann.category_id) {
            return Err(Error::Reference {
                kind: "category",
                id: ann.category_id,
            });
        }
        let img = &file.images[pos];
        let bbox = coco_box(ann.bbox);
        let [_, _, w, h] = ann.bbox;
        let check = if w > 0.0 && h > 0.0 {
            bbox.validate(img.width, img.height)
        } else {
            Err(Error::Validation(format!("zero-area box {:?}", ann.bbox)))
        };
        match check {
            Ok(()) => {
                per_image[pos].push((bbox, ann.category_id));
                used.insert(ann.category_id);
            }
            Err(_) if options.lenient => skipped += 1,
            Err(e) => return Err(Error::Validation(format!("annotation {k}: {e}"))),
        }
    }

    let remap: Vec<CategoryRemap> = used
        .iter()
        .enumerate()
        .map(|(class_index, &category_id)| CategoryRemap {
            category_id,
            class_index,
            name: names[&category_id].clone(),
        })
        .collect();
    let dense: HashMap<i64, usize> = remap.iter().map(|r| (r.category_id, r.class_index)).collect();

    let mut scenes = Vec::new();
    for (img, boxes) in file.images.iter().zip(per_image) {
        if boxes.is_empty() {
            continue;
        }
        let nodes = boxes
            .into_iter()
            .map(|(b, cat)| ObjectNode::new(b, Some(dense[&cat]), None))
            .collect();
        let scene = build_scene_graph(nodes, img.width, img.height, EdgePolicy::FullyConnected)?;
        scenes.push(scene.with_id(img.id as u64));
    }
    Ok(IngestOutput {
        scenes,
        remap,
        skipped,
    })
}

/// Gives every node the world's appearance for its label: prototype plus
/// seeded Gaussian noise.
pub fn attach_oracle_appearance(
    scenes: &[SceneGraph],
    world: &WorldModel,
    rng: &mut SeededRng,
) -> Result<Vec<SceneGraph>> {
    scenes
        .iter()
        .map(|scene| {
            let labels = scene.labels()?;
            if let Some(&bad) = labels.iter().find(|&&l| l >= world.num_classes) {
                return Err(Error::Mapping(format!(
                    "scene {}: label {bad} outside the world's {} classes",
                    scene.id, world.num_classes
                )));
            }
            let features: Vec<Vec<f64>> = labels.iter().map(|&l| world.sample_appearance(l, rng)).collect();
            scene.map_nodes(|i, n| ObjectNode {
                appearance: Some(features[i].clone()),
                ..n.clone()
            })
        })
        .collect()
}

/// One corrupted label, with the original kept for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFlip {
    pub scene_id: u64,
    pub node_index: usize,
    pub original: usize,
    pub corrupted: usize,
}

/// Independently replaces each label, with probability `flip_rate`, by a
/// uniformly chosen different class in `0..num_classes`.
pub fn corrupt_labels(
    scenes: &[SceneGraph],
    num_classes: usize,
    flip_rate: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<SceneGraph>, Vec<LabelFlip>)> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::Validation(format!("flip rate {flip_rate} outside [0, 1]")));
    }
    if num_classes < 2 && flip_rate > 0.0 {
        return Err(Error::Validation("cannot flip labels with fewer than two classes".into()));
    }
    let mut flips = Vec::new();
    let mut out = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let labels = scene.labels()?;
        let mut corrupted = labels.clone();
        for (i, &original) in labels.iter().enumerate() {
            if original >= num_classes {
                return Err(Error::Mapping(format!("label {original} >= {num_classes}")));
            }
            if rng.random::<f64>() < flip_rate {
                let mut c = rng.random_range(0..num_classes - 1);
                if c >= original {
                    c += 1;
                }
                corrupted[i] = c;
                flips.push(LabelFlip {
                    scene_id: scene.id,
                    node_index: i,
                    original,
                    corrupted: c,
                });
            }
        }
        out.push(scene.map_nodes(|i, n| ObjectNode {
            label: Some(corrupted[i]),
            ..n.clone()
        })?);
    }
    Ok((out, flips))
}
