//! Synthetic scenes with known context structure.
//!
//! Classes are partitioned into disjoint context groups. An in-context scene
//! draws all of its objects from one group; placing a class from another group
//! into it is a co-occurrence violation. Each class also has a typical box
//! area, and blowing a box up by 2–5× is a size violation. Appearance features
//! are a per-class prototype plus isotropic Gaussian noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::scene::{build_scene_graph, BoundingBox, EdgePolicy, ObjectNode, SceneGraph, Violation};

/// Range of mean box areas (fraction of the unit image) assigned to classes.
pub const MEAN_AREA_RANGE: (f64, f64) = (0.005, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSizeStats {
    /// Mean box area as a fraction of the image.
    pub mean_area: f64,
    /// Standard deviation of ln(area).
    pub log_spread: f64,
}

impl ClassSizeStats {
    /// Area sample, clamped to `[mean/3, 3·mean]`.
    pub fn sample_area(&self, rng: &mut SeededRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.mean_area * (self.log_spread * z).exp())
            .clamp(self.mean_area / 3.0, self.mean_area * 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub num_classes: usize,
    pub num_groups: usize,
    pub appearance_dim: usize,
    /// Per-dimension standard deviation of appearance noise.
    pub noise_scale: f64,
    pub log_size_spread: f64,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            num_classes: 12,
            num_groups: 2,
            appearance_dim: 16,
            noise_scale: 0.15,
            log_size_spread: 0.3,
            min_objects: 3,
            max_objects: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub num_classes: usize,
    pub appearance_dim: usize,
    /// Disjoint class groups covering `0..num_classes`.
    pub groups: Vec<Vec<usize>>,
    pub class_size_stats: Vec<ClassSizeStats>,
    /// Unit-norm prototype per class.
    pub feature_prototypes: Vec<Vec<f64>>,
    pub noise_scale: f64,
    /// Inclusive bounds on objects per scene.
    pub scene_size_range: (usize, usize),
}

impl WorldModel {
    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&class))
    }

    /// Prototype plus `N(0, noise_scale²)` per dimension.
    pub fn sample_appearance(&self, class: usize, rng: &mut SeededRng) -> Vec<f64> {
        let proto = &self.feature_prototypes[class];
        if self.noise_scale == 0.0 {
            return proto.clone();
        }
        let noise = Normal::new(0.0, self.noise_scale).expect("validated noise scale");
        proto.iter().map(|p| p + noise.sample(rng)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for g in &self.groups {
            for &c in g {
                if c >= self.num_classes || seen[c] {
                    return Err(Error::Validation(format!("groups do not partition classes at {c}")));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Validation("groups do not cover every class".into()));
        }
        if self.class_size_stats.len() != self.num_classes
            || self.feature_prototypes.len() != self.num_classes
        {
            return Err(Error::Validation("per-class tables have wrong length".into()));
        }
        if self
            .class_size_stats
            .iter()
            .any(|s| !(s.mean_area > 0.0 && s.mean_area < 1.0))
        {
            return Err(Error::Validation("size means must lie in (0, 1)".into()));
        }
        if self
            .feature_prototypes
            .iter()
            .any(|p| p.len() != self.appearance_dim)
        {
            return Err(Error::Validation("prototype length mismatch".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Validation("noise scale must be finite and nonnegative".into()));
        }
        let (lo, hi) = self.scene_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::Validation(format!("bad scene size range {lo}..={hi}")));
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn generate_world(params: &WorldParams, seed: u64) -> Result<WorldModel> {
    let WorldParams {
        num_classes,
        num_groups,
        appearance_dim,
        ..
    } = *params;
    if num_groups < 2 || num_classes < num_groups {
        return Err(Error::Validation(format!(
            "need num_classes >= num_groups >= 2, got {num_classes} classes, {num_groups} groups"
        )));
    }
    if appearance_dim == 0 {
        return Err(Error::Validation("appearance_dim must be positive".into()));
    }
    let mut rng = rng::seeded(seed);

    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut rng);
    let mut groups = vec![Vec::new(); num_groups];
    for (i, c) in classes.into_iter().enumerate() {
        groups[i % num_groups].push(c);
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());

    let (lo, hi) = MEAN_AREA_RANGE;
    let class_size_stats = (0..num_classes)
        .map(|_| ClassSizeStats {
            mean_area: (rng.random_range(lo.ln()..hi.ln())).exp(),
            log_spread: params.log_size_spread,
        })
        .collect();

    let mut feature_prototypes: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while feature_prototypes.len() < num_classes {
        let v = unit_vector(appearance_dim, &mut rng);
        // Regenerate on near-collision.
        if feature_prototypes.iter().all(|p| cosine(p, &v) < 0.99) {
            feature_prototypes.push(v);
        }
    }

    let world = WorldModel {
        num_classes,
        appearance_dim,
        groups,
        class_size_stats,
        feature_prototypes,
        noise_scale: params.noise_scale,
        scene_size_range: (params.min_objects, params.max_objects),
    };
    world.validate()?;
    Ok(world)
}

/// Box of the given area with random aspect ratio, placed uniformly inside the
/// unit square.
fn place_box(area: f64, rng: &mut SeededRng) -> BoundingBox {
    let aspect = rng.random_range(0.5f64.ln()..2f64.ln()).exp();
    let mut w = (area * aspect).sqrt();
    let mut h = area / w;
    if w > 1.0 {
        w = 1.0;
        h = area;
    } else if h > 1.0 {
        h = 1.0;
        w = area;
    }
    let x = rng.random_range(0.0..=(1.0 - w));
    let y = rng.random_range(0.0..=(1.0 - h));
    BoundingBox::new(x, y, (x + w).min(1.0), (y + h).min(1.0))
}

/// One in-context scene: every object comes from a single randomly chosen group.
pub fn generate_scene(world: &WorldModel, rng: &mut SeededRng) -> Result<SceneGraph> {
    let group = &world.groups[rng.random_range(0..world.groups.len())];
    let (lo, hi) = world.scene_size_range;
    let n = rng.random_range(lo..=hi);
    let nodes = (0..n)
        .map(|_| {
            let class = group[rng.random_range(0..group.len())];
            let area = world.class_size_stats[class].sample_area(rng);
            let bbox = place_box(area, rng);
            let appearance = world.sample_appearance(class, rng);
            ObjectNode::new(bbox, Some(class), Some(appearance))
        })
        .collect();
    build_scene_graph(nodes, 1.0, 1.0, EdgePolicy::FullyConnected)
}

/// Record of one injected violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub scene_id: u64,
    pub node_index: usize,
    pub kind: Violation,
    pub parameters: BTreeMap<String, f64>,
}

fn majority_group(scene: &SceneGraph, world: &WorldModel) -> Result<usize> {
    let mut counts = vec![0usize; world.groups.len()];
    for n in scene.nodes() {
        let label = n
            .label
            .ok_or_else(|| Error::Validation("injection needs labelled nodes".into()))?;
        let g = world
            .group_of(label)
            .ok_or_else(|| Error::Mapping(format!("class {label} not in world")))?;
        counts[g] += 1;
    }
    Ok(crate::tensor::argmax(
        &counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
    ))
}

/// Swaps one object's class for a class from a different group and redraws its
/// appearance. The box is unchanged.
pub fn inject_cooccurrence_ooc(
    scene: &SceneGraph,
    world: &WorldModel,
    rng: &mut SeededRng,
) -> Result<(SceneGraph, Injection)> {
    if world.groups.len() < 2 {
        return Err(Error::Unsupported(
            "co-occurrence violations need at least two groups".into(),
        ));
    }
    let home = majority_group(scene, world)?;
    let target = rng.random_range(0..scene.len());
    let mut other = rng.random_range(0..world.groups.len() - 1);
    if other >= home {
        other += 1;
    }
    let group = &world.groups[other];
    let new_class = group[rng.random_range(0..group.len())];
    let appearance = world.sample_appearance(new_class, rng);
    let old_class = scene.nodes()[target].label.expect("checked by majority_group");

    let out = scene.map_nodes(|i, n| {
        if i == target {
            ObjectNode {
                label: Some(new_class),
                appearance: Some(appearance.clone()),
                is_ooc: true,
                violation: Violation::Cooccurrence,
                ..n.clone()
            }
        } else {
            n.clone()
        }
    })?;
    let parameters = BTreeMap::from([
        ("from_class".to_string(), old_class as f64),
        ("to_class".to_string(), new_class as f64),
    ]);
    Ok((
        out,
        Injection {
            scene_id: scene.id,
            node_index: target,
            kind: Violation::Cooccurrence,
            parameters,
        },
    ))
}

/// Scales one object's box about its centre by `u ~ U[lo, hi]`, clipped to the
/// image. Class and appearance are unchanged.
pub fn inject_size_ooc(
    scene: &SceneGraph,
    scale_range: (f64, f64),
    rng: &mut SeededRng,
) -> Result<(SceneGraph, Injection)> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let target = rng.random_range(0..scene.len());
    let (lo, hi) = scale_range;
    let factor = rng.random_range(lo..=hi);
    let (w, h) = scene.image_size();
    let b = scene.nodes()[target].bbox;
    let scaled = scale_box(&b, factor, w, h);

    let out = scene.map_nodes(|i, n| {
        if i == target {
            ObjectNode {
                bbox: scaled,
                is_ooc: true,
                violation: Violation::Size,
                ..n.clone()
            }
        } else {
            n.clone()
        }
    })?;
    let parameters = BTreeMap::from([("scale".to_string(), factor)]);
    Ok((
        out,
        Injection {
            scene_id: scene.id,
            node_index: target,
            kind: Violation::Size,
            parameters,
        },
    ))
}

/// Scales `b` about its centre, clipping to `[0, w] × [0, h]`.
pub fn scale_box(b: &BoundingBox, factor: f64, w: f64, h: f64) -> BoundingBox {
    let (cx, cy) = b.center();
    let hw = 0.5 * b.width() * factor;
    let hh = 0.5 * b.height() * factor;
    BoundingBox::new(
        (cx - hw).max(0.0),
        (cy - hh).max(0.0),
        (cx + hw).min(w),
        (cy + hh).min(h),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolationMix {
    pub cooccurrence: f64,
    pub size: f64,
}

impl Default for ViolationMix {
    /// Share of co-occurrence vs size images in the reference OOC collection
    /// (72137 / 33899 of 106036), rounded.
    fn default() -> Self {
        Self {
            cooccurrence: 0.68,
            size: 0.32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub num_train: usize,
    pub num_test: usize,
    /// Fraction of test scenes that receive exactly one injected violation.
    pub ooc_fraction: f64,
    pub violation_mix: ViolationMix,
    pub size_scale_range: (f64, f64),
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_train: 2000,
            num_test: 500,
            ooc_fraction: 0.5,
            violation_mix: ViolationMix::default(),
            size_scale_range: (2.0, 5.0),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ooc_fraction) {
            return Err(Error::Validation(format!(
                "ooc_fraction {} outside [0, 1]",
                self.ooc_fraction
            )));
        }
        let ViolationMix { cooccurrence, size } = self.violation_mix;
        if cooccurrence < 0.0 || size < 0.0 || ((cooccurrence + size) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "violation weights {cooccurrence} + {size} must be nonnegative and sum to 1"
            )));
        }
        let (lo, hi) = self.size_scale_range;
        if !(lo >= 1.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Validation(format!("bad scale range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: Option<WorldModel>,
    pub train: Vec<SceneGraph>,
    pub test: Vec<SceneGraph>,
    pub manifest: Vec<Injection>,
}

/// Training scenes are all in context. Test scenes: a seeded choice of
/// `round(ooc_fraction · num_test)` of them get one violation each, with the
/// kind drawn from `violation_mix`.
///
/// Scene `i` of each split draws from its own ChaCha8 stream, so generation is
/// a pure function of `(world, config)`.
pub fn generate_dataset(world: &WorldModel, config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    world.validate()?;
    let train_seed = config.seed ^ rng::tags::TRAIN_SCENES.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let test_seed = config.seed ^ rng::tags::TEST_SCENES.wrapping_mul(0x9E37_79B9_7F4A_7C15);

    let train = (0..config.num_train)
        .map(|i| {
            let mut r = rng::stream(train_seed, i as u64);
            Ok(generate_scene(world, &mut r)?.with_id(i as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let num_ooc = (config.ooc_fraction * config.num_test as f64).round() as usize;
    let mut chosen = vec![false; config.num_test];
    let mut order: Vec<usize> = (0..config.num_test).collect();
    order.shuffle(&mut rng::stream(test_seed, u64::MAX));
    for &i in order.iter().take(num_ooc) {
        chosen[i] = true;
    }

    let mut test = Vec::with_capacity(config.num_test);
    let mut manifest = Vec::new();
    for (i, &inject) in chosen.iter().enumerate() {
        let id = (config.num_train + i) as u64;
        let mut r = rng::stream(test_seed, i as u64);
        let scene = generate_scene(world, &mut r)?.with_id(id);
        if !inject {
            test.push(scene);
            continue;
        }
        let (scene, injection) = if r.random::<f64>() < config.violation_mix.cooccurrence {
            inject_cooccurrence_ooc(&scene, world, &mut r)?
        } else {
            inject_size_ooc(&scene, config.size_scale_range, &mut r)?
        };
        test.push(scene);
        manifest.push(injection);
    }

    Ok(Dataset {
        world: Some(world.clone()),
        train,
        test,
        manifest,
    })
}

/// Checks the ground-truth invariants of a dataset: flags and violation kinds
/// agree, and scenes without a flagged node draw from a single group.
pub fn validate_dataset(dataset: &Dataset) -> Result<()> {
    for scene in dataset.train.iter().chain(&dataset.test) {
        for (i, n) in scene.nodes().iter().enumerate() {
            if n.is_ooc != (n.violation != Violation::None) {
                return Err(Error::Validation(format!(
                    "scene {} node {i}: flag {} with violation {:?}",
                    scene.id, n.is_ooc, n.violation
                )));
            }
        }
        let Some(world) = &dataset.world else { continue };
        if scene.nodes().iter().any(|n| n.is_ooc) {
            continue;
        }
        let mut groups = scene
            .nodes()
            .iter()
            .filter_map(|n| n.label.and_then(|l| world.group_of(l)));
        if let Some(first) = groups.next() {
            if groups.any(|g| g != first) {
                return Err(Error::Validation(format!(
                    "in-context scene {} mixes class groups",
                    scene.id
                )));
            }
        }
    }
    Ok(())
}
