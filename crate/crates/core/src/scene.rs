//! Per-image object graphs and the node feature constructors for both GCNs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Number of geometric features appended to every node input: the raw box
/// corners plus the 7-d normalized spatial vector.
pub const GEOMETRY_DIM: usize = 4 + 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xmin + self.xmax),
            0.5 * (self.ymin + self.ymax),
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// Checks ordering, finiteness and containment in a `image_w × image_h` frame.
    pub fn validate(&self, image_w: f64, image_h: f64) -> Result<()> {
        let c = self.corners();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite box {c:?}")));
        }
        if !(self.xmin < self.xmax && self.ymin < self.ymax) {
            return Err(Error::Validation(format!("degenerate box {c:?}")));
        }
        if self.xmin < 0.0 || self.ymin < 0.0 || self.xmax > image_w || self.ymax > image_h {
            return Err(Error::Validation(format!(
                "box {c:?} outside {image_w}x{image_h} image"
            )));
        }
        Ok(())
    }
}

/// Kind of contextual violation injected into an object, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    #[default]
    None,
    Cooccurrence,
    Size,
}

impl Violation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Violation::None => "none",
            Violation::Cooccurrence => "cooccurrence",
            Violation::Size => "size",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub bbox: BoundingBox,
    pub label: Option<usize>,
    pub appearance: Option<Vec<f64>>,
    /// Ground truth, only read by evaluation.
    pub is_ooc: bool,
    pub violation: Violation,
}

impl ObjectNode {
    pub fn new(bbox: BoundingBox, label: Option<usize>, appearance: Option<Vec<f64>>) -> Self {
        Self {
            bbox,
            label,
            appearance,
            is_ooc: false,
            violation: Violation::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Every pair of distinct objects in the image is connected.
    #[default]
    FullyConnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub id: u64,
    nodes: Vec<ObjectNode>,
    image_w: f64,
    image_h: f64,
    adjacency_norm: Matrix,
}

/// Builds the object graph of one image and precomputes `D^-1/2 (A+I) D^-1/2`.
pub fn build_scene_graph(
    objects: Vec<ObjectNode>,
    image_w: f64,
    image_h: f64,
    edge_policy: EdgePolicy,
) -> Result<SceneGraph> {
    if objects.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(image_w > 0.0 && image_h > 0.0 && image_w.is_finite() && image_h.is_finite()) {
        return Err(Error::Validation(format!(
            "invalid image size {image_w}x{image_h}"
        )));
    }
    for node in &objects {
        node.bbox.validate(image_w, image_h)?;
    }
    let adjacency = edge_matrix(objects.len(), edge_policy);
    Ok(SceneGraph {
        id: 0,
        adjacency_norm: normalize_adjacency(&adjacency),
        nodes: objects,
        image_w,
        image_h,
    })
}

/// Raw 0/1 adjacency without self-loops.
fn edge_matrix(n: usize, policy: EdgePolicy) -> Matrix {
    match policy {
        EdgePolicy::FullyConnected => {
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        a[(i, j)] = 1.0;
                    }
                }
            }
            a
        }
    }
}

/// Symmetric normalization with self-loops: `D^-1/2 (A+I) D^-1/2`.
pub fn normalize_adjacency(adjacency: &Matrix) -> Matrix {
    let n = adjacency.rows();
    let mut a = adjacency.clone();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

impl SceneGraph {
    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn nodes(&self) -> &[ObjectNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn image_size(&self) -> (f64, f64) {
        (self.image_w, self.image_h)
    }

    pub fn adjacency_norm(&self) -> &Matrix {
        &self.adjacency_norm
    }

    /// Ground-truth labels for every node, or a validation error if any is missing.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.label.ok_or_else(|| {
                    Error::Validation(format!("scene {} node {i} has no label", self.id))
                })
            })
            .collect()
    }

    /// Replaces node attributes while keeping the graph structure. Boxes are
    /// revalidated; node count must not change.
    pub fn map_nodes(&self, f: impl FnMut(usize, &ObjectNode) -> ObjectNode) -> Result<Self> {
        let mut f = f;
        let nodes: Vec<ObjectNode> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| f(i, n))
            .collect();
        for n in &nodes {
            n.bbox.validate(self.image_w, self.image_h)?;
        }
        Ok(Self {
            id: self.id,
            nodes,
            image_w: self.image_w,
            image_h: self.image_h,
            adjacency_norm: self.adjacency_norm.clone(),
        })
    }

    /// RepG input matrix, one row per node.
    pub fn repg_inputs(&self) -> Result<Matrix> {
        let rows = self
            .nodes
            .iter()
            .map(|n| node_input_repg(n, self.image_w, self.image_h))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// ConG input matrix for the given per-node labels (no masking).
    pub fn cong_inputs(&self, labels: &[usize], num_classes: usize) -> Result<Matrix> {
        if labels.len() != self.len() {
            return Err(Error::Shape {
                op: "cong_inputs",
                left: (self.len(), 1),
                right: (labels.len(), 1),
            });
        }
        let rows = self
            .nodes
            .iter()
            .zip(labels)
            .map(|(n, &l)| node_input_cong(n, l, num_classes, self.image_w, self.image_h))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// `[w/W, h/H, a/A, xmin/W, ymin/H, xmax/W, ymax/H]`.
pub fn spatial_features(bbox: &BoundingBox, image_w: f64, image_h: f64) -> Result<[f64; 7]> {
    if !(image_w > 0.0 && image_h > 0.0) {
        return Err(Error::Validation(format!(
            "invalid image size {image_w}x{image_h}"
        )));
    }
    bbox.validate(image_w, image_h)?;
    let (w, h) = (bbox.width(), bbox.height());
    Ok([
        w / image_w,
        h / image_h,
        (w * h) / (image_w * image_h),
        bbox.xmin / image_w,
        bbox.ymin / image_h,
        bbox.xmax / image_w,
        bbox.ymax / image_h,
    ])
}

fn push_geometry(out: &mut Vec<f64>, node: &ObjectNode, image_w: f64, image_h: f64) -> Result<()> {
    let spatial = spatial_features(&node.bbox, image_w, image_h)?;
    out.extend_from_slice(&node.bbox.corners());
    out.extend_from_slice(&spatial);
    Ok(())
}

/// `[appearance ‖ xmin,ymin,xmax,ymax ‖ spatial7]`.
pub fn node_input_repg(node: &ObjectNode, image_w: f64, image_h: f64) -> Result<Vec<f64>> {
    let appearance = node
        .appearance
        .as_ref()
        .ok_or_else(|| Error::Validation("node has no appearance features".into()))?;
    let mut out = Vec::with_capacity(appearance.len() + GEOMETRY_DIM);
    out.extend_from_slice(appearance);
    push_geometry(&mut out, node, image_w, image_h)?;
    Ok(out)
}

/// `[onehot(assumed_label) ‖ xmin,ymin,xmax,ymax ‖ spatial7]`. Appearance is
/// never read.
pub fn node_input_cong(
    node: &ObjectNode,
    assumed_label: usize,
    num_classes: usize,
    image_w: f64,
    image_h: f64,
) -> Result<Vec<f64>> {
    if assumed_label >= num_classes {
        return Err(Error::Index {
            what: "assumed label",
            index: assumed_label,
            bound: num_classes,
        });
    }
    let mut out = vec![0.0; num_classes];
    out[assumed_label] = 1.0;
    out.reserve(GEOMETRY_DIM);
    push_geometry(&mut out, node, image_w, image_h)?;
    Ok(out)
}
