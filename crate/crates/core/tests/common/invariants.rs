//! Randomized invariant checks. Each takes a seed, builds its own random
//! instance and reports the first violation as an error string.

use gcrn::checkpoint::Checkpoint;
use gcrn::dataset::to_json_bytes;
use gcrn::gcn::GcnModel;
use gcrn::gcrn::{EmConfig, Gcrn, GcrnConfig, LabelSource};
use gcrn::metrics::auc;
use gcrn::ooc::{detect, kl_divergence, OocRecord};
use gcrn::rng::{self, SeededRng};
use gcrn::scene::{build_scene_graph, spatial_features, BoundingBox, EdgePolicy, ObjectNode, SceneGraph, Violation};
use gcrn::synth::{generate_dataset, generate_world, GenConfig, WorldParams};
use gcrn::tensor::{softmax_rows, Matrix};
use rand::Rng;

use super::{gaussian_matrix, random_adjacency};

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_distribution(k: usize, rng: &mut SeededRng) -> Vec<f64> {
    // Occasionally put exact zeros in, to exercise the floor.
    let raw: Vec<f64> = (0..k)
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; k];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|v| v / s).collect()
}

pub fn softmax_normalization(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let rows = r.random_range(1..8);
    let cols = r.random_range(1..20);
    let scale = [1.0, 10.0, 1e3][r.random_range(0..3)];
    let mut logits = gaussian_matrix(rows, cols, &mut r);
    logits.scale(scale);
    let p = softmax_rows(&logits);
    for row in p.iter_rows() {
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() < 1e-12, || format!("row sums to {s}"))?;
        ensure(row.iter().all(|v| (0.0..=1.0).contains(v)), || format!("entry outside [0,1]: {row:?}"))?;
    }
    Ok(())
}

pub fn kl_nonnegative_and_identity(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let k = r.random_range(2..15);
    let p = random_distribution(k, &mut r);
    let q = random_distribution(k, &mut r);
    let d = kl_divergence(&p, &q).map_err(|e| e.to_string())?;
    ensure(d >= 0.0, || format!("KL {d} < 0"))?;
    let same = kl_divergence(&p, &p).map_err(|e| e.to_string())?;
    ensure(same.abs() < 1e-12, || format!("KL(p, p) = {same}"))
}

pub fn permutation_equivariance(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let n = r.random_range(2..8);
    let model = GcnModel::new(5, &[16, 8, 8], 4, seed);
    let adj = random_adjacency(n, &mut r);
    let x = gaussian_matrix(n, 5, &mut r);
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
    let mut adj_p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            adj_p.as_mut_slice()[i * n + j] = adj[(perm[i], perm[j])];
        }
    }
    let base = model.forward(&adj, &x).unwrap().logits.select_rows(&perm);
    let moved = model.forward(&adj_p, &x.select_rows(&perm)).unwrap().logits;
    for (a, b) in base.as_slice().iter().zip(moved.as_slice()) {
        ensure((a - b).abs() < 1e-12, || format!("{a} vs {b}"))?;
    }
    Ok(())
}

pub fn random_scene(n: usize, classes: usize, dim: usize, rng: &mut SeededRng) -> SceneGraph {
    let nodes = (0..n)
        .map(|_| {
            let x0 = rng.random_range(0.0..0.8);
            let y0 = rng.random_range(0.0..0.8);
            let b = BoundingBox::new(x0, y0, x0 + rng.random_range(0.01..0.2), y0 + rng.random_range(0.01..0.2));
            let app = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            ObjectNode::new(b, Some(rng.random_range(0..classes)), Some(app))
        })
        .collect();
    build_scene_graph(nodes, 1.0, 1.0, EdgePolicy::FullyConnected).unwrap()
}

fn small_gcrn(seed: u64) -> Gcrn {
    let config = GcrnConfig {
        hidden: vec![16, 8],
        ..GcrnConfig::default()
    };
    Gcrn::new(5, 3, &config, seed)
}

/// ConG's output for node i does not depend on the label assumed for node i,
/// and no ConG output depends on appearance.
pub fn cong_masking(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let g = small_gcrn(seed);
    let n = r.random_range(1..7);
    let scene = random_scene(n, 5, 3, &mut r);
    let labels = scene.labels().unwrap();
    let base = g.cong_forward(&scene, &labels).unwrap();
    let i = r.random_range(0..n);
    let mut changed = labels.clone();
    changed[i] = (labels[i] + 1 + r.random_range(0..4)) % 5;
    let other = g.cong_forward(&scene, &changed).unwrap();
    ensure(base.row(i) == other.row(i), || format!("row {i} moved with its own label"))?;

    let recoloured = scene
        .map_nodes(|_, node| ObjectNode {
            appearance: Some(vec![r.random_range(-5.0..5.0); 3]),
            ..node.clone()
        })
        .unwrap();
    let again = g.cong_forward(&recoloured, &labels).unwrap();
    ensure(again == base, || "ConG output changed with appearance".into())
}

/// `Â v = v` for `v = sqrt(deg + 1)` and the power-iteration spectral radius is 1.
pub fn adjacency_spectrum(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let n = r.random_range(1..10);
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.5) {
                a.as_mut_slice()[i * n + j] = 1.0;
                a.as_mut_slice()[j * n + i] = 1.0;
            }
        }
    }
    let norm = gcrn::scene::normalize_adjacency(&a);
    for i in 0..n {
        for j in 0..n {
            ensure(norm[(i, j)] == norm[(j, i)], || "normalized adjacency not symmetric".into())?;
        }
    }
    let v: Vec<f64> = (0..n).map(|i| (a.row(i).iter().sum::<f64>() + 1.0).sqrt()).collect();
    let av = norm.matmul(&Matrix::from_vec(n, 1, v.clone()).unwrap()).unwrap();
    for (x, y) in av.as_slice().iter().zip(&v) {
        ensure((x - y).abs() < 1e-12, || format!("A v = {x}, v = {y}"))?;
    }
    // Power iteration on Â + I: all eigenvalues of Â lie in (-1, 1], so the
    // shifted matrix is positive semidefinite with top eigenvalue 2.
    let mut shifted = norm.clone();
    for i in 0..n {
        shifted.as_mut_slice()[i * n + i] += 1.0;
    }
    let mut x = Matrix::from_vec(n, 1, (0..n).map(|_| r.random_range(0.1..1.0)).collect()).unwrap();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let y = shifted.matmul(&x).unwrap();
        let norm_y = y.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_x = x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        lambda = norm_y / norm_x;
        x = y;
        x.scale(1.0 / norm_y);
    }
    ensure((lambda - 2.0).abs() < 1e-9, || format!("spectral radius of Â + I is {lambda}"))
}

pub fn random_records(n: usize, levels: u32, rng: &mut SeededRng) -> Vec<OocRecord> {
    (0..n)
        .map(|i| OocRecord {
            scene_id: 0,
            node_index: i,
            score: f64::from(rng.random_range(0..levels)) / 4.0,
            truth: rng.random_bool(0.4),
            violation: Violation::None,
        })
        .collect()
}

pub fn detect_monotone(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let recs = random_records(r.random_range(1..40), 20, &mut r);
    let t1 = r.random_range(-1.0..6.0);
    let t2 = t1 + r.random_range(0.0..3.0);
    let low = detect(&recs, t1);
    let high = detect(&recs, t2);
    for (a, b) in low.iter().zip(&high) {
        ensure(!b || *a, || format!("flagged at {t2} but not at {t1}"))?;
    }
    Ok(())
}

pub fn auc_monotone_invariance(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let mut recs = random_records(r.random_range(2..50), 12, &mut r);
    recs[0].truth = true;
    recs[1].truth = false;
    let base = auc(&recs).unwrap();
    for f in [|x: f64| x.exp(), |x: f64| 2.0 * x + 1.0] {
        let moved: Vec<OocRecord> = recs
            .iter()
            .map(|rec| OocRecord {
                score: f(rec.score),
                ..rec.clone()
            })
            .collect();
        let a = auc(&moved).unwrap();
        ensure(a == base, || format!("AUC {base} became {a}"))?;
    }
    Ok(())
}

pub fn dataset_determinism(seed: u64) -> Check {
    let params = WorldParams::default();
    let world = generate_world(&params, seed).map_err(|e| e.to_string())?;
    let config = GenConfig {
        seed,
        num_train: 15,
        num_test: 10,
        ..GenConfig::default()
    };
    let a = to_json_bytes(&generate_dataset(&world, &config).unwrap()).unwrap();
    let world2 = generate_world(&params, seed).unwrap();
    let b = to_json_bytes(&generate_dataset(&world2, &config).unwrap()).unwrap();
    ensure(a == b, || "regenerated dataset differs".into())
}

/// Save and reload after a short EM run; predictions on a scene are identical.
pub fn checkpoint_prediction_equality(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let mut g = small_gcrn(seed);
    let scenes: Vec<SceneGraph> = (0..4).map(|_| random_scene(r.random_range(2..5), 5, 3, &mut r)).collect();
    g.pretrain_repg(&scenes, 1, seed).unwrap();
    let em = EmConfig {
        max_iterations: 2,
        ..EmConfig::default()
    };
    g.em_train(&scenes, &em, seed).unwrap();
    let bytes = Checkpoint::from_gcrn(&g).to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap().into_gcrn().unwrap();
    let probe = random_scene(4, 5, 3, &mut r);
    for source in [LabelSource::GroundTruth, LabelSource::RepgArgmax] {
        ensure(g.predict(&probe, source).unwrap() == back.predict(&probe, source).unwrap(), || {
            "reloaded model predicts differently".into()
        })?;
    }
    Ok(())
}

/// Scaling box and image by a power of two leaves every spatial feature
/// unchanged bit for bit.
pub fn spatial_scale_invariance(seed: u64) -> Check {
    let mut r = rng::seeded(seed);
    let (w, h) = (r.random_range(1.0..500.0), r.random_range(1.0..500.0));
    let x0 = r.random_range(0.0..w / 2.0);
    let y0 = r.random_range(0.0..h / 2.0);
    let b = BoundingBox::new(x0, y0, x0 + r.random_range(0.1..w / 2.0), y0 + r.random_range(0.1..h / 2.0));
    let s = 2f64.powi(r.random_range(-8..8));
    let scaled = BoundingBox::new(b.xmin * s, b.ymin * s, b.xmax * s, b.ymax * s);
    let f = spatial_features(&b, w, h).unwrap();
    let g = spatial_features(&scaled, w * s, h * s).unwrap();
    ensure(f == g, || format!("{f:?} vs {g:?}"))
}

pub const ALL: [(&str, fn(u64) -> Check); 10] = [
    ("softmax normalization", softmax_normalization),
    ("KL non-negativity and identity", kl_nonnegative_and_identity),
    ("permutation equivariance", permutation_equivariance),
    ("ConG own-label masking", cong_masking),
    ("adjacency normalization spectrum", adjacency_spectrum),
    ("detect monotonicity", detect_monotone),
    ("AUC monotone-transform invariance", auc_monotone_invariance),
    ("dataset determinism", dataset_determinism),
    ("checkpoint round-trip predictions", checkpoint_prediction_equality),
    ("spatial-feature scale invariance", spatial_scale_invariance),
];
