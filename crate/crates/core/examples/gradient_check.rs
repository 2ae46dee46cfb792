//! Compares the hand-written GCN backward pass with central finite differences
//! on a small random graph.
//!
//!     cargo run --example gradient_check

use gcrn::gcn::{loss_and_gradients, GcnModel, TrainItem};
use gcrn::rng;
use gcrn::scene::normalize_adjacency;
use gcrn::tensor::Matrix;
use rand::Rng;

fn loss(model: &GcnModel, item: &TrainItem) -> f64 {
    loss_and_gradients(model, item).expect("valid item").0
}

fn main() -> gcrn::Result<()> {
    let mut r = rng::seeded(11);
    let nodes = 5;
    let mut adjacency = Matrix::zeros(nodes, nodes);
    for i in 0..nodes {
        for j in 0..i {
            if r.random_bool(0.6) {
                adjacency.row_mut(i)[j] = 1.0;
                adjacency.row_mut(j)[i] = 1.0;
            }
        }
    }
    let inputs: Vec<f64> = (0..nodes * 6).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..nodes).map(|_| r.random_range(0..4)).collect();
    let item = TrainItem::single(normalize_adjacency(&adjacency), Matrix::from_vec(nodes, 6, inputs)?, &labels)?;

    let mut model = GcnModel::new(6, &[8, 5], 4, 12);
    let (_, analytic) = loss_and_gradients(&model, &item)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, grad) in analytic.params().into_iter().enumerate() {
        for k in 0..grad.as_slice().len() {
            let original = model.params()[t].as_slice()[k];
            model.params_mut()[t].as_mut_slice()[k] = original + h;
            let up = loss(&model, &item);
            model.params_mut()[t].as_mut_slice()[k] = original - h;
            let down = loss(&model, &item);
            model.params_mut()[t].as_mut_slice()[k] = original;
            let numeric = (up - down) / (2.0 * h);
            let exact = grad.as_slice()[k];
            worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6));
            checked += 1;
        }
    }
    println!("{checked} parameters checked, max relative error {worst:.2e}");
    Ok(())
}
