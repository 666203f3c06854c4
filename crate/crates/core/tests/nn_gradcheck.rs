use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use progcpr::nn::{
    gradcheck, loss, Activation, Batch, LossSpec, Matrix, ModelGraph, Targets,
};

const EPS: f64 = 1e-5;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn labels(n: usize, classes: u32) -> Vec<u32> {
    (0..n as u32).map(|i| i % classes).collect()
}

#[test]
fn linear_mse_is_exact_to_rounding() {
    let model = ModelGraph::mlp(&[4, 3], Activation::Relu, Activation::Identity, 1);
    let batch = Batch::new(random_matrix(6, 4, 2), Some(Targets::Dense(random_matrix(6, 3, 3)))).unwrap();
    let r = gradcheck(&model, &batch, LossSpec::Mse, EPS).unwrap();
    assert!(r.max_rel_err < 1e-8, "{r:?}");
}

#[test]
fn relu_mlp_cross_entropy() {
    let model = ModelGraph::mlp(&[5, 8, 6, 3], Activation::Relu, Activation::Softmax, 4);
    let batch = Batch::new(random_matrix(7, 5, 5), Some(Targets::Labels(labels(7, 3)))).unwrap();
    let r = gradcheck(&model, &batch, LossSpec::CrossEntropy, EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn mse_through_hidden_layer() {
    let model = ModelGraph::mlp(&[4, 6, 4], Activation::Relu, Activation::Identity, 6);
    let batch = Batch::new(random_matrix(5, 4, 7), Some(Targets::Dense(random_matrix(5, 4, 8)))).unwrap();
    let r = gradcheck(&model, &batch, LossSpec::Mse, EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn mask_bce() {
    let model = ModelGraph::mlp(&[4, 6, 4], Activation::Relu, Activation::Identity, 9);
    let mask = random_matrix(5, 4, 10).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let batch = Batch::new(random_matrix(5, 4, 11), Some(Targets::Dense(mask))).unwrap();
    let r = gradcheck(&model, &batch, LossSpec::MaskBce, EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn consistency() {
    let model = ModelGraph::mlp(&[4, 6, 3], Activation::Relu, Activation::Softmax, 12);
    let batch = Batch::new(random_matrix(9, 4, 13), None).unwrap();
    let r = gradcheck(&model, &batch, LossSpec::Consistency { copies: 3 }, EPS).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn supcon() {
    let model = ModelGraph::mlp(&[4, 6, 5], Activation::Relu, Activation::Identity, 14);
    let batch = Batch::new(random_matrix(8, 4, 15), Some(Targets::Labels(labels(8, 3)))).unwrap();
    for temperature in [0.1, 0.5, 1.0] {
        let r = gradcheck(&model, &batch, LossSpec::SupCon { temperature }, EPS).unwrap();
        assert!(r.max_rel_err < 1e-4, "temperature {temperature}: {r:?}");
    }
}

#[test]
fn input_gradient_matches_differences() {
    let model = ModelGraph::mlp(&[4, 6, 3], Activation::Relu, Activation::Softmax, 16);
    let x = random_matrix(5, 4, 17);
    let y = labels(5, 3);
    let value = |x: &Matrix| loss::cross_entropy(&model.predict(x).unwrap(), &y).unwrap().value;
    let fwd = model.forward(&x).unwrap();
    let l = loss::cross_entropy(fwd.output(), &y).unwrap();
    let (_, dx) = model.backward(&fwd, &l.grad, true).unwrap();
    let dx = dx.unwrap();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut p = x.clone();
            p.set(i, j, x.get(i, j) + EPS);
            let mut m = x.clone();
            m.set(i, j, x.get(i, j) - EPS);
            let numeric = (value(&p) - value(&m)) / (2.0 * EPS);
            let a = dx.get(i, j);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "({i},{j}): analytic {a} numeric {numeric}");
        }
    }
}
