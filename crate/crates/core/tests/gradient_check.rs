//! Analytic input gradients against central finite differences of an
//! independent double-precision forward pass.

use maestro_core::data::gen_synthetic;
use maestro_core::model::{ModelParams, ModelSpec};
use maestro_core::rng::SplitMix64;
use maestro_core::Tensor;

const H: f64 = 1e-3;

/// Mean cross-entropy of a `flatten → dense → relu → dense` model, in `f64`.
fn loss_f64(params: &ModelParams, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let (w1, b1, w2, b2) = (&params.weights[0], &params.weights[1], &params.weights[2], &params.weights[3]);
    let (d, hidden, classes) = (w1.shape()[0], w1.shape()[1], w2.shape()[1]);
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let mut h = vec![0.0f64; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = b1.data()[j] as f64;
            for (i, &xi) in row.iter().enumerate().take(d) {
                acc += xi * w1.data()[i * hidden + j] as f64;
            }
            *hj = acc.max(0.0);
        }
        let logits: Vec<f64> = (0..classes)
            .map(|k| b2.data()[k] as f64 + (0..hidden).map(|j| h[j] * w2.data()[j * classes + k] as f64).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += log_z - logits[label];
    }
    total / x.len() as f64
}

fn random_model(dims: [usize; 3], hidden: usize, classes: usize, seed: u64) -> ModelParams {
    let spec = ModelSpec::mlp(dims, &[hidden], classes);
    let mut params = ModelParams::init(&spec, seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xb1a5);
    for i in [1, 3] {
        let t = &params.weights[i];
        let data = t.data().iter().map(|_| rng.uniform(-0.1, 0.1)).collect();
        params.weights[i] = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    params
}

#[test]
fn input_gradient_matches_finite_differences() {
    let dims = [12, 12, 1];
    let params = random_model(dims, 32, 10, 11);
    let data = gen_synthetic(5, 4, 10, dims).unwrap();
    let (_, grad) = params.loss_and_input_gradient(&data.images, &data.labels).unwrap();

    let base: Vec<Vec<f64>> = data.images.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let width = data.images.row_len();
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, c) = (rng.below(base.len()), rng.below(width));
        let mut plus = base.clone();
        plus[r][c] += H;
        let mut minus = base.clone();
        minus[r][c] -= H;
        let numeric = (loss_f64(&params, &plus, &data.labels) - loss_f64(&params, &minus, &data.labels)) / (2.0 * H);
        let analytic = grad.data()[r * width + c] as f64;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:e}");
    assert!(worst < 1e-3, "max relative error {worst:e}");
}

#[test]
fn double_precision_loss_agrees_with_model() {
    let dims = [12, 12, 1];
    let params = random_model(dims, 32, 10, 3);
    let data = gen_synthetic(6, 8, 10, dims).unwrap();
    let (loss, _) = params.loss_and_input_gradient(&data.images, &data.labels).unwrap();
    let base: Vec<Vec<f64>> = data.images.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    assert!((loss - loss_f64(&params, &base, &data.labels)).abs() < 1e-5);
}
