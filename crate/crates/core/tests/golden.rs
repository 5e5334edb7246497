use maestro_core::model::{ModelParams, ModelSpec};
use maestro_core::Tensor;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    seed: u64,
    input_dims: [usize; 3],
    hidden: usize,
    num_classes: usize,
    inputs: Vec<Vec<f32>>,
    first_weights: Vec<f32>,
    logits: Vec<Vec<f64>>,
}

fn golden() -> Golden {
    serde_json::from_str(include_str!("fixtures/golden_mlp.json")).unwrap()
}

#[test]
fn initialization_matches_independent_generator() {
    let g = golden();
    let spec = ModelSpec::mlp(g.input_dims, &[g.hidden], g.num_classes);
    let params = ModelParams::init(&spec, g.seed).unwrap();
    assert_eq!(&params.weights[0].data()[..4], g.first_weights.as_slice());
}

#[test]
fn forward_matches_golden_logits() {
    let g = golden();
    let spec = ModelSpec::mlp(g.input_dims, &[g.hidden], g.num_classes);
    let params = ModelParams::init(&spec, g.seed).unwrap();
    let logits = params.forward(&Tensor::from_rows(&g.inputs).unwrap()).unwrap();
    for (got, want) in logits.iter_rows().zip(&g.logits) {
        for (a, b) in got.iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
