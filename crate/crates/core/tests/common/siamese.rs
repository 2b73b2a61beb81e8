//! Weight-sharing check: the gradient of a shared body equals the sum of
//! the gradients each branch would produce alone.

use rdmnet_core::{Init, Model, ModelSpec, Tape, Tensor};

use super::{rng, uniform_tensor};

/// Body-parameter gradient of `dot(forward_pair(a, b), w)` with the body
/// tracked in branch A only, branch B only, or both.
fn body_grads(model: &Model<f32>, a: &Tensor<f32>, b: &Tensor<f32>, w: &[f32], track_a: bool, track_b: bool) -> Vec<Vec<f32>> {
    let mut t = Tape::new();
    let tracked = model.bind(&mut t, |_| true);
    let constant = model.bind(&mut t, |_| false);
    let xa = t.leaf(a.clone(), false);
    let xb = t.leaf(b.clone(), false);
    let fa = model.body_forward(&mut t, if track_a { &tracked } else { &constant }, xa).unwrap();
    let fb = model.body_forward(&mut t, if track_b { &tracked } else { &constant }, xb).unwrap();
    let pred = model.head_forward(&mut t, &constant, fa, fb).unwrap();
    let loss = t.dot(pred, w).unwrap();
    let grads = t.backward(loss).unwrap();
    tracked
        .iter()
        .filter(|(name, _)| name.starts_with("body."))
        .map(|(_, v)| grads.get(v).expect("body gradient").to_vec())
        .collect()
}

/// Largest `|shared - (only_a + only_b)|` relative to the largest shared
/// gradient magnitude, on the desk model.
pub fn desk_sharing_error() -> f64 {
    let mut r = rng(31);
    let (model, _) = Model::<f32>::build(ModelSpec::desk(), Init::Random { seed: 31 }).unwrap();
    let a = uniform_tensor(&mut r, &[2, 3, 32, 32], 0.0, 1.0).cast::<f32>();
    let b = uniform_tensor(&mut r, &[2, 3, 32, 32], 0.0, 1.0).cast::<f32>();
    let w = [0.7f32, -1.3];
    let shared = body_grads(&model, &a, &b, &w, true, true);
    let only_a = body_grads(&model, &a, &b, &w, true, false);
    let only_b = body_grads(&model, &a, &b, &w, false, true);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for ((s, ga), gb) in shared.iter().zip(&only_a).zip(&only_b) {
        for ((&s, &x), &y) in s.iter().zip(ga).zip(gb) {
            worst = worst.max((s as f64 - (x as f64 + y as f64)).abs());
            scale = scale.max((s as f64).abs());
        }
    }
    assert!(scale > 0.0, "body gradients vanished");
    worst / scale
}
