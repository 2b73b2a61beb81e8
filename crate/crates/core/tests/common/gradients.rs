//! Seeded finite-difference sweeps over every primitive and the full pair
//! forward pass. Each returns `(label, worst relative error)` per case.

use rand::Rng;
use rdmnet_core::model::{BodyLayer, HeadSpec, PoolSpec};
use rdmnet_core::{grad_check, ConvSpec, Init, Model, ModelSpec, Result, Tape, Tensor, Var};

use super::{kink_free_tensor, rng, uniform_tensor};

pub const EPS: f64 = 1e-6;
pub const CASES: u64 = 20;

fn weights(seed: u64, len: usize) -> Vec<f64> {
    let mut r = rng(seed ^ 0xD07);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// `dot(f(x), w)` for fixed random `w`, so every output coordinate
/// contributes to the checked gradient.
fn projected<F>(seed: u64, out_len: usize, f: F) -> impl Fn(&mut Tape<f64>, Var) -> Result<Var>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let w = weights(seed, out_len);
    move |t, x| {
        let y = f(t, x)?;
        t.dot(y, &w)
    }
}

fn random_conv_spec(r: &mut impl Rng, groups: usize) -> (ConvSpec, [usize; 4]) {
    let k = r.random_range(1..=3);
    let spec = ConvSpec::new(
        groups * r.random_range(1..=2),
        groups * r.random_range(1..=2),
        k,
        r.random_range(1..=2),
        r.random_range(0..=1),
    )
    .with_groups(groups);
    let h = r.random_range(k..k + 4);
    let w = r.random_range(k..k + 4);
    (spec, [r.random_range(1..=2), spec.in_channels, h, w])
}

pub fn conv_cases(groups: usize) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for case in 0..CASES {
        let seed = 1000 * groups as u64 + case;
        let mut r = rng(seed);
        let (spec, xs) = random_conv_spec(&mut r, groups);
        let x = uniform_tensor(&mut r, &xs, -1.0, 1.0);
        let w = uniform_tensor(&mut r, &spec.weight_shape(), -1.0, 1.0);
        let b = uniform_tensor(&mut r, &[spec.out_channels], -1.0, 1.0);
        let (ho, wo) = spec.output_hw(xs[2], xs[3]).unwrap();
        let out_len = xs[0] * spec.out_channels * ho * wo;

        let (wc, bc) = (w.clone(), b.clone());
        let wrt_input = projected(seed, out_len, move |t, x| {
            let (w, b) = (t.leaf(wc.clone(), false), t.leaf(bc.clone(), false));
            t.conv2d(x, w, b, spec)
        });
        let (xc, bc) = (x.clone(), b.clone());
        let wrt_weight = projected(seed, out_len, move |t, w| {
            let (x, b) = (t.leaf(xc.clone(), false), t.leaf(bc.clone(), false));
            t.conv2d(x, w, b, spec)
        });
        let (xc, wc) = (x.clone(), w.clone());
        let wrt_bias = projected(seed, out_len, move |t, b| {
            let (x, w) = (t.leaf(xc.clone(), false), t.leaf(wc.clone(), false));
            t.conv2d(x, w, b, spec)
        });
        let worst = [
            grad_check(wrt_input, &x, EPS).unwrap(),
            grad_check(wrt_weight, &w, EPS).unwrap(),
            grad_check(wrt_bias, &b, EPS).unwrap(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        out.push((format!("conv groups={groups} case={case} {spec:?}"), worst));
    }
    out
}

pub fn relu_cases() -> Vec<(String, f64)> {
    (0..CASES)
        .map(|case| {
            let mut r = rng(2000 + case);
            let shape = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=5)];
            let x = kink_free_tensor(&mut r, &shape);
            let f = projected(2000 + case, x.len(), |t, x| Ok(t.relu(x)));
            (format!("relu case={case} {shape:?}"), grad_check(f, &x, EPS).unwrap())
        })
        .collect()
}

pub fn avg_pool_cases() -> Vec<(String, f64)> {
    (0..CASES)
        .map(|case| {
            let mut r = rng(3000 + case);
            let (k, s) = (r.random_range(1..=3), r.random_range(1..=3));
            let shape = [
                r.random_range(1..=2),
                r.random_range(1..=3),
                r.random_range(k..k + 5),
                r.random_range(k..k + 5),
            ];
            let x = uniform_tensor(&mut r, &shape, -1.0, 1.0);
            let out_len = shape[0] * shape[1] * ((shape[2] - k) / s + 1) * ((shape[3] - k) / s + 1);
            let f = projected(3000 + case, out_len, move |t, x| t.avg_pool2d(x, k, s));
            (format!("avg_pool case={case} k={k} s={s} {shape:?}"), grad_check(f, &x, EPS).unwrap())
        })
        .collect()
}

pub fn linear_cases() -> Vec<(String, f64)> {
    (0..CASES)
        .map(|case| {
            let seed = 4000 + case;
            let mut r = rng(seed);
            let (n, fi, fo) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=4));
            let x = uniform_tensor(&mut r, &[n, fi], -1.0, 1.0);
            let w = uniform_tensor(&mut r, &[fo, fi], -1.0, 1.0);
            let b = uniform_tensor(&mut r, &[fo], -1.0, 1.0);
            let (wc, bc) = (w.clone(), b.clone());
            let wrt_input = projected(seed, n * fo, move |t, x| {
                let (w, b) = (t.leaf(wc.clone(), false), t.leaf(bc.clone(), false));
                t.linear(x, w, b)
            });
            let (xc, bc) = (x.clone(), b.clone());
            let wrt_weight = projected(seed, n * fo, move |t, w| {
                let (x, b) = (t.leaf(xc.clone(), false), t.leaf(bc.clone(), false));
                t.linear(x, w, b)
            });
            let (xc, wc) = (x.clone(), w.clone());
            let wrt_bias = projected(seed, n * fo, move |t, b| {
                let (x, w) = (t.leaf(xc.clone(), false), t.leaf(wc.clone(), false));
                t.linear(x, w, b)
            });
            let worst = [
                grad_check(wrt_input, &x, EPS).unwrap(),
                grad_check(wrt_weight, &w, EPS).unwrap(),
                grad_check(wrt_bias, &b, EPS).unwrap(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            (format!("linear case={case} n={n} {fi}->{fo}"), worst)
        })
        .collect()
}

/// Small two-conv body with a two-group head; same layer kinds as the desk
/// model.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        input: [2, 8, 8],
        body: vec![
            BodyLayer::Conv(ConvSpec::new(2, 4, 3, 2, 1)),
            BodyLayer::Relu,
            BodyLayer::Conv(ConvSpec::new(4, 4, 3, 1, 1)),
        ],
        head: HeadSpec {
            group_conv: ConvSpec::new(8, 4, 3, 1, 1).with_groups(2),
            pool: PoolSpec { kernel: 2, stride: 2 },
            linear_in: 16,
            linear_out: 1,
        },
        interleave_groups: 2,
    }
}

/// Smallest `|pre-activation|` over every ReLU input of a tiny-spec pair
/// pass, recomputed layer by layer from the bound parameters.
fn min_relu_margin(model: &Model<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let spec = model.spec();
    let mut t = Tape::new();
    let bound = model.bind(&mut t, |_| false);
    let p = |n: &str| bound.var(n).unwrap();
    let conv = |c: &BodyLayer| match c {
        BodyLayer::Conv(c) => *c,
        _ => unreachable!(),
    };
    let mut margin = f64::INFINITY;
    let mut feats = Vec::new();
    for img in [a, b] {
        let x = t.leaf(img.clone(), false);
        let z = t.conv2d(x, p("body.0.weight"), p("body.0.bias"), conv(&spec.body[0])).unwrap();
        margin = t.value(z).data().iter().fold(margin, |m, v| m.min(v.abs()));
        let h = t.relu(z);
        feats.push(t.conv2d(h, p("body.2.weight"), p("body.2.bias"), conv(&spec.body[2])).unwrap());
    }
    let merged = t.interleave(feats[0], feats[1], spec.interleave_groups).unwrap();
    let z = t
        .conv2d(merged, p("head.group_conv.weight"), p("head.group_conv.bias"), spec.head.group_conv)
        .unwrap();
    t.value(z).data().iter().fold(margin, |m, v| m.min(v.abs()))
}

/// Seeds whose ReLU inputs all sit at least this far from zero; far beyond
/// what an `EPS` perturbation can move them.
pub const KINK_MARGIN: f64 = 1e-4;

/// Checks the pair forward pass against both images and every parameter.
/// Seeds whose activations pass within `KINK_MARGIN` of a ReLU kink are
/// skipped and the next seed is tried.
pub fn forward_pair_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut seed = 5000;
    while (out.len() as u64) < CASES {
        seed += 1;
        let mut r = rng(seed);
        let (mut model, _) = Model::<f64>::build(tiny_spec(), Init::Random { seed }).unwrap();
        for name in model.params().keys().cloned().collect::<Vec<_>>() {
            if name.ends_with(".bias") {
                let b = uniform_tensor(&mut r, model.param(&name).unwrap().shape(), -0.5, 0.5);
                *model.param_mut(&name).unwrap() = b;
            }
        }
        let a = uniform_tensor(&mut r, &[2, 2, 8, 8], -1.0, 1.0);
        let b = uniform_tensor(&mut r, &[2, 2, 8, 8], -1.0, 1.0);
        if min_relu_margin(&model, &a, &b) < KINK_MARGIN {
            continue;
        }
        let w = weights(seed, 2);

        let mut worst = 0.0f64;
        let (m, bc) = (&model, &b);
        let wrt_a = |t: &mut Tape<f64>, x: Var| {
            let bound = m.bind(t, |_| false);
            let y = t.leaf(bc.clone(), false);
            let p = m.forward_pair_on(t, &bound, x, y)?;
            t.dot(p, &w)
        };
        worst = worst.max(grad_check(wrt_a, &a, EPS).unwrap());
        let ac = &a;
        let wrt_b = |t: &mut Tape<f64>, y: Var| {
            let bound = m.bind(t, |_| false);
            let x = t.leaf(ac.clone(), false);
            let p = m.forward_pair_on(t, &bound, x, y)?;
            t.dot(p, &w)
        };
        worst = worst.max(grad_check(wrt_b, &b, EPS).unwrap());
        for (name, value) in model.params() {
            let wrt_param = |t: &mut Tape<f64>, v: Var| {
                let mut bound = m.bind(t, |_| false);
                bound.substitute(name, v)?;
                let x = t.leaf(ac.clone(), false);
                let y = t.leaf(bc.clone(), false);
                let p = m.forward_pair_on(t, &bound, x, y)?;
                t.dot(p, &w)
            };
            worst = worst.max(grad_check(wrt_param, value, EPS).unwrap());
        }
        out.push((format!("forward_pair seed={seed}"), worst));
    }
    out
}
