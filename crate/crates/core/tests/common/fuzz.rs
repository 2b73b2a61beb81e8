//! Mutation fuzzing of the byte-level loaders.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_xoshiro::Xoshiro256StarStar;

use std::collections::BTreeMap;

use rdmnet_core::io::{encode_tensor, encode_weights, rdm_to_csv};
use rdmnet_core::{Init, Model, Tensor};

use super::gradients::tiny_spec;
use super::{random_rdm, rng};

#[derive(Debug, Default)]
pub struct FuzzOutcome {
    pub inputs: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub panics: Vec<Vec<u8>>,
    pub slowest: Duration,
}

/// One input: a mutated copy of a valid corpus entry, or raw noise.
fn mutate(r: &mut Xoshiro256StarStar, corpus: &[Vec<u8>]) -> Vec<u8> {
    if r.random_ratio(1, 8) {
        let len = r.random_range(0..64);
        return (0..len).map(|_| r.random()).collect();
    }
    let mut bytes = corpus[r.random_range(0..corpus.len())].clone();
    for _ in 0..r.random_range(1..=4) {
        match r.random_range(0..6) {
            0 if !bytes.is_empty() => {
                let i = r.random_range(0..bytes.len());
                bytes[i] ^= 1 << r.random_range(0..8);
            }
            1 if !bytes.is_empty() => {
                let i = r.random_range(0..bytes.len());
                bytes[i] = r.random();
            }
            2 => {
                let cut = r.random_range(0..=bytes.len());
                bytes.truncate(cut);
            }
            3 => {
                let i = r.random_range(0..=bytes.len());
                let extra: Vec<u8> = (0..r.random_range(1..8)).map(|_| r.random()).collect();
                bytes.splice(i..i, extra);
            }
            4 if bytes.len() >= 4 => {
                // Overwrite what may be a length field with an extreme value.
                let i = r.random_range(0..bytes.len() - 3);
                let v: u32 = [0, 1, u32::MAX, u32::MAX / 2, 1 << 31][r.random_range(0..5)];
                bytes[i..i + 4].copy_from_slice(&v.to_le_bytes());
            }
            _ => {
                if !bytes.is_empty() {
                    let i = r.random_range(0..bytes.len());
                    let j = r.random_range(i..bytes.len());
                    bytes.drain(i..=j);
                }
            }
        }
    }
    bytes
}

/// Feeds `count` inputs to `decode`, which reports acceptance. Panics are
/// caught and collected.
pub fn fuzz<F>(seed: u64, count: usize, corpus: &[Vec<u8>], decode: F) -> FuzzOutcome
where
    F: Fn(&[u8]) -> bool,
{
    let mut r = rng(seed);
    let mut out = FuzzOutcome::default();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..count {
        let input = mutate(&mut r, corpus);
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| decode(&input)));
        out.slowest = out.slowest.max(start.elapsed());
        out.inputs += 1;
        match result {
            Ok(true) => out.accepted += 1,
            Ok(false) => out.rejected += 1,
            Err(_) => out.panics.push(input),
        }
    }
    std::panic::set_hook(hook);
    out
}

/// Valid CSVs including ties and exponent notation.
pub fn rdm_corpus() -> Vec<Vec<u8>> {
    let mut r = rng(6);
    let mut corpus: Vec<Vec<u8>> = [2, 3, 5]
        .iter()
        .map(|&n| rdm_to_csv(&random_rdm(&mut r, n, Some(4))).into_bytes())
        .collect();
    corpus.push(b"0,1.5e-3\n1.5e-3,0\n".to_vec());
    corpus
}

pub fn tensor_corpus() -> Vec<Vec<u8>> {
    [vec![1], vec![3, 2], vec![2, 1, 2, 2]]
        .into_iter()
        .map(|shape: Vec<usize>| {
            let n = shape.iter().product();
            let mut out = Vec::new();
            encode_tensor(&Tensor::new(shape, (0..n).map(|i| i as f32 * 0.5).collect()).unwrap(), &mut out);
            out
        })
        .collect()
}

pub fn weights_corpus() -> Vec<Vec<u8>> {
    let (model, _) = Model::<f32>::build(tiny_spec(), Init::Random { seed: 0 }).unwrap();
    let mut small = BTreeMap::new();
    small.insert("body.0.bias".to_string(), Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap());
    vec![encode_weights(&model.to_f32_params()).unwrap(), encode_weights(&small).unwrap()]
}
