//! Independent reference implementations used as test oracles. They follow
//! the textbook definitions directly and share no code with the library.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod fuzz;
pub mod gradients;
pub mod siamese;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rdmnet_core::{ConvSpec, Rdm, Tensor, UpperTriangle};

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn uniform_tensor(rng: &mut Xoshiro256StarStar, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of reach of a
/// finite-difference step.
pub fn kink_free_tensor(rng: &mut Xoshiro256StarStar, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
    .unwrap()
}

/// Direct evaluation of the grouped convolution sum, one output at a time.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let [n, _, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride as isize, spec.padding as isize);
    let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - kw) / spec.stride + 1;
    let cig = spec.in_channels / spec.groups;
    let cog = spec.out_channels / spec.groups;
    let xs = |ni: usize, c: usize, yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((ni * spec.in_channels + c) * h + yy as usize) * wd + xx as usize]
        }
    };
    let mut out = Vec::with_capacity(n * spec.out_channels * ho * wo);
    for ni in 0..n {
        for oc in 0..spec.out_channels {
            let g = oc / cog;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[oc];
                    for ci in 0..cig {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = w.data()[((oc * cig + ci) * kh + ky) * kw + kx];
                                let yy = oy as isize * s - p + ky as isize;
                                let xx = ox as isize * s - p + kx as isize;
                                acc += wv * xs(ni, g * cig + ci, yy, xx);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![n, spec.out_channels, ho, wo], out).unwrap()
}

/// Expands grouped weights into a dense `[out, in, kh, kw]` kernel that is
/// zero outside the diagonal blocks.
pub fn block_diagonal(w: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let cig = spec.in_channels / spec.groups;
    let cog = spec.out_channels / spec.groups;
    let k = spec.kernel_h * spec.kernel_w;
    let mut dense = vec![0.0; spec.out_channels * spec.in_channels * k];
    for oc in 0..spec.out_channels {
        let g = oc / cog;
        for ci in 0..cig {
            for t in 0..k {
                dense[(oc * spec.in_channels + g * cig + ci) * k + t] = w.data()[(oc * cig + ci) * k + t];
            }
        }
    }
    Tensor::new(vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w], dense).unwrap()
}

/// Rank of each value: 1 + number strictly below + half the other ties.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn textbook_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn triu(r: &Rdm) -> Vec<f64> {
    let n = r.n();
    let mut v = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if j > i {
                v.push(r.get(i, j));
            }
        }
    }
    v
}

pub fn brute_spearman(a: &Rdm, b: &Rdm) -> f64 {
    textbook_pearson(&brute_ranks(&triu(a)), &brute_ranks(&triu(b)))
}

pub fn brute_noise_ceiling_lower(subjects: &[Rdm]) -> f64 {
    let n = subjects[0].n();
    let mut total = 0.0;
    for s in 0..subjects.len() {
        let mut rows = vec![vec![0.0; n]; n];
        for (k, other) in subjects.iter().enumerate() {
            if k == s {
                continue;
            }
            for (i, row) in rows.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    *cell += other.get(i, j) / (subjects.len() - 1) as f64;
                }
            }
        }
        total += brute_spearman(&subjects[s], &Rdm::from_rows(&rows).unwrap());
    }
    total / subjects.len() as f64
}

/// Grouped conv spec with groups in {1, 2, 4, 8, 16} and an input shape
/// it accepts.
pub fn random_grouped_spec(r: &mut impl Rng) -> (ConvSpec, [usize; 4]) {
    let groups = [1, 2, 4, 8, 16][r.random_range(0..5)];
    let k = r.random_range(1..=4);
    let spec = ConvSpec::new(
        groups * r.random_range(1..=3),
        groups * r.random_range(1..=3),
        k,
        r.random_range(1..=3),
        r.random_range(0..=2),
    )
    .with_groups(groups);
    let h = r.random_range(k..k + 6);
    let w = r.random_range(k..k + 6);
    (spec, [r.random_range(1..=3), spec.in_channels, h, w])
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Symmetric random RDM whose entries come from `levels` distinct values
/// when `levels` is set, which forces ties.
pub fn random_rdm(rng: &mut Xoshiro256StarStar, n: usize, levels: Option<u32>) -> Rdm {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = match levels {
                Some(l) => rng.random_range(0..l) as f64 / l as f64,
                None => rng.random_range(0.0..1.0),
            };
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    Rdm::from_rows(&rows).unwrap()
}

/// Shared structure plus independent per-subject noise.
pub fn subject_fixture(seed: u64, n: usize, subjects: usize, noise: f64) -> Vec<Rdm> {
    let mut r = rng(seed);
    let signal = random_rdm(&mut r, n, None);
    (0..subjects)
        .map(|_| {
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = (signal.get(i, j) + noise * r.random_range(-1.0..1.0)).abs();
                    rows[i][j] = v;
                    rows[j][i] = v;
                }
            }
            Rdm::from_rows(&rows).unwrap()
        })
        .collect()
}

/// Two random layer RDMs and the target `2·l1 + 3·l2`.
pub fn planted_instance(n: usize, seed: u64) -> (Rdm, Rdm, Rdm) {
    let mut r = rng(seed);
    let l1 = random_rdm(&mut r, n, None);
    let l2 = random_rdm(&mut r, n, None);
    let combined: Vec<f64> = l1
        .upper_triangle()
        .values()
        .iter()
        .zip(l2.upper_triangle().values())
        .map(|(a, b)| 2.0 * a + 3.0 * b)
        .collect();
    let target = UpperTriangle::new(n, combined).unwrap().to_rdm().unwrap();
    (l1, l2, target)
}
