//! Image-pair datasets and seeded mini-batch order.
//!
//! # Shuffle algorithm
//!
//! The order of epoch `e` under run seed `s` is fixed as follows, so it can
//! be reproduced outside this crate:
//!
//! 1. `splitmix64(x)`: `z = x + 0x9E3779B97F4A7C15`;
//!    `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`;
//!    `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`; return `z ^ (z >> 31)`
//!    (wrapping arithmetic).
//! 2. Epoch seed `k = splitmix64(s ^ splitmix64(e))`.
//! 3. Generator: xoshiro256\*\* whose four state words are successive
//!    SplitMix64 outputs starting from state `k` (`seed_from_u64`).
//! 4. Fisher-Yates from the back: for `i = n-1 down to 1`,
//!    `j = (next_u64() as u128 * (i + 1)) >> 64`, swap `i` and `j`.
//!
//! Test vector: seed 0, epoch 0, `n = 10` gives
//! `[7, 4, 2, 9, 0, 1, 6, 3, 8, 5]` (see `shuffle_test_vector`).

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::rsa::Rdm;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub target: f64,
}

/// All `(i, j)` with `i < j` in ascending order, followed by every mirrored
/// `(j, i)` when `both_orders` is set.
pub fn make_pairs(n: usize, both_orders: bool) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 images, got {n}")));
    }
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    if both_orders {
        let mirrored: Vec<_> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        pairs.extend(mirrored);
    }
    Ok(pairs)
}

#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar = f32> {
    images: Vec<Tensor<T>>,
    target: Rdm,
    pairs: Vec<PairSample>,
}

impl<T: Scalar> Dataset<T> {
    /// `images` are `[C, H, W]` and index the rows of `target`.
    pub fn new(images: Vec<Tensor<T>>, target: Rdm, both_orders: bool) -> Result<Self> {
        if images.len() != target.n() {
            return Err(Error::InvalidArgument(format!(
                "{} images but the target rdm is {}x{1}",
                images.len(),
                target.n()
            )));
        }
        if let Some(bad) = images.iter().find(|t| t.shape() != images[0].shape() || t.ndim() != 3) {
            return Err(Error::shape(
                "dataset",
                format!("image shape {:?} vs {:?}", bad.shape(), images[0].shape()),
            ));
        }
        let pairs = make_pairs(images.len(), both_orders)?
            .into_iter()
            .map(|(i, j)| PairSample {
                i,
                j,
                target: target.get(i, j),
            })
            .collect();
        Ok(Self { images, target, pairs })
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    pub fn target(&self) -> &Rdm {
        &self.target
    }

    pub fn pairs(&self) -> &[PairSample] {
        &self.pairs
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    splitmix64(seed ^ splitmix64(epoch))
}

/// Seeded permutation of `0..n` for one epoch.
pub fn shuffled_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256StarStar::seed_from_u64(epoch_seed(seed, epoch));
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        order.swap(i, j);
    }
    order
}

/// Splits the (optionally shuffled) indices `0..n_pairs` into batches of
/// `batch_size`; the last batch may be short.
pub fn batch_iter(n_pairs: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let order = if shuffle {
        shuffled_order(n_pairs, seed, epoch)
    } else {
        (0..n_pairs).collect()
    };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
