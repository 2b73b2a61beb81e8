//! Seeded synthetic recovery task: images are a fixed random linear
//! embedding of low-dimensional latent codes, and the target RDM is the
//! normalized Euclidean distance between the codes.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::Result;
use crate::rsa::{normalize_rdm, Rdm};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_heldout: usize,
    pub latent_dim: usize,
    pub image_shape: [usize; 3],
    /// Pixel standard deviation around 0.5.
    pub pixel_scale: f64,
    /// Independent per-pixel noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 24,
            n_heldout: 12,
            latent_dim: 8,
            image_shape: [3, 32, 32],
            pixel_scale: 0.15,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub train_images: Vec<Tensor<f32>>,
    pub heldout_images: Vec<Tensor<f32>>,
    pub train_latents: Vec<Vec<f64>>,
    pub heldout_latents: Vec<Vec<f64>>,
    /// Min-max normalized latent distances over the training images.
    pub train_rdm: Rdm,
    pub heldout_rdm: Rdm,
}

/// Raw (unnormalized) Euclidean distance matrix between code vectors.
pub fn latent_distance_rdm(codes: &[Vec<f64>]) -> Result<Rdm> {
    let n = codes.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = codes[i]
                    .iter()
                    .zip(&codes[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            }
        }
    }
    Rdm::new(n, d)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticSet> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let pixels: usize = cfg.image_shape.iter().product();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let col_scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let embedding: Vec<f64> = (0..pixels * cfg.latent_dim).map(|_| normal() * col_scale).collect();
    let total = cfg.n_train + cfg.n_heldout;
    let codes: Vec<Vec<f64>> = (0..total).map(|_| (0..cfg.latent_dim).map(|_| normal()).collect()).collect();

    let mut images = Vec::with_capacity(total);
    for z in &codes {
        let mut data = Vec::with_capacity(pixels);
        for p in 0..pixels {
            let row = &embedding[p * cfg.latent_dim..(p + 1) * cfg.latent_dim];
            let v: f64 = row.iter().zip(z).map(|(e, c)| e * c).sum();
            let noise = if cfg.noise > 0.0 { cfg.noise * normal() } else { 0.0 };
            data.push((0.5 + cfg.pixel_scale * v + noise) as f32);
        }
        images.push(Tensor::new(cfg.image_shape.to_vec(), data)?);
    }

    let heldout_images = images.split_off(cfg.n_train);
    let mut train_latents = codes;
    let heldout_latents = train_latents.split_off(cfg.n_train);
    let train_rdm = normalize_rdm(&latent_distance_rdm(&train_latents)?)?;
    let heldout_rdm = normalize_rdm(&latent_distance_rdm(&heldout_latents)?)?;
    Ok(SyntheticSet {
        train_images: images,
        heldout_images,
        train_latents,
        heldout_latents,
        train_rdm,
        heldout_rdm,
    })
}
