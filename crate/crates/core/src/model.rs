//! Siamese network: a weight-shared convolutional body applied to both
//! images, channel interleaving, and a grouped-convolution head that reduces
//! the pair to one scalar dissimilarity.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BodyLayer {
    Conv(ConvSpec),
    Relu,
    AvgPool(PoolSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub group_conv: ConvSpec,
    pub pool: PoolSpec,
    pub linear_in: usize,
    pub linear_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-image input shape `[channels, height, width]`.
    pub input: [usize; 3],
    pub body: Vec<BodyLayer>,
    pub head: HeadSpec,
    pub interleave_groups: usize,
}

pub const HEAD_CONV: &str = "head.group_conv";
pub const HEAD_LINEAR: &str = "head.linear";

impl ModelSpec {
    /// The CPU-sized network: a 3-conv body (3→32→64→256, 3×3, stride 2,
    /// pad 1, ReLU between) over 3×32×32 images, then the 512→32 16-group
    /// 3×3 head conv, 2×2 average pool and a 128→1 linear layer.
    pub fn desk() -> Self {
        let conv = |i, o| BodyLayer::Conv(ConvSpec::new(i, o, 3, 2, 1));
        Self {
            input: [3, 32, 32],
            body: vec![conv(3, 32), BodyLayer::Relu, conv(32, 64), BodyLayer::Relu, conv(64, 256)],
            head: HeadSpec {
                group_conv: ConvSpec::new(512, 32, 3, 1, 1).with_groups(16),
                pool: PoolSpec { kernel: 2, stride: 2 },
                linear_in: 128,
                linear_out: 1,
            },
            interleave_groups: 16,
        }
    }

    pub fn body_layer_id(index: usize) -> String {
        format!("body.{index}")
    }

    /// Ids of layers that own parameters, body first.
    pub fn param_layer_ids(&self) -> Vec<String> {
        let mut ids = self.body_conv_ids();
        ids.push(HEAD_CONV.to_string());
        ids.push(HEAD_LINEAR.to_string());
        ids
    }

    pub fn body_conv_ids(&self) -> Vec<String> {
        self.body
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, BodyLayer::Conv(_)))
            .map(|(i, _)| Self::body_layer_id(i))
            .collect()
    }

    /// Per-branch body output shape `[C, H, W]`.
    pub fn body_output(&self) -> Result<[usize; 3]> {
        let [mut c, mut h, mut w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!("input shape {:?}", self.input)));
        }
        for (i, layer) in self.body.iter().enumerate() {
            let id = Self::body_layer_id(i);
            match layer {
                BodyLayer::Conv(spec) => {
                    spec.validate().map_err(|e| e.in_layer(&id))?;
                    if spec.in_channels != c {
                        return Err(Error::InvalidSpec(format!(
                            "{id}: expects {} input channels, previous layer gives {c}",
                            spec.in_channels
                        )));
                    }
                    (h, w) = spec.output_hw(h, w).map_err(|e| e.in_layer(&id))?;
                    c = spec.out_channels;
                }
                BodyLayer::Relu => {}
                BodyLayer::AvgPool(p) => {
                    if p.kernel == 0 || p.stride == 0 || h < p.kernel || w < p.kernel {
                        return Err(Error::InvalidSpec(format!("{id}: pool {p:?} on {h}x{w}")));
                    }
                    h = (h - p.kernel) / p.stride + 1;
                    w = (w - p.kernel) / p.stride + 1;
                }
            }
        }
        Ok([c, h, w])
    }

    /// Checks every structural invariant and returns the shape after each
    /// stage, per branch for the body and per pair for the head.
    pub fn shape_chain(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let [c, h, w] = self.body_output()?;
        let head = &self.head;
        let mut chain = vec![
            ("input".to_string(), self.input.to_vec()),
            ("body".to_string(), vec![c, h, w]),
        ];
        if self.interleave_groups == 0 || c % self.interleave_groups != 0 {
            return Err(Error::InvalidSpec(format!(
                "{c} body channels not divisible by {} interleave groups",
                self.interleave_groups
            )));
        }
        if 2 * c != head.group_conv.in_channels {
            return Err(Error::InvalidSpec(format!(
                "head conv expects {} channels, two branches give {}",
                head.group_conv.in_channels,
                2 * c
            )));
        }
        chain.push(("interleave".to_string(), vec![2 * c, h, w]));
        head.group_conv.validate().map_err(|e| e.in_layer(HEAD_CONV))?;
        let (gh, gw) = head.group_conv.output_hw(h, w).map_err(|e| e.in_layer(HEAD_CONV))?;
        let gc = head.group_conv.out_channels;
        chain.push((HEAD_CONV.to_string(), vec![gc, gh, gw]));
        let p = head.pool;
        if p.kernel == 0 || p.stride == 0 || gh < p.kernel || gw < p.kernel {
            return Err(Error::InvalidSpec(format!("head pool {p:?} on {gh}x{gw}")));
        }
        let (ph, pw) = ((gh - p.kernel) / p.stride + 1, (gw - p.kernel) / p.stride + 1);
        chain.push(("head.pool".to_string(), vec![gc, ph, pw]));
        let flat = gc * ph * pw;
        if head.linear_in != flat {
            return Err(Error::InvalidSpec(format!(
                "linear_in is {} but pooled head flattens to {flat}",
                head.linear_in
            )));
        }
        if head.linear_out != 1 {
            return Err(Error::InvalidSpec(format!("linear_out must be 1, got {}", head.linear_out)));
        }
        chain.push((HEAD_LINEAR.to_string(), vec![1]));
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_chain().map(|_| ())
    }
}

/// How parameters are initialized by [`Model::build`].
#[derive(Clone, Debug)]
pub enum Init {
    Random { seed: u64 },
    /// Body parameters from a weight file; the head (and any body parameter
    /// the file lacks) drawn as in `Random`.
    Import { path: PathBuf, seed: u64 },
}

/// Which body parameters an import supplied.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub loaded: Vec<String>,
    pub missing: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    params: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

fn layer_of(param: &str) -> &str {
    param.rsplit_once('.').map_or(param, |(layer, _)| layer)
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: ModelSpec, init: Init) -> Result<(Self, ImportReport)> {
        spec.validate()?;
        let seed = match &init {
            Init::Random { seed } | Init::Import { seed, .. } => *seed,
        };
        let mut model = Self::random(spec, seed)?;
        let report = match init {
            Init::Random { .. } => ImportReport::default(),
            Init::Import { path, .. } => {
                let weights = io::load_weights(&path)?;
                let body: BTreeMap<_, _> = weights
                    .into_iter()
                    .filter(|(name, _)| name.starts_with("body."))
                    .collect();
                let mut report = model.load_params(&body, true)?;
                report.missing.retain(|name| name.starts_with("body."));
                report
            }
        };
        Ok((model, report))
    }

    /// Uniform(-b, b) weights with `b = sqrt(6 / fan_in)`, zero biases.
    fn random(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let mut add = |rng: &mut Xoshiro256StarStar, layer: &str, wshape: Vec<usize>, fan_in: usize, out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Tensor::from_fn(wshape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))?;
            params.insert(weight_name(layer), w);
            params.insert(bias_name(layer), Tensor::zeros(vec![out])?);
            Ok::<_, Error>(())
        };
        for (i, layer) in spec.body.iter().enumerate() {
            if let BodyLayer::Conv(c) = layer {
                add(&mut rng, &ModelSpec::body_layer_id(i), c.weight_shape().to_vec(), c.fan_in(), c.out_channels)?;
            }
        }
        let g = spec.head.group_conv;
        add(&mut rng, HEAD_CONV, g.weight_shape().to_vec(), g.fan_in(), g.out_channels)?;
        let h = spec.head;
        add(&mut rng, HEAD_LINEAR, vec![h.linear_out, h.linear_in], h.linear_in, h.linear_out)?;
        Ok(Self {
            spec,
            params,
            frozen: BTreeSet::new(),
        })
    }

    /// Overwrites parameters by name. With `partial`, names absent from
    /// `weights` keep their values and are listed as missing; without it,
    /// every parameter must be supplied. Unknown names and shape mismatches
    /// are errors either way.
    pub fn load_params(&mut self, weights: &BTreeMap<String, Tensor<f32>>, partial: bool) -> Result<ImportReport> {
        for (name, t) in weights {
            let Some(own) = self.params.get(name) else {
                return Err(Error::InvalidSpec(format!("weight `{name}` does not exist in this model")));
            };
            if own.shape() != t.shape() {
                return Err(Error::shape(
                    "load_params",
                    format!("`{name}` is {:?} in file, model expects {:?}", t.shape(), own.shape()),
                ));
            }
        }
        let missing: Vec<String> = self.params.keys().filter(|k| !weights.contains_key(*k)).cloned().collect();
        if !partial && !missing.is_empty() {
            return Err(Error::InvalidSpec(format!("weights missing: {}", missing.join(", "))));
        }
        for (name, t) in weights {
            self.params.insert(name.clone(), t.cast());
        }
        Ok(ImportReport {
            loaded: weights.keys().cloned().collect(),
            missing,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, layer: &str) -> bool {
        self.frozen.contains(layer)
    }

    /// Frozen layers still run forward and pass gradient through to earlier
    /// layers; only their own parameter updates are skipped.
    pub fn set_frozen<S: AsRef<str>>(&mut self, layers: &[S], frozen: bool) -> Result<()> {
        let known = self.spec.param_layer_ids();
        for l in layers {
            if !known.iter().any(|k| k == l.as_ref()) {
                return Err(Error::UnknownLayer(l.as_ref().to_string()));
            }
        }
        for l in layers {
            if frozen {
                self.frozen.insert(l.as_ref().to_string());
            } else {
                self.frozen.remove(l.as_ref());
            }
        }
        Ok(())
    }

    pub fn freeze_body(&mut self, frozen: bool) {
        let ids = self.spec.body_conv_ids();
        self.set_frozen(&ids, frozen).expect("body ids are known");
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            frozen: self.frozen.clone(),
        }
    }

    pub fn to_f32_params(&self) -> BTreeMap<String, Tensor<f32>> {
        self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    /// Records every parameter on `tape`. A parameter is tracked when its
    /// layer is not frozen and `track(layer_id)` holds.
    pub fn bind(&self, tape: &mut Tape<T>, track: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let layer = layer_of(name);
                let tracked = !self.frozen.contains(layer) && track(layer);
                (name.clone(), tape.leaf(t.clone(), tracked))
            })
            .collect();
        Bound { vars }
    }

    /// Body over an NCHW batch. Reads only `body.*` entries of `bound`.
    pub fn body_forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let [c, h, w] = self.spec.input;
        let shape = tape.value(x).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::shape(
                "body",
                format!("image batch {shape:?} does not match input [N, {c}, {h}, {w}]"),
            ));
        }
        let mut cur = x;
        for (i, layer) in self.spec.body.iter().enumerate() {
            let id = ModelSpec::body_layer_id(i);
            cur = match layer {
                BodyLayer::Conv(spec) => {
                    let (w, b) = bound.layer(&id)?;
                    tape.conv2d(cur, w, b, *spec).map_err(|e| e.in_layer(&id))?
                }
                BodyLayer::Relu => tape.relu(cur),
                BodyLayer::AvgPool(p) => tape.avg_pool2d(cur, p.kernel, p.stride).map_err(|e| e.in_layer(&id))?,
            };
        }
        Ok(cur)
    }

    /// Head over two branch feature maps; returns predictions shaped `[N]`.
    pub fn head_forward(&self, tape: &mut Tape<T>, bound: &Bound, feat_a: Var, feat_b: Var) -> Result<Var> {
        let head = &self.spec.head;
        let merged = tape
            .interleave(feat_a, feat_b, self.spec.interleave_groups)
            .map_err(|e| e.in_layer("head.interleave"))?;
        let (w, b) = bound.layer(HEAD_CONV)?;
        let y = tape.conv2d(merged, w, b, head.group_conv).map_err(|e| e.in_layer(HEAD_CONV))?;
        let y = tape.relu(y);
        let y = tape
            .avg_pool2d(y, head.pool.kernel, head.pool.stride)
            .map_err(|e| e.in_layer("head.pool"))?;
        let y = tape.flatten(y)?;
        let (w, b) = bound.layer(HEAD_LINEAR)?;
        let y = tape.linear(y, w, b).map_err(|e| e.in_layer(HEAD_LINEAR))?;
        let n = tape.value(y).shape()[0];
        tape.reshape(y, vec![n])
    }

    /// Both branches through the shared body, then the head.
    pub fn forward_pair_on(&self, tape: &mut Tape<T>, bound: &Bound, a: Var, b: Var) -> Result<Var> {
        let fa = self.body_forward(tape, bound, a)?;
        let fb = self.body_forward(tape, bound, b)?;
        self.head_forward(tape, bound, fa, fb)
    }

    /// Inference on one image pair (`[C, H, W]`) or a batch (`[N, C, H, W]`).
    pub fn forward_pair(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let a = tape.leaf(as_batch(a)?, false);
        let b = tape.leaf(as_batch(b)?, false);
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::shape("forward_pair", "image batches differ in shape"));
        }
        let out = self.forward_pair_on(&mut tape, &bound, a, b)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Body features for a batch of images, without gradient tracking.
    pub fn embed(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |l| l.starts_with("body."));
        let x = tape.leaf(as_batch(images)?, false);
        let f = self.body_forward(&mut tape, &bound, x)?;
        Ok(tape.value(f).clone())
    }

    /// Head predictions for rows of precomputed body features.
    pub fn head_on_features(&self, features: &Tensor<T>, idx_a: &[usize], idx_b: &[usize]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, |_| false);
        let f = tape.leaf(features.clone(), false);
        let fa = tape.gather_rows(f, idx_a)?;
        let fb = tape.gather_rows(f, idx_b)?;
        let out = self.head_forward(&mut tape, &bound, fa, fb)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Moves tape gradients into the `grad` field of every tracked parameter
    /// and clears the rest.
    pub fn assign_grads(&mut self, bound: &Bound, grads: &mut Gradients<T>) {
        for (name, param) in self.params.iter_mut() {
            param.grad = bound.vars.get(name).and_then(|&v| grads.take(v));
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.zero_grad();
        }
    }
}

/// Promotes a single `[C, H, W]` image to a batch of one.
pub fn as_batch<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.ndim() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(s)
        }
        4 => Ok(t.clone()),
        _ => Err(Error::shape("image", format!("expected CHW or NCHW, got {:?}", t.shape()))),
    }
}

/// Parameter handles recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Replaces the handle recorded for parameter `name`, e.g. to feed a
    /// perturbed copy through the same forward pass.
    pub fn substitute(&mut self, name: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::UnknownLayer(name.to_string())),
        }
    }

    fn layer(&self, layer: &str) -> Result<(Var, Var)> {
        match (self.vars.get(&weight_name(layer)), self.vars.get(&bias_name(layer))) {
            (Some(&w), Some(&b)) => Ok((w, b)),
            _ => Err(Error::UnknownLayer(layer.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
