//! Patch-sampling hinge-loss trainer for the feature network.
//!
//! Each iteration draws a batch of patch triples (anchor from the left
//! image, true match and a nearby miss from the right image), scores both
//! right patches against the anchor by cosine similarity of the center
//! feature vectors, and minimizes `max(0, margin + s_neg - s_pos)` with
//! Adam. Sampling, initialization, and updates are fully determined by the
//! configured seed.

use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::matcher::DisparityMap;
use crate::network::{extract_center_features, NetworkConfig, NetworkWeights};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{cosine_from_sums, PadMode, Tensor};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Attempt budget for drawing one valid patch triple.
const SAMPLE_ATTEMPTS: u32 = 1000;

/// All training knobs. `Default` gives the production settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub margin: f32,
    /// Side length of the square patches; odd so a center pixel exists.
    pub patch_size: usize,
    /// Smallest magnitude of the negative sample's horizontal offset.
    pub neg_offset_min: i64,
    /// Largest magnitude of the negative sample's horizontal offset.
    pub neg_offset_max: i64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iterations: 1000,
            batch_size: 800,
            learning_rate: 6e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            margin: 0.2,
            patch_size: 11,
            neg_offset_min: 2,
            neg_offset_max: 6,
            seed: 0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "patch_size must be odd and at least 3, got {}",
                self.patch_size
            )));
        }
        if self.neg_offset_min < 1 || self.neg_offset_min > self.neg_offset_max {
            return Err(Error::Config(format!(
                "negative offset range {}..={} is empty or touches zero",
                self.neg_offset_min, self.neg_offset_max
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be non-negative, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// One rectified stereo pair with left-reference ground truth.
pub struct TrainingPair {
    left: GrayImage,
    right: GrayImage,
    ground_truth: DisparityMap,
}

impl TrainingPair {
    pub fn new(left: GrayImage, right: GrayImage, ground_truth: DisparityMap) -> Result<TrainingPair> {
        if left.width() != right.width()
            || left.height() != right.height()
            || left.width() != ground_truth.width()
            || left.height() != ground_truth.height()
        {
            return Err(Error::Shape(format!(
                "pair sizes disagree: left {}×{}, right {}×{}, ground truth {}×{}",
                left.width(),
                left.height(),
                right.width(),
                right.height(),
                ground_truth.width(),
                ground_truth.height()
            )));
        }
        Ok(TrainingPair {
            left,
            right,
            ground_truth,
        })
    }

    pub fn left(&self) -> &GrayImage {
        &self.left
    }

    pub fn right(&self) -> &GrayImage {
        &self.right
    }

    pub fn ground_truth(&self) -> &DisparityMap {
        &self.ground_truth
    }
}

/// Training pairs plus their standardized tensors; patches are cut from the
/// standardized planes, so each image is normalized exactly once.
pub struct TrainingSet {
    pairs: Vec<TrainingPair>,
    standardized: Vec<(Tensor, Tensor)>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Result<TrainingSet> {
        if pairs.is_empty() {
            return Err(Error::Config("training set has no pairs".into()));
        }
        let standardized = pairs
            .iter()
            .map(|p| {
                (
                    p.left.to_standardized_tensor(),
                    p.right.to_standardized_tensor(),
                )
            })
            .collect();
        Ok(TrainingSet {
            pairs,
            standardized,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }
}

/// One patch triple with the draw that produced it, for auditing.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub pair_index: usize,
    /// Anchor center in the left image.
    pub x: usize,
    pub y: usize,
    /// Ground-truth disparity rounded to the nearest integer.
    pub disparity: usize,
    /// Signed horizontal offset of the negative patch from the true match.
    pub neg_offset: i64,
    pub anchor: Vec<f32>,
    pub positive: Vec<f32>,
    pub negative: Vec<f32>,
}

fn copy_patch(plane: &Tensor, cx: usize, cy: usize, patch: usize) -> Vec<f32> {
    let (_, _, h, w) = plane.dims4().expect("standardized plane is 4d");
    debug_assert!(h > 0 && w > 0);
    let half = patch / 2;
    let mut out = Vec::with_capacity(patch * patch);
    for y in cy - half..=cy + half {
        let row = &plane.data()[y * w..(y + 1) * w];
        out.extend_from_slice(&row[cx - half..cx - half + patch]);
    }
    out
}

/// Draws one patch triple, retrying rejected positions up to a fixed budget.
///
/// Per attempt the draws are, in order: pair index, anchor row, anchor
/// column, offset sign (even chance each way), offset magnitude. An attempt
/// is rejected when the ground truth is invalid at the anchor or any of the
/// three patch windows leaves its image.
pub fn sample_training_example(
    set: &TrainingSet,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    let patch = config.patch_size;
    let half = (patch / 2) as i64;
    for _ in 0..SAMPLE_ATTEMPTS {
        let pair_index = rng.random_range(0..set.pairs.len());
        let pair = &set.pairs[pair_index];
        let (w, h) = (pair.left.width() as i64, pair.left.height() as i64);
        if w < patch as i64 || h < patch as i64 {
            continue;
        }
        let y = rng.random_range(half..h - half);
        let x = rng.random_range(half..w - half);
        let sign = if rng.random_range(0..2u32) == 1 { 1 } else { -1 };
        let magnitude = rng.random_range(config.neg_offset_min..=config.neg_offset_max);
        let offset = sign * magnitude;

        if !pair.ground_truth.is_valid(x as usize, y as usize) {
            continue;
        }
        let d = pair.ground_truth.get(x as usize, y as usize).round() as i64;
        let pos_x = x - d;
        let neg_x = pos_x + offset;
        if d < 0 || pos_x < half || pos_x >= w - half || neg_x < half || neg_x >= w - half {
            continue;
        }

        let (left_std, right_std) = &set.standardized[pair_index];
        return Ok(TrainingSample {
            pair_index,
            x: x as usize,
            y: y as usize,
            disparity: d as usize,
            neg_offset: offset,
            anchor: copy_patch(left_std, x as usize, y as usize, patch),
            positive: copy_patch(right_std, pos_x as usize, y as usize, patch),
            negative: copy_patch(right_std, neg_x as usize, y as usize, patch),
        });
    }
    Err(Error::SamplingExhausted {
        attempts: SAMPLE_ATTEMPTS,
        detail: format!(
            "no anchor with valid ground truth and in-bounds {patch}×{patch} windows"
        ),
    })
}

/// A sampled batch as three stacked `[B, 1, patch, patch]` tensors.
pub struct TrainingBatch {
    pub anchors: Tensor,
    pub positives: Tensor,
    pub negatives: Tensor,
    pub samples: Vec<TrainingSample>,
}

fn stack_patches(samples: &[TrainingSample], patch: usize, pick: fn(&TrainingSample) -> &[f32]) -> Tensor {
    let area = patch * patch;
    let mut data = Vec::with_capacity(samples.len() * area);
    for s in samples {
        data.extend_from_slice(pick(s));
    }
    Tensor::new(&[samples.len(), 1, patch, patch], data).expect("patch sizes are uniform")
}

/// Independent per-sample stream seed so a rejected draw for one sample
/// never shifts the randomness of any other sample.
fn stream_seed(seed: u64, iteration: u64, index: u64) -> u64 {
    let mut z = seed
        ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scores one sample without touching the autodiff graph. Returns
/// `(s_pos, s_neg)`, the cosine similarities of the center feature vectors.
pub fn forward_sample(
    sample: &TrainingSample,
    patch: usize,
    weights: &NetworkWeights,
) -> Result<(f32, f32)> {
    let shape = [1usize, 1, patch, patch];
    let anchor = extract_center_features(&Tensor::new(&shape, sample.anchor.clone())?, weights)?;
    let positive =
        extract_center_features(&Tensor::new(&shape, sample.positive.clone())?, weights)?;
    let negative =
        extract_center_features(&Tensor::new(&shape, sample.negative.clone())?, weights)?;
    let score = |a: &Tensor, b: &Tensor| {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            dot += *x as f64 * *y as f64;
            na += *x as f64 * *x as f64;
            nb += *y as f64 * *y as f64;
        }
        cosine_from_sums(dot, na, nb)
    };
    Ok((score(&anchor, &positive), score(&anchor, &negative)))
}

/// Adam moment buffers, one slot per parameter tensor.
struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl AdamState {
    fn new(weights: &NetworkWeights) -> AdamState {
        let sizes: Vec<usize> = weights
            .layers()
            .iter()
            .flat_map(|l| [l.kernel().len(), l.bias().len()])
            .collect();
        AdamState {
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
        }
    }
}

fn adam_update_slice(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    c1: f32,
    c2: f32,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

/// Incremental trainer: owns the weights and optimizer state so callers can
/// drive individual steps (for probes) or use [`train`] for the full loop.
pub struct Trainer {
    weights: NetworkWeights,
    adam: AdamState,
    config: TrainConfig,
    steps_taken: usize,
}

impl Trainer {
    pub fn new(network: NetworkConfig, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let weights = NetworkWeights::init(network, config.seed)?;
        let adam = AdamState::new(&weights);
        Ok(Trainer {
            weights,
            adam,
            config,
            steps_taken: 0,
        })
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn into_weights(self) -> NetworkWeights {
        self.weights
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Draws the batch for the given iteration. Deterministic in
    /// `(seed, iteration, sample index)` regardless of rejected attempts.
    pub fn sample_batch(&self, set: &TrainingSet, iteration: u64) -> Result<TrainingBatch> {
        let mut samples = Vec::with_capacity(self.config.batch_size);
        for i in 0..self.config.batch_size {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                self.config.seed,
                iteration,
                i as u64,
            ));
            samples.push(sample_training_example(set, &self.config, &mut rng)?);
        }
        let patch = self.config.patch_size;
        Ok(TrainingBatch {
            anchors: stack_patches(&samples, patch, |s| &s.anchor),
            positives: stack_patches(&samples, patch, |s| &s.positive),
            negatives: stack_patches(&samples, patch, |s| &s.negative),
            samples,
        })
    }

    /// One forward/backward pass and Adam update on the given batch.
    /// Returns the batch loss.
    pub fn step(&mut self, batch: &TrainingBatch) -> Result<f32> {
        let (mut graph, params, s_pos, s_neg) = batch_score_graph(&self.weights, batch)?;
        let scores_poisoned = graph
            .value(s_pos)?
            .data()
            .iter()
            .chain(graph.value(s_neg)?.data())
            .any(|s| !s.is_finite());
        if scores_poisoned {
            return Err(Error::TrainingAborted {
                iteration: self.steps_taken,
                detail: "batch produced non-finite similarity scores".into(),
            });
        }
        let hinge = graph.hinge(s_pos, s_neg, self.config.margin)?;
        let loss_node = graph.mean_all(hinge)?;
        let loss = graph.value(loss_node)?.data()[0];
        if !loss.is_finite() {
            return Err(Error::TrainingAborted {
                iteration: self.steps_taken,
                detail: format!("batch loss is {loss}"),
            });
        }
        graph.backward(loss_node)?;

        let grads: Vec<(Vec<f32>, Vec<f32>)> = params
            .iter()
            .map(|(k, b)| -> Result<_> {
                Ok((graph.grad(*k)?.to_vec(), graph.grad(*b)?.to_vec()))
            })
            .collect::<Result<_>>()?;

        self.adam.step += 1;
        let c1 = (1.0 - (self.config.beta1 as f64).powi(self.adam.step as i32)) as f32;
        let c2 = (1.0 - (self.config.beta2 as f64).powi(self.adam.step as i32)) as f32;
        for (idx, layer) in self.weights.layers_mut().iter_mut().enumerate() {
            adam_update_slice(
                layer.kernel_mut().data_mut(),
                &grads[idx].0,
                &mut self.adam.m[2 * idx],
                &mut self.adam.v[2 * idx],
                c1,
                c2,
                &self.config,
            );
            adam_update_slice(
                layer.bias_mut().data_mut(),
                &grads[idx].1,
                &mut self.adam.m[2 * idx + 1],
                &mut self.adam.v[2 * idx + 1],
                c1,
                c2,
                &self.config,
            );
        }
        self.steps_taken += 1;
        Ok(loss)
    }
}

/// Builds the shared-weight scoring graph for a batch: three feature chains
/// over the same parameter leaves, reduced to per-sample cosine scores.
/// Returns the graph, the `(kernel, bias)` leaf ids per layer, and the
/// `s_pos` / `s_neg` node ids.
fn batch_score_graph(
    weights: &NetworkWeights,
    batch: &TrainingBatch,
) -> Result<(Graph, Vec<(NodeId, NodeId)>, NodeId, NodeId)> {
    let mut graph = Graph::new();
    let params: Vec<(NodeId, NodeId)> = weights
        .layers()
        .iter()
        .map(|l| {
            (
                graph.leaf(l.kernel().clone()),
                graph.leaf(l.bias().clone()),
            )
        })
        .collect();
    let anchors = graph.leaf(batch.anchors.clone());
    let positives = graph.leaf(batch.positives.clone());
    let negatives = graph.leaf(batch.negatives.clone());

    let a = feature_chain(&mut graph, anchors, &params, weights)?;
    let p = feature_chain(&mut graph, positives, &params, weights)?;
    let n = feature_chain(&mut graph, negatives, &params, weights)?;

    let s_pos = graph.cosine_center(a, p)?;
    let s_neg = graph.cosine_center(a, n)?;
    Ok((graph, params, s_pos, s_neg))
}

/// Differentiable version of the center-feature extraction: unpadded
/// shrinking convolutions when the patch covers the receptive field
/// (padding cannot reach the center then), padded otherwise.
fn feature_chain(
    graph: &mut Graph,
    input: NodeId,
    params: &[(NodeId, NodeId)],
    weights: &NetworkWeights,
) -> Result<NodeId> {
    let (_, _, h, w) = graph.value(input)?.dims4()?;
    let rf = weights.config().receptive_field();
    let pyramid = h >= rf && w >= rf;
    let mut outputs: Vec<NodeId> = Vec::with_capacity(params.len());
    for (i, (kernel, bias)) in params.iter().enumerate() {
        let conv = if i == 0 {
            graph.conv2d(input, *kernel, *bias, if pyramid { PadMode::Valid } else { PadMode::Reflect1 })?
        } else if pyramid {
            let (th, tw) = (h - 2 * i, w - 2 * i);
            let cropped: Vec<NodeId> = outputs
                .iter()
                .map(|o| graph.crop_center(*o, th, tw))
                .collect::<Result<_>>()?;
            let stacked = graph.concat_channels(&cropped)?;
            graph.conv2d(stacked, *kernel, *bias, PadMode::Valid)?
        } else {
            let stacked = graph.concat_channels(&outputs)?;
            graph.conv2d(stacked, *kernel, *bias, PadMode::Reflect1)?
        };
        outputs.push(graph.tanh(conv)?);
    }
    Ok(*outputs.last().expect("network has at least two layers"))
}

/// Batch hinge loss under the given weights, without updating anything.
pub fn batch_loss(weights: &NetworkWeights, batch: &TrainingBatch, margin: f32) -> Result<f32> {
    let (mut graph, _, s_pos, s_neg) = batch_score_graph(weights, batch)?;
    let hinge = graph.hinge(s_pos, s_neg, margin)?;
    let loss = graph.mean_all(hinge)?;
    Ok(graph.value(loss)?.data()[0])
}

/// Batch hinge loss plus its analytic parameter gradients, ordered kernel
/// then bias per layer. No parameter update.
pub fn batch_loss_and_gradients(
    weights: &NetworkWeights,
    batch: &TrainingBatch,
    margin: f32,
) -> Result<(f32, Vec<Vec<f32>>)> {
    let (mut graph, params, s_pos, s_neg) = batch_score_graph(weights, batch)?;
    let hinge = graph.hinge(s_pos, s_neg, margin)?;
    let loss_node = graph.mean_all(hinge)?;
    let loss = graph.value(loss_node)?.data()[0];
    graph.backward(loss_node)?;
    let mut grads = Vec::with_capacity(params.len() * 2);
    for (k, b) in &params {
        grads.push(graph.grad(*k)?.to_vec());
        grads.push(graph.grad(*b)?.to_vec());
    }
    Ok((loss, grads))
}

/// Weights plus the per-iteration loss curve.
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub losses: Vec<f32>,
}

/// Full training loop: seeded initialization, one sampled batch and one Adam
/// step per iteration, optional periodic checkpoints.
pub fn train(set: &TrainingSet, network: NetworkConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut trainer = Trainer::new(network, config.clone())?;
    let mut losses = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let batch = trainer.sample_batch(set, iteration as u64)?;
        let loss = trainer.step(&batch)?;
        losses.push(loss);
        if iteration % 100 == 0 || iteration + 1 == config.iterations {
            log::info!("iteration {iteration}: loss {loss:.6}");
        } else {
            log::debug!("iteration {iteration}: loss {loss:.6}");
        }
        if config.checkpoint_interval > 0 && (iteration + 1) % config.checkpoint_interval == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("checkpoint_{:06}.fcdc", iteration + 1));
                save_checkpoint(trainer.weights(), &path, config, iteration + 1, loss)?;
            }
        }
    }
    Ok(TrainOutcome {
        weights: trainer.into_weights(),
        losses,
    })
}

/// Path of the key=value sidecar written next to a weights file.
pub fn sidecar_path(weights_path: &Path) -> PathBuf {
    weights_path.with_extension("meta")
}

/// Saves weights plus a human-readable sidecar describing how they were
/// produced. The binary format stores only the tensors; provenance such as
/// the initialization scheme lives here.
pub fn save_checkpoint(
    weights: &NetworkWeights,
    path: &Path,
    config: &TrainConfig,
    iteration: usize,
    loss: f32,
) -> Result<()> {
    weights.save(path)?;
    let mut meta = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(meta, "{k}={v}");
    };
    put("batch_size", config.batch_size.to_string());
    put("feature_maps", weights.config().feature_maps.to_string());
    put("init", "uniform_fan_in".into());
    put("iteration", iteration.to_string());
    put("layers", weights.config().num_layers.to_string());
    put("learning_rate", format!("{}", config.learning_rate));
    put("loss", format!("{loss}"));
    put("margin", format!("{}", config.margin));
    put("patch_size", config.patch_size.to_string());
    put("seed", config.seed.to_string());
    put("total_iterations", config.iterations.to_string());
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}
