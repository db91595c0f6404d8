//! Adam, stratified train/test splitting, and the two training loops:
//! the embedder under a mining triplet loss and the MLP head under
//! cross-entropy on frozen embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::MlpHead;
use crate::data::Dataset;
use crate::embedder::{build_embedder, EmbedderConfig, EmbedderNet};
use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::triplet::{pk_sample, Mining, TripletConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-parameter Adam moments. Kept in double precision so the update
/// arithmetic is exactly the textbook recurrence.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction:
/// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, theta <- theta - lr m^ / (sqrt(v^) + eps).
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.shapes.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.shapes.len()
        )));
    }
    for ((p, g), shape) in params.iter().zip(grads).zip(&state.shapes) {
        if p.shape() != shape.as_slice() || g.shape() != shape.as_slice() {
            return Err(Error::Contract(format!(
                "adam_step: param {:?} / grad {:?} vs state {:?}",
                p.shape(),
                g.shape(),
                shape
            )));
        }
    }
    state.t += 1;
    let b1 = cfg.beta1 as f64;
    let b2 = cfg.beta2 as f64;
    let lr = cfg.lr as f64;
    let eps = cfg.eps as f64;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (pi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        let data = p.data_mut();
        for (i, gi) in g.data().iter().enumerate() {
            let gi = *gi as f64;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] = (data[i] as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

/// Training-loop shape: epochs x ceil(N / batch) PK draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    pub triplet: TripletConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch: 32,
            p: 8,
            k: 4,
            seed: 0,
            triplet: TripletConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least 1 epoch".into()));
        }
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "PK sampling needs P >= 2 and K >= 2, got P={} K={}",
                self.p, self.k
            )));
        }
        if self.batch != self.p * self.k {
            return Err(Error::Config(format!(
                "batch {} must equal P*K = {}",
                self.batch,
                self.p * self.k
            )));
        }
        self.triplet.validate()?;
        self.adam.validate()
    }
}

/// Loss and mining activity per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f32>,
    /// Share of valid triplets (batch-all) or anchors (batch-hard) with a
    /// positive hinge, averaged over the epoch's steps.
    pub active_fraction: Vec<f32>,
}

/// Per-class seeded shuffle, then `round(ratio * n_c)` images to train,
/// clamped so both sides get at least one. Disjoint and exhaustive.
pub fn split_stratified(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..dataset.class_names().len() {
        let members = dataset.class_members(c);
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {:?} has {} images, splitting needs at least 2",
                dataset.class_names()[c],
                members.len()
            )));
        }
        let mut shuffled = members.to_vec();
        shuffled.shuffle(&mut rng);
        let n_train = ((ratio * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train_idx.extend_from_slice(&shuffled[..n_train]);
        test_idx.extend_from_slice(&shuffled[n_train..]);
    }
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?))
}

/// Builds an embedder from `embed_cfg` and trains it with the configured
/// mining triplet loss. Fully determined by the two configs and the data.
pub fn train_embedder(
    dataset: &Dataset,
    embed_cfg: &EmbedderConfig,
    train_cfg: &TrainConfig,
) -> Result<(EmbedderNet, TrainHistory)> {
    train_cfg.validate()?;
    let mut net = build_embedder(embed_cfg.clone())?;
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let steps = dataset.len().div_ceil(train_cfg.batch);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut state = AdamState::new(&net.params());
    let mut history = TrainHistory {
        epoch_loss: Vec::with_capacity(train_cfg.epochs),
        active_fraction: Vec::with_capacity(train_cfg.epochs),
    };
    for epoch in 0..train_cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut active_sum = 0.0f64;
        for _ in 0..steps {
            let batch = pk_sample(dataset, train_cfg.p, train_cfg.k, &mut rng)?;
            let mut tape = GradTape::new();
            let (e, param_ids) = net.embed_traced(&mut tape, &batch.images)?;
            let (loss_id, stats) = match train_cfg.triplet.mining {
                Mining::BatchAll => tape.batch_all_loss(e, &batch.labels, &train_cfg.triplet)?,
                Mining::BatchHard => tape.batch_hard_loss(e, &batch.labels, &train_cfg.triplet)?,
            };
            if !stats.batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: stats.batch_loss,
                });
            }
            let mut grads = tape.backward(loss_id)?;
            let grad_tensors: Vec<Tensor> = param_ids
                .iter()
                .map(|&id| grads.take(id).expect("parameter gradient"))
                .collect();
            adam_step(&mut net.params_mut(), &grad_tensors, &mut state, &train_cfg.adam)?;
            loss_sum += stats.batch_loss as f64;
            if stats.total_valid_triplets > 0 {
                active_sum += stats.active_triplets as f64 / stats.total_valid_triplets as f64;
            }
        }
        history.epoch_loss.push((loss_sum / steps as f64) as f32);
        history.active_fraction.push((active_sum / steps as f64) as f32);
    }
    Ok((net, history))
}

/// MLP head hyperparameters; the head trains on frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 64,
            epochs: 40,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("head hidden width must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("head training needs at least 1 epoch".into()));
        }
        self.adam.validate()
    }
}

/// Embeds images in index-order chunks; the one inference entry point the
/// evaluation paths share.
pub fn embed_dataset(net: &EmbedderNet, dataset: &Dataset, indices: &[usize]) -> Result<Tensor> {
    const CHUNK: usize = 64;
    let d = net.config.embedding_dim;
    let mut data = Vec::with_capacity(indices.len() * d);
    for chunk in indices.chunks(CHUNK) {
        let images = dataset.batch_tensor(chunk)?;
        data.extend_from_slice(net.embed_batch(&images)?.data());
    }
    Tensor::new(vec![indices.len(), d], data)
}

/// Trains the MLP head on the frozen embedder's outputs with cross-entropy,
/// minibatched at `batch` with a seeded shuffle per epoch.
pub fn train_classifier_head(
    net: &EmbedderNet,
    dataset: &Dataset,
    head_cfg: &HeadConfig,
    batch: usize,
) -> Result<MlpHead> {
    head_cfg.validate()?;
    if batch == 0 {
        return Err(Error::Config("head batch size must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train a head on an empty dataset".into()));
    }
    let n = dataset.len();
    let all: Vec<usize> = (0..n).collect();
    let embeddings = embed_dataset(net, dataset, &all)?;
    let labels = dataset.labels();
    let d = net.config.embedding_dim;

    let mut head = MlpHead::new(
        d,
        head_cfg.hidden,
        dataset.class_names().to_vec(),
        head_cfg.seed,
    )?;
    let mut state = AdamState::new(&head.params());
    let mut rng = ChaCha8Rng::seed_from_u64(head_cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..head_cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let rows: Vec<Vec<f32>> = chunk.iter().map(|&i| embeddings.row(i).to_vec()).collect();
            let e = Tensor::from_rows(&rows)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = GradTape::new();
            let e_id = tape.leaf(e);
            let (logits, param_ids) = head.forward_traced(&mut tape, e_id)?;
            let loss_id = tape.cross_entropy(logits, &y)?;
            let loss = tape.value(loss_id).item()?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss,
                });
            }
            let mut grads = tape.backward(loss_id)?;
            let grad_tensors: Vec<Tensor> = param_ids
                .iter()
                .map(|&id| grads.take(id).expect("head gradient"))
                .collect();
            adam_step(&mut head.params_mut(), &grad_tensors, &mut state, &head_cfg.adam)?;
        }
    }
    Ok(head)
}
