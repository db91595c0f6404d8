//! The convolutional embedder: N conv/relu/pool blocks then a dense layer,
//! optionally l2-normalized. One parameter set serves every input — anchors,
//! positives, and negatives all go through the same function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::he_uniform;
use crate::ops;
use crate::tape::{GradTape, TensorId};
use crate::tensor::{dims4, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    /// Output channels of each conv block; every block halves H and W.
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
    /// L2-normalize the output rows.
    pub normalize: bool,
    pub init_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            input_h: 64,
            input_w: 64,
            input_c: 3,
            conv_channels: vec![8, 16],
            embedding_dim: 64,
            normalize: true,
            init_seed: 0,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_w == 0 || self.input_c == 0 {
            return Err(Error::Config(format!(
                "input dims must be positive, got {}x{}x{}",
                self.input_h, self.input_w, self.input_c
            )));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config(format!(
                "conv channels must be nonempty and positive, got {:?}",
                self.conv_channels
            )));
        }
        let div = 1usize << self.conv_channels.len();
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by 2^{} (one halving per conv block)",
                self.input_h,
                self.input_w,
                self.conv_channels.len()
            )));
        }
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// Flattened width entering the dense layer.
    pub fn dense_input_len(&self) -> usize {
        let blocks = self.conv_channels.len();
        let h = self.input_h >> blocks;
        let w = self.input_w >> blocks;
        self.conv_channels.last().unwrap() * h * w
    }
}

/// The embedder's parameters plus the config that fixes its topology.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderNet {
    pub config: EmbedderConfig,
    pub conv_kernels: Vec<Tensor>,
    pub conv_biases: Vec<Tensor>,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

/// Deterministic construction: He-style uniform weights from the config's
/// seed, zero biases.
pub fn build_embedder(config: EmbedderConfig) -> Result<EmbedderNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut conv_kernels = Vec::new();
    let mut conv_biases = Vec::new();
    let mut in_c = config.input_c;
    for &out_c in &config.conv_channels {
        let fan_in = in_c * 9;
        conv_kernels.push(he_uniform(&mut rng, vec![out_c, in_c, 3, 3], fan_in));
        conv_biases.push(Tensor::zeros(vec![out_c]));
        in_c = out_c;
    }
    let flat = config.dense_input_len();
    let dense_w = he_uniform(&mut rng, vec![flat, config.embedding_dim], flat);
    let dense_b = Tensor::zeros(vec![config.embedding_dim]);
    Ok(EmbedderNet {
        config,
        conv_kernels,
        conv_biases,
        dense_w,
        dense_b,
    })
}

impl EmbedderNet {
    /// All parameter tensors in a fixed order: (kernel, bias) per block,
    /// then dense weight and bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.conv_kernels.len() * 2 + 2);
        for (k, b) in self.conv_kernels.iter().zip(&self.conv_biases) {
            out.push(k);
            out.push(b);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(self.conv_kernels.len() * 2 + 2);
        for (k, b) in self.conv_kernels.iter_mut().zip(self.conv_biases.iter_mut()) {
            out.push(k);
            out.push(b);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    /// Stable names matching `params()` order, for reporting.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.conv_kernels.len() {
            out.push(format!("conv{i}.kernel"));
            out.push(format!("conv{i}.bias"));
        }
        out.push("dense.w".into());
        out.push("dense.b".into());
        out
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let (_, c, h, w) = dims4(images.shape(), "embed_batch images")?;
        let cfg = &self.config;
        if c != cfg.input_c || h != cfg.input_h || w != cfg.input_w {
            return Err(Error::Dimension(format!(
                "images are {c}x{h}x{w}, embedder expects {}x{}x{}",
                cfg.input_c, cfg.input_h, cfg.input_w
            )));
        }
        Ok(())
    }

    /// Pure forward pass: `[B, C, H, W]` images to `[B, D]` embeddings.
    pub fn embed_batch(&self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let mut x = images.clone();
        for (k, b) in self.conv_kernels.iter().zip(&self.conv_biases) {
            x = ops::relu(&ops::conv2d(&x, k, b)?);
            x = ops::maxpool2(&x)?.0;
        }
        let batch = x.shape()[0];
        let flat = x.reshaped(vec![batch, self.config.dense_input_len()])?;
        let e = ops::dense(&flat, &self.dense_w, &self.dense_b)?;
        if self.config.normalize {
            Ok(ops::l2_normalize(&e)?.0)
        } else {
            Ok(e)
        }
    }

    /// Records the forward pass on a tape for training. Returns the
    /// embedding node and the parameter nodes in `params()` order.
    pub fn embed_traced(
        &self,
        tape: &mut GradTape,
        images: &Tensor,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        self.check_input(images)?;
        let mut param_ids = Vec::new();
        let mut x = tape.leaf(images.clone());
        for (k, b) in self.conv_kernels.iter().zip(&self.conv_biases) {
            let kid = tape.param(k.clone());
            let bid = tape.param(b.clone());
            param_ids.push(kid);
            param_ids.push(bid);
            x = tape.conv2d(x, kid, bid)?;
            x = tape.relu(x);
            x = tape.maxpool2(x)?;
        }
        let batch = images.shape()[0];
        x = tape.reshape(x, vec![batch, self.config.dense_input_len()])?;
        let w = tape.param(self.dense_w.clone());
        let b = tape.param(self.dense_b.clone());
        param_ids.push(w);
        param_ids.push(b);
        let mut e = tape.dense(x, w, b)?;
        if self.config.normalize {
            e = tape.l2_normalize(e)?;
        }
        Ok((e, param_ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> EmbedderConfig {
        EmbedderConfig {
            input_h: 8,
            input_w: 8,
            input_c: 3,
            conv_channels: vec![4, 6],
            embedding_dim: 16,
            normalize: true,
            init_seed: 7,
        }
    }

    fn rand_images(seed: u64, b: usize, cfg: &EmbedderConfig) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * cfg.input_c * cfg.input_h * cfg.input_w;
        let data = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![b, cfg.input_c, cfg.input_h, cfg.input_w], data).unwrap()
    }

    #[test]
    fn same_seed_builds_identical_nets() {
        let a = build_embedder(small_config()).unwrap();
        let b = build_embedder(small_config()).unwrap();
        assert_eq!(a, b);
        let c = build_embedder(EmbedderConfig {
            init_seed: 8,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a.dense_w, c.dense_w);
    }

    #[test]
    fn biases_start_at_zero() {
        let net = build_embedder(small_config()).unwrap();
        for b in net.conv_biases.iter().chain([&net.dense_b]) {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn default_config_dense_input_is_4096() {
        let cfg = EmbedderConfig::default();
        assert_eq!(cfg.dense_input_len(), 16 * 16 * 16);
        let net = build_embedder(cfg).unwrap();
        assert_eq!(net.dense_w.shape(), &[4096, 64]);
    }

    #[test]
    fn config_validation_rejects_indivisible_dims() {
        let bad = EmbedderConfig {
            input_h: 10, // 10 % 4 != 0
            input_w: 8,
            ..small_config()
        };
        assert!(matches!(build_embedder(bad), Err(Error::Config(_))));
        let tiny_d = EmbedderConfig {
            embedding_dim: 1,
            ..small_config()
        };
        assert!(tiny_d.validate().is_err());
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let net = build_embedder(small_config()).unwrap();
        let e = net.embed_batch(&rand_images(1, 5, &net.config)).unwrap();
        assert_eq!(e.shape(), &[5, 16]);
        for i in 0..5 {
            let norm: f32 = e.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn duplicate_images_share_an_embedding() {
        let net = build_embedder(small_config()).unwrap();
        let one = rand_images(2, 1, &net.config);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let cfg = &net.config;
        let two = Tensor::new(vec![2, cfg.input_c, cfg.input_h, cfg.input_w], data).unwrap();
        let e = net.embed_batch(&two).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn batch_equals_concatenated_singles() {
        let net = build_embedder(small_config()).unwrap();
        let batch = rand_images(3, 4, &net.config);
        let all = net.embed_batch(&batch).unwrap();
        let cfg = &net.config;
        let per = cfg.input_c * cfg.input_h * cfg.input_w;
        for i in 0..4 {
            let single = Tensor::new(
                vec![1, cfg.input_c, cfg.input_h, cfg.input_w],
                batch.data()[i * per..(i + 1) * per].to_vec(),
            )
            .unwrap();
            let e = net.embed_batch(&single).unwrap();
            assert_eq!(e.row(0), all.row(i), "image {i}");
        }
    }

    #[test]
    fn embed_batch_rejects_wrong_dims() {
        let net = build_embedder(small_config()).unwrap();
        let wrong = Tensor::zeros(vec![2, 3, 4, 8]);
        assert!(matches!(
            net.embed_batch(&wrong),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn traced_forward_matches_pure_forward() {
        let net = build_embedder(small_config()).unwrap();
        let images = rand_images(4, 3, &net.config);
        let pure = net.embed_batch(&images).unwrap();
        let mut tape = GradTape::new();
        let (e, params) = net.embed_traced(&mut tape, &images).unwrap();
        assert_eq!(tape.value(e), &pure);
        assert_eq!(params.len(), net.params().len());
    }
}
