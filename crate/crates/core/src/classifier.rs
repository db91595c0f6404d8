//! The two embedding-space classifiers: a KNN index with one-shot
//! enrollment and a one-hidden-layer MLP head trained with cross-entropy.

use crate::error::{Error, Result};
use crate::init::he_uniform;
use crate::ops;
use crate::tape::{GradTape, TensorId};
use crate::tensor::{dims2, Tensor};

/// MLP classifier head over embeddings: dense -> relu -> dense.
/// Logits are raw; softmax happens inside the loss and `mlp_predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub class_names: Vec<String>,
}

impl MlpHead {
    /// He-style uniform init, biases zero, deterministic from the seed.
    pub fn new(input_dim: usize, hidden: usize, class_names: Vec<String>, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || class_names.is_empty() {
            return Err(Error::Config(format!(
                "mlp head needs positive sizes, got [{input_dim}, {hidden}, {}]",
                class_names.len()
            )));
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let classes = class_names.len();
        Ok(MlpHead {
            w1: he_uniform(&mut rng, vec![input_dim, hidden], input_dim),
            b1: Tensor::zeros(vec![hidden]),
            w2: he_uniform(&mut rng, vec![hidden, classes], hidden),
            b2: Tensor::zeros(vec![classes]),
            class_names,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Records the head's forward pass on a tape; returns the logits id and
    /// the four parameter ids in `params()` order.
    pub fn forward_traced(
        &self,
        tape: &mut GradTape,
        e: TensorId,
    ) -> Result<(TensorId, [TensorId; 4])> {
        let w1 = tape.param(self.w1.clone());
        let b1 = tape.param(self.b1.clone());
        let w2 = tape.param(self.w2.clone());
        let b2 = tape.param(self.b2.clone());
        let h = tape.dense(e, w1, b1)?;
        let h = tape.relu(h);
        let logits = tape.dense(h, w2, b2)?;
        Ok((logits, [w1, b1, w2, b2]))
    }
}

/// `dense -> relu -> dense` over a batch of embeddings.
pub fn mlp_forward(head: &MlpHead, e: &Tensor) -> Result<Tensor> {
    let (_, d) = dims2(e.shape(), "mlp_forward input")?;
    if d != head.input_dim() {
        return Err(Error::Dimension(format!(
            "mlp_forward: embeddings of width {} vs head input width {}",
            d,
            head.input_dim()
        )));
    }
    let h = ops::dense(e, &head.w1, &head.b1)?;
    let h = ops::relu(&h);
    ops::dense(&h, &head.w2, &head.b2)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0f32; n * c];
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (j, &v) in row.iter().enumerate() {
            let e = ((v - m) as f64).exp();
            out[i * c + j] = e as f32;
            sum += e;
        }
        for j in 0..c {
            out[i * c + j] = (out[i * c + j] as f64 / sum) as f32;
        }
    }
    Tensor::new(vec![n, c], out).expect("same shape")
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f32> {
    cross_entropy_impl(logits, labels)
}

pub(crate) fn cross_entropy_impl(logits: &Tensor, labels: &[usize]) -> Result<f32> {
    let (n, c) = dims2(logits.shape(), "cross_entropy logits")?;
    if n != labels.len() {
        return Err(Error::Dimension(format!(
            "cross_entropy: {} logit rows vs {} labels",
            n,
            labels.len()
        )));
    }
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Contract(format!(
                "cross_entropy: label {y} out of range for {c} classes"
            )));
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y] as f64;
    }
    Ok((total / n as f64) as f32)
}

/// `(softmax - onehot) / batch` for an upstream gradient of one.
pub(crate) fn cross_entropy_input_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = dims2(logits.shape(), "cross_entropy logits")?;
    let mut g = softmax_rows(logits);
    let data = g.data_mut();
    for (i, &y) in labels.iter().enumerate() {
        data[i * c + y] -= 1.0;
    }
    for v in data.iter_mut() {
        *v /= n as f32;
    }
    Ok(g)
}

/// Argmax class per row plus the softmax confidence of that class.
/// Exact ties resolve to the lowest class id.
pub fn mlp_predict(head: &MlpHead, e: &Tensor) -> Result<Vec<(usize, f32)>> {
    let logits = mlp_forward(head, e)?;
    let probs = softmax_rows(&logits);
    let c = head.class_count();
    let mut out = Vec::with_capacity(e.shape()[0]);
    for i in 0..e.shape()[0] {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.push((best, probs.data()[i * c + best]));
    }
    Ok(out)
}

/// Exact nearest-neighbor index over stored embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    dim: usize,
    embeddings: Vec<f32>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

/// Outcome of a KNN query batch.
#[derive(Debug, Clone)]
pub struct KnnPrediction {
    pub labels: Vec<usize>,
    /// Vote fraction of the winning class per query.
    pub confidences: Vec<f32>,
    pub k_used: usize,
    /// Set when the requested k exceeded the index size and was clamped.
    pub clamped: bool,
}

impl KnnIndex {
    pub fn new(dim: usize) -> Self {
        KnnIndex {
            dim,
            embeddings: Vec::new(),
            labels: Vec::new(),
            class_names: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> &[f32] {
        &self.embeddings
    }

    /// Rebuilds an index from raw parts (deserialization path).
    pub fn from_parts(
        dim: usize,
        embeddings: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 || embeddings.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "knn index: {} values vs {} labels x dim {}",
                embeddings.len(),
                labels.len(),
                dim
            )));
        }
        if labels.iter().any(|&l| l >= class_names.len()) {
            return Err(Error::Contract("knn index: label outside registry".into()));
        }
        Ok(KnnIndex {
            dim,
            embeddings,
            labels,
            class_names,
        })
    }

    fn class_id(&mut self, name: &str) -> usize {
        match self.class_names.iter().position(|n| n == name) {
            Some(id) => id,
            None => {
                self.class_names.push(name.to_string());
                self.class_names.len() - 1
            }
        }
    }

    /// Appends embedding rows under one class name, registering the name if
    /// unseen.
    pub fn enroll(&mut self, embeddings: &Tensor, class_name: &str) -> Result<()> {
        let (n, d) = dims2(embeddings.shape(), "knn_enroll embeddings")?;
        if d != self.dim {
            return Err(Error::Dimension(format!(
                "knn_enroll: embeddings of width {} vs index width {}",
                d, self.dim
            )));
        }
        let id = self.class_id(class_name);
        self.embeddings.extend_from_slice(embeddings.data());
        self.labels.extend(std::iter::repeat(id).take(n));
        Ok(())
    }

    /// Squared-Euclidean k-NN with majority vote. Ties break by smaller
    /// mean distance, then lower class id.
    pub fn predict(&self, queries: &Tensor, k: usize) -> Result<KnnPrediction> {
        let (nq, d) = dims2(queries.shape(), "knn_predict queries")?;
        if self.is_empty() {
            return Err(Error::State("knn_predict on an empty index".into()));
        }
        if k == 0 {
            return Err(Error::Contract("knn_predict needs k >= 1".into()));
        }
        if d != self.dim {
            return Err(Error::Dimension(format!(
                "knn_predict: queries of width {} vs index width {}",
                d, self.dim
            )));
        }
        let n = self.len();
        let clamped = k > n;
        let k_used = k.min(n);
        let mut labels = Vec::with_capacity(nq);
        let mut confidences = Vec::with_capacity(nq);
        let mut scored: Vec<(f32, usize)> = Vec::with_capacity(n);
        for q in 0..nq {
            let qrow = queries.row(q);
            scored.clear();
            for i in 0..n {
                let row = &self.embeddings[i * d..(i + 1) * d];
                scored.push((Tensor::sq_dist(qrow, row), i));
            }
            scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let neighbors = &scored[..k_used];

            // per-class votes and distance sums over the k nearest
            let mut votes: Vec<(usize, usize, f64)> = Vec::new(); // (class, count, dist sum)
            for &(dist, i) in neighbors {
                let c = self.labels[i];
                match votes.iter_mut().find(|v| v.0 == c) {
                    Some(v) => {
                        v.1 += 1;
                        v.2 += dist as f64;
                    }
                    None => votes.push((c, 1, dist as f64)),
                }
            }
            votes.sort_unstable_by(|a, b| {
                b.1.cmp(&a.1)
                    .then((a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
                    .then(a.0.cmp(&b.0))
            });
            let (winner, count, _) = votes[0];
            labels.push(winner);
            confidences.push(count as f32 / k_used as f32);
        }
        Ok(KnnPrediction {
            labels,
            confidences,
            k_used,
            clamped,
        })
    }

    pub fn name_of(&self, label: usize) -> &str {
        &self.class_names[label]
    }
}
