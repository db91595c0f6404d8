//! Triplet hinge loss with batch-all and batch-hard mining, plus the
//! PK batch sampler that guarantees valid triplets exist.
//!
//! A triplet is (anchor, positive, negative): the positive shares the
//! anchor's class, the negative does not. The hinge
//! `max(0, d_ap - d_an + margin)` pushes same-class embeddings together
//! and different-class embeddings apart. Mining decides which triplets
//! of a batch contribute:
//! - batch-all: every valid triplet with a positive hinge, averaged
//!   over the active ones only
//! - batch-hard: per anchor, only its hardest positive (farthest) and
//!   hardest negative (closest)

use rand::seq::index::sample;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{dims2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mining {
    BatchAll,
    BatchHard,
}

impl std::fmt::Display for Mining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mining::BatchAll => write!(f, "batch_all"),
            Mining::BatchHard => write!(f, "batch_hard"),
        }
    }
}

impl std::str::FromStr for Mining {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_all" | "batch-all" => Ok(Mining::BatchAll),
            "batch_hard" | "batch-hard" => Ok(Mining::BatchHard),
            other => Err(Error::Config(format!(
                "unknown mining mode '{other}' (expected batch_all or batch_hard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f32,
    pub mining: Mining,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: 0.2,
            mining: Mining::BatchHard,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::Config(format!(
                "margin must be a nonnegative real, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Per-batch accounting of how many triplets the miner saw and used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningStats {
    /// Valid triplets for batch-all; anchors for batch-hard.
    pub total_valid_triplets: usize,
    /// How many of those had a positive hinge.
    pub active_triplets: usize,
    pub batch_loss: f32,
}

/// A batch of P classes x K images per class.
#[derive(Debug, Clone)]
pub struct PKBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub p: usize,
    pub k: usize,
}

/// `M[i,j] = ||e_i - e_j||^2`, symmetric with a zero diagonal.
pub fn pairwise_sq_dist(e: &Tensor) -> Result<Tensor> {
    let (n, _) = dims2(e.shape(), "pairwise_sq_dist")?;
    let mut m = vec![0.0f32; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = Tensor::sq_dist(e.row(i), e.row(j)).max(0.0);
            m[i * n + j] = d;
            m[j * n + i] = d;
        }
    }
    Tensor::new(vec![n, n], m)
}

/// `max(0, d_ap - d_an + margin)`.
pub fn triplet_hinge(d_ap: f32, d_an: f32, margin: f32) -> f32 {
    (d_ap - d_an + margin).max(0.0)
}

fn check_batch_all_preconditions(labels: &[usize]) -> Result<()> {
    let distinct = distinct_labels(labels);
    if distinct.len() < 2 {
        return Err(Error::BatchComposition(
            "batch-all needs at least 2 classes in the batch".into(),
        ));
    }
    let has_pair = distinct
        .iter()
        .any(|&c| labels.iter().filter(|&&l| l == c).count() >= 2);
    if !has_pair {
        return Err(Error::BatchComposition(
            "batch-all needs at least one class with 2 or more samples".into(),
        ));
    }
    Ok(())
}

fn check_batch_hard_preconditions(labels: &[usize]) -> Result<()> {
    let distinct = distinct_labels(labels);
    if distinct.len() < 2 {
        return Err(Error::BatchComposition(
            "batch-hard needs at least 2 classes in the batch".into(),
        ));
    }
    for &c in &distinct {
        if labels.iter().filter(|&&l| l == c).count() < 2 {
            return Err(Error::BatchComposition(format!(
                "batch-hard needs every class twice in the batch, class {c} appears once"
            )));
        }
    }
    Ok(())
}

fn distinct_labels(labels: &[usize]) -> Vec<usize> {
    let mut d: Vec<usize> = labels.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

/// Mean hinge over all valid (a,p,n) triplets with a positive hinge;
/// zero when no triplet is active.
pub fn batch_all_loss(e: &Tensor, labels: &[usize], cfg: &TripletConfig) -> Result<(f32, MiningStats)> {
    cfg.validate()?;
    let (n, _) = dims2(e.shape(), "batch_all_loss")?;
    if n != labels.len() {
        return Err(Error::Dimension(format!(
            "batch_all_loss: {} embeddings vs {} labels",
            n,
            labels.len()
        )));
    }
    check_batch_all_preconditions(labels)?;
    let dist = pairwise_sq_dist(e)?;
    let d = dist.data();
    let mut total = 0usize;
    let mut active = 0usize;
    let mut sum = 0.0f64;
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                total += 1;
                let h = triplet_hinge(d[a * n + p], d[a * n + neg], cfg.margin);
                if h > 0.0 {
                    active += 1;
                    sum += h as f64;
                }
            }
        }
    }
    let loss = if active > 0 {
        (sum / active as f64) as f32
    } else {
        0.0
    };
    Ok((
        loss,
        MiningStats {
            total_valid_triplets: total,
            active_triplets: active,
            batch_loss: loss,
        },
    ))
}

/// Gradient of `batch_all_loss` w.r.t. the embeddings, for an upstream
/// gradient of one. Active triplets are recomputed from `e`; the active
/// count is a constant of the piecewise-linear region.
pub fn batch_all_grad(e: &Tensor, labels: &[usize], margin: f32) -> Result<Tensor> {
    let (n, dim) = dims2(e.shape(), "batch_all_grad")?;
    let dist = pairwise_sq_dist(e)?;
    let d = dist.data();
    let mut triplets = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                if triplet_hinge(d[a * n + p], d[a * n + neg], margin) > 0.0 {
                    triplets.push((a, p, neg));
                }
            }
        }
    }
    if triplets.is_empty() {
        return Ok(Tensor::zeros(vec![n, dim]));
    }
    let mut acc = vec![0.0f64; n * dim];
    let coeff = 1.0 / triplets.len() as f64;
    for (a, p, neg) in triplets {
        add_sq_dist_grad(&mut acc, e, dim, a, p, coeff);
        add_sq_dist_grad(&mut acc, e, dim, a, neg, -coeff);
    }
    Ok(round_grad(acc, n, dim))
}

/// Mean over anchors of the hinge on (hardest positive, hardest negative).
pub fn batch_hard_loss(e: &Tensor, labels: &[usize], cfg: &TripletConfig) -> Result<(f32, MiningStats)> {
    cfg.validate()?;
    let (n, _) = dims2(e.shape(), "batch_hard_loss")?;
    if n != labels.len() {
        return Err(Error::Dimension(format!(
            "batch_hard_loss: {} embeddings vs {} labels",
            n,
            labels.len()
        )));
    }
    check_batch_hard_preconditions(labels)?;
    let dist = pairwise_sq_dist(e)?;
    let d = dist.data();
    let mut active = 0usize;
    let mut sum = 0.0f64;
    for a in 0..n {
        let (hp, hn) = hardest_pair(d, labels, n, a);
        let h = triplet_hinge(d[a * n + hp], d[a * n + hn], cfg.margin);
        if h > 0.0 {
            active += 1;
        }
        sum += h as f64;
    }
    let loss = (sum / n as f64) as f32;
    Ok((
        loss,
        MiningStats {
            total_valid_triplets: n,
            active_triplets: active,
            batch_loss: loss,
        },
    ))
}

/// Gradient of `batch_hard_loss` w.r.t. the embeddings for upstream one.
pub fn batch_hard_grad(e: &Tensor, labels: &[usize], margin: f32) -> Result<Tensor> {
    let (n, dim) = dims2(e.shape(), "batch_hard_grad")?;
    let dist = pairwise_sq_dist(e)?;
    let d = dist.data();
    let mut acc = vec![0.0f64; n * dim];
    let coeff = 1.0 / n as f64;
    for a in 0..n {
        let (hp, hn) = hardest_pair(d, labels, n, a);
        if triplet_hinge(d[a * n + hp], d[a * n + hn], margin) > 0.0 {
            add_sq_dist_grad(&mut acc, e, dim, a, hp, coeff);
            add_sq_dist_grad(&mut acc, e, dim, a, hn, -coeff);
        }
    }
    Ok(round_grad(acc, n, dim))
}

/// Hardest positive (max distance, same class, not the anchor) and hardest
/// negative (min distance, other class) for one anchor. Ties go to the
/// lowest index; preconditions guarantee both exist.
fn hardest_pair(d: &[f32], labels: &[usize], n: usize, a: usize) -> (usize, usize) {
    let mut hp = usize::MAX;
    let mut hp_d = f32::NEG_INFINITY;
    let mut hn = usize::MAX;
    let mut hn_d = f32::INFINITY;
    for i in 0..n {
        if i != a && labels[i] == labels[a] {
            if d[a * n + i] > hp_d {
                hp_d = d[a * n + i];
                hp = i;
            }
        } else if labels[i] != labels[a] && d[a * n + i] < hn_d {
            hn_d = d[a * n + i];
            hn = i;
        }
    }
    (hp, hn)
}

/// Adds `coeff * d||e_i - e_j||^2` to rows i and j of the f64 accumulation
/// buffer. Batch-all can route many triplet contributions through one row;
/// keeping the running sums in f64 and rounding once at the end avoids the
/// drift that per-contribution f32 stores would build up.
fn add_sq_dist_grad(acc: &mut [f64], e: &Tensor, dim: usize, i: usize, j: usize, coeff: f64) {
    let (ei, ej) = (e.row(i), e.row(j));
    for t in 0..dim {
        let diff = 2.0 * coeff * (ei[t] as f64 - ej[t] as f64);
        acc[i * dim + t] += diff;
        acc[j * dim + t] -= diff;
    }
}

/// Rounds an f64 gradient accumulator into an `[n, dim]` f32 tensor.
fn round_grad(acc: Vec<f64>, n: usize, dim: usize) -> Tensor {
    let mut grad = Tensor::zeros(vec![n, dim]);
    for (dst, v) in grad.data_mut().iter_mut().zip(acc) {
        *dst = v as f32;
    }
    grad
}

/// Draws P classes without replacement, then K images per class (without
/// replacement when the class is large enough, with replacement otherwise).
pub fn pk_sample<R: Rng>(dataset: &Dataset, p: usize, k: usize, rng: &mut R) -> Result<PKBatch> {
    if p == 0 || k == 0 {
        return Err(Error::Config("P and K must be positive".into()));
    }
    let n_classes = dataset.class_names().len();
    if n_classes < p {
        return Err(Error::Dataset(format!(
            "pk_sample wants {p} classes, dataset has {n_classes}"
        )));
    }
    let classes = sample(rng, n_classes, p);
    let mut picked = Vec::with_capacity(p * k);
    let mut labels = Vec::with_capacity(p * k);
    for c in classes.iter() {
        let members = dataset.class_members(c);
        if members.is_empty() {
            return Err(Error::Dataset(format!("class {c} has no images")));
        }
        if members.len() >= k {
            for idx in sample(rng, members.len(), k).iter() {
                picked.push(members[idx]);
                labels.push(c);
            }
        } else {
            for _ in 0..k {
                picked.push(members[rng.gen_range(0..members.len())]);
                labels.push(c);
            }
        }
    }
    let images = dataset.batch_tensor(&picked)?;
    Ok(PKBatch {
        images,
        labels,
        p,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_embeddings(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn pairwise_identical_rows_are_zero() {
        let e = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        let m = pairwise_sq_dist(&e).unwrap();
        assert_eq!(m.data()[1], 0.0);
    }

    #[test]
    fn pairwise_antipodal_unit_rows_are_four() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let m = pairwise_sq_dist(&e).unwrap();
        assert!((m.data()[1] - 4.0).abs() < 1e-6);
        assert!((m.data()[2] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn pairwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = rand_embeddings(&mut rng, 6, 4);
        let m = pairwise_sq_dist(&e).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut want = 0.0f32;
                for t in 0..4 {
                    let diff = e.data()[i * 4 + t] - e.data()[j * 4 + t];
                    want += diff * diff;
                }
                assert!((m.data()[i * 6 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pairwise_symmetry_zero_diag_nonneg() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let e = rand_embeddings(&mut rng, 7, 5);
            let m = pairwise_sq_dist(&e).unwrap();
            for i in 0..7 {
                assert_eq!(m.data()[i * 7 + i], 0.0);
                for j in 0..7 {
                    assert_eq!(m.data()[i * 7 + j], m.data()[j * 7 + i]);
                    assert!(m.data()[i * 7 + j] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(triplet_hinge(0.0, 0.5, 0.2), 0.0);
        assert!((triplet_hinge(0.3, 0.1, 0.2) - 0.4).abs() < 1e-7);
        // degenerate negative: anchor equals negative
        assert!((triplet_hinge(0.7, 0.0, 0.2) - 0.9).abs() < 1e-7);
    }

    #[test]
    fn batch_all_identical_embeddings_gives_margin() {
        let e = Tensor::from_rows(&vec![vec![0.5; 3]; 4]).unwrap();
        let labels = [0, 0, 1, 1];
        let cfg = TripletConfig::default();
        let (loss, stats) = batch_all_loss(&e, &labels, &cfg).unwrap();
        assert!((loss - cfg.margin).abs() < 1e-6);
        assert_eq!(stats.total_valid_triplets, 8);
        assert_eq!(stats.active_triplets, 8);
    }

    #[test]
    fn batch_all_separated_embeddings_gives_zero() {
        // two tight clusters far apart: every triplet satisfied
        let e = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.01, 0.0],
            vec![5.0, 5.0],
            vec![5.01, 5.0],
        ])
        .unwrap();
        let labels = [0, 0, 1, 1];
        let (loss, stats) = batch_all_loss(&e, &labels, &TripletConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(stats.active_triplets, 0);
    }

    #[test]
    fn batch_all_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let cfg = TripletConfig {
            margin: 0.2,
            mining: Mining::BatchAll,
        };
        for _ in 0..20 {
            let e = rand_embeddings(&mut rng, 8, 4);
            let (loss, _) = batch_all_loss(&e, &labels, &cfg).unwrap();
            // independent full enumeration in f64
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for a in 0..8 {
                for p in 0..8 {
                    for n in 0..8 {
                        if a == p || labels[a] != labels[p] || labels[a] == labels[n] {
                            continue;
                        }
                        let dap = Tensor::sq_dist(e.row(a), e.row(p)) as f64;
                        let dan = Tensor::sq_dist(e.row(a), e.row(n)) as f64;
                        let h = (dap - dan + 0.2).max(0.0);
                        if h > 0.0 {
                            sum += h;
                            count += 1;
                        }
                    }
                }
            }
            let want = if count > 0 { sum / count as f64 } else { 0.0 };
            assert!((loss as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_all_rejects_degenerate_batches() {
        let e = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        // single class
        assert!(matches!(
            batch_all_loss(&e, &[0, 0], &TripletConfig::default()),
            Err(Error::BatchComposition(_))
        ));
        // no class with two samples
        assert!(matches!(
            batch_all_loss(&e, &[0, 1], &TripletConfig::default()),
            Err(Error::BatchComposition(_))
        ));
    }

    #[test]
    fn batch_hard_identical_embeddings_gives_margin() {
        let e = Tensor::from_rows(&vec![vec![0.1; 4]; 6]).unwrap();
        let labels = [0, 0, 1, 1, 2, 2];
        let (loss, stats) = batch_hard_loss(&e, &labels, &TripletConfig::default()).unwrap();
        assert!((loss - 0.2).abs() < 1e-6);
        assert_eq!(stats.total_valid_triplets, 6);
        assert_eq!(stats.active_triplets, 6);
    }

    #[test]
    fn batch_hard_separated_clusters_give_zero() {
        let e = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![3.0, 0.0],
        ])
        .unwrap();
        let (loss, _) = batch_hard_loss(&e, &[0, 0, 1, 1], &TripletConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn batch_hard_matches_scan_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let labels = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3];
        for _ in 0..20 {
            let e = rand_embeddings(&mut rng, 12, 5);
            let (loss, _) = batch_hard_loss(&e, &labels, &TripletConfig::default()).unwrap();
            // independent per-anchor scan
            let mut sum = 0.0f64;
            for a in 0..12 {
                let mut dap = f32::NEG_INFINITY;
                let mut dan = f32::INFINITY;
                for i in 0..12 {
                    let d = Tensor::sq_dist(e.row(a), e.row(i));
                    if i != a && labels[i] == labels[a] {
                        dap = dap.max(d);
                    }
                    if labels[i] != labels[a] {
                        dan = dan.min(d);
                    }
                }
                sum += (dap - dan + 0.2).max(0.0) as f64;
            }
            let want = (sum / 12.0) as f32;
            assert_eq!(loss, want);
        }
    }

    #[test]
    fn batch_hard_permutation_invariant_with_distinct_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let e = rand_embeddings(&mut rng, 8, 6);
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let (base, _) = batch_hard_loss(&e, &labels, &TripletConfig::default()).unwrap();
        let perm = [5, 2, 7, 0, 3, 6, 1, 4];
        let rows: Vec<Vec<f32>> = perm.iter().map(|&i| e.row(i).to_vec()).collect();
        let pe = Tensor::from_rows(&rows).unwrap();
        let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let (permuted, _) = batch_hard_loss(&pe, &plabels, &TripletConfig::default()).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn batch_hard_rejects_singleton_class() {
        let e = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            batch_hard_loss(&e, &[0, 0, 1], &TripletConfig::default()),
            Err(Error::BatchComposition(_))
        ));
    }

    #[test]
    fn losses_nonnegative_and_zero_iff_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let labels = [0, 0, 1, 1, 2, 2];
        for _ in 0..30 {
            let e = rand_embeddings(&mut rng, 6, 3);
            let cfg = TripletConfig::default();
            let (la, sa) = batch_all_loss(&e, &labels, &cfg).unwrap();
            let (lh, sh) = batch_hard_loss(&e, &labels, &cfg).unwrap();
            assert!(la >= 0.0 && lh >= 0.0);
            assert_eq!(la == 0.0, sa.active_triplets == 0);
            assert_eq!(lh == 0.0, sh.active_triplets == 0);
        }
    }
}
