//! Finite-difference gradient checking against an independent
//! double-precision forward path.
//!
//! The engine trains in f32; central differences at ε=1e-3 would drown in
//! f32 rounding noise, so everything here re-implements the forward math in
//! f64, separately from `ops`. Each evaluation also returns a pattern hash
//! of every non-differentiable decision it took (relu masks, pool argmaxes,
//! hinge active sets); a coordinate whose ±ε evaluations disagree on the
//! hash crossed a kink and is excluded from the comparison.

use crate::embedder::{EmbedderConfig, EmbedderNet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::triplet::Mining;

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinates actually compared.
    pub checked: usize,
    /// Coordinates excluded for crossing a kink.
    pub skipped: usize,
}

/// Central-difference check of `analytic` against `f` around `theta`.
/// `f` returns the scalar value and its decision-pattern hash.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<(f64, u64)>,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("grad_check needs eps > 0, got {eps}")));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "grad_check: {} coordinates vs {} analytic gradients",
            theta.len(),
            analytic.len()
        )));
    }
    let mut point = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let (fp, hp) = f(&point)?;
        point[i] = orig - eps;
        let (fm, hm) = f(&point)?;
        point[i] = orig;
        if hp != hm {
            report.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * eps);
        let denom = fd.abs().max(analytic[i].abs());
        let rel = if denom < 1e-10 {
            0.0
        } else {
            (fd - analytic[i]).abs() / denom
        };
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// FNV-1a accumulator for decision patterns.
#[derive(Debug, Clone, Copy)]
pub struct PatternHash(u64);

impl PatternHash {
    pub fn new() -> Self {
        PatternHash(0xcbf29ce484222325)
    }

    pub fn push(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl Default for PatternHash {
    fn default() -> Self {
        Self::new()
    }
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Concatenates tensors into one flat f64 coordinate vector.
pub fn flatten_f64(tensors: &[&Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| to_f64(t)).collect()
}

// ---- double-precision reference forwards ----

/// y[b,o] = sum_i x[b,i] w[i,o] + bias[o]
pub fn ref_dense(x: &[f64], w: &[f64], bias: &[f64], b: usize, i_dim: usize, o: usize) -> Vec<f64> {
    let mut y = vec![0.0; b * o];
    for bi in 0..b {
        for oi in 0..o {
            let mut acc = bias[oi];
            for ii in 0..i_dim {
                acc += x[bi * i_dim + ii] * w[ii * o + oi];
            }
            y[bi * o + oi] = acc;
        }
    }
    y
}

/// 3x3 cross-correlation, stride 1, zero pad 1.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; b * f * h * w];
    for bi in 0..b {
        for fi in 0..f {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = bias[fi];
                    for ci in 0..c {
                        for u in 0..3usize {
                            for v in 0..3usize {
                                let (si, sj) = (i as isize + u as isize - 1, j as isize + v as isize - 1);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                acc += x[((bi * c + ci) * h + si as usize) * w + sj as usize]
                                    * k[((fi * c + ci) * 3 + u) * 3 + v];
                            }
                        }
                    }
                    y[((bi * f + fi) * h + i) * w + j] = acc;
                }
            }
        }
    }
    y
}

pub fn ref_relu(x: &[f64], hash: &mut PatternHash) -> Vec<f64> {
    let mut active = 0u64;
    let y = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 {
                hash.push(i as u64);
                active += 1;
                v
            } else {
                0.0
            }
        })
        .collect();
    hash.push(active);
    y
}

/// 2x2/stride-2 max pool; ties take the first cell in row-major order.
pub fn ref_maxpool2(
    x: &[f64],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    hash: &mut PatternHash,
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for du in 0..2 {
                    for dv in 0..2 {
                        let at = bc * h * w + (2 * i + du) * w + (2 * j + dv);
                        if x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                hash.push(best_at as u64);
                y[bc * oh * ow + i * ow + j] = best;
            }
        }
    }
    y
}

/// Row-wise x / ||x||.
pub fn ref_l2_normalize(x: &[f64], rows: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..d {
            y[r * d + i] = row[i] / norm;
        }
    }
    y
}

fn ref_pairwise_sq(e: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..d {
                let diff = e[i * d + t] - e[j * d + t];
                acc += diff * diff;
            }
            m[i * n + j] = acc;
        }
    }
    m
}

/// Mean hinge over active triplets; the active set goes into the hash.
pub fn ref_batch_all(
    e: &[f64],
    labels: &[usize],
    margin: f64,
    hash: &mut PatternHash,
) -> f64 {
    let n = labels.len();
    let d = e.len() / n;
    let dist = ref_pairwise_sq(e, n, d);
    let mut total = 0.0;
    let mut active = 0u64;
    let mut idx = 0u64;
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                idx += 1;
                let v = dist[a * n + p] - dist[a * n + neg] + margin;
                if v > 0.0 {
                    total += v;
                    active += 1;
                    hash.push(idx);
                }
            }
        }
    }
    hash.push(active);
    if active == 0 {
        0.0
    } else {
        total / active as f64
    }
}

/// Mean over anchors of the hardest-pair hinge; chosen pairs go into the hash.
pub fn ref_batch_hard(
    e: &[f64],
    labels: &[usize],
    margin: f64,
    hash: &mut PatternHash,
) -> f64 {
    let n = labels.len();
    let d = e.len() / n;
    let dist = ref_pairwise_sq(e, n, d);
    let mut total = 0.0;
    for a in 0..n {
        let mut hp = usize::MAX;
        let mut hn = usize::MAX;
        for o in 0..n {
            if o != a && labels[o] == labels[a] && (hp == usize::MAX || dist[a * n + o] > dist[a * n + hp]) {
                hp = o;
            }
            if labels[o] != labels[a] && (hn == usize::MAX || dist[a * n + o] < dist[a * n + hn]) {
                hn = o;
            }
        }
        hash.push(hp as u64);
        hash.push(hn as u64);
        let v = dist[a * n + hp] - dist[a * n + hn] + margin;
        if v > 0.0 {
            hash.push(1);
            total += v;
        } else {
            hash.push(0);
        }
    }
    total / n as f64
}

/// Mean of -log softmax[label]; smooth, so no pattern bits.
pub fn ref_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// f64 mirror of `EmbedderNet::embed_batch` over a flat parameter vector
/// laid out in `params()` order.
pub fn ref_embedder_forward(
    cfg: &EmbedderConfig,
    params: &[f64],
    images: &[f64],
    batch: usize,
    hash: &mut PatternHash,
) -> Vec<f64> {
    let mut x = images.to_vec();
    let (mut c, mut h, mut w) = (cfg.input_c, cfg.input_h, cfg.input_w);
    let mut at = 0usize;
    for &out_c in &cfg.conv_channels {
        let k = &params[at..at + out_c * c * 9];
        at += out_c * c * 9;
        let bias = &params[at..at + out_c];
        at += out_c;
        x = ref_conv2d(&x, k, bias, batch, c, h, w, out_c);
        x = ref_relu(&x, hash);
        x = ref_maxpool2(&x, batch, out_c, h, w, hash);
        c = out_c;
        h /= 2;
        w /= 2;
    }
    let flat = c * h * w;
    let dw = &params[at..at + flat * cfg.embedding_dim];
    at += flat * cfg.embedding_dim;
    let db = &params[at..at + cfg.embedding_dim];
    let e = ref_dense(&x, dw, db, batch, flat, cfg.embedding_dim);
    if cfg.normalize {
        ref_l2_normalize(&e, batch, cfg.embedding_dim)
    } else {
        e
    }
}

/// End-to-end check of the full embedder under a mining loss: analytic
/// gradients from the f32 tape vs double-precision central differences over
/// every parameter coordinate.
pub fn grad_check_embedder(
    net: &EmbedderNet,
    images: &Tensor,
    labels: &[usize],
    mining: Mining,
    margin: f32,
    eps: f64,
) -> Result<GradCheckReport> {
    use crate::tape::GradTape;
    use crate::triplet::TripletConfig;

    let cfg = TripletConfig {
        margin,
        mining,
    };
    let mut tape = GradTape::new();
    let (e, param_ids) = net.embed_traced(&mut tape, images)?;
    let (loss_id, _) = match mining {
        Mining::BatchAll => tape.batch_all_loss(e, labels, &cfg)?,
        Mining::BatchHard => tape.batch_hard_loss(e, labels, &cfg)?,
    };
    let mut grads = tape.backward(loss_id)?;
    let analytic: Vec<f64> = param_ids
        .iter()
        .flat_map(|&id| to_f64(&grads.take(id).expect("param grad")))
        .collect();

    let theta = flatten_f64(&net.params());
    let images64 = to_f64(images);
    let batch = images.shape()[0];
    let econfig = net.config.clone();
    let labels = labels.to_vec();
    let margin = margin as f64;
    grad_check(
        move |p| {
            let mut hash = PatternHash::new();
            let emb = ref_embedder_forward(&econfig, p, &images64, batch, &mut hash);
            let loss = match mining {
                Mining::BatchAll => ref_batch_all(&emb, &labels, margin, &mut hash),
                Mining::BatchHard => ref_batch_hard(&emb, &labels, margin, &mut hash),
            };
            Ok((loss, hash.value()))
        },
        &theta,
        &analytic,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::build_embedder;
    use crate::tape::GradTape;
    use crate::triplet::TripletConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-3;
    const TOL: f64 = 1e-4;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    fn fixed_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        rand_vec(rng, n, -1.0, 1.0)
    }

    #[test]
    fn linear_function_is_exact() {
        // loss = sum(w * theta) is linear: fd error only from f64 rounding
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta_t = Tensor::new(vec![5], rand_vec(&mut rng, 5, -1.0, 1.0)).unwrap();
        let weights = fixed_weights(&mut rng, 5);

        let mut tape = GradTape::new();
        let p = tape.param(theta_t.clone());
        let loss = tape.weighted_sum(p, weights.clone()).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let analytic = to_f64(&grads.take(p).unwrap());

        let w64: Vec<f64> = weights.iter().map(|&v| v as f64).collect();
        let report = grad_check(
            |t| {
                Ok((
                    t.iter().zip(&w64).map(|(a, b)| a * b).sum::<f64>(),
                    0,
                ))
            },
            &to_f64(&theta_t),
            &analytic,
            EPS,
        )
        .unwrap();
        assert_eq!(report.skipped, 0);
        assert!(report.max_rel_err < 1e-10, "rel {}", report.max_rel_err);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        assert!(grad_check(|_| Ok((0.0, 0)), &[0.0], &[0.0], 0.0).is_err());
    }

    /// Runs a weighted-sum-headed check of one traced op over 10 seeds.
    /// `build` wires the op on the tape; `reference` mirrors it in f64.
    fn check_op(
        name: &str,
        mut build: impl FnMut(&mut GradTape, &mut ChaCha8Rng) -> Vec<crate::tape::TensorId>,
        mut reference: impl FnMut(&[f64], &[f32]) -> Result<(f64, u64)>,
    ) {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = GradTape::new();
            let params = build(&mut tape, &mut rng);
            let out = *params.last().unwrap(); // convention: last id is the op output
            let params = &params[..params.len() - 1];
            let weights = fixed_weights(&mut rng, tape.value(out).numel());
            let loss = tape.weighted_sum(out, weights.clone()).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let analytic: Vec<f64> = params
                .iter()
                .flat_map(|&id| to_f64(&grads.take(id).unwrap()))
                .collect();
            let theta: Vec<f64> = params
                .iter()
                .flat_map(|&id| to_f64(tape.value(id)))
                .collect();
            let report = grad_check(|t| reference(t, &weights), &theta, &analytic, EPS).unwrap();
            assert!(
                report.max_rel_err < TOL,
                "{name} seed {seed}: rel {} (checked {}, skipped {})",
                report.max_rel_err,
                report.checked,
                report.skipped
            );
            assert!(report.checked > 0, "{name} seed {seed}: nothing checked");
        }
    }

    fn weighted(y: &[f64], w: &[f32]) -> f64 {
        y.iter().zip(w).map(|(a, &b)| a * b as f64).sum()
    }

    #[test]
    fn dense_gradients_match_fd() {
        const B: usize = 3;
        const I: usize = 4;
        const O: usize = 2;
        check_op(
            "dense",
            |tape, rng| {
                let x = tape.param(Tensor::new(vec![B, I], rand_vec(rng, B * I, -1.0, 1.0)).unwrap());
                let w = tape.param(Tensor::new(vec![I, O], rand_vec(rng, I * O, -1.0, 1.0)).unwrap());
                let b = tape.param(Tensor::new(vec![O], rand_vec(rng, O, -1.0, 1.0)).unwrap());
                let y = tape.dense(x, w, b).unwrap();
                vec![x, w, b, y]
            },
            |t, w| {
                let (x, rest) = t.split_at(B * I);
                let (wt, b) = rest.split_at(I * O);
                Ok((weighted(&ref_dense(x, wt, b, B, I, O), w), 0))
            },
        );
    }

    #[test]
    fn conv2d_gradients_match_fd() {
        const B: usize = 2;
        const C: usize = 2;
        const H: usize = 4;
        const W: usize = 4;
        const F: usize = 3;
        check_op(
            "conv2d",
            |tape, rng| {
                let x = tape.param(
                    Tensor::new(vec![B, C, H, W], rand_vec(rng, B * C * H * W, -1.0, 1.0)).unwrap(),
                );
                let k = tape.param(
                    Tensor::new(vec![F, C, 3, 3], rand_vec(rng, F * C * 9, -1.0, 1.0)).unwrap(),
                );
                let b = tape.param(Tensor::new(vec![F], rand_vec(rng, F, -0.5, 0.5)).unwrap());
                let y = tape.conv2d(x, k, b).unwrap();
                vec![x, k, b, y]
            },
            |t, w| {
                let (x, rest) = t.split_at(B * C * H * W);
                let (k, b) = rest.split_at(F * C * 9);
                Ok((weighted(&ref_conv2d(x, k, b, B, C, H, W, F), w), 0))
            },
        );
    }

    #[test]
    fn relu_gradients_match_fd_with_kink_exclusion() {
        check_op(
            "relu",
            |tape, rng| {
                let x = tape.param(Tensor::new(vec![4, 5], rand_vec(rng, 20, -1.0, 1.0)).unwrap());
                let y = tape.relu(x);
                vec![x, y]
            },
            |t, w| {
                let mut h = PatternHash::new();
                let y = ref_relu(t, &mut h);
                Ok((weighted(&y, w), h.value()))
            },
        );
    }

    #[test]
    fn relu_coordinate_at_zero_is_skipped() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::new(vec![1, 3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = tape.relu(x);
        let weights = vec![1.0f32, 2.0, 3.0];
        let loss = tape.weighted_sum(y, weights.clone()).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let analytic = to_f64(&grads.take(x).unwrap());
        let report = grad_check(
            |t| {
                let mut h = PatternHash::new();
                let y = ref_relu(t, &mut h);
                Ok((weighted(&y, &weights), h.value()))
            },
            &to_f64(tape.value(x)),
            &analytic,
            EPS,
        )
        .unwrap();
        // the exact-zero coordinate crosses the kink under ±ε
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_err < TOL);
    }

    #[test]
    fn maxpool_gradients_match_fd() {
        const B: usize = 1;
        const C: usize = 2;
        const H: usize = 4;
        const W: usize = 4;
        check_op(
            "maxpool2",
            |tape, rng| {
                let x = tape.param(
                    Tensor::new(vec![B, C, H, W], rand_vec(rng, B * C * H * W, -1.0, 1.0)).unwrap(),
                );
                let y = tape.maxpool2(x).unwrap();
                vec![x, y]
            },
            |t, w| {
                let mut h = PatternHash::new();
                let y = ref_maxpool2(t, B, C, H, W, &mut h);
                Ok((weighted(&y, w), h.value()))
            },
        );
    }

    #[test]
    fn l2_normalize_gradients_match_fd() {
        check_op(
            "l2_normalize",
            |tape, rng| {
                // keep rows away from zero so ±ε stays well-conditioned
                let data: Vec<f32> = rand_vec(rng, 4 * 6, -1.0, 1.0)
                    .iter()
                    .map(|v| v + 0.5 * v.signum())
                    .collect();
                let x = tape.param(Tensor::new(vec![4, 6], data).unwrap());
                let y = tape.l2_normalize(x).unwrap();
                vec![x, y]
            },
            |t, w| Ok((weighted(&ref_l2_normalize(t, 4, 6), w), 0)),
        );
    }

    fn pk_labels() -> Vec<usize> {
        vec![0, 0, 1, 1, 2, 2, 3, 3]
    }

    #[test]
    fn batch_all_gradients_match_fd() {
        let labels = pk_labels();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let e_t = Tensor::new(vec![8, 4], rand_vec(&mut rng, 32, -1.0, 1.0)).unwrap();
            let cfg = TripletConfig {
                margin: 0.2,
                mining: Mining::BatchAll,
            };
            let mut tape = GradTape::new();
            let e = tape.param(e_t.clone());
            let (loss, _) = tape.batch_all_loss(e, &labels, &cfg).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let analytic = to_f64(&grads.take(e).unwrap());
            let report = grad_check(
                |t| {
                    let mut h = PatternHash::new();
                    Ok((ref_batch_all(t, &labels, 0.2, &mut h), h.value()))
                },
                &to_f64(&e_t),
                &analytic,
                EPS,
            )
            .unwrap();
            assert!(
                report.max_rel_err < TOL,
                "batch_all seed {seed}: rel {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn batch_hard_gradients_match_fd() {
        let labels = pk_labels();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let e_t = Tensor::new(vec![8, 4], rand_vec(&mut rng, 32, -1.0, 1.0)).unwrap();
            let cfg = TripletConfig {
                margin: 0.2,
                mining: Mining::BatchHard,
            };
            let mut tape = GradTape::new();
            let e = tape.param(e_t.clone());
            let (loss, _) = tape.batch_hard_loss(e, &labels, &cfg).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let analytic = to_f64(&grads.take(e).unwrap());
            let report = grad_check(
                |t| {
                    let mut h = PatternHash::new();
                    Ok((ref_batch_hard(t, &labels, 0.2, &mut h), h.value()))
                },
                &to_f64(&e_t),
                &analytic,
                EPS,
            )
            .unwrap();
            assert!(
                report.max_rel_err < TOL,
                "batch_hard seed {seed}: rel {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn cross_entropy_gradients_match_fd() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let logits_t = Tensor::new(vec![4, 5], rand_vec(&mut rng, 20, -2.0, 2.0)).unwrap();
            let labels = vec![0usize, 2, 4, 1];
            let mut tape = GradTape::new();
            let l = tape.param(logits_t.clone());
            let loss = tape.cross_entropy(l, &labels).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let analytic = to_f64(&grads.take(l).unwrap());
            let report = grad_check(
                |t| Ok((ref_cross_entropy(t, &labels, 5), 0)),
                &to_f64(&logits_t),
                &analytic,
                EPS,
            )
            .unwrap();
            assert!(
                report.max_rel_err < TOL,
                "cross_entropy seed {seed}: rel {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn full_embedder_with_batch_hard_matches_fd() {
        let cfg = EmbedderConfig {
            input_h: 8,
            input_w: 8,
            input_c: 2,
            conv_channels: vec![3],
            embedding_dim: 6,
            normalize: true,
            init_seed: 5,
        };
        let net = build_embedder(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let images =
            Tensor::new(vec![4, 2, 8, 8], rand_vec(&mut rng, 4 * 2 * 64, 0.0, 1.0)).unwrap();
        let labels = vec![0usize, 0, 1, 1];
        let report =
            grad_check_embedder(&net, &images, &labels, Mining::BatchHard, 0.2, EPS).unwrap();
        assert!(
            report.max_rel_err < TOL,
            "embedder end-to-end: rel {} (checked {}, skipped {})",
            report.max_rel_err,
            report.checked,
            report.skipped
        );
        assert!(report.checked > 100);
    }
}
