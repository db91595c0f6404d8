//! Forward and backward kernels for the five layer primitives.
//!
//! All kernels are plain single-threaded loops over row-major data. The
//! forward functions are pure and usable without a tape (inference path);
//! `GradTape` wraps them and pairs each with the matching backward kernel.
//!
//! Conventions fixed here:
//! - convolution is 3x3 cross-correlation, stride 1, zero padding 1
//! - max pooling is 2x2 stride 2, ties resolved to the first cell in
//!   row-major order
//! - relu subgradient at exactly zero is zero

use crate::error::{Error, Result};
use crate::tensor::{dims2, dims4, Tensor};

/// `y[b,o] = sum_i x[b,i] * w[i,o] + bias[o]`
pub fn dense(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bsz, i_dim) = dims2(x.shape(), "dense input")?;
    let (wi, o_dim) = dims2(w.shape(), "dense weight")?;
    if i_dim != wi {
        return Err(Error::Dimension(format!(
            "dense: input shape {:?} does not match weight shape {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if bias.shape() != [o_dim] {
        return Err(Error::Dimension(format!(
            "dense: bias shape {:?} does not match weight shape {:?}",
            bias.shape(),
            w.shape()
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let bd = bias.data();
    let mut y = vec![0.0f32; bsz * o_dim];
    let mut acc = vec![0.0f64; o_dim];
    for b in 0..bsz {
        let xrow = &xd[b * i_dim..(b + 1) * i_dim];
        for (a, &bv) in acc.iter_mut().zip(bd) {
            *a = bv as f64;
        }
        for (i, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let xv = xv as f64;
            let wrow = &wd[i * o_dim..(i + 1) * o_dim];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv as f64;
            }
        }
        for (yv, &a) in y[b * o_dim..(b + 1) * o_dim].iter_mut().zip(&acc) {
            *yv = a as f32;
        }
    }
    Tensor::new(vec![bsz, o_dim], y)
}

/// Gradients of `dense` w.r.t. input, weight and bias.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (bsz, i_dim) = dims2(x.shape(), "dense input")?;
    let (_, o_dim) = dims2(w.shape(), "dense weight")?;
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();
    let mut dx = vec![0.0f32; bsz * i_dim];
    let mut dw = vec![0.0f64; i_dim * o_dim];
    let mut db = vec![0.0f64; o_dim];
    for b in 0..bsz {
        let grow = &gd[b * o_dim..(b + 1) * o_dim];
        let xrow = &xd[b * i_dim..(b + 1) * i_dim];
        for o in 0..o_dim {
            db[o] += grow[o] as f64;
        }
        for i in 0..i_dim {
            let wrow = &wd[i * o_dim..(i + 1) * o_dim];
            let xv = xrow[i] as f64;
            let mut acc = 0.0f64;
            for o in 0..o_dim {
                acc += grow[o] as f64 * wrow[o] as f64;
                dw[i * o_dim + o] += xv * grow[o] as f64;
            }
            dx[b * i_dim + i] = acc as f32;
        }
    }
    Ok((
        Tensor::new(vec![bsz, i_dim], dx)?,
        Tensor::new(vec![i_dim, o_dim], dw.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![o_dim], db.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// 3x3 cross-correlation, stride 1, zero padding 1. Output spatial size
/// equals input spatial size.
pub fn conv2d(x: &Tensor, k: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bsz, c, h, w) = dims4(x.shape(), "conv2d input")?;
    let ks = k.shape();
    if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
        return Err(Error::Dimension(format!(
            "conv2d: kernel must be Fx Cx3x3, got {ks:?}"
        )));
    }
    let (f, kc) = (ks[0], ks[1]);
    if kc != c {
        return Err(Error::Dimension(format!(
            "conv2d: input shape {:?} has {} channels but kernel shape {:?} expects {}",
            x.shape(),
            c,
            ks,
            kc
        )));
    }
    if bias.shape() != [f] {
        return Err(Error::Dimension(format!(
            "conv2d: bias shape {:?} does not match {} filters",
            bias.shape(),
            f
        )));
    }
    let xd = x.data();
    let kd = k.data();
    let bd = bias.data();
    let mut y = vec![0.0f32; bsz * f * h * w];
    for b in 0..bsz {
        for fo in 0..f {
            let ybase = (b * f + fo) * h * w;
            for i in 0..h {
                for j in 0..w {
                    let mut acc = bd[fo] as f64;
                    for ci in 0..c {
                        let xbase = (b * c + ci) * h * w;
                        let kbase = (fo * c + ci) * 9;
                        for u in 0..3usize {
                            let ii = (i + u).wrapping_sub(1);
                            if ii >= h {
                                continue;
                            }
                            for v in 0..3usize {
                                let jj = (j + v).wrapping_sub(1);
                                if jj >= w {
                                    continue;
                                }
                                acc += xd[xbase + ii * w + jj] as f64
                                    * kd[kbase + u * 3 + v] as f64;
                            }
                        }
                    }
                    y[ybase + i * w + j] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![bsz, f, h, w], y)
}

/// Gradients of `conv2d` w.r.t. input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (bsz, c, h, w) = dims4(x.shape(), "conv2d input")?;
    let f = k.shape()[0];
    let xd = x.data();
    let kd = k.data();
    let gd = dy.data();
    let mut dx = vec![0.0f64; xd.len()];
    let mut dk = vec![0.0f64; kd.len()];
    let mut db = vec![0.0f64; f];
    for b in 0..bsz {
        for fo in 0..f {
            let ybase = (b * f + fo) * h * w;
            for i in 0..h {
                for j in 0..w {
                    let g = gd[ybase + i * w + j] as f64;
                    if g == 0.0 {
                        continue;
                    }
                    db[fo] += g;
                    for ci in 0..c {
                        let xbase = (b * c + ci) * h * w;
                        let kbase = (fo * c + ci) * 9;
                        for u in 0..3usize {
                            let ii = (i + u).wrapping_sub(1);
                            if ii >= h {
                                continue;
                            }
                            for v in 0..3usize {
                                let jj = (j + v).wrapping_sub(1);
                                if jj >= w {
                                    continue;
                                }
                                dx[xbase + ii * w + jj] += g * kd[kbase + u * 3 + v] as f64;
                                dk[kbase + u * 3 + v] += g * xd[xbase + ii * w + jj] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(k.shape().to_vec(), dk.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![f], db.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `dy` masked by `x > 0`.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// 2x2 max pooling, stride 2. Returns the pooled tensor and, for each
/// output element, the flat input index of its argmax (first cell in
/// row-major order on ties) so backward can route gradients.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (bsz, c, h, w) = dims4(x.shape(), "maxpool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "maxpool2: spatial dims must be even, got shape {:?}",
            x.shape()
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut y = vec![0.0f32; bsz * c * oh * ow];
    let mut argmax = vec![0u32; y.len()];
    for bc in 0..bsz * c {
        let xbase = bc * h * w;
        let ybase = bc * oh * ow;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = xbase + (2 * i) * w + 2 * j;
                let mut best = xd[best_idx];
                for (du, dv) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = xbase + (2 * i + du) * w + 2 * j + dv;
                    if xd[idx] > best {
                        best = xd[idx];
                        best_idx = idx;
                    }
                }
                y[ybase + i * ow + j] = best;
                argmax[ybase + i * ow + j] = best_idx as u32;
            }
        }
    }
    Ok((Tensor::new(vec![bsz, c, oh, ow], y)?, argmax))
}

/// Routes each output gradient to its recorded argmax cell.
pub fn maxpool2_backward(input_shape: &[usize], argmax: &[u32], dy: &Tensor) -> Tensor {
    let numel = input_shape.iter().product();
    let mut dx = vec![0.0f32; numel];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx as usize] += g;
    }
    Tensor::new(input_shape.to_vec(), dx).expect("shape from input")
}

/// Divides each row of a `BxD` tensor by its Euclidean norm. Returns the
/// normalized tensor and the per-row norms (needed by backward).
pub fn l2_normalize(x: &Tensor) -> Result<(Tensor, Vec<f32>)> {
    let (bsz, d) = dims2(x.shape(), "l2_normalize input")?;
    let xd = x.data();
    let mut y = vec![0.0f32; xd.len()];
    let mut norms = vec![0.0f32; bsz];
    for b in 0..bsz {
        let row = &xd[b * d..(b + 1) * d];
        let norm = row
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateEmbedding(format!(
                "row {b} has norm {norm:e}, cannot normalize"
            )));
        }
        norms[b] = norm as f32;
        for (out, &v) in y[b * d..(b + 1) * d].iter_mut().zip(row) {
            *out = (v as f64 / norm) as f32;
        }
    }
    Ok((Tensor::new(vec![bsz, d], y)?, norms))
}

/// Quotient-rule gradient of row normalization:
/// `dx = (dy - y * <y, dy>) / norm` per row.
pub fn l2_normalize_backward(y: &Tensor, norms: &[f32], dy: &Tensor) -> Tensor {
    let (bsz, d) = (y.shape()[0], y.shape()[1]);
    let yd = y.data();
    let gd = dy.data();
    let mut dx = vec![0.0f32; yd.len()];
    for b in 0..bsz {
        let yrow = &yd[b * d..(b + 1) * d];
        let grow = &gd[b * d..(b + 1) * d];
        let dot: f64 = yrow
            .iter()
            .zip(grow)
            .map(|(&a, &g)| a as f64 * g as f64)
            .sum();
        let norm = norms[b] as f64;
        for i in 0..d {
            dx[b * d + i] = ((grow[i] as f64 - yrow[i] as f64 * dot) / norm) as f32;
        }
    }
    Tensor::new(y.shape().to_vec(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn dense_identity_passthrough() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_zero_input_returns_bias() {
        let x = Tensor::zeros(vec![1, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = rand_tensor(&mut rng, vec![3, 2]);
        let b = Tensor::new(vec![2], vec![5.0, 6.0]).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0]);
    }

    #[test]
    fn dense_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, vec![4, 3]);
        let w = rand_tensor(&mut rng, vec![3, 2]);
        let b = rand_tensor(&mut rng, vec![2]);
        let y = dense(&x, &w, &b).unwrap();
        // independent triple-loop product
        for bi in 0..4 {
            for o in 0..2 {
                let mut want = b.data()[o];
                for i in 0..3 {
                    want += x.data()[bi * 3 + i] * w.data()[i * 2 + o];
                }
                assert!((y.data()[bi * 2 + o] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dense_shape_mismatch_names_both_shapes() {
        let x = Tensor::zeros(vec![1, 3]);
        let w = Tensor::zeros(vec![4, 2]);
        let b = Tensor::zeros(vec![2]);
        let err = dense(&x, &w, &b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, vec![1, 1, 3, 3]);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0; // center tap
        let k = Tensor::new(vec![1, 1, 3, 3], kd).unwrap();
        let b = Tensor::zeros(vec![1]);
        let y = conv2d(&x, &k, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_all_ones_counts_neighbors() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let k = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let y = conv2d(&x, &k, &b).unwrap();
        // center sees all 9 ones, corners see 4 (zero padding)
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, vec![2, 2, 5, 5]);
        let k = rand_tensor(&mut rng, vec![3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, vec![3]);
        let y = conv2d(&x, &k, &b).unwrap();
        // independent naive loop with explicit signed padding arithmetic
        for bi in 0..2i64 {
            for f in 0..3i64 {
                for i in 0..5i64 {
                    for j in 0..5i64 {
                        let mut want = b.data()[f as usize];
                        for c in 0..2i64 {
                            for u in -1..=1i64 {
                                for v in -1..=1i64 {
                                    let (ii, jj) = (i + u, j + v);
                                    if ii < 0 || ii >= 5 || jj < 0 || jj >= 5 {
                                        continue;
                                    }
                                    let xi = ((bi * 2 + c) * 5 + ii) * 5 + jj;
                                    let ki = ((f * 2 + c) * 3 + u + 1) * 3 + v + 1;
                                    want += x.data()[xi as usize] * k.data()[ki as usize];
                                }
                            }
                        }
                        let got = y.data()[(((bi * 3 + f) * 5 + i) * 5 + j) as usize];
                        assert!((got - want).abs() < 1e-5, "mismatch at {bi},{f},{i},{j}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_rejected() {
        let x = Tensor::zeros(vec![1, 2, 4, 4]);
        let k = Tensor::zeros(vec![1, 3, 3, 3]);
        let b = Tensor::zeros(vec![1]);
        assert!(matches!(
            conv2d(&x, &k, &b),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let allneg = Tensor::new(vec![4], vec![-3.0, -0.5, -2.0, -1e-9]).unwrap();
        assert!(relu(&allneg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_basic_and_tie_break() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        // constant tensor: pooled output constant, gradient to first cell
        let c = Tensor::new(vec![1, 1, 2, 2], vec![7.0; 4]).unwrap();
        let (y, arg) = maxpool2(&c).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(arg, vec![0]);
        let dx = maxpool2_backward(&[1, 1, 2, 2], &arg, &Tensor::scalar(1.0).reshaped(vec![1, 1, 1, 1]).unwrap());
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, vec![1, 1, 4, 4]);
        let (y, _) = maxpool2(&x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = f32::NEG_INFINITY;
                for u in 0..2 {
                    for v in 0..2 {
                        want = want.max(x.data()[(2 * i + u) * 4 + 2 * j + v]);
                    }
                }
                assert_eq!(y.data()[i * 2 + j], want);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = Tensor::zeros(vec![1, 1, 3, 4]);
        assert!(matches!(maxpool2(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, vec![2, 3, 4, 4]);
            let (_, arg) = maxpool2(&x).unwrap();
            let dy = rand_tensor(&mut rng, vec![2, 3, 2, 2]);
            let dx = maxpool2_backward(&[2, 3, 4, 4], &arg, &dy);
            let sum_in: f32 = dy.data().iter().sum();
            let sum_out: f32 = dx.data().iter().sum();
            assert!((sum_in - sum_out).abs() < 1e-5);
        }
    }

    #[test]
    fn l2_normalize_unit_rows() {
        let x = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (y, _) = l2_normalize(&x).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-6);
        assert!((y.data()[1] - 0.8).abs() < 1e-6);

        // idempotent on already-unit rows
        let (y2, _) = l2_normalize(&y).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn l2_normalize_row_norms_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, vec![5, 8]);
            let (y, _) = l2_normalize(&x).unwrap();
            for b in 0..5 {
                let n: f32 = y.row(b).iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn l2_normalize_rejects_zero_row() {
        let x = Tensor::zeros(vec![2, 4]);
        assert!(matches!(
            l2_normalize(&x),
            Err(Error::DegenerateEmbedding(_))
        ));
    }
}
