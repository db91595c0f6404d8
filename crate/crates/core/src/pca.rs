//! Two-component PCA by power iteration with deflation, for plotting
//! embedding spaces. Deterministic: seeded start vectors, pinned sign
//! convention, double-precision covariance arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{dims2, Tensor};

const TOL: f64 = 1e-9;
const MAX_ITERS: usize = 1000;

/// 2D projection of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    /// Per-image (x, y) in the principal plane; zero-mean by construction.
    pub points: Vec<(f32, f32)>,
    pub labels: Vec<usize>,
    /// Fraction of total variance each component explains, non-increasing.
    pub explained: [f32; 2],
}

/// Projects `e` (N×D, N ≥ 3) onto its top two principal directions.
/// Signs are fixed so each component's largest-magnitude entry is positive.
pub fn pca_project(e: &Tensor, labels: &[usize]) -> Result<Projection2D> {
    let (n, d) = dims2(e.shape(), "pca_project embeddings")?;
    if n < 3 {
        return Err(Error::Contract(format!(
            "pca_project needs at least 3 rows, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "pca_project: {n} rows vs {} labels",
            labels.len()
        )));
    }
    if d < 2 {
        return Err(Error::Dimension(format!(
            "pca_project needs at least 2 dimensions, got {d}"
        )));
    }

    // mean-center in f64
    let mut centered = vec![0.0f64; n * d];
    for j in 0..d {
        let mut mean = 0.0f64;
        for i in 0..n {
            mean += e.data()[i * d + j] as f64;
        }
        mean /= n as f64;
        for i in 0..n {
            centered[i * d + j] = e.data()[i * d + j] as f64 - mean;
        }
    }

    // sample covariance, D×D
    let mut cov = vec![0.0f64; d * d];
    for i in 0..n {
        let row = &centered[i * d..(i + 1) * d];
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / (n - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let total_variance: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    if total_variance < 1e-18 {
        return Err(Error::DegenerateData(
            "pca_project on rank-0 data (all rows identical)".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let (v1, lambda1) = power_iteration(&cov, d, &[], &mut rng);
    let (v2, lambda2) = power_iteration(&cov, d, &[&v1], &mut rng);

    let components = [fix_sign(v1), fix_sign(v2)];
    let lambdas = [lambda1.max(0.0), lambda2.max(0.0)];
    let points = (0..n)
        .map(|i| {
            let row = &centered[i * d..(i + 1) * d];
            let x: f64 = row.iter().zip(&components[0]).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&components[1]).map(|(a, b)| a * b).sum();
            (x as f32, y as f32)
        })
        .collect();
    Ok(Projection2D {
        points,
        labels: labels.to_vec(),
        explained: [
            (lambdas[0] / total_variance) as f32,
            (lambdas[1] / total_variance) as f32,
        ],
    })
}

/// Leading eigenpair of `cov` restricted to the complement of `exclude`,
/// which must be orthonormal. Re-orthogonalizes every iteration.
fn power_iteration(
    cov: &[f64],
    d: usize,
    exclude: &[&Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, exclude);
    if normalize(&mut v) < 1e-12 {
        // the random start collapsed; fall back to coordinate directions
        for basis in 0..d {
            v = vec![0.0; d];
            v[basis] = 1.0;
            orthogonalize(&mut v, exclude);
            if normalize(&mut v) >= 1e-12 {
                break;
            }
        }
    }
    let mut lambda = 0.0f64;
    for _ in 0..MAX_ITERS {
        let mut next = mat_vec(cov, &v, d);
        orthogonalize(&mut next, exclude);
        let norm = normalize(&mut next);
        if norm < 1e-15 {
            // (deflated) matrix annihilates the subspace: eigenvalue zero,
            // keep the current orthonormal direction
            return (v, 0.0);
        }
        let new_lambda = dot(&next, &mat_vec(cov, &next, d));
        // covariance matrices are PSD, so iterates settle without sign flips
        let delta: f64 = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        lambda = new_lambda;
        if delta < TOL {
            break;
        }
    }
    (v, lambda)
}

fn mat_vec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], against: &[&Vec<f64>]) {
    for u in against {
        let proj = dot(v, u);
        for (vi, ui) in v.iter_mut().zip(u.iter()) {
            *vi -= proj * ui;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm >= 1e-15 {
        for vi in v.iter_mut() {
            *vi /= norm;
        }
    }
    norm
}

/// Flips the vector so its largest-magnitude entry is positive; exact
/// magnitude ties take the earliest index.
fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut at = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[at].abs() {
            at = i;
        }
    }
    if v[at] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    v
}
