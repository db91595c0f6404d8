//! Weight initialization shared by the embedder and the MLP head.

use crate::tensor::Tensor;
use rand::Rng;

/// Uniform samples in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
pub(crate) fn he_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("init shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_and_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let ta = he_uniform(&mut a, vec![10, 10], 10);
        let tb = he_uniform(&mut b, vec![10, 10], 10);
        assert_eq!(ta, tb);
        let bound = (6.0f32 / 10.0).sqrt();
        assert!(ta.data().iter().all(|v| v.abs() <= bound));
        // not all the same value
        assert!(ta.data().iter().any(|&v| v != ta.data()[0]));
    }
}
