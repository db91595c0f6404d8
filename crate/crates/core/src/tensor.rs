//! Dense row-major tensors of 32-bit floats.
//!
//! The one data currency of the crate: images, weights, embeddings and
//! gradients are all `Tensor`s. Shapes are checked explicitly by every
//! consumer; there is no broadcasting beyond bias addition inside the
//! layer kernels.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor from a shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("no rows given".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Scalar extraction; errors when the tensor is not a single element.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Same data, new shape. Element count must be preserved.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// One row of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.shape[self.rank() - 1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean distance between two equal-length slices.
    pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>() as f32
    }
}

/// `BxCxHxW` shape helper used by the conv/pool kernels.
pub(crate) fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "{what} expects a BxCxHxW tensor, got shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

/// `BxD` shape helper.
pub(crate) fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "{what} expects a rank-2 tensor, got shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[1]))
}
