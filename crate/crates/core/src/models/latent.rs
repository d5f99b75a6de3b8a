use crate::numerics::Tensor;

/// A latent vector `z ∈ ℝᵈ` with views on its invertible part (first `n`
/// entries) and augmentation part (last `d − n` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    z: Tensor,
    n: usize,
}

impl LatentState {
    pub fn new(z: Tensor, n: usize) -> Self {
        let z = Tensor::vector(z.into_data());
        assert!(n <= z.len(), "invertible part {n} longer than latent {}", z.len());
        Self { z, n }
    }

    pub fn from_parts(invertible: &Tensor, augmentation: &Tensor) -> Self {
        let n = invertible.len();
        let mut data = invertible.data().to_vec();
        data.extend_from_slice(augmentation.data());
        Self {
            z: Tensor::vector(data),
            n,
        }
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn invertible_dim(&self) -> usize {
        self.n
    }

    /// `z_i`, the first `n` entries.
    pub fn invertible(&self) -> Tensor {
        Tensor::vector(self.z.data()[..self.n].to_vec())
    }

    /// `z_a`, the trailing entries.
    pub fn augmentation(&self) -> Tensor {
        Tensor::vector(self.z.data()[self.n..].to_vec())
    }
}

/// Non-overlapping blocks `(x_{tm}, …, x_{tm+m−1})`; a trailing partial block
/// is dropped and `m = 0` yields nothing.
pub fn delay_embed(series: &[f64], m: usize) -> Vec<Tensor> {
    if m == 0 {
        return Vec::new();
    }
    series
        .chunks_exact(m)
        .map(|c| Tensor::vector(c.to_vec()))
        .collect()
}
