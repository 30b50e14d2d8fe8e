//! A small dense-tensor network engine in double precision: convolutions,
//! transposed convolutions, max-pooling, batch normalization, activations,
//! the squared-error loss and momentum SGD, each with exact reverse-mode
//! gradients.

mod activation;
mod batchnorm;
mod conv;
mod loss;
mod optim;
mod pool;
mod tensor;

pub use activation::{Relu, Sigmoid};
pub use batchnorm::BatchNorm;
pub use conv::{Conv, TConv};
pub use loss::mse_loss;
pub use optim::Sgd;
pub use pool::MaxPool;
pub use tensor::{Param, Tensor};

use crate::error::Result;

/// A differentiable layer. `forward` caches what `backward` needs; parameter
/// gradients accumulate until cleared with [`Param::zero_grad`].
pub trait Layer {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor>;

    /// Gradient with respect to the input of the last `forward` call.
    fn backward(&mut self, dy: &Tensor) -> Result<Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Finite-difference gradient checks for [`Layer`] implementations.
pub mod gradcheck {
    use super::{Layer, Tensor};
    use crate::error::Result;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Entries uniform in `(-1, 1)`.
    pub fn random_tensor(shape: [usize; 5], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_raw(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// As [`random_tensor`] with every entry at least `gap` away from zero.
    pub fn away_from_zero(shape: [usize; 5], seed: u64, gap: f64) -> Tensor {
        let mut t = random_tensor(shape, seed);
        for v in t.data_mut() {
            if v.abs() < gap {
                *v = if *v < 0.0 { -gap - 0.1 } else { gap + 0.1 };
            }
        }
        t
    }

    /// A shuffled ramp with spacing 0.01, so no two entries are within 1e-3.
    pub fn distinct_tensor(shape: [usize; 5], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Tensor::from_raw(shape, v)
    }

    /// Worst relative error between analytic and central-difference
    /// gradients (step 1e-6) of `⟨layer(x), r⟩` for a random `r`, over all
    /// inputs and parameters. Entries are compared relative to
    /// `max(|a|, |n|, 1e-3·max|n|)`.
    pub fn gradient_error(layer: &mut dyn Layer, x: &Tensor, seed: u64) -> Result<f64> {
        let eps = 1e-6;
        let y = layer.forward(x, true)?;
        let r = random_tensor(y.shape(), seed);
        for p in layer.params_mut() {
            p.zero_grad();
        }
        let dx = layer.backward(&r)?;
        let loss = |layer: &mut dyn Layer, x: &Tensor| -> Result<f64> { Ok(layer.forward(x, true)?.dot(&r)) };
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let mut xp = x.clone();
        for i in 0..x.len() {
            let v = x.data()[i];
            xp.data_mut()[i] = v + eps;
            let lp = loss(layer, &xp)?;
            xp.data_mut()[i] = v - eps;
            let lm = loss(layer, &xp)?;
            xp.data_mut()[i] = v;
            pairs.push((dx.data()[i], (lp - lm) / (2.0 * eps)));
        }
        let counts: Vec<usize> = layer.params_mut().iter().map(|p| p.len()).collect();
        for (k, n) in counts.into_iter().enumerate() {
            for i in 0..n {
                let (v, g) = {
                    let p = &layer.params_mut()[k];
                    (p.value[i], p.grad[i])
                };
                layer.params_mut()[k].value[i] = v + eps;
                let lp = loss(layer, x)?;
                layer.params_mut()[k].value[i] = v - eps;
                let lm = loss(layer, x)?;
                layer.params_mut()[k].value[i] = v;
                pairs.push((g, (lp - lm) / (2.0 * eps)));
            }
        }
        let scale = pairs.iter().fold(0.0f64, |m, (_, n)| m.max(n.abs()));
        let floor = 1e-3 * scale;
        Ok(pairs
            .iter()
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max))
    }
}
