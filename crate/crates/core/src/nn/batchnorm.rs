use super::tensor::{Param, Tensor};
use super::Layer;
use crate::error::{Error, Result};

/// Per-channel batch normalization with a learnable scale and shift. In
/// training mode the batch statistics are used and the running statistics
/// are updated as `r ← m·r + (1 - m)·batch` (unbiased variance); in
/// evaluation mode the running statistics are used.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
enum Cache {
    Train { xhat: Tensor, inv_std: Vec<f64> },
    Eval { xhat: Tensor },
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.9,
            eps: 1e-5,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    fn each<F: FnMut(usize, &[f64])>(x: &Tensor, mut f: F) {
        let p = x.plane();
        for b in 0..x.batch() {
            for (c, row) in x.item(b).chunks(p).enumerate() {
                f(c, row);
            }
        }
    }

    fn affine(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let p = x.plane();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for b in 0..x.batch() {
            for (c, (hr, yr)) in xhat
                .item_mut(b)
                .chunks_mut(p)
                .zip(y.item_mut(b).chunks_mut(p))
                .enumerate()
            {
                for (h, v) in hr.iter_mut().zip(yr.iter_mut()) {
                    *h = (*h - mean[c]) * inv_std[c];
                    *v = self.gamma.value[c] * *h + self.beta.value[c];
                }
            }
        }
        (xhat, y)
    }

    /// Evaluation-mode forward pass without caching.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        Ok(self.affine(x, &self.running_mean, &inv).1)
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check(x)?;
        if !train {
            let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let (xhat, y) = self.affine(x, &self.running_mean, &inv);
            self.cache = Some(Cache::Eval { xhat });
            return Ok(y);
        }
        let m = x.batch() * x.plane();
        if m < 2 {
            return Err(Error::param(
                "batch norm in training mode needs at least two values per channel",
            ));
        }
        let c = self.channels;
        let mut mean = vec![0.0; c];
        Self::each(x, |k, row| mean[k] += row.iter().sum::<f64>());
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; c];
        Self::each(x, |k, row| {
            var[k] += row.iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>()
        });
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (xhat, y) = self.affine(x, &mean, &inv_std);
        let unbias = m as f64 / (m - 1) as f64;
        for k in 0..c {
            self.running_mean[k] = self.momentum * self.running_mean[k] + (1.0 - self.momentum) * mean[k];
            self.running_var[k] =
                self.momentum * self.running_var[k] + (1.0 - self.momentum) * var[k] * unbias;
        }
        self.cache = Some(Cache::Train { xhat, inv_std });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        let p = dy.plane();
        match cache {
            Cache::Eval { xhat } => {
                dy.check_shape(xhat.shape(), "batch norm gradient")?;
                let mut dx = dy.clone();
                for b in 0..dy.batch() {
                    let hi = xhat.item(b);
                    let di = dy.item(b);
                    for (c, row) in dx.item_mut(b).chunks_mut(p).enumerate() {
                        let (dr, hr) = (&di[c * p..(c + 1) * p], &hi[c * p..(c + 1) * p]);
                        self.beta.grad[c] += dr.iter().sum::<f64>();
                        self.gamma.grad[c] += dr.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>();
                        let s = self.gamma.value[c] / (self.running_var[c] + self.eps).sqrt();
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                }
                Ok(dx)
            }
            Cache::Train { xhat, inv_std } => {
                dy.check_shape(xhat.shape(), "batch norm gradient")?;
                let c = self.channels;
                let m = (dy.batch() * p) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dyx = vec![0.0; c];
                for b in 0..dy.batch() {
                    for (k, (dr, hr)) in dy.item(b).chunks(p).zip(xhat.item(b).chunks(p)).enumerate() {
                        sum_dy[k] += dr.iter().sum::<f64>();
                        sum_dyx[k] += dr.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>();
                    }
                }
                for k in 0..c {
                    self.beta.grad[k] += sum_dy[k];
                    self.gamma.grad[k] += sum_dyx[k];
                }
                let mut dx = dy.clone();
                for b in 0..dy.batch() {
                    let hi = xhat.item(b);
                    for (k, row) in dx.item_mut(b).chunks_mut(p).enumerate() {
                        let s = self.gamma.value[k] * inv_std[k] / m;
                        for (v, h) in row.iter_mut().zip(&hi[k * p..(k + 1) * p]) {
                            *v = s * (m * *v - sum_dy[k] - h * sum_dyx[k]);
                        }
                    }
                }
                Ok(dx)
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
