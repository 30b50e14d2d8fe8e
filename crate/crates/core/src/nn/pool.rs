use super::tensor::Tensor;
use super::Layer;
use crate::error::{Error, Result};

/// Max-pooling with window and stride 2 over every spatial axis (depth only
/// in 3D). Ties go to the first index in row-major window order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub dims: usize,
    cache: Option<([usize; 5], Vec<usize>)>,
}

impl MaxPool {
    pub fn new(dims: usize) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::param("pooling is 2D or 3D"));
        }
        Ok(Self { dims, cache: None })
    }

    fn window(&self) -> [usize; 3] {
        if self.dims == 3 {
            [2, 2, 2]
        } else {
            [1, 2, 2]
        }
    }

    /// Pooled tensor and, for each output value, the flat input index it came
    /// from.
    fn pool(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let w = self.window();
        let [d, h, ww] = x.spatial();
        if self.dims == 2 && d != 1 {
            return Err(Error::shape("2D layers need depth 1"));
        }
        if d % w[0] != 0 || h % w[1] != 0 || ww % w[2] != 0 {
            return Err(Error::shape(format!(
                "spatial extent {:?} is not divisible by the pooling window",
                x.spatial()
            )));
        }
        let (od, oh, ow) = (d / w[0], h / w[1], ww / w[2]);
        let shape = [x.batch(), x.channels(), od, oh, ow];
        let mut out = Vec::with_capacity(shape.iter().product());
        let mut arg = Vec::with_capacity(out.capacity());
        let plane = x.plane();
        for bc in 0..x.batch() * x.channels() {
            let base = bc * plane;
            for i in 0..od {
                for j in 0..oh {
                    for k in 0..ow {
                        let mut best = usize::MAX;
                        let mut bv = f64::NEG_INFINITY;
                        for a in 0..w[0] {
                            for b in 0..w[1] {
                                for c in 0..w[2] {
                                    let idx = base
                                        + ((i * w[0] + a) * h + j * w[1] + b) * ww
                                        + k * w[2]
                                        + c;
                                    let v = x.data()[idx];
                                    if best == usize::MAX || v > bv {
                                        best = idx;
                                        bv = v;
                                    }
                                }
                            }
                        }
                        out.push(bv);
                        arg.push(best);
                    }
                }
            }
        }
        Ok((Tensor::from_raw(shape, out), arg))
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.pool(x)?.0)
    }
}

impl Layer for MaxPool {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let (y, arg) = self.pool(x)?;
        self.cache = Some((x.shape(), arg));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self
            .cache
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        if dy.len() != arg.len() {
            return Err(Error::shape("pooling gradient has the wrong size"));
        }
        let mut dx = Tensor::zeros(shape);
        for (g, &i) in dy.data().iter().zip(&arg) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{distinct_tensor, gradient_error};

    #[test]
    fn picks_window_maxima() {
        let x = Tensor::from_vec([1, 1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 2.0, 2.0]).unwrap();
        let mut p = MaxPool::new(2).unwrap();
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        let dx = p.backward(&Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0, 7.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.forward(&Tensor::zeros([1, 1, 1, 3, 4]), true).is_err());
    }

    #[test]
    fn gradients() {
        let x = distinct_tensor([2, 2, 1, 4, 6], 1);
        assert!(gradient_error(&mut MaxPool::new(2).unwrap(), &x, 2).unwrap() <= 1e-6);
        let x = distinct_tensor([1, 2, 4, 4, 2], 3);
        assert!(gradient_error(&mut MaxPool::new(3).unwrap(), &x, 4).unwrap() <= 1e-6);
    }
}
