use super::tensor::Tensor;
use super::Layer;
use crate::error::{Error, Result};

/// `max(0, z)`, with subgradient 0 at `z = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(x: &Tensor) -> Tensor {
        Tensor::from_raw(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Result<Tensor> {
        self.input = Some(x.clone());
        Ok(Self::apply(x))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        dy.check_shape(x.shape(), "relu gradient")?;
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(v, d)| if *v > 0.0 { *d } else { 0.0 })
            .collect();
        Ok(Tensor::from_raw(x.shape(), data))
    }
}

/// `1 / (1 + e^{-z})`
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sigmoid {
    output: Option<Tensor>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(x: &Tensor) -> Tensor {
        Tensor::from_raw(x.shape(), x.data().iter().map(|v| sigmoid(*v)).collect())
    }
}

impl Layer for Sigmoid {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let y = Self::apply(x);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        dy.check_shape(y.shape(), "sigmoid gradient")?;
        let data = y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(s, d)| d * s * (1.0 - s))
            .collect();
        Ok(Tensor::from_raw(y.shape(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{away_from_zero, gradient_error, random_tensor};

    #[test]
    fn values() {
        assert_eq!(sigmoid(0.0), 0.5);
        let x = Tensor::from_vec([1, 1, 1, 1, 3], vec![-3.0, 2.0, 0.0]).unwrap();
        assert_eq!(Relu::apply(&x).data(), &[0.0, 2.0, 0.0]);
        let mut s = Sigmoid::new();
        s.forward(&Tensor::zeros([1, 1, 1, 1, 1]), true).unwrap();
        let g = s.backward(&Tensor::from_vec([1, 1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.data()[0], 0.25);
        let mut r = Relu::new();
        r.forward(&x, true).unwrap();
        let g = r.backward(&Tensor::from_vec([1, 1, 1, 1, 3], vec![1.0; 3]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn gradients() {
        let x = away_from_zero([2, 3, 1, 4, 4], 1, 1e-3);
        assert!(gradient_error(&mut Relu::new(), &x, 2).unwrap() <= 1e-5);
        let x = random_tensor([2, 3, 1, 4, 4], 3);
        assert!(gradient_error(&mut Sigmoid::new(), &x, 4).unwrap() <= 1e-5);
    }
}
