use super::tensor::Param;
use crate::error::{Error, Result};

/// Momentum SGD: `v ← m·v + g`, `p ← p - lr·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::param("learning rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param("momentum must lie in [0, 1)"));
        }
        Ok(Self { lr, momentum })
    }

    pub fn step(&self, params: &mut [&mut Param]) {
        for p in params.iter_mut() {
            for ((v, g), x) in p.velocity.iter_mut().zip(&p.grad).zip(p.value.iter_mut()) {
                *v = self.momentum * *v + g;
                *x -= self.lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mut p = Param::new(vec![1.0, 2.0]);
        p.grad = vec![0.5, -1.0];
        Sgd::new(0.1, 0.0).unwrap().step(&mut [&mut p]);
        assert_eq!(p.value, vec![0.95, 2.1]);

        let mut q = Param::new(vec![3.0]);
        Sgd::new(0.1, 0.9).unwrap().step(&mut [&mut q]);
        assert_eq!(q.value, vec![3.0]);

        let mut r = Param::new(vec![0.0]);
        r.grad = vec![2.0];
        let opt = Sgd::new(0.01, 0.9).unwrap();
        opt.step(&mut [&mut r]);
        opt.step(&mut [&mut r]);
        assert!((r.value[0] + 0.01 * 2.0 * 2.9).abs() < 1e-15);

        assert!(Sgd::new(-1.0, 0.5).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
