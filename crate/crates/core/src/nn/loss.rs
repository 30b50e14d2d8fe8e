use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Sum of squared errors over all nodes, averaged over the batch, and its
/// gradient `2(pred - truth) / batch`.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and truth {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    let b = pred.batch().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / b
        })
        .collect();
    Ok((loss / b, Tensor::from_raw(pred.shape(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::random_tensor;

    #[test]
    fn examples() {
        let t = random_tensor([1, 1, 1, 4, 4], 0);
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
        let mut p = t.clone();
        p.data_mut().iter_mut().for_each(|v| *v += 1.0);
        assert!((mse_loss(&p, &t).unwrap().0 - 16.0).abs() < 1e-12);
        assert!(mse_loss(&p, &random_tensor([1, 1, 1, 4, 3], 0)).is_err());
    }

    #[test]
    fn gradient() {
        let p = random_tensor([3, 1, 1, 3, 3], 1);
        let t = random_tensor([3, 1, 1, 3, 3], 2);
        let (_, g) = mse_loss(&p, &t).unwrap();
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            a.data_mut()[i] += eps;
            let mut b = p.clone();
            b.data_mut()[i] -= eps;
            let n = (mse_loss(&a, &t).unwrap().0 - mse_loss(&b, &t).unwrap().0) / (2.0 * eps);
            assert!((n - g.data()[i]).abs() <= 1e-8 * g.data()[i].abs().max(1.0));
        }
    }
}
