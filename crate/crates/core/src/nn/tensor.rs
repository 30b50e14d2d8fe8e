use crate::error::{Error, Result};

/// Dense `f64` tensor laid out as `(batch, channels, depth, height, width)`.
/// 2D data uses `depth = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("tensor values must be finite"));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_raw(shape: [usize; 5], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    /// Number of values per channel of one batch item.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of one batch item, all channels.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape[1] * self.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Stacks batch items with equal shapes.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::shape("stacked tensors differ in shape"));
            }
            data.extend_from_slice(&t.data);
        }
        shape[0] = items.iter().map(|t| t.shape[0]).sum();
        Ok(Tensor { shape, data })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape[0] != b.shape[0] || a.spatial() != b.spatial() {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let mut shape = a.shape;
        shape[1] += b.shape[1];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.shape[0] {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `first` channels.
    pub fn split_channels(&self, first: usize) -> Result<(Tensor, Tensor)> {
        if first > self.shape[1] {
            return Err(Error::shape("split point exceeds the channel count"));
        }
        let p = self.plane();
        let mut sa = self.shape;
        sa[1] = first;
        let mut sb = self.shape;
        sb[1] = self.shape[1] - first;
        let mut da = Vec::with_capacity(sa.iter().product());
        let mut db = Vec::with_capacity(sb.iter().product());
        for i in 0..self.shape[0] {
            let item = self.item(i);
            da.extend_from_slice(&item[..first * p]);
            db.extend_from_slice(&item[first * p..]);
        }
        Ok((Tensor::from_raw(sa, da), Tensor::from_raw(sb, db)))
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn check_shape(&self, expected: [usize; 5], what: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(format!(
                "{what}: expected {expected:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// A trainable array with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor::from_vec([2, 1, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 1, 2], (5..13).map(f64::from).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 3, 1, 1, 2]);
        assert_eq!(&c.item(1)[..2], &[3.0, 4.0]);
        let (x, y) = c.split_channels(1).unwrap();
        assert_eq!((x, y), (a, b));
        assert!(Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0]).is_err());
        assert!(Tensor::from_vec([1, 1, 1, 1, 1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn stacking() {
        let a = Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let s = Tensor::stack(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(s.shape(), [2, 1, 1, 1, 2]);
        assert!(Tensor::stack(&[]).is_err());
    }
}
