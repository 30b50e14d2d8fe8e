use matrixmultiply::dgemm;
use rand::Rng;

use super::tensor::{Param, Tensor};
use super::Layer;
use crate::error::{Error, Result};

/// Index bookkeeping of a strided, zero-padded cross-correlation over 2 or 3
/// spatial axes. In 2D the depth axis has extent 1 and is never padded.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Geometry {
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn new(dims: usize, k: usize, stride: usize, pad: usize, input: [usize; 3]) -> Result<Self> {
        let lift = |v: usize, flat: usize| if dims == 3 { v } else { flat };
        let kernel = [lift(k, 1), k, k];
        let stride = [lift(stride, 1), stride, stride];
        let pad = [lift(pad, 0), pad, pad];
        let mut output = [0; 3];
        for a in 0..3 {
            if input[a] + 2 * pad[a] < kernel[a] {
                return Err(Error::shape(format!(
                    "input extent {} is smaller than the kernel",
                    input[a]
                )));
            }
            output[a] = (input[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1;
        }
        Ok(Self {
            kernel,
            stride,
            pad,
            input,
            output,
        })
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    /// Visits `(row, column, input offset)` for every in-bounds tap, where the
    /// row indexes `(channel, kernel tap)` and the column an output position.
    fn for_each_tap(&self, channels: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let [id, ih, iw] = self.input;
        let plane = self.in_plane();
        for c in 0..channels {
            for z in 0..kd {
                for y in 0..kh {
                    for x in 0..kw {
                        let row = ((c * kd + z) * kh + y) * kw + x;
                        for oz in 0..od {
                            let iz = (oz * self.stride[0] + z) as isize - self.pad[0] as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * self.stride[1] + y) as isize - self.pad[1] as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let base = c * plane + (iz as usize * ih + iy as usize) * iw;
                                let col = (oz * oh + oy) * ow;
                                for ox in 0..ow {
                                    let ix =
                                        (ox * self.stride[2] + x) as isize - self.pad[2] as isize;
                                    if ix < 0 || ix >= iw as isize {
                                        continue;
                                    }
                                    f(row, col + ox, base + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, channels: usize, input: &[f64], cols: &mut [f64]) {
        let p = self.out_plane();
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(channels, |row, col, off| cols[row * p + col] = input[off]);
    }

    fn col2im(&self, channels: usize, cols: &[f64], out: &mut [f64]) {
        let p = self.out_plane();
        self.for_each_tap(channels, |row, col, off| out[off] += cols[row * p + col]);
    }
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    // SAFETY: callers pass slices whose lengths cover every index reachable
    // through the given dimensions and strides; `c` is row-major m×n.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn glorot(rng: &mut impl Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

fn check_dims(dims: usize, k: usize) -> Result<()> {
    if dims != 2 && dims != 3 {
        return Err(Error::param("convolutions are 2D or 3D"));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::param("kernel size must be odd"));
    }
    Ok(())
}

fn spatial_ok(dims: usize, x: &Tensor) -> Result<()> {
    if dims == 2 && x.spatial()[0] != 1 {
        return Err(Error::shape("2D layers need depth 1"));
    }
    Ok(())
}

/// Zero-padded cross-correlation. Weights are `(out, in, k[, k], k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub dims: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv {
    pub fn new(
        dims: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_dims(dims, kernel)?;
        if stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        let kv = kernel.pow(dims as u32);
        let weight = glorot(rng, out_channels * in_channels * kv, in_channels * kv, out_channels * kv);
        Ok(Self {
            dims,
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_channels]),
            input: None,
        })
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        spatial_ok(self.dims, x)?;
        Geometry::new(self.dims, self.kernel, self.stride, self.kernel / 2, x.spatial())
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Forward pass without caching the input.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let kk = self.in_channels * g.kernel_volume();
        let p = g.out_plane();
        let mut cols = vec![0.0; kk * p];
        let shape = [x.batch(), self.out_channels, g.output[0], g.output[1], g.output[2]];
        let mut out = Tensor::zeros(shape);
        for b in 0..x.batch() {
            g.im2col(self.in_channels, x.item(b), &mut cols);
            let y = out.item_mut(b);
            for (co, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            gemm(self.out_channels, kk, p, &self.weight.value, (kk, 1), &cols, (p, 1), 1.0, y);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        let g = self.geometry(&x)?;
        let kk = self.in_channels * g.kernel_volume();
        let p = g.out_plane();
        dy.check_shape(
            [x.batch(), self.out_channels, g.output[0], g.output[1], g.output[2]],
            "convolution gradient",
        )?;
        let mut cols = vec![0.0; kk * p];
        let mut dcols = vec![0.0; kk * p];
        let mut dx = Tensor::zeros(x.shape());
        for b in 0..x.batch() {
            g.im2col(self.in_channels, x.item(b), &mut cols);
            let d = dy.item(b);
            gemm(self.out_channels, p, kk, d, (p, 1), &cols, (1, p), 1.0, &mut self.weight.grad);
            for (co, row) in d.chunks(p).enumerate() {
                self.bias.grad[co] += row.iter().sum::<f64>();
            }
            gemm(kk, self.out_channels, p, &self.weight.value, (1, kk), d, (p, 1), 0.0, &mut dcols);
            g.col2im(self.in_channels, &dcols, dx.item_mut(b));
        }
        Ok(dx)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Transposed convolution: the adjoint of a stride-`s` convolution with
/// padding `k/2`, mapping extent `n` to `s·n`. Weights are
/// `(in, out, k[, k], k)`, the layout of the convolution it is adjoint to.
#[derive(Debug, Clone, PartialEq)]
pub struct TConv {
    pub dims: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl TConv {
    pub fn new(
        dims: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_dims(dims, kernel)?;
        if stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        let kv = kernel.pow(dims as u32);
        let weight = glorot(rng, out_channels * in_channels * kv, in_channels * kv, out_channels * kv);
        Ok(Self {
            dims,
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_channels]),
            input: None,
        })
    }

    /// Geometry of the adjoint convolution, whose input is this layer's output.
    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "transposed convolution expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        spatial_ok(self.dims, x)?;
        let sp = x.spatial();
        let s = self.stride;
        let out = if self.dims == 3 {
            [sp[0] * s, sp[1] * s, sp[2] * s]
        } else {
            [1, sp[1] * s, sp[2] * s]
        };
        let g = Geometry::new(self.dims, self.kernel, s, self.kernel / 2, out)?;
        if g.output != sp {
            return Err(Error::shape(format!(
                "kernel {} with stride {s} cannot invert extent {sp:?}",
                self.kernel
            )));
        }
        Ok(g)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let kk = self.out_channels * g.kernel_volume();
        let p = g.out_plane();
        let mut cols = vec![0.0; kk * p];
        let shape = [x.batch(), self.out_channels, g.input[0], g.input[1], g.input[2]];
        let mut out = Tensor::zeros(shape);
        let plane = g.in_plane();
        for b in 0..x.batch() {
            gemm(kk, self.in_channels, p, &self.weight.value, (1, kk), x.item(b), (p, 1), 0.0, &mut cols);
            let y = out.item_mut(b);
            g.col2im(self.out_channels, &cols, y);
            for (co, row) in y.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v += self.bias.value[co]);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::param("backward called before forward"))?;
        let g = self.geometry(&x)?;
        let kk = self.out_channels * g.kernel_volume();
        let p = g.out_plane();
        dy.check_shape(
            [x.batch(), self.out_channels, g.input[0], g.input[1], g.input[2]],
            "transposed convolution gradient",
        )?;
        let plane = g.in_plane();
        let mut dcols = vec![0.0; kk * p];
        let mut dx = Tensor::zeros(x.shape());
        for b in 0..x.batch() {
            let d = dy.item(b);
            for (co, row) in d.chunks(plane).enumerate() {
                self.bias.grad[co] += row.iter().sum::<f64>();
            }
            g.im2col(self.out_channels, d, &mut dcols);
            let xb = x.item(b);
            gemm(self.in_channels, p, kk, xb, (p, 1), &dcols, (1, p), 1.0, &mut self.weight.grad);
            gemm(self.in_channels, kk, p, &self.weight.value, (kk, 1), &dcols, (p, 1), 0.0, dx.item_mut(b));
        }
        Ok(dx)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

impl Layer for Conv {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Result<Tensor> {
        Conv::forward(self, x)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        Conv::backward(self, dy)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for TConv {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Result<Tensor> {
        TConv::forward(self, x)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        TConv::backward(self, dy)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_error, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv::new(2, 1, 1, 1, 1, &mut rng).unwrap();
        c.weight.value[0] = 1.0;
        let x = random_tensor([2, 1, 1, 4, 5], 1);
        assert_eq!(c.apply(&x).unwrap(), x);
        let mut c = Conv::new(2, 3, 2, 3, 1, &mut rng).unwrap();
        c.bias.value = vec![0.5, -1.0];
        let y = c.apply(&Tensor::zeros([1, 3, 1, 4, 4])).unwrap();
        assert!(y.item(0)[..16].iter().all(|v| *v == 0.5));
        assert!(y.item(0)[16..].iter().all(|v| *v == -1.0));
        assert!(c.apply(&Tensor::zeros([1, 2, 1, 4, 4])).is_err());

        let mut t = TConv::new(2, 1, 1, 1, 1, &mut rng).unwrap();
        t.weight.value[0] = 1.0;
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut c = Conv::new(2, 3, 2, 3, stride, &mut rng).unwrap();
            c.bias.value = vec![0.1, -0.2];
            let x = random_tensor([2, 3, 1, 8, 8], 2);
            assert!(gradient_error(&mut c, &x, 2).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn conv3d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = Conv::new(3, 2, 2, 3, 1, &mut rng).unwrap();
        let x = random_tensor([1, 2, 4, 4, 4], 5);
        assert!(gradient_error(&mut c, &x, 3).unwrap() <= 1e-5);
    }

    #[test]
    fn tconv_output_shape_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = TConv::new(2, 3, 2, 3, 2, &mut rng).unwrap();
        let x = random_tensor([2, 3, 1, 4, 4], 7);
        assert_eq!(t.apply(&x).unwrap().shape(), [2, 2, 1, 8, 8]);
        assert!(gradient_error(&mut t, &x, 4).unwrap() <= 1e-5);
        let mut t3 = TConv::new(3, 2, 2, 3, 2, &mut rng).unwrap();
        let x3 = random_tensor([1, 2, 2, 2, 2], 8);
        assert_eq!(t3.apply(&x3).unwrap().shape(), [1, 2, 4, 4, 4]);
        assert!(gradient_error(&mut t3, &x3, 5).unwrap() <= 1e-5);
    }

    #[test]
    fn tconv_is_the_adjoint_of_conv() {
        for (dims, sx) in [(2usize, [1usize, 5, 6]), (3, [3, 4, 5])] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut t = TConv::new(dims, 3, 2, 3, 2, &mut rng).unwrap();
            t.bias.value = vec![0.0; 2];
            // The matching convolution maps 2 channels to 3 with the same
            // kernel tensor.
            let mut c = Conv::new(dims, 2, 3, 3, 2, &mut rng).unwrap();
            c.weight.value = t.weight.value.clone();
            c.bias.value = vec![0.0; 3];
            let x = random_tensor([2, 3, sx[0], sx[1], sx[2]], 10);
            let big = if dims == 3 { [2 * sx[0], 2 * sx[1], 2 * sx[2]] } else { [1, 2 * sx[1], 2 * sx[2]] };
            let y = random_tensor([2, 2, big[0], big[1], big[2]], 11);
            let lhs = t.apply(&x).unwrap().dot(&y);
            let rhs = x.dot(&c.apply(&y).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
            // The input gradient of the convolution is the transposed one.
            c.forward(&y).unwrap();
            let dx = c.backward(&x).unwrap();
            let ty = t.apply(&x).unwrap();
            for (a, b) in dx.data().iter().zip(ty.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
