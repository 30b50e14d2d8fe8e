//! The DDSM network: a U-shaped encoder/decoder with skip concatenation that
//! maps stacked Cauchy difference functions to an index field.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::{Grid, ScalarField};
use crate::nn::{mse_loss, BatchNorm, Conv, Layer, MaxPool, Param, Relu, Sgd, Sigmoid, TConv, Tensor};

/// Activation of the 1×1 output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Nodes per axis of the sample grid.
    pub grid: Vec<usize>,
    pub n_pairs: usize,
    /// Encoder widths; the decoder mirrors them.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub head: HeadActivation,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl NetworkConfig {
    fn preset(grid: &[usize], n_pairs: usize, widths: Vec<usize>, lr: f64) -> Self {
        Self {
            grid: grid.to_vec(),
            n_pairs,
            widths,
            kernel: 3,
            head: HeadActivation::Sigmoid,
            lr,
            momentum: 0.9,
            batch: 16,
            epochs: 20,
            seed: 0,
        }
    }

    /// Widths 8/16/32, sized for a laptop CPU. The loss sums over all nodes,
    /// so on 64² grids a step of 1e-2 saturates the sigmoid head; 1e-4 trains
    /// reliably.
    pub fn desk(grid: &[usize], n_pairs: usize) -> Self {
        Self::preset(grid, n_pairs, vec![8, 16, 32], 1e-4)
    }

    /// Widths 32/64/128 with step 1e-2.
    pub fn full(grid: &[usize], n_pairs: usize) -> Self {
        Self::preset(grid, n_pairs, vec![32, 64, 128], 1e-2)
    }

    pub fn from_preset(name: &str, grid: &[usize], n_pairs: usize) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(grid, n_pairs)),
            "full" => Ok(Self::full(grid, n_pairs)),
            _ => Err(Error::param(format!("unknown preset `{name}` (desk, full)"))),
        }
    }

    pub fn dims(&self) -> usize {
        self.grid.len()
    }

    /// Coordinate slices plus one channel per Cauchy pair.
    pub fn in_channels(&self) -> usize {
        self.n_pairs + self.dims()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims() != 2 && self.dims() != 3 {
            return Err(Error::param("networks work on 2D or 3D grids"));
        }
        if self.grid.iter().any(|&n| n < 2) {
            return Err(Error::param("grids need at least two nodes per axis"));
        }
        if self.n_pairs == 0 {
            return Err(Error::param("at least one Cauchy pair is needed"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::param("widths must be a nonempty list of positive counts"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::param("kernel size must be odd"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        Sgd::new(self.lr, self.momentum)?;
        Ok(())
    }

    pub fn make_grid(&self) -> Result<Grid> {
        Grid::new(&self.grid, [-1.0, 1.0])
    }

    /// Tensor spatial extent of the grid.
    fn spatial(&self) -> [usize; 3] {
        match self.grid[..] {
            [a, b] => [1, a, b],
            [a, b, c] => [a, b, c],
            _ => unreachable!("validated"),
        }
    }

    /// Spatial extent after padding to a multiple of the pooling depth.
    fn padded(&self) -> [usize; 3] {
        let m = 1 << self.widths.len();
        let up = |n: usize| n.div_ceil(m) * m;
        let s = self.spatial();
        if self.dims() == 3 {
            [up(s[0]), up(s[1]), up(s[2])]
        } else {
            [1, up(s[1]), up(s[2])]
        }
    }
}

/// Stacks coordinate slices and the fields `φ^1, …, φ^N` into a one-item
/// batch of `N + dim` channels.
pub fn stack_input(grid: &Grid, phi: &[ScalarField]) -> Result<Tensor> {
    for p in phi {
        p.check(grid)?;
    }
    let c = grid.counts3();
    let spatial = if grid.dim() == 3 { c } else { [1, c[0], c[1]] };
    let n = grid.node_count();
    let mut data = Vec::with_capacity((grid.dim() + phi.len()) * n);
    for a in 0..grid.dim() {
        data.extend((0..n).map(|i| grid.coords(i)[a]));
    }
    for p in phi {
        data.extend_from_slice(p.values());
    }
    Tensor::from_vec([1, grid.dim() + phi.len(), spatial[0], spatial[1], spatial[2]], data)
}

#[derive(Debug, Clone, PartialEq)]
struct Encoder {
    conv: Conv,
    bn: BatchNorm,
    relu: Relu,
    pool: MaxPool,
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    up: TConv,
    bn: BatchNorm,
    relu: Relu,
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Sigmoid(Sigmoid),
    Relu(Relu),
}

impl Head {
    fn layer(&mut self) -> &mut dyn Layer {
        match self {
            Head::Sigmoid(s) => s,
            Head::Relu(r) => r,
        }
    }
}

/// Overlap scores of a predicted index field against a truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared error per node.
    pub mse: f64,
    pub dice: f64,
    pub iou: f64,
    /// Whether the largest predicted value lies inside the truth.
    pub argmax_inside: bool,
}

/// Scores `pred` against `truth`, both thresholded at 0.5.
pub fn evaluate(pred: &ScalarField, truth: &ScalarField) -> Result<Metrics> {
    if pred.counts() != truth.counts() {
        return Err(Error::shape("prediction and truth live on different grids"));
    }
    let (mut inter, mut a, mut b, mut se) = (0usize, 0usize, 0usize, 0.0);
    for (p, t) in pred.values().iter().zip(truth.values()) {
        let (pi, ti) = (*p >= 0.5, *t >= 0.5);
        inter += (pi && ti) as usize;
        a += pi as usize;
        b += ti as usize;
        se += (p - t) * (p - t);
    }
    let union = a + b - inter;
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(Metrics {
        mse: se / pred.len() as f64,
        dice: ratio(2 * inter, a + b),
        iou: ratio(inter, union),
        argmax_inside: truth.values()[pred.argmax()] >= 0.5,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    grid: Grid,
    encoders: Vec<Encoder>,
    decoders: Vec<Decoder>,
    head: Conv,
    activation: Head,
}

impl Network {
    /// Fresh network with Glorot-uniform weights drawn from `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.make_grid()?;
        let d = config.dims();
        let k = config.kernel;
        let w = &config.widths;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut encoders = Vec::with_capacity(w.len());
        let mut cin = config.in_channels();
        for &c in w {
            encoders.push(Encoder {
                conv: Conv::new(d, cin, c, k, 1, &mut rng)?,
                bn: BatchNorm::new(c),
                relu: Relu::new(),
                pool: MaxPool::new(d)?,
            });
            cin = c;
        }
        let mut decoders = Vec::with_capacity(w.len());
        for &c in w.iter().rev() {
            decoders.push(Decoder {
                up: TConv::new(d, cin, c, k, 2, &mut rng)?,
                bn: BatchNorm::new(c),
                relu: Relu::new(),
            });
            cin = 2 * c;
        }
        let head = Conv::new(d, cin, 1, 1, 1, &mut rng)?;
        let activation = match config.head {
            HeadActivation::Sigmoid => Head::Sigmoid(Sigmoid::new()),
            HeadActivation::Relu => Head::Relu(Relu::new()),
        };
        Ok(Self {
            config,
            grid,
            encoders,
            decoders,
            head,
            activation,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn param_count(&self) -> usize {
        self.state().iter().map(|s| s.len()).sum()
    }

    /// Trainable parameters in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.extend(e.conv.params_mut());
            out.extend(e.bn.params_mut());
        }
        for d in &mut self.decoders {
            out.extend(d.up.params_mut());
            out.extend(d.bn.params_mut());
        }
        out.extend(Layer::params_mut(&mut self.head));
        out
    }

    /// Every persistent buffer in declaration order: per layer its weights
    /// and biases, and for batch norm scale, shift, running mean and running
    /// variance.
    pub fn state(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        fn bn(b: &BatchNorm) -> [&[f64]; 4] {
            [&b.gamma.value, &b.beta.value, &b.running_mean, &b.running_var]
        }
        for e in &self.encoders {
            out.extend([&e.conv.weight.value[..], &e.conv.bias.value]);
            out.extend(bn(&e.bn));
        }
        for d in &self.decoders {
            out.extend([&d.up.weight.value[..], &d.up.bias.value]);
            out.extend(bn(&d.bn));
        }
        out.extend([&self.head.weight.value[..], &self.head.bias.value]);
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for e in &mut self.encoders {
            out.extend([&mut e.conv.weight.value, &mut e.conv.bias.value]);
            let b = &mut e.bn;
            out.extend([&mut b.gamma.value, &mut b.beta.value, &mut b.running_mean, &mut b.running_var]);
        }
        for d in &mut self.decoders {
            out.extend([&mut d.up.weight.value, &mut d.up.bias.value]);
            let b = &mut d.bn;
            out.extend([&mut b.gamma.value, &mut b.beta.value, &mut b.running_mean, &mut b.running_var]);
        }
        out.extend([&mut self.head.weight.value, &mut self.head.bias.value]);
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.spatial();
        let want = [x.batch(), self.config.in_channels(), s[0], s[1], s[2]];
        if x.batch() == 0 || x.shape() != want {
            return Err(Error::shape(format!(
                "network expects input {want:?}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Replicates the last slice along each axis up to the padded extent.
    fn pad(&self, x: &Tensor) -> Tensor {
        let [d, h, w] = x.spatial();
        let p = self.config.padded();
        if p == [d, h, w] {
            return x.clone();
        }
        let mut shape = x.shape();
        shape[2..].copy_from_slice(&p);
        let mut out = Vec::with_capacity(shape.iter().product());
        for bc in 0..x.batch() * x.channels() {
            let src = &x.data()[bc * x.plane()..(bc + 1) * x.plane()];
            for i in 0..p[0] {
                for j in 0..p[1] {
                    let row = (i.min(d - 1) * h + j.min(h - 1)) * w;
                    out.extend((0..p[2]).map(|k| src[row + k.min(w - 1)]));
                }
            }
        }
        Tensor::from_raw(shape, out)
    }

    /// Keeps the leading `spatial` corner of a padded tensor.
    fn crop(x: &Tensor, spatial: [usize; 3]) -> Tensor {
        let [_, h, w] = x.spatial();
        if x.spatial() == spatial {
            return x.clone();
        }
        let mut shape = x.shape();
        shape[2..].copy_from_slice(&spatial);
        let mut out = Vec::with_capacity(shape.iter().product());
        for bc in 0..x.batch() * x.channels() {
            let src = &x.data()[bc * x.plane()..(bc + 1) * x.plane()];
            for i in 0..spatial[0] {
                for j in 0..spatial[1] {
                    let row = (i * h + j) * w;
                    out.extend_from_slice(&src[row..row + spatial[2]]);
                }
            }
        }
        Tensor::from_raw(shape, out)
    }

    /// Adjoint of [`Network::crop`]: zero-fills up to the padded extent.
    fn uncrop(&self, dy: &Tensor) -> Tensor {
        let p = self.config.padded();
        let [d, h, w] = dy.spatial();
        if p == [d, h, w] {
            return dy.clone();
        }
        let mut shape = dy.shape();
        shape[2..].copy_from_slice(&p);
        let mut out = Tensor::zeros(shape);
        let plane: usize = p.iter().product();
        for bc in 0..dy.batch() * dy.channels() {
            let src = &dy.data()[bc * dy.plane()..(bc + 1) * dy.plane()];
            let dst = &mut out.data_mut()[bc * plane..(bc + 1) * plane];
            for i in 0..d {
                for j in 0..h {
                    let o = (i * p[1] + j) * p[2];
                    dst[o..o + w].copy_from_slice(&src[(i * h + j) * w..(i * h + j + 1) * w]);
                }
            }
        }
        out
    }

    /// Differentiable forward pass; batch norm uses batch statistics when
    /// `train` is set. Output has one channel and the input's spatial shape.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.pad(x);
        let mut skips = Vec::with_capacity(self.encoders.len());
        for e in &mut self.encoders {
            h = e.conv.forward(&h)?;
            h = e.bn.forward(&h, train)?;
            h = e.relu.forward(&h, train)?;
            skips.push(h.clone());
            h = e.pool.forward(&h, train)?;
        }
        for d in &mut self.decoders {
            h = d.up.forward(&h)?;
            h = d.bn.forward(&h, train)?;
            h = d.relu.forward(&h, train)?;
            let skip = skips.pop().expect("one skip per decoder");
            h = Tensor::concat_channels(&h, &skip)?;
        }
        h = self.head.forward(&h)?;
        h = self.activation.layer().forward(&h, train)?;
        Ok(Self::crop(&h, self.config.spatial()))
    }

    /// Accumulates parameter gradients of the last [`Network::forward`].
    pub fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let mut g = self.uncrop(dy);
        g = self.activation.layer().backward(&g)?;
        g = self.head.backward(&g)?;
        let mut skip_grads = Vec::with_capacity(self.decoders.len());
        for d in self.decoders.iter_mut().rev() {
            let (gu, gs) = g.split_channels(d.up.out_channels)?;
            skip_grads.push(gs);
            g = d.relu.backward(&gu)?;
            g = d.bn.backward(&g)?;
            g = d.up.backward(&g)?;
        }
        for e in self.encoders.iter_mut().rev() {
            g = e.pool.backward(&g)?;
            let gs = skip_grads.pop().expect("one skip per encoder");
            g.data_mut().iter_mut().zip(gs.data()).for_each(|(a, b)| *a += b);
            g = e.relu.backward(&g)?;
            g = e.bn.backward(&g)?;
            g = e.conv.backward(&g)?;
        }
        Ok(())
    }

    /// Evaluation-mode forward pass that leaves the network untouched.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.pad(x);
        let mut skips = Vec::with_capacity(self.encoders.len());
        for e in &self.encoders {
            h = Relu::apply(&e.bn.apply(&e.conv.apply(&h)?)?);
            let pooled = e.pool.apply(&h)?;
            skips.push(h);
            h = pooled;
        }
        for d in &self.decoders {
            h = Relu::apply(&d.bn.apply(&d.up.apply(&h)?)?);
            let skip = skips.pop().expect("one skip per decoder");
            h = Tensor::concat_channels(&h, &skip)?;
        }
        h = self.head.apply(&h)?;
        h = match self.activation {
            Head::Sigmoid(_) => Sigmoid::apply(&h),
            Head::Relu(_) => Relu::apply(&h),
        };
        Ok(Self::crop(&h, self.config.spatial()))
    }

    /// Input tensor of one sample.
    pub fn sample_input(&self, sample: &Sample) -> Result<Tensor> {
        if sample.phi.len() != self.config.n_pairs {
            return Err(Error::Dataset(format!(
                "sample has {} Cauchy pairs, the network expects {}",
                sample.phi.len(),
                self.config.n_pairs
            )));
        }
        stack_input(&self.grid, &sample.phi).map_err(|e| Error::Dataset(e.to_string()))
    }

    fn target(&self, samples: &[&Sample]) -> Result<Tensor> {
        let s = self.config.spatial();
        let mut data = Vec::with_capacity(samples.len() * self.grid.node_count());
        for sample in samples {
            sample.mask.check(&self.grid).map_err(|e| Error::Dataset(e.to_string()))?;
            data.extend_from_slice(sample.mask.values());
        }
        Tensor::from_vec([samples.len(), 1, s[0], s[1], s[2]], data)
    }

    /// Minibatch momentum SGD on the squared error against the truth masks.
    /// Returns the mean training loss of each epoch.
    pub fn train(&mut self, samples: &[Sample]) -> Result<Vec<f64>> {
        self.train_with(samples, |_, _| {})
    }

    /// As [`Network::train`], reporting `(epoch, loss)` after each epoch.
    pub fn train_with(
        &mut self,
        samples: &[Sample],
        mut progress: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::Dataset("cannot train on an empty dataset".into()));
        }
        let inputs = samples
            .iter()
            .map(|s| self.sample_input(s))
            .collect::<Result<Vec<_>>>()?;
        let opt = Sgd::new(self.config.lr, self.config.momentum)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch) {
                let x = Tensor::stack(&chunk.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>())?;
                let t = self.target(&chunk.iter().map(|&i| &samples[i]).collect::<Vec<_>>())?;
                for p in self.params_mut() {
                    p.zero_grad();
                }
                let y = self.forward(&x, true)?;
                let (loss, dy) = mse_loss(&y, &t)?;
                self.backward(&dy)?;
                opt.step(&mut self.params_mut());
                total += loss * chunk.len() as f64;
            }
            let mean = total / samples.len() as f64;
            history.push(mean);
            progress(epoch + 1, mean);
        }
        Ok(history)
    }

    /// Index field predicted from the difference functions `φ^1, …, φ^N`.
    pub fn reconstruct(&self, phi: &[ScalarField]) -> Result<ScalarField> {
        if phi.len() != self.config.n_pairs {
            return Err(Error::shape(format!(
                "{} difference functions given, the network expects {}",
                phi.len(),
                self.config.n_pairs
            )));
        }
        let y = self.predict(&stack_input(&self.grid, phi)?)?;
        ScalarField::from_values(&self.grid, y.into_data())
    }

    pub fn reconstruct_sample(&self, sample: &Sample) -> Result<ScalarField> {
        self.reconstruct(&sample.phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleConfig, SampleGenerator};
    use crate::geometry::Scenario;
    use crate::nn::mse_loss;
    use rand::Rng;

    fn tiny(grid: usize, n: usize) -> NetworkConfig {
        let mut c = NetworkConfig::desk(&[grid, grid], n);
        c.widths = vec![4, 8];
        c.seed = 3;
        c
    }

    fn random_input(cfg: &NetworkConfig, batch: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.spatial();
        let shape = [batch, cfg.in_channels(), s[0], s[1], s[2]];
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn stacked_input_layout() {
        let grid = Grid::square(10).unwrap();
        let phi = vec![ScalarField::from_fn(&grid, |x| x[0] + 2.0 * x[1]); 10];
        let t = stack_input(&grid, &phi).unwrap();
        assert_eq!(t.shape(), [1, 12, 1, 10, 10]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[100 + 9], 1.0);
        assert_eq!(&t.data()[200..300], phi[0].values());
        assert_eq!(stack_input(&grid, &phi[..1]).unwrap().channels(), 3);
        let other = ScalarField::zeros(&Grid::square(11).unwrap());
        assert!(stack_input(&grid, &[other]).is_err());
    }

    #[test]
    fn output_shape_range_and_determinism() {
        for n in [8, 9, 13] {
            let cfg = tiny(n, 2);
            let mut net = Network::new(cfg.clone()).unwrap();
            let x = random_input(&cfg, 2, 1);
            let y = net.forward(&x, true).unwrap();
            assert_eq!(y.shape(), [2, 1, 1, n, n]);
            assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
            let a = net.forward(&x, false).unwrap();
            let b = net.predict(&x).unwrap();
            assert_eq!(a, b);
            assert_eq!(b, net.predict(&x).unwrap());
        }
        let cfg = tiny(8, 2);
        let net = Network::new(cfg.clone()).unwrap();
        assert!(net.predict(&random_input(&tiny(8, 3), 1, 0)).is_err());
        assert_eq!(Network::new(cfg).unwrap(), net);
    }

    #[test]
    fn zero_head_gives_one_half() {
        let cfg = tiny(8, 1);
        let mut net = Network::new(cfg.clone()).unwrap();
        net.head.weight.value.iter_mut().for_each(|v| *v = 0.0);
        let y = net.predict(&random_input(&cfg, 1, 2)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn three_dimensional_shapes() {
        let mut cfg = NetworkConfig::desk(&[6, 6, 6], 2);
        cfg.widths = vec![2, 3];
        let mut net = Network::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 1, 4);
        assert_eq!(x.channels(), 5);
        assert_eq!(net.forward(&x, true).unwrap().shape(), [1, 1, 6, 6, 6]);
    }

    #[test]
    fn end_to_end_parameter_gradients() {
        let cfg = tiny(8, 1);
        let mut net = Network::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = {
            let mut t = Tensor::zeros([2, 1, 1, 8, 8]);
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            t
        };
        let loss = |net: &mut Network| mse_loss(&net.forward(&x, true).unwrap(), &t).unwrap().0;
        for p in net.params_mut() {
            p.zero_grad();
        }
        let y = net.forward(&x, true).unwrap();
        let (_, dy) = mse_loss(&y, &t).unwrap();
        net.backward(&dy).unwrap();
        let sizes: Vec<usize> = net.params_mut().iter().map(|p| p.len()).collect();
        let total: usize = sizes.iter().sum();
        assert!(total >= 100);
        let eps = 1e-6;
        let mut pairs = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            let picks: Vec<usize> = if n <= 8 {
                (0..n).collect()
            } else {
                (0..12).map(|_| rng.random_range(0..n)).collect()
            };
            for i in picks {
                let v = net.params_mut()[k].value[i];
                let analytic = net.params_mut()[k].grad[i];
                net.params_mut()[k].value[i] = v + eps;
                let lp = loss(&mut net);
                net.params_mut()[k].value[i] = v - eps;
                let lm = loss(&mut net);
                net.params_mut()[k].value[i] = v;
                pairs.push((analytic, (lp - lm) / (2.0 * eps)));
            }
        }
        assert!(pairs.len() >= 100, "{}", pairs.len());
        // biases feeding batch norm have exactly zero gradient, so entries are
        // compared against a floor tied to the largest gradient
        let floor = 1e-3 * pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        let worst = pairs
            .iter()
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn evaluation_examples() {
        let grid = Grid::square(4).unwrap();
        let truth = ScalarField::from_fn(&grid, |x| (x[0] < 0.0) as u8 as f64);
        let m = evaluate(&truth, &truth).unwrap();
        assert_eq!((m.dice, m.iou, m.mse, m.argmax_inside), (1.0, 1.0, 0.0, true));
        let low = ScalarField::from_fn(&grid, |_| 0.5 - 1e-9);
        assert_eq!(evaluate(&low, &truth).unwrap().dice, 0.0);
        let half = ScalarField::from_fn(&grid, |x| (x[0] < 0.0 && x[1] < 0.0) as u8 as f64);
        let m = evaluate(&half, &truth).unwrap();
        assert!((m.dice - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.iou - 0.5).abs() < 1e-15);
        assert!(evaluate(&ScalarField::zeros(&Grid::square(5).unwrap()), &truth).is_err());
    }

    fn samples(count: u64) -> Vec<Sample> {
        let gen = SampleGenerator::new(SampleConfig {
            scenario: Scenario::Circles2d,
            grid: 16,
            n_pairs: 2,
            ..SampleConfig::default()
        })
        .unwrap();
        (0..count).map(|s| gen.generate(s).unwrap()).collect()
    }

    #[test]
    fn training_is_deterministic_and_respects_lr() {
        let data = samples(3);
        let mut cfg = tiny(16, 2);
        cfg.epochs = 3;
        cfg.batch = 2;
        let h1 = Network::new(cfg.clone()).unwrap().train(&data).unwrap();
        let h2 = Network::new(cfg.clone()).unwrap().train(&data).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 3);

        cfg.lr = 0.0;
        let mut net = Network::new(cfg.clone()).unwrap();
        let before = net.state().iter().map(|s| s.to_vec()).collect::<Vec<_>>();
        net.train(&data).unwrap();
        let after = net.state();
        let n = after.len();
        // scale and shift stay fixed; only batch-norm running statistics move
        for (k, (a, b)) in before.iter().zip(&after).enumerate() {
            let running = (k % 6 == 4 || k % 6 == 5) && k + 2 < n;
            if !running {
                assert_eq!(&a[..], &b[..], "buffer {k}");
            }
        }

        assert!(net.train(&[]).is_err());
        let mut wrong = samples(1);
        wrong[0].phi.pop();
        assert!(net.train(&wrong).is_err());
    }

    #[test]
    fn overfits_a_single_sample() {
        let data = samples(1);
        let mut cfg = tiny(16, 2);
        cfg.epochs = 200;
        cfg.batch = 1;
        cfg.lr = 1e-3;
        let history = Network::new(cfg).unwrap().train(&data).unwrap();
        let last = *history.last().unwrap();
        assert!(last <= 0.1 * history[0], "{} -> {last}", history[0]);
    }
}
