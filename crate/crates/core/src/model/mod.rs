//! The surface-regression network: three conv/relu/pool stages followed by
//! two fully-connected layers whose output holds `lambda` surfaces times
//! `N/2` middle-column positions.

mod io;
mod train;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{evaluate, train, train_step, EpochStats, Sample, StepStats, TrainConfig, TrainHistory, TrainStop};

use crate::error::{Error, Result};
use crate::numerics::{
    conv2d_backward, conv2d_forward, euclidean_loss, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, pooled_len, relu_backward, relu_forward, LayerKind, LayerParams, LossNetwork,
    Scalar, Tensor,
};
use crate::rng::RngState;

pub const POOL_SIZE: usize = 2;
pub const POOL_STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Patch width in columns; a multiple of 4.
    pub n: usize,
    /// Patch height in voxels.
    pub z: usize,
    /// Number of surfaces.
    pub lambda: usize,
    pub conv_channels: [usize; 3],
    pub kernel: (usize, usize),
    pub fc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 32,
            z: 64,
            lambda: 2,
            conv_channels: [16, 32, 32],
            kernel: (5, 5),
            fc_hidden: 512,
        }
    }
}

impl ModelConfig {
    pub fn new(n: usize, z: usize, lambda: usize) -> Self {
        Self {
            n,
            z,
            lambda,
            ..Self::default()
        }
    }

    /// Middle columns predicted per patch.
    pub fn m1(&self) -> usize {
        self.n / 2
    }

    /// Output vector length.
    pub fn m2(&self) -> usize {
        self.lambda * self.m1()
    }

    /// Spatial size `(height, width)` after the three pooling stages.
    pub fn pooled_dims(&self) -> (usize, usize) {
        let mut h = self.z;
        let mut w = self.n;
        for _ in 0..3 {
            h = pooled_len(h, POOL_SIZE, POOL_STRIDE);
            w = pooled_len(w, POOL_SIZE, POOL_STRIDE);
        }
        (h, w)
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.conv_channels[2] * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 4 != 0 {
            return Err(Error::Config(format!(
                "patch width N={} must be a positive multiple of 4",
                self.n
            )));
        }
        if self.z < 2 {
            return Err(Error::Config(format!("patch height Z={} must be at least 2", self.z)));
        }
        if self.lambda == 0 {
            return Err(Error::Config("at least one surface is required".into()));
        }
        if self.conv_channels.contains(&0) || self.fc_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::Config("kernel dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Converts a position in voxels to the network's `[0, 1]` output scale.
    pub fn normalize(&self, voxels: f64) -> f64 {
        voxels / (self.z - 1) as f64
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        unit * (self.z - 1) as f64
    }
}

/// Index of surface `surface` (0-based) at middle column `k1` in the
/// surface-major output vector.
pub fn output_slot(surface: usize, k1: usize, m1: usize) -> usize {
    surface * m1 + k1
}

/// Writes one surface's `m1` positions into its slots.
pub fn write_surface<V: Copy>(out: &mut [V], surface: usize, values: &[V]) {
    let m1 = values.len();
    out[output_slot(surface, 0, m1)..output_slot(surface, m1, m1)].copy_from_slice(values);
}

pub fn read_surface<V: Copy>(vector: &[V], surface: usize, m1: usize) -> &[V] {
    &vector[output_slot(surface, 0, m1)..output_slot(surface, m1, m1)]
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Vec<usize>>,
    pub output: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRegressionNet<T> {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams<T>>,
}

/// Layer sequence: (conv, relu, pool) x 3, fc, relu, fc.
pub const LAYER_KINDS: [LayerKind; 12] = [
    LayerKind::Conv,
    LayerKind::Relu,
    LayerKind::Pool,
    LayerKind::Conv,
    LayerKind::Relu,
    LayerKind::Pool,
    LayerKind::Conv,
    LayerKind::Relu,
    LayerKind::Pool,
    LayerKind::Fc,
    LayerKind::Relu,
    LayerKind::Fc,
];

impl<T: Scalar> SurfaceRegressionNet<T> {
    /// Layers with all parameters zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (kh, kw) = config.kernel;
        let [c1, c2, c3] = config.conv_channels;
        let layers = vec![
            LayerParams::conv(1, c1, kh, kw),
            LayerParams::relu(),
            LayerParams::pool(POOL_SIZE, POOL_STRIDE),
            LayerParams::conv(c1, c2, kh, kw),
            LayerParams::relu(),
            LayerParams::pool(POOL_SIZE, POOL_STRIDE),
            LayerParams::conv(c2, c3, kh, kw),
            LayerParams::relu(),
            LayerParams::pool(POOL_SIZE, POOL_STRIDE),
            LayerParams::fc(config.flat_features(), config.fc_hidden),
            LayerParams::relu(),
            LayerParams::fc(config.fc_hidden, config.m2()),
        ];
        Ok(Self { config, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> SurfaceRegressionNet<U> {
        SurfaceRegressionNet {
            config: self.config,
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    /// Sets the output layer to zero so that every prediction is 0.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.fill(T::zero());
        last.bias.fill(T::zero());
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(LayerParams::zero_grad);
    }

    fn check_patch(&self, patch: &Tensor<T>) -> Result<()> {
        let want = [1, self.config.z, self.config.n];
        if patch.shape() != want {
            return Err(Error::Shape(format!(
                "patch shape {:?}, expected {want:?}",
                patch.shape()
            )));
        }
        Ok(())
    }

    /// Predicted surface positions in normalized units, surface-major.
    pub fn forward(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_patch(patch)?;
        let mut x = patch.clone();
        for layer in &self.layers {
            x = match layer.kind {
                LayerKind::Conv => conv2d_forward(&x, layer)?,
                LayerKind::Relu => relu_forward(&x),
                LayerKind::Pool => maxpool_forward(&x, layer.hyper.kernel_h, layer.hyper.stride)?.0,
                LayerKind::Fc => fc_forward(&x, layer)?,
                LayerKind::Loss => x,
            };
        }
        Ok(x)
    }

    /// Predicted positions in voxels.
    pub fn predict_voxels(&self, patch: &Tensor<T>) -> Result<Vec<f64>> {
        let out = self.forward(patch)?;
        Ok(out
            .data()
            .iter()
            .map(|v| self.config.denormalize(v.to_f64_lossy()))
            .collect())
    }

    pub fn forward_trace(&self, patch: &Tensor<T>) -> Result<Trace<T>> {
        self.check_patch(patch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        let mut x = patch.clone();
        for layer in &self.layers {
            let (next, am) = match layer.kind {
                LayerKind::Conv => (conv2d_forward(&x, layer)?, Vec::new()),
                LayerKind::Relu => (relu_forward(&x), Vec::new()),
                LayerKind::Pool => maxpool_forward(&x, layer.hyper.kernel_h, layer.hyper.stride)?,
                LayerKind::Fc => (fc_forward(&x, layer)?, Vec::new()),
                LayerKind::Loss => (x.clone(), Vec::new()),
            };
            inputs.push(x);
            argmax.push(am);
            x = next;
        }
        Ok(Trace {
            inputs,
            argmax,
            output: x,
        })
    }

    /// Accumulates parameter gradients for `grad_out` (d loss / d output).
    pub fn backward(&mut self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let input = &trace.inputs[i];
            g = match layer.kind {
                LayerKind::Conv => conv2d_backward(input, layer, &g)?,
                LayerKind::Relu => relu_backward(input, &g)?,
                LayerKind::Pool => maxpool_backward(&g, &trace.argmax[i], input.shape())?,
                LayerKind::Fc => fc_backward(input, layer, &g)?,
                LayerKind::Loss => g,
            };
        }
        Ok(g)
    }

    /// Loss in normalized units and accumulated gradients for one sample.
    pub fn accumulate_sample(&mut self, patch: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let trace = self.forward_trace(patch)?;
        let (loss, grad) = euclidean_loss(&trace.output, target, self.config.lambda)?;
        self.backward(&trace, &grad)?;
        Ok((loss, trace.output))
    }
}

/// Builds the network and draws its initial weights from `rng`.
pub fn build_net<T: Scalar>(config: ModelConfig, rng: &mut RngState) -> Result<SurfaceRegressionNet<T>> {
    let mut net = SurfaceRegressionNet::zeroed(config)?;
    for layer in &mut net.layers {
        layer.init_uniform(rng);
    }
    Ok(net)
}

impl LossNetwork<Tensor<f64>, Tensor<f64>> for SurfaceRegressionNet<f64> {
    fn params(&self) -> &[LayerParams<f64>] {
        &self.layers
    }

    fn params_mut(&mut self) -> &mut [LayerParams<f64>] {
        &mut self.layers
    }

    fn loss(&self, input: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
        let out = self.forward(input).expect("valid patch");
        euclidean_loss(&out, target, self.config.lambda).expect("valid target").0
    }

    fn loss_and_grad(&mut self, input: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
        self.zero_grad();
        self.accumulate_sample(input, target).expect("valid sample").0
    }

    fn kink_signature(&self, input: &Tensor<f64>) -> Vec<u64> {
        let trace = self.forward_trace(input).expect("valid patch");
        let mut sig = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Pool => sig.extend(trace.argmax[i].iter().map(|&a| a as u64)),
                LayerKind::Relu => {
                    let mut word = 0u64;
                    for (j, v) in trace.inputs[i].data().iter().enumerate() {
                        if *v > 0.0 {
                            word |= 1 << (j % 64);
                        }
                        if j % 64 == 63 {
                            sig.push(word);
                            word = 0;
                        }
                    }
                    sig.push(word);
                }
                _ => {}
            }
        }
        sig
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sized_output_length() {
        let cfg = ModelConfig::new(32, 512, 2);
        assert_eq!(cfg.m2(), 32);
        assert_eq!(cfg.pooled_dims(), (64, 4));
        let net: SurfaceRegressionNet<f32> = SurfaceRegressionNet::zeroed(cfg).unwrap();
        assert_eq!(net.layers.last().unwrap().bias.len(), 32);
    }

    #[test]
    fn tiny_output_length() {
        let cfg = ModelConfig {
            conv_channels: [2, 2, 2],
            fc_hidden: 4,
            ..ModelConfig::new(4, 32, 1)
        };
        let net: SurfaceRegressionNet<f64> = build_net(cfg, &mut RngState::new(1)).unwrap();
        let out = net.forward(&Tensor::zeros(&[1, 32, 4])).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn width_must_be_multiple_of_four() {
        assert!(ModelConfig::new(30, 64, 2).validate().is_err());
        assert!(SurfaceRegressionNet::<f32>::zeroed(ModelConfig::new(6, 64, 2)).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_predictions() {
        let cfg = ModelConfig {
            conv_channels: [2, 3, 3],
            fc_hidden: 8,
            ..ModelConfig::new(8, 16, 2)
        };
        let mut net: SurfaceRegressionNet<f64> = build_net(cfg, &mut RngState::new(2)).unwrap();
        net.zero_output_layer();
        let mut rng = RngState::new(3);
        let patch = Tensor::from_vec(&[1, 16, 8], (0..128).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        assert!(net.forward(&patch).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_layout_round_trips() {
        let m1 = 4;
        let mut v = vec![0.0; 3 * m1];
        for i in 0..3 {
            let vals: Vec<f64> = (0..m1).map(|k| (10 * i + k) as f64).collect();
            write_surface(&mut v, i, &vals);
        }
        for i in 0..3 {
            let vals: Vec<f64> = (0..m1).map(|k| (10 * i + k) as f64).collect();
            assert_eq!(read_surface(&v, i, m1), vals.as_slice());
        }
        assert_eq!(output_slot(1, 2, 16), 18);
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::new(8, 16, 2);
        let a: SurfaceRegressionNet<f32> = build_net(cfg, &mut RngState::new(9)).unwrap();
        let b: SurfaceRegressionNet<f32> = build_net(cfg, &mut RngState::new(9)).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            let wa: Vec<u32> = la.weights.data().iter().map(|v| v.to_bits()).collect();
            let wb: Vec<u32> = lb.weights.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(wa, wb);
        }
    }
}
