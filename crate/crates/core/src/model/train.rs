use log::info;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Sgd, Tensor};
use crate::rng::RngState;

use super::SurfaceRegressionNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the learning rate every `decay_every` iterations.
    pub lr_decay: f64,
    /// Optimizer steps between decays; 0 disables decay.
    pub decay_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            lr_decay: 0.5,
            // ten passes over a ~3200-record dataset at batch 32
            decay_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn lr_at_iteration(&self, iteration: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.lr_decay.powi((iteration / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay {} outside (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

/// A training patch with its target positions in voxels.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub patch: Tensor<T>,
    pub target: Vec<f64>,
}

/// Per-step statistics, in voxel units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// Summed squared-error loss over the batch, voxel^2.
    pub loss_sum: f64,
    /// Summed absolute position error over the batch, voxels.
    pub abs_error_sum: f64,
    pub samples: usize,
    pub positions: usize,
}

impl StepStats {
    /// Mean per-sample loss (voxel^2).
    pub fn loss(&self) -> f64 {
        self.loss_sum / self.samples.max(1) as f64
    }

    /// Mean unsigned position error (voxels).
    pub fn umspe(&self) -> f64 {
        self.abs_error_sum / self.positions.max(1) as f64
    }

    fn merge(&mut self, other: &StepStats) {
        self.loss_sum += other.loss_sum;
        self.abs_error_sum += other.abs_error_sum;
        self.samples += other.samples;
        self.positions += other.positions;
    }
}

fn normalized_target<T: Scalar>(net: &SurfaceRegressionNet<T>, target: &[f64]) -> Result<Tensor<T>> {
    if target.len() != net.config.m2() {
        return Err(Error::Shape(format!(
            "target has {} values, network predicts {}",
            target.len(),
            net.config.m2()
        )));
    }
    Tensor::from_vec(
        &[target.len()],
        target
            .iter()
            .map(|&v| T::from_f64_lossy(net.config.normalize(v)))
            .collect(),
    )
}

fn sample_stats<T: Scalar>(net: &SurfaceRegressionNet<T>, pred: &Tensor<T>, target: &[f64], loss_norm: T) -> StepStats {
    let scale = (net.config.z - 1) as f64;
    let abs_error_sum = pred
        .data()
        .iter()
        .zip(target)
        .map(|(p, t)| (net.config.denormalize(p.to_f64_lossy()) - t).abs())
        .sum();
    StepStats {
        loss_sum: loss_norm.to_f64_lossy() * scale * scale,
        abs_error_sum,
        samples: 1,
        positions: target.len(),
    }
}

/// One forward/backward pass over `batch` followed by an SGD update with
/// the mean gradient. Statistics describe the pre-update predictions.
pub fn train_step<T: Scalar>(
    net: &mut SurfaceRegressionNet<T>,
    opt: &mut Sgd<T>,
    batch: &[Sample<T>],
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty training batch".into()));
    }
    net.zero_grad();
    let mut stats = StepStats::default();
    for sample in batch {
        let target = normalized_target(net, &sample.target)?;
        let (loss, pred) = net.accumulate_sample(&sample.patch, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss diverged".into()));
        }
        stats.merge(&sample_stats(net, &pred, &sample.target, loss));
    }
    opt.step(&mut net.layers, batch.len());
    Ok(stats)
}

/// Loss and UMSPE of the current network over `samples`, without updating.
pub fn evaluate<T: Scalar>(net: &SurfaceRegressionNet<T>, samples: &[Sample<T>]) -> Result<StepStats> {
    let mut stats = StepStats::default();
    for sample in samples {
        let target = normalized_target(net, &sample.target)?;
        let pred = net.forward(&sample.patch)?;
        let (loss, _) = crate::numerics::euclidean_loss(&pred, &target, net.config.lambda)?;
        stats.merge(&sample_stats(net, &pred, &sample.target, loss));
    }
    Ok(stats)
}

/// Optional early-stopping rules.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStop {
    pub max_iterations: Option<usize>,
    /// Stop once the epoch's running UMSPE and a re-evaluation of the
    /// current weights both fall below this (voxels).
    pub target_umspe: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub umspe: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub iterations: usize,
    pub reached_target: bool,
}

/// Mini-batch training with a per-epoch seeded shuffle and step decay.
pub fn train<T: Scalar>(
    net: &mut SurfaceRegressionNet<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    stop: TrainStop,
    rng: &mut RngState,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    'epochs: for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut stats = StepStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            if stop.max_iterations.is_some_and(|m| history.iterations >= m) {
                break 'epochs;
            }
            opt.lr = cfg.lr_at_iteration(history.iterations);
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            stats.merge(&train_step(net, &mut opt, &batch)?);
            history.iterations += 1;
        }
        let e = EpochStats {
            epoch,
            lr: opt.lr,
            loss: stats.loss(),
            umspe: stats.umspe(),
            iterations: history.iterations,
        };
        info!(
            "epoch {epoch}: lr {:.3e} loss {:.4} voxel^2 umspe {:.4} voxels",
            e.lr, e.loss, e.umspe
        );
        on_epoch(&e);
        history.epochs.push(e);
        if let Some(target) = stop.target_umspe {
            // the running figure mixes pre-update weights; confirm on the current ones
            if e.umspe < target && evaluate(net, samples)?.umspe() < target {
                history.reached_target = true;
                break;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_net, ModelConfig};
    use crate::numerics::euclidean_loss;

    fn tiny() -> ModelConfig {
        ModelConfig {
            conv_channels: [2, 3, 3],
            fc_hidden: 8,
            ..ModelConfig::new(8, 16, 2)
        }
    }

    fn patch(seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        Tensor::from_vec(&[1, 16, 8], (0..128).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn exact_targets_give_zero_loss_and_no_update() {
        let mut net: SurfaceRegressionNet<f64> = build_net(tiny(), &mut RngState::new(1)).unwrap();
        let p = patch(2);
        let target = net.predict_voxels(&p).unwrap();
        let before = net.clone();
        let mut opt = Sgd::new(1e-3, 0.0);
        let stats = train_step(&mut net, &mut opt, &[Sample { patch: p, target }]).unwrap();
        assert!(stats.loss() < 1e-20);
        for (a, b) in net.layers.iter().zip(&before.layers) {
            for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn step_loss_matches_euclidean_loss_in_voxels() {
        let mut net: SurfaceRegressionNet<f64> = build_net(tiny(), &mut RngState::new(3)).unwrap();
        let p = patch(4);
        let target: Vec<f64> = (0..8).map(|i| 3.0 + i as f64).collect();
        let pred = Tensor::from_vec(&[8], net.predict_voxels(&p).unwrap()).unwrap();
        let want = euclidean_loss(&pred, &Tensor::from_vec(&[8], target.clone()).unwrap(), 2)
            .unwrap()
            .0;
        let mut opt = Sgd::new(1e-3, 0.9);
        let stats = train_step(&mut net, &mut opt, &[Sample { patch: p, target }]).unwrap();
        assert!((stats.loss() - want).abs() < 1e-9 * want.max(1.0));
    }

    #[test]
    fn repeated_steps_mostly_decrease_loss() {
        let mut net: SurfaceRegressionNet<f64> = build_net(tiny(), &mut RngState::new(5)).unwrap();
        let sample = Sample {
            patch: patch(6),
            target: vec![4.0, 5.0, 6.0, 7.0, 9.0, 10.0, 11.0, 12.0],
        };
        let mut opt = Sgd::new(1e-4, 0.9);
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(train_step(&mut net, &mut opt, std::slice::from_ref(&sample)).unwrap().loss());
        }
        let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(increases <= 5, "{increases} increases: {losses:?}");
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn decay_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at_iteration(0), 1e-3);
        assert_eq!(cfg.lr_at_iteration(999), 1e-3);
        assert_eq!(cfg.lr_at_iteration(1000), 5e-4);
        assert_eq!(cfg.lr_at_iteration(2500), 2.5e-4);
        let flat = TrainConfig { decay_every: 0, ..cfg };
        assert_eq!(flat.lr_at_iteration(10_000), 1e-3);
    }
}
