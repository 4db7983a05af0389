use super::layers::LayerParams;
use super::tensor::Scalar;

/// Mini-batch SGD with classical momentum:
/// `v <- momentum * v - lr * grad / batch; w <- w + v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update to every parameterised layer and zeroes the
    /// gradients. `batch_size` must be positive.
    pub fn step(&mut self, layers: &mut [LayerParams<T>], batch_size: usize) {
        assert!(batch_size > 0, "batch size must be positive");
        if self.velocity.len() != layers.len() {
            self.velocity = layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect();
        }
        let mu = T::from_f64_lossy(self.momentum);
        let scale = T::from_f64_lossy(self.lr / batch_size as f64);
        for (layer, (vw, vb)) in layers.iter_mut().zip(self.velocity.iter_mut()) {
            update(layer.weights.data_mut(), layer.grad_weights.data(), vw, mu, scale);
            update(layer.bias.data_mut(), layer.grad_bias.data(), vb, mu, scale);
            layer.zero_grad();
        }
    }
}

fn update<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], mu: T, scale: T) {
    for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - scale * *g;
        *w += *v;
    }
}
