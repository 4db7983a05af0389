//! Central finite-difference verification of analytic gradients.

use super::layers::{LayerKind, LayerParams};

/// A network with a scalar loss whose parameter gradients can be checked.
pub trait LossNetwork<I, G> {
    fn params(&self) -> &[LayerParams<f64>];
    fn params_mut(&mut self) -> &mut [LayerParams<f64>];
    /// Loss at the current parameters.
    fn loss(&self, input: &I, target: &G) -> f64;
    /// Loss at the current parameters; zeroes and refills parameter grads.
    fn loss_and_grad(&mut self, input: &I, target: &G) -> f64;
    /// Identifies the piecewise-linear region (pool winners, relu signs).
    /// Perturbations that change it straddle a kink and are skipped.
    fn kink_signature(&self, input: &I) -> Vec<u64>;
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: usize,
    pub kind: LayerKind,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.layers.iter().map(|l| l.skipped).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Weights first, then biases.
fn param(layers: &[LayerParams<f64>], layer: usize, idx: usize) -> f64 {
    let l = &layers[layer];
    let n_w = l.weights.len();
    if idx < n_w {
        l.weights.data()[idx]
    } else {
        l.bias.data()[idx - n_w]
    }
}

fn set_param(layers: &mut [LayerParams<f64>], layer: usize, idx: usize, value: f64) {
    let l = &mut layers[layer];
    let n_w = l.weights.len();
    if idx < n_w {
        l.weights.data_mut()[idx] = value;
    } else {
        l.bias.data_mut()[idx - n_w] = value;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares every weight and bias gradient against
/// `(E(w + h) - E(w - h)) / 2h`.
pub fn gradient_check<I, G, N: LossNetwork<I, G>>(
    net: &mut N,
    input: &I,
    target: &G,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    net.loss_and_grad(input, target);
    let analytic: Vec<(Vec<f64>, Vec<f64>)> = net
        .params()
        .iter()
        .map(|l| (l.grad_weights.data().to_vec(), l.grad_bias.data().to_vec()))
        .collect();
    let base_sig = net.kink_signature(input);

    let mut layers = Vec::new();
    for (li, (ga_w, ga_b)) in analytic.iter().enumerate() {
        let kind = net.params()[li].kind;
        if ga_w.is_empty() && ga_b.is_empty() {
            continue;
        }
        let mut check = LayerCheck {
            layer: li,
            kind,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        let n_w = ga_w.len();
        for idx in 0..n_w + ga_b.len() {
            let orig = param(net.params(), li, idx);
            set_param(net.params_mut(), li, idx, orig + h);
            let sig_p = net.kink_signature(input);
            let plus = net.loss(input, target);
            set_param(net.params_mut(), li, idx, orig - h);
            let sig_m = net.kink_signature(input);
            let minus = net.loss(input, target);
            set_param(net.params_mut(), li, idx, orig);
            if sig_p != base_sig || sig_m != base_sig {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = if idx < n_w { ga_w[idx] } else { ga_b[idx - n_w] };
            let err = relative_error(a, numeric);
            check.checked += 1;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = idx;
            }
        }
        layers.push(check);
    }
    GradCheckReport {
        layers,
        tolerance: tol,
    }
}
