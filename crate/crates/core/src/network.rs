//! Two-layer ReLU CNN with a fixed `1/m` output layer.
//!
//! Output `k` is `F_k(W, x) = (1/m) sum_r sum_j relu(<w_{k,r}, x^(j)>)`: every
//! filter is applied to both patches (weight sharing) and the second layer is
//! never trained. Gradients use the convention `relu'(0) = 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Class, SampleSource, SimpleBank, SimpleSpec};
use crate::math::{self, dot};
use crate::rng::{self, LabRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Neurons per class head (`m`).
    pub width: usize,
    /// Patch dimension (`d`).
    pub dim: usize,
    /// Standard deviation of the Gaussian initialization.
    pub sigma0: f64,
    pub seed: u64,
}

/// First-layer weights `W[k][r][c]`, stored row-major, plus a freeze mask of
/// the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    width: usize,
    dim: usize,
    weights: Vec<f64>,
    frozen: Vec<bool>,
}

impl ModelParams {
    pub fn zeros(width: usize, dim: usize) -> Self {
        let len = 2 * width * dim;
        ModelParams { width, dim, weights: vec![0.0; len], frozen: vec![false; len] }
    }

    pub fn from_weights(width: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        let len = 2 * width * dim;
        if weights.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "all weights must be finite"));
        }
        Ok(ModelParams { width, dim, weights, frozen: vec![false; len] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), found: mask.len() });
        }
        self.frozen = mask;
        Ok(())
    }

    pub fn freeze(&mut self, index: usize) {
        self.frozen[index] = true;
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    /// Start of neuron `(k, r)` in the flat weight vector.
    pub fn offset(&self, class: Class, r: usize) -> usize {
        (class.index() * self.width + r) * self.dim
    }

    pub fn neuron(&self, class: Class, r: usize) -> &[f64] {
        let o = self.offset(class, r);
        &self.weights[o..o + self.dim]
    }

    pub fn neuron_mut(&mut self, class: Class, r: usize) -> &mut [f64] {
        let o = self.offset(class, r);
        &mut self.weights[o..o + self.dim]
    }

    /// A copy with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ModelParams {
        let mut out = self.clone();
        math::scale(c, &mut out.weights);
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != 2 * self.dim {
            return Err(Error::DimensionMismatch { expected: 2 * self.dim, found: x.len() });
        }
        Ok(())
    }
}

/// I.i.d. `N(0, sigma0^2)` weights, nothing frozen.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    if cfg.width == 0 || cfg.dim == 0 {
        return Err(Error::invalid("width/dim", "must be at least 1"));
    }
    if !(cfg.sigma0 >= 0.0) || !cfg.sigma0.is_finite() {
        return Err(Error::invalid("sigma0", "must be finite and non-negative"));
    }
    let mut params = ModelParams::zeros(cfg.width, cfg.dim);
    if cfg.sigma0 > 0.0 {
        let mut rng = rng::seeded(cfg.seed);
        rng::fill_normal(&mut rng, cfg.sigma0, &mut params.weights);
    }
    Ok(params)
}

/// Weights of a model that has already learned the pretraining features:
/// `w_{k,r} = c1 u_k + c3 xi_r`, with `xi_r` drawn from the pretraining
/// noise-patch distribution at scale `sigma_p`.
pub fn init_pretrained(
    bank: &SimpleBank,
    c1: f64,
    c3: f64,
    sigma_p: f64,
    width: usize,
    rng: &mut LabRng,
) -> Result<ModelParams> {
    if !(c1 >= 0.0 && c3 >= 0.0) {
        return Err(Error::invalid("c1/c3", "must be non-negative"));
    }
    if width == 0 {
        return Err(Error::invalid("width", "must be at least 1"));
    }
    // Noise follows the unrotated projector regardless of which bank is passed.
    let pretrain = bank.rotated(0.0)?;
    let source = SimpleSpec::new(pretrain, sigma_p)?;
    let mut params = ModelParams::zeros(width, bank.dim());
    for class in Class::ALL {
        let u = bank.base(class);
        for r in 0..width {
            let xi = source.sample_noise_patch(rng);
            let w = params.neuron_mut(class, r);
            for ((wi, ui), xii) in w.iter_mut().zip(u).zip(&xi) {
                *wi = c1 * ui + c3 * xii;
            }
        }
    }
    Ok(params)
}

/// Inner products `<w_{k,r}, x^(j)>` laid out as `[(k * m + r) * 2 + j]`.
fn preactivations(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let d = params.dim;
    let (x1, x2) = x.split_at(d);
    let mut z = Vec::with_capacity(4 * params.width);
    for w in params.weights.chunks_exact(d) {
        z.push(dot(w, x1));
        z.push(dot(w, x2));
    }
    z
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// `relu'` with the value 1 at the kink.
fn relu_grad(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn outputs_from(z: &[f64], width: usize) -> [f64; 2] {
    let head = |k: usize| {
        let s: f64 = z[k * 2 * width..(k + 1) * 2 * width]
            .chunks_exact(2)
            .map(|p| relu(p[0]) + relu(p[1]))
            .sum();
        s / width as f64
    };
    [head(0), head(1)]
}

/// `(F_1, F_2)` for input `x` (both patches concatenated).
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<[f64; 2]> {
    params.check_input(x)?;
    Ok(outputs_from(&preactivations(params, x), params.width))
}

/// Softmax of the two outputs, shifted by the maximum.
pub fn softmax(out: [f64; 2]) -> [f64; 2] {
    let mx = out[0].max(out[1]);
    let e0 = math::exp(out[0] - mx);
    let e1 = math::exp(out[1] - mx);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Cross-entropy `-log prob_y` from the raw outputs.
pub fn loss_from_outputs(out: [f64; 2], y: Class) -> f64 {
    let margin = out[y.other().index()] - out[y.index()];
    math::softplus(margin)
}

pub fn prob(params: &ModelParams, x: &[f64]) -> Result<[f64; 2]> {
    forward(params, x).map(softmax)
}

pub fn loss(params: &ModelParams, x: &[f64], y: Class) -> Result<f64> {
    forward(params, x).map(|out| loss_from_outputs(out, y))
}

/// Closed-form gradient of the per-sample loss with respect to every weight.
pub fn per_sample_grad(params: &ModelParams, x: &[f64], y: Class) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let mut g = vec![0.0; params.len()];
    loss_and_grad_into(params, x, y, &mut g);
    Ok(g)
}

/// Writes the per-sample gradient into `grad` (overwriting it) and returns
/// the loss. `x` and `grad` must already have the right lengths.
pub fn loss_and_grad_into(params: &ModelParams, x: &[f64], y: Class, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(x.len(), 2 * params.dim);
    debug_assert_eq!(grad.len(), params.len());
    let d = params.dim;
    let m = params.width;
    let z = preactivations(params, x);
    let out = outputs_from(&z, m);
    let p = softmax(out);
    let (x1, x2) = x.split_at(d);
    for k in 0..2 {
        let target = if k == y.index() { 1.0 } else { 0.0 };
        let coeff = (p[k] - target) / m as f64;
        for r in 0..m {
            let idx = k * m + r;
            let g = &mut grad[idx * d..(idx + 1) * d];
            let a1 = coeff * relu_grad(z[2 * idx]);
            let a2 = coeff * relu_grad(z[2 * idx + 1]);
            if a1 == 0.0 && a2 == 0.0 {
                g.fill(0.0);
                continue;
            }
            for ((gi, u), v) in g.iter_mut().zip(x1).zip(x2) {
                *gi = a1 * u + a2 * v;
            }
        }
    }
    loss_from_outputs(out, y)
}

/// Loss and its gradient with respect to the input (both patches).
pub fn input_grad(params: &ModelParams, x: &[f64], y: Class) -> Result<(f64, Vec<f64>)> {
    params.check_input(x)?;
    let d = params.dim;
    let m = params.width;
    let z = preactivations(params, x);
    let out = outputs_from(&z, m);
    let p = softmax(out);
    let mut g = vec![0.0; 2 * d];
    for k in 0..2 {
        let target = if k == y.index() { 1.0 } else { 0.0 };
        let coeff = (p[k] - target) / m as f64;
        for r in 0..m {
            let idx = k * m + r;
            let w = &params.weights[idx * d..(idx + 1) * d];
            for j in 0..2 {
                let a = coeff * relu_grad(z[2 * idx + j]);
                if a != 0.0 {
                    math::axpy(a, w, &mut g[j * d..(j + 1) * d]);
                }
            }
        }
    }
    Ok((loss_from_outputs(out, y), g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_simple_banks;
    use crate::math::norm_sq;

    fn random_params(width: usize, dim: usize, sigma0: f64, seed: u64) -> ModelParams {
        init_params(&ModelConfig { width, dim, sigma0, seed }).unwrap()
    }

    #[test]
    fn zero_scale_init_is_zero() {
        let p = random_params(4, 10, 0.0, 1);
        assert!(p.weights().iter().all(|&w| w == 0.0));
        assert!(p.frozen().iter().all(|&f| !f));
    }

    #[test]
    fn init_variance_matches_sigma0() {
        let p = random_params(32, 100, 0.01, 3);
        let n = p.len() as f64;
        let mean = p.weights().iter().sum::<f64>() / n;
        let var = p.weights().iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 1e-4 - 1.0).abs() < 0.1, "var = {var}");
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(random_params(8, 16, 0.1, 9), random_params(8, 16, 0.1, 9));
    }

    #[test]
    fn zero_weights_give_zero_outputs_and_ln2_loss() {
        let p = ModelParams::zeros(3, 5);
        let x: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        assert_eq!(forward(&p, &x).unwrap(), [0.0, 0.0]);
        assert!((loss(&p, &x, Class::Two).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(prob(&p, &x).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn single_neuron_identity() {
        let mut p = ModelParams::zeros(1, 3);
        p.neuron_mut(Class::One, 0).copy_from_slice(&[0.0, 1.0, 0.0]);
        p.neuron_mut(Class::Two, 0).copy_from_slice(&[2.0, 0.0, 0.0]);
        let x = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(forward(&p, &x).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let p = ModelParams::zeros(2, 4);
        assert!(matches!(forward(&p, &[0.0; 7]), Err(Error::DimensionMismatch { expected: 8, found: 7 })));
    }

    #[test]
    fn forward_is_patch_swap_invariant() {
        let p = random_params(5, 6, 1.0, 4);
        let mut rng = rng::seeded(5);
        for _ in 0..50 {
            let mut x = vec![0.0; 12];
            rng::fill_normal(&mut rng, 1.0, &mut x);
            let mut swapped = x[6..].to_vec();
            swapped.extend_from_slice(&x[..6]);
            assert_eq!(forward(&p, &x).unwrap(), forward(&p, &swapped).unwrap());
            assert_eq!(loss(&p, &x, Class::One).unwrap(), loss(&p, &swapped, Class::One).unwrap());
        }
    }

    #[test]
    fn large_margin_loss() {
        let l = loss_from_outputs([20.0, 0.0], Class::One);
        assert!((l - 2.061153620314381e-9).abs() < 1e-18);
        let p = softmax([20.0, 0.0]);
        assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn saturated_softmax_gives_zero_gradient() {
        let mut p = ModelParams::zeros(1, 2);
        p.neuron_mut(Class::One, 0).copy_from_slice(&[1000.0, 0.0]);
        let x = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(prob(&p, &x).unwrap()[0], 1.0);
        let g = per_sample_grad(&p, &x, Class::One).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_neurons_give_zero_gradient() {
        let mut p = ModelParams::zeros(2, 2);
        p.weights_mut().copy_from_slice(&[-1.0, -1.0, -2.0, -0.5, -1.0, -3.0, -0.1, -0.1]);
        let x = [1.0, 2.0, 0.5, 0.5];
        let g = per_sample_grad(&p, &x, Class::Two).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kink_counts_as_active() {
        // w orthogonal to both patches: z = 0 exactly, relu'(0) = 1.
        let mut p = ModelParams::zeros(1, 2);
        p.neuron_mut(Class::One, 0).copy_from_slice(&[0.0, 1.0]);
        let x = [1.0, 0.0, 2.0, 0.0];
        let g = per_sample_grad(&p, &x, Class::One).unwrap();
        // coefficient (0.5 - 1) / 1 applied to x1 + x2
        assert_eq!(&g[..2], &[-1.5, 0.0]);
    }

    #[test]
    fn pretrained_without_noise_is_scaled_feature() {
        let (bank, _) = make_simple_banks(8, 1.0, 0.0, 2).unwrap();
        let p = init_pretrained(&bank, 1.0, 0.0, 0.3, 4, &mut rng::seeded(1)).unwrap();
        for class in Class::ALL {
            for r in 0..4 {
                assert_eq!(p.neuron(class, r), bank.base(class));
            }
            assert!((dot(p.neuron(class, 0), bank.base(class)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pretrained_noise_is_orthogonal_to_features() {
        let (bank, _) = make_simple_banks(30, 2.0, 0.3, 2).unwrap();
        let p = init_pretrained(&bank, 1.0, 1.0, 0.5, 6, &mut rng::seeded(3)).unwrap();
        let u1 = bank.base(Class::One);
        for r in 0..6 {
            let ip = dot(p.neuron(Class::One, r), u1);
            assert!((ip - norm_sq(u1)).abs() < 1e-10, "{ip}");
        }
    }
}
