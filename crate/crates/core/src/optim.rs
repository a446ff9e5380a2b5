//! Private SGD: per-sample clipping, Poisson or fixed-size batches, Gaussian
//! noise on the update, and freeze-aware parameter masking.
//!
//! The update is
//! `W' = W - (eta / B) sum_i clip_C(grad_i) + eta * n`, `n ~ N(0, sigma_n^2 I)`,
//! with `B` the configured (expected) batch size. Frozen coordinates receive
//! neither gradient nor noise, and are left out of the per-sample gradient
//! before its norm is clipped.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::math;
use crate::network::{self, ModelParams};
use crate::rng::{self, LabRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Subsampling {
    /// Each example joins the batch independently with probability `B / n`.
    Poisson,
    /// Exactly `B` examples, uniformly without replacement.
    FixedUniform,
}

/// What the summed clipped gradients are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BatchDivisor {
    /// The configured batch size, even when a Poisson batch comes out larger
    /// or smaller.
    #[default]
    Expected,
    /// The realized batch size (at least 1).
    Realized,
}

/// How the Gaussian noise enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum NoiseScaling {
    /// `+ eta * n`: noise is not divided by the batch size.
    #[default]
    Raw,
    /// `+ (eta / B) * n`: noise added to the gradient sum before averaging.
    BatchDivided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DpConfig {
    pub eta: f64,
    /// Expected batch size `B`.
    pub batch: usize,
    /// Clipping threshold; `<= 0` disables clipping.
    pub clip: f64,
    pub sigma_n: f64,
    pub iters: usize,
    pub subsampling: Subsampling,
    pub seed: u64,
    pub divisor: BatchDivisor,
    pub noise_scaling: NoiseScaling,
    /// Only consumed by [`calibrate_sigma`].
    pub budget: Option<PrivacyBudget>,
}

impl DpConfig {
    pub fn clipping_enabled(&self) -> bool {
        self.clip > 0.0
    }

    /// Checks the configuration against a training set of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "learning rate must be finite and non-negative"));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters", "need at least one iteration"));
        }
        if self.batch == 0 || self.batch > n {
            return Err(Error::invalid("batch", "batch size must lie in [1, n]"));
        }
        if !(self.sigma_n >= 0.0) || !self.sigma_n.is_finite() {
            return Err(Error::invalid("sigma_n", "must be finite and non-negative"));
        }
        if self.clip.is_nan() {
            return Err(Error::invalid("clip", "must not be NaN"));
        }
        Ok(())
    }
}

/// Per-iteration training statistics.
///
/// Gradient statistics are zero for an empty batch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub iter: usize,
    pub batch_size: usize,
    pub mean_loss: f64,
    /// Smallest per-sample loss in the batch (tracks how far the model is
    /// from being perfect on any training point).
    pub min_loss: f64,
    pub grad_norm_min: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Largest per-sample gradient norm after clipping.
    pub clipped_norm_max: f64,
    pub clip_fraction: f64,
    /// Norm of the sampled noise `n` over unfrozen coordinates (before the
    /// learning-rate factor).
    pub noise_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
}

/// `g / max(1, |g| / C)`; identity when `c <= 0`.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

/// Clips in place and returns the norm before clipping.
pub fn clip_in_place(g: &mut [f64], c: f64) -> f64 {
    let n = math::norm(g);
    if c > 0.0 {
        let denom = (n / c).max(1.0);
        if denom > 1.0 {
            for v in g.iter_mut() {
                *v /= denom;
            }
        }
    }
    n
}

/// Indices of the next batch, in increasing order.
pub fn subsample(n: usize, cfg: &DpConfig, rng: &mut LabRng) -> Vec<usize> {
    match cfg.subsampling {
        Subsampling::FixedUniform => {
            let b = cfg.batch.min(n);
            if b == n {
                return (0..n).collect();
            }
            let mut idx = index::sample(rng, n, b).into_vec();
            idx.sort_unstable();
            idx
        }
        Subsampling::Poisson => {
            let q = cfg.batch as f64 / n as f64;
            (0..n).filter(|_| rng.random::<f64>() < q).collect()
        }
    }
}

/// One private update on `params` using the examples `batch` of `data`.
pub fn dpsgd_step(
    params: &mut ModelParams,
    data: &Dataset,
    batch: &[usize],
    cfg: &DpConfig,
    iter: usize,
    rng: &mut LabRng,
) -> Result<StepRecord> {
    let len = params.len();
    let mut sum = vec![0.0; len];
    let mut g = vec![0.0; len];
    let mut rec = StepRecord {
        iter,
        batch_size: batch.len(),
        mean_loss: 0.0,
        min_loss: 0.0,
        grad_norm_min: 0.0,
        grad_norm_mean: 0.0,
        grad_norm_max: 0.0,
        clipped_norm_max: 0.0,
        clip_fraction: 0.0,
        noise_norm: 0.0,
    };
    let mut min_loss = f64::INFINITY;
    let mut min_norm = f64::INFINITY;
    let mut clipped = 0usize;
    let frozen_idx: Vec<usize> = (0..len).filter(|&c| params.frozen()[c]).collect();
    for &i in batch {
        let s = &data.samples[i];
        let l = network::loss_and_grad_into(params, &s.x, s.label, &mut g);
        if g.iter().any(|v| !v.is_finite()) || !l.is_finite() {
            return Err(Error::NonFiniteGradient { iter, sample: i });
        }
        // Frozen weights are not trainable parameters: they take no part in
        // the per-sample gradient, so they do not count towards its norm.
        for &c in &frozen_idx {
            g[c] = 0.0;
        }
        let pre = clip_in_place(&mut g, cfg.clip);
        let post = if cfg.clipping_enabled() && pre > cfg.clip { math::norm(&g) } else { pre };
        if cfg.clipping_enabled() && pre > cfg.clip {
            clipped += 1;
        }
        rec.mean_loss += l;
        min_loss = min_loss.min(l);
        min_norm = min_norm.min(pre);
        rec.grad_norm_mean += pre;
        rec.grad_norm_max = rec.grad_norm_max.max(pre);
        rec.clipped_norm_max = rec.clipped_norm_max.max(post);
        math::axpy(1.0, &g, &mut sum);
    }
    if !batch.is_empty() {
        let b = batch.len() as f64;
        rec.mean_loss /= b;
        rec.grad_norm_mean /= b;
        rec.min_loss = min_loss;
        rec.grad_norm_min = min_norm;
        rec.clip_fraction = clipped as f64 / b;
    }

    let divisor = match cfg.divisor {
        BatchDivisor::Expected => cfg.batch as f64,
        BatchDivisor::Realized => batch.len().max(1) as f64,
    };
    let step = cfg.eta / divisor;
    let noise_factor = match cfg.noise_scaling {
        NoiseScaling::Raw => cfg.eta,
        NoiseScaling::BatchDivided => cfg.eta / cfg.batch as f64,
    };
    let frozen = params.frozen().to_vec();
    let w = params.weights_mut();
    if cfg.sigma_n > 0.0 {
        let mut noise_sq = 0.0;
        for c in 0..len {
            // Drawn for every coordinate so the stream does not depend on the mask.
            let n = cfg.sigma_n * rng::standard_normal(rng);
            if frozen[c] {
                continue;
            }
            noise_sq += n * n;
            w[c] = w[c] - step * sum[c] + noise_factor * n;
        }
        rec.noise_norm = math::sqrt(noise_sq);
    } else {
        for c in 0..len {
            if !frozen[c] {
                w[c] -= step * sum[c];
            }
        }
    }
    Ok(rec)
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Runs before iteration `iter` (1-based); may change the freeze mask.
    fn before_step(&mut self, _iter: usize, _params: &mut ModelParams) -> Result<()> {
        Ok(())
    }

    /// Runs after iteration `iter` with the updated parameters.
    fn after_step(&mut self, _iter: usize, _params: &ModelParams, _record: &StepRecord) {}
}

impl TrainObserver for () {}

pub fn train(data: &Dataset, init: ModelParams, cfg: &DpConfig) -> Result<(ModelParams, TrainTrace)> {
    train_observed(data, init, cfg, &mut ())
}

/// `cfg.iters` rounds of subsampling followed by [`dpsgd_step`].
pub fn train_observed<O: TrainObserver + ?Sized>(
    data: &Dataset,
    init: ModelParams,
    cfg: &DpConfig,
    observer: &mut O,
) -> Result<(ModelParams, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::invalid("dataset", "training set is empty"));
    }
    if init.dim() != data.dim {
        return Err(Error::DimensionMismatch { expected: init.dim(), found: data.dim });
    }
    cfg.validate(data.len())?;
    let mut rng = rng::seeded(cfg.seed);
    let mut params = init;
    let mut trace = TrainTrace { records: Vec::with_capacity(cfg.iters) };
    for iter in 1..=cfg.iters {
        observer.before_step(iter, &mut params)?;
        let batch = subsample(data.len(), cfg, &mut rng);
        let rec = dpsgd_step(&mut params, data, &batch, cfg, iter, &mut rng)?;
        observer.after_step(iter, &params, &rec);
        trace.records.push(rec);
    }
    Ok((params, trace))
}

/// Plain minibatch SGD: no clipping and no noise.
pub fn sgd_pretrain(
    data: &Dataset,
    init: ModelParams,
    eta: f64,
    iters: usize,
    batch: usize,
    seed: u64,
) -> Result<ModelParams> {
    let cfg = DpConfig {
        eta,
        batch,
        clip: 0.0,
        sigma_n: 0.0,
        iters,
        subsampling: Subsampling::FixedUniform,
        seed,
        divisor: BatchDivisor::Expected,
        noise_scaling: NoiseScaling::Raw,
        budget: None,
    };
    train(data, init, &cfg).map(|(p, _)| p)
}

/// Rough noise level for an `(epsilon, alpha)` budget over `iters` steps:
/// the Gaussian-mechanism scale for sensitivity `C / B`, composed with the
/// `sqrt(2 T ln(1.25 / alpha)) / epsilon` rule.
///
/// This is a loose estimate (no subsampling amplification, no Renyi
/// accounting). It grows like `sqrt(T)`.
pub fn calibrate_sigma(budget: PrivacyBudget, iters: usize, batch: usize, clip: f64) -> Result<f64> {
    if !(budget.epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(budget.alpha > 0.0 && budget.alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    if iters == 0 {
        return Err(Error::invalid("iters", "need at least one iteration"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    if !(clip > 0.0) {
        return Err(Error::invalid("clip", "calibration needs a positive clipping threshold"));
    }
    let t = iters as f64;
    Ok((clip / batch as f64) * math::sqrt(2.0 * t * math::ln(1.25 / budget.alpha)) / budget.epsilon)
}

/// Which parameter groups the freezing schedule ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FreezeGranularity {
    /// Individual weights ranked by `|w|`.
    #[default]
    Coordinate,
    /// Whole filters `w_{k,r}` ranked by their l2 norm.
    Neuron,
}

/// Freezes the least important unfrozen structures until a `fraction` of all
/// structures is frozen. Returns how many weights were newly frozen.
pub fn freeze_lowest(params: &mut ModelParams, fraction: f64, granularity: FreezeGranularity) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", "freeze fraction must lie in [0, 1)"));
    }
    let before = params.frozen_count();
    match granularity {
        FreezeGranularity::Coordinate => {
            let target = libm::floor(fraction * params.len() as f64) as usize;
            let need = target.saturating_sub(before);
            let mut order: Vec<usize> = (0..params.len()).filter(|&i| !params.frozen()[i]).collect();
            let w = params.weights();
            order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
            for &i in order.iter().take(need) {
                params.freeze(i);
            }
        }
        FreezeGranularity::Neuron => {
            let d = params.dim();
            let rows = params.len() / d;
            let target = libm::floor(fraction * rows as f64) as usize;
            let row_frozen = |p: &ModelParams, r: usize| p.frozen()[r * d..(r + 1) * d].iter().all(|&f| f);
            let done = (0..rows).filter(|&r| row_frozen(params, r)).count();
            let need = target.saturating_sub(done);
            let mut order: Vec<(f64, usize)> = (0..rows)
                .filter(|&r| !row_frozen(params, r))
                .map(|r| (math::norm(&params.weights()[r * d..(r + 1) * d]), r))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, r) in order.iter().take(need) {
                for c in r * d..(r + 1) * d {
                    params.freeze(c);
                }
            }
        }
    }
    Ok(params.frozen_count() - before)
}

/// Stage-wise freezing: at the start of every stage (epoch) listed in
/// `stages`, freeze the least important weights until `fraction` of them is
/// frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeSchedule {
    /// 1-based stage numbers.
    pub stages: Vec<usize>,
    pub fraction: f64,
    pub granularity: FreezeGranularity,
    pub iters_per_stage: usize,
    /// `(iteration, frozen fraction after the freeze)` for every stage that ran.
    pub trace: Vec<(usize, f64)>,
}

impl FreezeSchedule {
    pub fn new(stages: Vec<usize>, fraction: f64, granularity: FreezeGranularity, iters_per_stage: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid("fraction", "freeze fraction must lie in [0, 1)"));
        }
        if iters_per_stage == 0 {
            return Err(Error::invalid("iters_per_stage", "must be at least 1"));
        }
        if stages.contains(&0) {
            return Err(Error::invalid("stages", "stages are numbered from 1"));
        }
        Ok(FreezeSchedule { stages, fraction, granularity, iters_per_stage, trace: Vec::new() })
    }
}

impl TrainObserver for FreezeSchedule {
    fn before_step(&mut self, iter: usize, params: &mut ModelParams) -> Result<()> {
        if (iter - 1) % self.iters_per_stage != 0 {
            return Ok(());
        }
        let stage = (iter - 1) / self.iters_per_stage + 1;
        if self.stages.contains(&stage) {
            freeze_lowest(params, self.fraction, self.granularity)?;
            self.trace.push((iter, params.frozen_count() as f64 / params.len() as f64));
        }
        Ok(())
    }
}

/// Inputs for the learning-setting sanity checks, all with unit constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionInputs {
    pub dim: usize,
    pub n: usize,
    pub batch: usize,
    pub min_feature_norm: f64,
    pub max_feature_norm: f64,
    pub sigma_p: f64,
    pub sigma_n: f64,
    pub eta: f64,
    /// Clipping threshold; `<= 0` means disabled, in which case the
    /// per-sample gradient scale `max|u| + sqrt(d) sigma_p` is used instead.
    pub clip: f64,
    /// Failure probability; the constants are never pinned down, 0.05 is the
    /// conventional default.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionWarning {
    /// `d < ln(n / delta)`
    Dimension { required: f64, actual: usize },
    /// `B < n`
    BatchFraction { required: usize, actual: usize },
    /// `min |u| < sigma_p`
    FeatureBelowPatchNoise { feature: f64, sigma_p: f64 },
    /// `sigma_p < sigma_n`
    PatchNoiseBelowDpNoise { sigma_p: f64, sigma_n: f64 },
    /// `eta > 1 / ((C + sqrt(d) sigma_n)(max|u| + sqrt(d) sigma_p))`
    LearningRate { max: f64, actual: f64 },
}

/// Reports every violated clause. These are warnings: the true constants are
/// unspecified, so a violation is informative, not fatal.
pub fn check_conditions(c: &ConditionInputs) -> Vec<ConditionWarning> {
    let mut out = Vec::new();
    let sd = math::sqrt(c.dim as f64);
    let required = math::ln(c.n as f64 / c.delta);
    if (c.dim as f64) < required {
        out.push(ConditionWarning::Dimension { required, actual: c.dim });
    }
    if c.batch < c.n {
        out.push(ConditionWarning::BatchFraction { required: c.n, actual: c.batch });
    }
    if c.min_feature_norm < c.sigma_p {
        out.push(ConditionWarning::FeatureBelowPatchNoise { feature: c.min_feature_norm, sigma_p: c.sigma_p });
    }
    if c.sigma_p < c.sigma_n {
        out.push(ConditionWarning::PatchNoiseBelowDpNoise { sigma_p: c.sigma_p, sigma_n: c.sigma_n });
    }
    let grad_scale = c.max_feature_norm + sd * c.sigma_p;
    let clip = if c.clip > 0.0 { c.clip } else { grad_scale };
    let max = 1.0 / ((clip + sd * c.sigma_n) * grad_scale);
    if c.eta > max {
        out.push(ConditionWarning::LearningRate { max, actual: c.eta });
    }
    out
}
