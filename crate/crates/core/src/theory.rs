//! Feature-to-noise ratios, test-loss bound shapes and Monte Carlo estimates.
//!
//! Every asymptotic bound is evaluated with its hidden constants set to 1 and
//! logarithmic factors dropped. The resulting numbers are only meaningful for
//! monotonicity and ordering comparisons ("shape evaluation"), never as
//! absolute predictions.

use alloc::vec::Vec;

use crate::attack::AttackNorm;
use crate::data::{Cell, Class, DataSpec, Sample, SampleSource};
use crate::math;
use crate::network::{self, ModelParams};
use crate::optim::{StepRecord, TrainObserver};
use crate::rng::{self, LabRng};
use crate::{Error, Result};

/// Mean loss, its standard error and the 0-1 accuracy over a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McEstimate {
    pub loss: f64,
    pub loss_stderr: f64,
    /// Fraction with `F_y > F_{3-y}`; ties count one half.
    pub accuracy: f64,
    pub n: usize,
}

/// Streaming mean/variance (Welford) of per-sample losses plus accuracy.
#[derive(Debug, Clone, Default)]
pub struct McAccumulator {
    n: usize,
    mean: f64,
    m2: f64,
    correct: f64,
}

impl McAccumulator {
    pub fn push(&mut self, out: [f64; 2], y: Class) {
        let l = network::loss_from_outputs(out, y);
        self.n += 1;
        let delta = l - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (l - self.mean);
        let (fy, fo) = (out[y.index()], out[y.other().index()]);
        self.correct += if fy > fo {
            1.0
        } else if fy == fo {
            0.5
        } else {
            0.0
        };
    }

    pub fn finish(&self) -> McEstimate {
        let n = self.n as f64;
        let stderr = if self.n > 1 { math::sqrt(self.m2 / (n - 1.0) / n) } else { 0.0 };
        McEstimate { loss: self.mean, loss_stderr: stderr, accuracy: self.correct / n, n: self.n }
    }
}

/// Test loss on one cell, estimated from `n_mc` fresh conditional samples.
pub fn mc_test_loss<S: SampleSource + ?Sized>(
    params: &ModelParams,
    source: &S,
    cell: Cell,
    n_mc: usize,
    rng: &mut LabRng,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "need at least one sample"));
    }
    let mut acc = McAccumulator::default();
    for _ in 0..n_mc {
        let s = source.draw_conditional(cell, rng);
        acc.push(network::forward(params, &s.x)?, s.label);
    }
    Ok(acc.finish())
}

/// Mean loss and accuracy on a fixed set of samples.
pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<McEstimate> {
    let mut acc = McAccumulator::default();
    for s in samples {
        acc.push(network::forward(params, &s.x)?, s.label);
    }
    Ok(acc.finish())
}

/// `|u| / sigma_n`, infinite without noise.
pub fn fnr(feature_norm: f64, sigma_n: f64) -> f64 {
    if sigma_n > 0.0 {
        feature_norm / sigma_n
    } else {
        f64::INFINITY
    }
}

/// `C / (|u| + sigma_p sqrt(d))`. Without clipping every gradient keeps its
/// full size, so the factor is 1.
pub fn clip_factor(clip: f64, feature_norm: f64, sigma_p: f64, dim: usize) -> f64 {
    if clip > 0.0 {
        clip / (feature_norm + sigma_p * math::sqrt(dim as f64))
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellQuantities {
    pub cell: Cell,
    pub feature_norm: f64,
    pub fnr: f64,
    pub clip_factor: f64,
    pub proportion: f64,
}

/// Feature-to-noise ratio, clipping factor and expected share of every cell.
pub fn cell_quantities(spec: &DataSpec, clip: f64, sigma_n: f64) -> [CellQuantities; 4] {
    let gamma = spec.proportions();
    let d = spec.bank.dim();
    Cell::ALL.map(|cell| {
        let u = spec.bank.norm(cell);
        CellQuantities {
            cell,
            feature_norm: u,
            fnr: fnr(u, sigma_n),
            clip_factor: clip_factor(clip, u, spec.sigma_p, d),
            proportion: gamma[cell.index()],
        }
    })
}

/// Everything the standard-loss bounds depend on for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub feature_norm: f64,
    pub fnr: f64,
    pub clip_factor: f64,
    pub proportion: f64,
    pub iters: usize,
    /// Measured loss of the initial model on the cell.
    pub init_loss: f64,
    pub width: usize,
    pub n: usize,
}

impl BoundInputs {
    pub fn from_quantities(q: &CellQuantities, iters: usize, init_loss: f64, width: usize, n: usize) -> Self {
        BoundInputs {
            feature_norm: q.feature_norm,
            fnr: q.fnr,
            clip_factor: q.clip_factor,
            proportion: q.proportion,
            iters,
            init_loss,
            width,
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpperBound {
    pub vanishing: f64,
    pub generalization: f64,
    pub privacy: f64,
    pub total: f64,
}

/// `exp(-L g |u|^2 T / m) L0 + 1 / (sqrt(n) g L) + m / (L g F)`
/// with `L` the clipping factor, `g` the proportion and `F` the FNR.
pub fn upper_bound(b: &BoundInputs) -> UpperBound {
    let m = b.width as f64;
    let lg = b.clip_factor * b.proportion;
    let vanishing = math::exp(-lg * b.feature_norm * b.feature_norm * b.iters as f64 / m) * b.init_loss;
    let generalization = 1.0 / (math::sqrt(b.n as f64) * lg);
    let privacy = if b.fnr.is_infinite() { 0.0 } else { m / (lg * b.fnr) };
    UpperBound { vanishing, generalization, privacy, total: vanishing + generalization + privacy }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowerBound {
    pub vanishing: f64,
    pub privacy: f64,
    /// Subtracted from the total.
    pub generalization: f64,
    pub total: f64,
}

/// `exp(-g |u|^2 T / m) L0 + d sigma_p^2 / (g F^2) - sqrt(1/n) / g`.
pub fn lower_bound(b: &BoundInputs, dim: usize, sigma_p: f64) -> LowerBound {
    let m = b.width as f64;
    let g = b.proportion;
    let vanishing = math::exp(-g * b.feature_norm * b.feature_norm * b.iters as f64 / m) * b.init_loss;
    let privacy = if b.fnr.is_infinite() { 0.0 } else { dim as f64 * sigma_p * sigma_p / (g * b.fnr * b.fnr) };
    let generalization = math::sqrt(1.0 / b.n as f64) / g;
    LowerBound { vanishing, privacy, generalization, total: vanishing + privacy - generalization }
}

/// Smallest iteration count for which the lower bound applies:
/// `-1 / ln(1 - eta min(g |u|^2) / m)`. Zero when the log argument is not
/// positive (any `T` qualifies).
pub fn lower_bound_min_iters(eta: f64, min_prop_norm_sq: f64, width: usize) -> f64 {
    let x = eta * min_prop_norm_sq / width as f64;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x >= 1.0 {
        return 0.0;
    }
    -1.0 / math::ln(1.0 - x)
}

pub fn lower_bound_applies(iters: usize, eta: f64, min_prop_norm_sq: f64, width: usize) -> bool {
    iters as f64 >= lower_bound_min_iters(eta, min_prop_norm_sq, width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvBoundInputs {
    pub iters: usize,
    pub clip: f64,
    pub width: usize,
    pub dim: usize,
    pub sigma_n: f64,
    pub sigma0: f64,
    pub radius: f64,
    pub norm: AttackNorm,
}

/// `[T C / m + sqrt(T d) sigma_n / m + sqrt(d) sigma0] radius d^(1 - 1/p)`.
pub fn adv_perturbation_term(a: &AdvBoundInputs) -> f64 {
    let (t, m, d) = (a.iters as f64, a.width as f64, a.dim as f64);
    let growth = t * a.clip / m + math::sqrt(t * d) * a.sigma_n / m + math::sqrt(d) * a.sigma0;
    growth * a.radius * math::powf(d, a.norm.dual_exponent())
}

pub fn adv_bound(base_upper: f64, a: &AdvBoundInputs) -> f64 {
    base_upper + adv_perturbation_term(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixtureBounds {
    /// Per class, index 0 for class 1.
    pub class: [f64; 2],
    /// Per group, index 0 for the majority group.
    pub group: [f64; 2],
}

/// Share-weighted averages of the cell bounds over each class and each group.
/// Cells with zero share drop out.
pub fn mixture_bounds(cell_bounds: [f64; 4], gamma: [f64; 4]) -> MixtureBounds {
    let avg = |cells: [Cell; 2]| {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in cells {
            let g = gamma[c.index()];
            if g > 0.0 {
                num += g * cell_bounds[c.index()];
                den += g;
            }
        }
        num / den
    };
    let [c1maj, c1min, c2maj, c2min] = Cell::ALL;
    MixtureBounds {
        class: [avg([c1maj, c1min]), avg([c2maj, c2min])],
        group: [avg([c1maj, c2maj]), avg([c1min, c2min])],
    }
}

/// Loss of the pretrained model on the rotated distribution:
///
/// `L~ = 1/2 softplus(c3 sp^2 - c1 cos t |u2|^2)
///     + 1/2 softplus(c1 sin t |u1|^2 + c3 sp^2 - c1 cos t |u1|^2)`,
///
/// which is the `-1/2 ln(softmax)` form rewritten without overflow.
pub fn finetune_l_tilde(theta: f64, norm_u1: f64, norm_u2: f64, c1: f64, c3: f64, sigma_p: f64) -> f64 {
    let (c, s) = (math::cos(theta), math::sin(theta));
    let noise = c3 * sigma_p * sigma_p;
    let a2 = c1 * c * norm_u2 * norm_u2;
    let a1 = c1 * c * norm_u1 * norm_u1;
    let b1 = c1 * s * norm_u1 * norm_u1 + noise;
    0.5 * math::softplus(noise - a2) + 0.5 * math::softplus(b1 - a1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneBoundInputs {
    pub theta: f64,
    pub feature_norm: f64,
    pub c1: f64,
    pub c3: f64,
    pub sigma_p: f64,
    pub clip: f64,
    pub sigma_n: f64,
    pub iters: usize,
    pub width: usize,
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FinetuneBound {
    pub l_tilde: f64,
    pub vanishing: f64,
    pub generalization: f64,
    pub privacy: f64,
    pub total: f64,
}

/// `exp(-L |u|^2 T / m) L~ + sqrt(d) / (sqrt(n) L) + m sqrt(d) sigma_n / (L |u|)`.
pub fn finetune_bound(f: &FinetuneBoundInputs) -> FinetuneBound {
    let u = f.feature_norm;
    let l_tilde = finetune_l_tilde(f.theta, u, u, f.c1, f.c3, f.sigma_p);
    let lam = clip_factor(f.clip, u, f.sigma_p, f.dim);
    let m = f.width as f64;
    let sd = math::sqrt(f.dim as f64);
    let vanishing = math::exp(-lam * u * u * f.iters as f64 / m) * l_tilde;
    let generalization = sd / (math::sqrt(f.n as f64) * lam);
    let privacy = m * sd * f.sigma_n / (lam * u);
    FinetuneBound { l_tilde, vanishing, generalization, privacy, total: vanishing + generalization + privacy }
}

/// Piecewise-linear slope bounding `log(1 + t (e^x - 1))` from above on
/// `[-a, inf)`: 1 for `x >= 0`, the chord slope `log(1 + t (e^-a - 1)) / -a`
/// below zero.
pub fn gamma_fn(x: f64, t: f64, a: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid("t", "must lie in (0, 1]"));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid("a", "must be positive and finite"));
    }
    if !(x >= -a) {
        return Err(Error::invalid("x", "must be at least -a"));
    }
    if x >= 0.0 {
        Ok(1.0)
    } else {
        Ok(math::ln_1p(t * (math::exp(-a) - 1.0)) / -a)
    }
}

/// Change of both model outputs on one input between two checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Increment {
    /// `F_y(W_{t+1}, x) - F_y(W_t, x)`
    pub target: f64,
    /// `F_{3-y}(W_{t+1}, x) - F_{3-y}(W_t, x)`
    pub other: f64,
}

fn increment_from(before: [f64; 2], after: [f64; 2], y: Class) -> Increment {
    Increment {
        target: after[y.index()] - before[y.index()],
        other: after[y.other().index()] - before[y.other().index()],
    }
}

pub fn increment_probe(w_t: &ModelParams, w_next: &ModelParams, probes: &[Sample]) -> Result<Vec<Increment>> {
    probes
        .iter()
        .map(|s| Ok(increment_from(network::forward(w_t, &s.x)?, network::forward(w_next, &s.x)?, s.label)))
        .collect()
}

/// Per-step scale of `|Delta_{3-y} - Delta_y|` with unit constant:
/// `eta (C + sqrt(d) sigma_n)(max|u| + sqrt(d) sigma_p)`.
pub fn increment_scale(eta: f64, clip: f64, dim: usize, sigma_n: f64, max_feature_norm: f64, sigma_p: f64) -> f64 {
    let sd = math::sqrt(dim as f64);
    let grad_scale = max_feature_norm + sd * sigma_p;
    let clip = if clip > 0.0 { clip } else { grad_scale };
    eta * (clip + sd * sigma_n) * grad_scale
}

/// A fixed probe set whose output increments are recorded at every step.
#[derive(Debug, Clone)]
pub struct IncrementProbe {
    pub probes: Vec<Sample>,
    /// `records[t][i]` is the increment of probe `i` at step `t + 1`.
    pub records: Vec<Vec<Increment>>,
    /// Threshold for the soft check; see [`increment_scale`].
    pub scale: f64,
    /// Number of (step, probe) pairs exceeding `scale`.
    pub violations: usize,
    cached: Vec<[f64; 2]>,
}

impl IncrementProbe {
    pub const DEFAULT_PER_CELL: usize = 64;

    /// Draws `per_cell` probes from every cell of `source`.
    pub fn new<S: SampleSource + ?Sized>(source: &S, per_cell: usize, seed: u64, scale: f64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut probes = Vec::with_capacity(per_cell * source.cells().len());
        for &cell in source.cells() {
            for _ in 0..per_cell {
                probes.push(source.draw_conditional(cell, &mut rng));
            }
        }
        IncrementProbe { probes, records: Vec::new(), scale, violations: 0, cached: Vec::new() }
    }

    fn outputs(&self, params: &ModelParams) -> Vec<[f64; 2]> {
        self.probes.iter().map(|s| network::forward(params, &s.x).unwrap_or([f64::NAN; 2])).collect()
    }

    /// Mean `(target, other)` increment per step over the probes of `cell`.
    pub fn mean_by_cell(&self, cell: Cell) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|step| {
                let (mut t, mut o, mut k) = (0.0, 0.0, 0usize);
                for (inc, s) in step.iter().zip(&self.probes) {
                    if s.cell() == cell {
                        t += inc.target;
                        o += inc.other;
                        k += 1;
                    }
                }
                let k = k.max(1) as f64;
                (t / k, o / k)
            })
            .collect()
    }
}

impl TrainObserver for IncrementProbe {
    fn before_step(&mut self, _iter: usize, params: &mut ModelParams) -> Result<()> {
        self.cached = self.outputs(params);
        Ok(())
    }

    fn after_step(&mut self, _iter: usize, params: &ModelParams, _record: &StepRecord) {
        let after = self.outputs(params);
        let step: Vec<Increment> = self
            .cached
            .iter()
            .zip(&after)
            .zip(&self.probes)
            .map(|((b, a), s)| increment_from(*b, *a, s.label))
            .collect();
        self.violations += step.iter().filter(|i| (i.other - i.target).abs() > self.scale).count();
        self.records.push(step);
    }
}

/// Everything reported for one cell.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellReport {
    pub quantities: CellQuantities,
    pub clean: Option<McEstimate>,
    pub adversarial: Option<McEstimate>,
    pub upper: UpperBound,
    pub lower: LowerBound,
    pub adv_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupReport {
    pub sigma_n: f64,
    pub cells: Vec<CellReport>,
    pub class_mixture: [f64; 2],
    pub group_mixture: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureBank, Group};

    fn reference_spec() -> DataSpec {
        let bank = FeatureBank::generate(100, [4.0, 2.0, 1.5, 0.5], 7).unwrap();
        DataSpec::new(2.0 / 3.0, 2.0 / 3.0, 0.2, bank).unwrap()
    }

    fn inputs(q: &CellQuantities) -> BoundInputs {
        BoundInputs::from_quantities(q, 80, core::f64::consts::LN_2, 32, 450)
    }

    #[test]
    fn definition_quantities() {
        assert_eq!(fnr(4.0, 0.5), 8.0);
        assert!(fnr(4.0, 0.0).is_infinite());
        assert!((clip_factor(0.1, 4.0, 0.2, 100) - 0.1 / 6.0).abs() < 1e-15);
        let q = cell_quantities(&reference_spec(), 0.1, 0.5);
        let want = [4.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0];
        for (qi, w) in q.iter().zip(want) {
            assert!((qi.proportion - w).abs() < 1e-12);
        }
        assert!((q.iter().map(|c| c.proportion).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((q[0].fnr - 8.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_limits_and_scaling() {
        let q = cell_quantities(&reference_spec(), 0.1, 0.1);
        let mut b = inputs(&q[0]);
        b.iters = 1_000_000_000;
        assert_eq!(upper_bound(&b).vanishing, 0.0);
        let b = inputs(&q[0]);
        let b2 = BoundInputs { fnr: 2.0 * b.fnr, ..b };
        assert!((upper_bound(&b2).privacy * 2.0 - upper_bound(&b).privacy).abs() < 1e-12);
        let q0 = cell_quantities(&reference_spec(), 0.1, 0.0);
        assert_eq!(upper_bound(&inputs(&q0[0])).privacy, 0.0);
    }

    #[test]
    fn majority_of_class_one_has_smaller_bound() {
        let q = cell_quantities(&reference_spec(), 0.1, 0.1);
        let b1 = upper_bound(&inputs(&q[0])).total;
        let b4 = upper_bound(&inputs(&q[3])).total;
        assert!(b1 < b4, "{b1} vs {b4}");
    }

    #[test]
    fn lower_bound_terms() {
        let q = cell_quantities(&reference_spec(), 0.1, 1e-9);
        let b = inputs(&q[1]);
        let lb = lower_bound(&b, 100, 0.2);
        assert!(lb.privacy < 1e-14);
        let q = cell_quantities(&reference_spec(), 0.1, 0.1);
        let b = inputs(&q[1]);
        let p1 = lower_bound(&b, 100, 0.2).privacy;
        let p2 = lower_bound(&b, 200, 0.2).privacy;
        assert!((p2 - 2.0 * p1).abs() < 1e-12);
        assert!(lower_bound_applies(10_000, 0.1, 4.0 / 9.0 * 0.25, 32));
        assert!(!lower_bound_applies(10, 0.1, 4.0 / 9.0 * 0.25, 32));
    }

    fn adv_inputs() -> AdvBoundInputs {
        AdvBoundInputs {
            iters: 80,
            clip: 0.1,
            width: 32,
            dim: 100,
            sigma_n: 0.1,
            sigma0: 0.01,
            radius: 0.02,
            norm: AttackNorm::Linf,
        }
    }

    #[test]
    fn adversarial_term() {
        let a = adv_inputs();
        assert_eq!(adv_bound(1.5, &AdvBoundInputs { radius: 0.0, ..a }), 1.5);
        assert_eq!(math::powf(100.0, AttackNorm::Linf.dual_exponent()), 100.0);
        // Isolate the sqrt(T d) sigma_n / m term.
        let only_noise = AdvBoundInputs { clip: 0.0, sigma0: 0.0, ..a };
        let t4 = AdvBoundInputs { iters: 320, ..only_noise };
        assert!((adv_perturbation_term(&t4) / adv_perturbation_term(&only_noise) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mixtures() {
        let m = mixture_bounds([2.0; 4], [0.4, 0.2, 0.3, 0.1]);
        assert!(m.class.iter().chain(&m.group).all(|v| (v - 2.0).abs() < 1e-15));
        let m = mixture_bounds([1.0, 5.0, 2.0, 3.0], [0.5, 0.0, 0.25, 0.25]);
        assert_eq!(m.class[0], 1.0);
        let m = mixture_bounds([1.0, 5.0, 2.0, 3.0], [0.4, 0.2, 0.3, 0.1]);
        assert!(m.class[0] >= 1.0 && m.class[0] <= 5.0);
        assert!(m.group[1] >= 3.0 && m.group[1] <= 5.0);
    }

    #[test]
    fn l_tilde_limits() {
        let l = finetune_l_tilde(0.0, 10.0, 10.0, 1.0, 1.0, 0.2);
        assert!(l > 0.0 && l < 1e-40);
        let mut prev = finetune_l_tilde(0.0, 2.0, 2.0, 1.0, 1.0, 0.2);
        for k in 1..=135 {
            let th = (k as f64 * 0.5).to_radians();
            let cur = finetune_l_tilde(th, 2.0, 2.0, 1.0, 1.0, 0.2);
            assert!(cur > prev, "not increasing at {k}");
            prev = cur;
        }
        // theta = 0: both softmax terms see cos = 1, sin = 0
        let direct = 0.5 * math::softplus(0.04 - 4.0) + 0.5 * math::softplus(0.04 - 4.0);
        assert_eq!(finetune_l_tilde(0.0, 2.0, 2.0, 1.0, 1.0, 0.2), direct);
    }

    #[test]
    fn gamma_fn_cases() {
        assert_eq!(gamma_fn(0.5, 0.3, 1.0).unwrap(), 1.0);
        assert!((gamma_fn(-0.5, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        for k in 0..=2000 {
            let x = -1.0 + k as f64 * 0.002;
            let lhs = math::ln_1p(0.5 * (math::exp(x) - 1.0));
            assert!(lhs <= gamma_fn(x, 0.5, 1.0).unwrap() * x + 1e-15);
        }
        assert!(gamma_fn(-2.0, 0.5, 1.0).is_err());
        assert!(gamma_fn(0.0, 0.0, 1.0).is_err());
        assert!(gamma_fn(0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn zero_model_is_at_chance() {
        let spec = reference_spec();
        let p = ModelParams::zeros(4, 100);
        let est = mc_test_loss(&p, &spec, Cell::ALL[2], 100, &mut rng::seeded(1)).unwrap();
        assert!((est.loss - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(est.accuracy, 0.5);
        assert_eq!(est.loss_stderr, 0.0);
    }

    #[test]
    fn perfect_single_feature_model() {
        let spec = reference_spec();
        let cell = Cell::new(Class::One, Group::Maj);
        let mut p = ModelParams::zeros(1, 100);
        p.neuron_mut(Class::One, 0).copy_from_slice(spec.bank.feature(cell));
        let est = mc_test_loss(&p, &spec, cell, 500, &mut rng::seeded(4)).unwrap();
        assert_eq!(est.accuracy, 1.0);
    }

    #[test]
    fn unchanged_weights_have_zero_increments() {
        let spec = reference_spec();
        let p = crate::network::init_params(&crate::network::ModelConfig {
            width: 4,
            dim: 100,
            sigma0: 0.1,
            seed: 2,
        })
        .unwrap();
        let probe = IncrementProbe::new(&spec, 8, 3, 1.0);
        let inc = increment_probe(&p, &p, &probe.probes).unwrap();
        assert!(inc.iter().all(|i| i.target == 0.0 && i.other == 0.0));
    }
}
