//! Feature banks and the two-patch data distributions.
//!
//! Every input is a pair of `d`-dimensional patches stored back to back in a
//! single vector of length `2d`. One patch carries a class feature, the other
//! is Gaussian noise with every feature direction projected out.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::math::{self, dot, norm, norm_sq};
use crate::rng::{self, LabRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Class {
    One,
    Two,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::One, Class::Two];

    pub fn index(self) -> usize {
        match self {
            Class::One => 0,
            Class::Two => 1,
        }
    }

    /// The label as written in the model description: 1 or 2.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Option<Class> {
        match label {
            1 => Some(Class::One),
            2 => Some(Class::Two),
            _ => None,
        }
    }

    pub fn other(self) -> Class {
        match self {
            Class::One => Class::Two,
            Class::Two => Class::One,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Group {
    Maj,
    Min,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Maj, Group::Min];

    pub fn index(self) -> usize {
        match self {
            Group::Maj => 0,
            Group::Min => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Group> {
        match i {
            0 => Some(Group::Maj),
            1 => Some(Group::Min),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Maj => "maj",
            Group::Min => "min",
        }
    }
}

/// A (class, group) pair, i.e. one conditional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cell {
    pub class: Class,
    pub group: Group,
}

impl Cell {
    /// Canonical order: (1,maj), (1,min), (2,maj), (2,min).
    pub const ALL: [Cell; 4] = [
        Cell::new(Class::One, Group::Maj),
        Cell::new(Class::One, Group::Min),
        Cell::new(Class::Two, Group::Maj),
        Cell::new(Class::Two, Group::Min),
    ];

    pub const fn new(class: Class, group: Group) -> Self {
        Cell { class, group }
    }

    pub fn index(self) -> usize {
        2 * self.class.index() + self.group.index()
    }
}

/// Draws `k` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
///
/// A draw whose residual after projection is tiny relative to its original
/// norm is treated as degenerate and the whole set is redrawn, at most 16
/// times.
pub fn orthonormal_set(d: usize, k: usize, rng: &mut LabRng) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 16;
    if k > d {
        return Err(Error::invalid("d", "fewer dimensions than requested directions"));
    }
    'attempt: for _ in 0..ATTEMPTS {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut v = vec![0.0; d];
            rng::fill_normal(rng, 1.0, &mut v);
            let original = norm(&v);
            // Two passes of modified Gram-Schmidt keep the set orthogonal to
            // machine precision.
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    math::axpy(-c, b, &mut v);
                }
            }
            let residual = norm(&v);
            if !(residual > 1e-6 * original) {
                continue 'attempt;
            }
            math::scale(1.0 / residual, &mut v);
            basis.push(v);
        }
        return Ok(basis);
    }
    Err(Error::Orthonormalization { attempts: ATTEMPTS })
}

/// Removes the components of `g` along every non-zero direction in `dirs`.
///
/// All coefficients are computed from the original `g` before any
/// subtraction, i.e. `g - sum_k <g,u_k>/|u_k|^2 u_k`.
fn project_out(g: &mut [f64], dirs: &[&[f64]]) {
    let coeffs: Vec<f64> = dirs
        .iter()
        .map(|u| {
            let nsq = norm_sq(u);
            if nsq > 0.0 {
                dot(g, u) / nsq
            } else {
                0.0
            }
        })
        .collect();
    for (u, c) in dirs.iter().zip(coeffs) {
        if c != 0.0 {
            math::axpy(-c, u, g);
        }
    }
}

/// The four mutually orthogonal class/group features.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureBank {
    dim: usize,
    features: [Vec<f64>; 4],
    norms: [f64; 4],
}

impl FeatureBank {
    /// Builds a bank with the requested norms, indexed in [`Cell::ALL`] order.
    pub fn generate(d: usize, norms: [f64; 4], seed: u64) -> Result<Self> {
        if d < 4 {
            return Err(Error::invalid("d", "need at least 4 dimensions for four orthogonal features"));
        }
        if norms.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
            return Err(Error::invalid("norms", "feature norms must be positive and finite"));
        }
        let mut rng = rng::seeded(seed);
        let basis = orthonormal_set(d, 4, &mut rng)?;
        let mut it = basis.into_iter().zip(norms).map(|(mut v, n)| {
            math::scale(n, &mut v);
            v
        });
        let features = [
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        ];
        Self::from_vectors(features)
    }

    /// Wraps explicit feature vectors after checking they are orthogonal.
    pub fn from_vectors(features: [Vec<f64>; 4]) -> Result<Self> {
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: features.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(dim),
            });
        }
        let norms = [norm(&features[0]), norm(&features[1]), norm(&features[2]), norm(&features[3])];
        for a in 0..4 {
            for b in (a + 1)..4 {
                if dot(&features[a], &features[b]).abs() > 1e-9 * norms[a] * norms[b] {
                    return Err(Error::invalid("features", "feature vectors are not orthogonal"));
                }
            }
        }
        Ok(FeatureBank { dim, features, norms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, cell: Cell) -> &[f64] {
        &self.features[cell.index()]
    }

    pub fn norm(&self, cell: Cell) -> f64 {
        self.norms[cell.index()]
    }

    pub fn norms(&self) -> [f64; 4] {
        self.norms
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }
}

/// One labelled two-patch input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Both patches, `x[..d]` then `x[d..]`.
    pub x: Vec<f64>,
    pub label: Class,
    pub group: Group,
    /// Which patch (0 or 1) holds the feature.
    pub feature_patch: usize,
}

impl Sample {
    pub fn dim(&self) -> usize {
        self.x.len() / 2
    }

    pub fn patch(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.x[j * d..(j + 1) * d]
    }

    pub fn noise_patch(&self) -> &[f64] {
        self.patch(1 - self.feature_patch)
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.label, self.group)
    }
}

/// Anything that can generate labelled two-patch samples.
pub trait SampleSource {
    fn dim(&self) -> usize;
    fn sigma_p(&self) -> f64;
    /// Cells this source can generate, in canonical order.
    fn cells(&self) -> &'static [Cell];
    fn feature(&self, cell: Cell) -> &[f64];
    /// Largest feature norm over all cells.
    fn max_feature_norm(&self) -> f64;
    fn sample_noise_patch(&self, rng: &mut LabRng) -> Vec<f64>;
    fn draw(&self, rng: &mut LabRng) -> Sample;
    fn draw_conditional(&self, cell: Cell, rng: &mut LabRng) -> Sample;
}

fn assemble(feature: &[f64], noise: Vec<f64>, slot: usize, cell: Cell) -> Sample {
    let d = feature.len();
    let mut x = vec![0.0; 2 * d];
    x[slot * d..(slot + 1) * d].copy_from_slice(feature);
    x[(1 - slot) * d..(2 - slot) * d].copy_from_slice(&noise);
    Sample { x, label: cell.class, group: cell.group, feature_patch: slot }
}

fn noise_patch(d: usize, sigma_p: f64, dirs: &[&[f64]], rng: &mut LabRng) -> Vec<f64> {
    let mut g = vec![0.0; d];
    if sigma_p == 0.0 {
        return g;
    }
    rng::fill_normal(rng, sigma_p, &mut g);
    project_out(&mut g, dirs);
    g
}

/// The majority/minority distribution over four cells.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DataSpec {
    /// Probability of label 1.
    pub p_class1: f64,
    /// Probability that the feature patch carries the majority feature.
    pub p_majority: f64,
    /// Standard deviation of the noise patch.
    pub sigma_p: f64,
    pub bank: FeatureBank,
}

impl DataSpec {
    pub fn new(p_class1: f64, p_majority: f64, sigma_p: f64, bank: FeatureBank) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_class1) {
            return Err(Error::invalid("p_class1", "must lie in [0, 1]"));
        }
        if !(p_majority > 0.5 && p_majority < 1.0) {
            return Err(Error::invalid("p_majority", "must lie in (0.5, 1)"));
        }
        if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
            return Err(Error::invalid("sigma_p", "must be finite and non-negative"));
        }
        for class in Class::ALL {
            let maj = bank.norm(Cell::new(class, Group::Maj));
            let min = bank.norm(Cell::new(class, Group::Min));
            if !(p_majority * maj > (1.0 - p_majority) * min) {
                return Err(Error::invalid(
                    "bank",
                    "majority feature must dominate: p_f |u_maj| > (1 - p_f) |u_min|",
                ));
            }
        }
        Ok(DataSpec { p_class1, p_majority, sigma_p, bank })
    }

    /// Expected share of each cell, in [`Cell::ALL`] order.
    pub fn proportions(&self) -> [f64; 4] {
        let (pc, pf) = (self.p_class1, self.p_majority);
        [pc * pf, pc * (1.0 - pf), (1.0 - pc) * pf, (1.0 - pc) * (1.0 - pf)]
    }

    fn dirs(&self) -> [&[f64]; 4] {
        [
            &self.bank.features[0],
            &self.bank.features[1],
            &self.bank.features[2],
            &self.bank.features[3],
        ]
    }
}

impl SampleSource for DataSpec {
    fn dim(&self) -> usize {
        self.bank.dim
    }

    fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    fn cells(&self) -> &'static [Cell] {
        &Cell::ALL
    }

    fn feature(&self, cell: Cell) -> &[f64] {
        self.bank.feature(cell)
    }

    fn max_feature_norm(&self) -> f64 {
        self.bank.max_norm()
    }

    fn sample_noise_patch(&self, rng: &mut LabRng) -> Vec<f64> {
        noise_patch(self.bank.dim, self.sigma_p, &self.dirs(), rng)
    }

    fn draw(&self, rng: &mut LabRng) -> Sample {
        let class = if rng.random::<f64>() < self.p_class1 { Class::One } else { Class::Two };
        let group = if rng.random::<f64>() < self.p_majority { Group::Maj } else { Group::Min };
        self.draw_conditional(Cell::new(class, group), rng)
    }

    fn draw_conditional(&self, cell: Cell, rng: &mut LabRng) -> Sample {
        let slot = usize::from(rng.random::<bool>());
        let noise = self.sample_noise_patch(rng);
        assemble(self.bank.feature(cell), noise, slot, cell)
    }
}

/// One feature per class with a shared norm, optionally rotated by `theta`
/// inside the plane they span.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimpleBank {
    dim: usize,
    theta: f64,
    base: [Vec<f64>; 2],
    features: [Vec<f64>; 2],
}

impl SimpleBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The unrotated pair `u_1, u_2`.
    pub fn base(&self, class: Class) -> &[f64] {
        &self.base[class.index()]
    }

    /// The features this bank's distribution emits (`u'_k` when rotated).
    pub fn feature(&self, class: Class) -> &[f64] {
        &self.features[class.index()]
    }

    pub fn feature_norm(&self) -> f64 {
        norm(&self.base[0])
    }

    /// The same base pair rotated by `theta`:
    /// `u'_1 = cos t u_1 + sin t u_2`, `u'_2 = cos t u_2 - sin t u_1`.
    pub fn rotated(&self, theta: f64) -> Result<SimpleBank> {
        if !(0.0..=FRAC_PI_2).contains(&theta) {
            return Err(Error::invalid("theta", "rotation angle must lie in [0, pi/2]"));
        }
        let (c, s) = (math::cos(theta), math::sin(theta));
        let [u1, u2] = &self.base;
        let f1 = u1.iter().zip(u2).map(|(a, b)| c * a + s * b).collect();
        let f2 = u1.iter().zip(u2).map(|(a, b)| c * b - s * a).collect();
        Ok(SimpleBank { dim: self.dim, theta, base: self.base.clone(), features: [f1, f2] })
    }
}

/// Builds the pretraining bank (orthogonal `u_1, u_2` of norm `feature_norm`)
/// and the finetuning bank rotated by `theta`.
///
/// A zero norm is allowed and yields a signal-free distribution.
pub fn make_simple_banks(d: usize, feature_norm: f64, theta: f64, seed: u64) -> Result<(SimpleBank, SimpleBank)> {
    if d < 2 {
        return Err(Error::invalid("d", "need at least 2 dimensions"));
    }
    if !(feature_norm >= 0.0) || !feature_norm.is_finite() {
        return Err(Error::invalid("feature_norm", "must be finite and non-negative"));
    }
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return Err(Error::invalid("theta", "rotation angle must lie in [0, pi/2]"));
    }
    let mut rng = rng::seeded(seed);
    let mut basis = orthonormal_set(d, 2, &mut rng)?;
    for v in &mut basis {
        math::scale(feature_norm, v);
    }
    let u2 = basis.pop().unwrap();
    let u1 = basis.pop().unwrap();
    let base = [u1, u2];
    let pretrain = SimpleBank { dim: d, theta: 0.0, base: base.clone(), features: base };
    let finetune = pretrain.rotated(theta)?;
    Ok((pretrain, finetune))
}

/// The two-class, single-feature distribution with equal class probabilities.
///
/// The noise projector removes this bank's own two features, so the rotated
/// distribution projects out `u'_1, u'_2` rather than `u_1, u_2`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimpleSpec {
    pub bank: SimpleBank,
    pub sigma_p: f64,
}

const SIMPLE_CELLS: [Cell; 2] = [Cell::new(Class::One, Group::Maj), Cell::new(Class::Two, Group::Maj)];

impl SimpleSpec {
    pub fn new(bank: SimpleBank, sigma_p: f64) -> Result<Self> {
        if !(sigma_p >= 0.0) || !sigma_p.is_finite() {
            return Err(Error::invalid("sigma_p", "must be finite and non-negative"));
        }
        Ok(SimpleSpec { bank, sigma_p })
    }
}

impl SampleSource for SimpleSpec {
    fn dim(&self) -> usize {
        self.bank.dim
    }

    fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    fn cells(&self) -> &'static [Cell] {
        &SIMPLE_CELLS
    }

    /// The group is ignored: each class has a single feature.
    fn feature(&self, cell: Cell) -> &[f64] {
        self.bank.feature(cell.class)
    }

    fn max_feature_norm(&self) -> f64 {
        norm(&self.bank.features[0]).max(norm(&self.bank.features[1]))
    }

    fn sample_noise_patch(&self, rng: &mut LabRng) -> Vec<f64> {
        let dirs: [&[f64]; 2] = [&self.bank.features[0], &self.bank.features[1]];
        noise_patch(self.bank.dim, self.sigma_p, &dirs, rng)
    }

    fn draw(&self, rng: &mut LabRng) -> Sample {
        let class = if rng.random::<bool>() { Class::One } else { Class::Two };
        self.draw_conditional(Cell::new(class, Group::Maj), rng)
    }

    /// Samples are always tagged with the majority group.
    fn draw_conditional(&self, cell: Cell, rng: &mut LabRng) -> Sample {
        let cell = Cell::new(cell.class, Group::Maj);
        let slot = usize::from(rng.random::<bool>());
        let noise = self.sample_noise_patch(rng);
        assemble(self.bank.feature(cell.class), noise, slot, cell)
    }
}

/// A training or test set, regenerable from `(source, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn generate<S: SampleSource + ?Sized>(source: &S, n: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let samples = (0..n).map(|_| source.draw(&mut rng)).collect();
        Dataset { dim: source.dim(), seed, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples falling in each cell, in [`Cell::ALL`] order.
    pub fn cell_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for s in &self.samples {
            counts[s.cell().index()] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_bank() -> FeatureBank {
        FeatureBank::generate(100, [4.0, 2.0, 1.5, 0.5], 7).unwrap()
    }

    fn reference_spec() -> DataSpec {
        DataSpec::new(2.0 / 3.0, 2.0 / 3.0, 0.2, reference_bank()).unwrap()
    }

    #[test]
    fn bank_has_requested_norms() {
        let bank = reference_bank();
        for (cell, want) in Cell::ALL.iter().zip([4.0, 2.0, 1.5, 0.5]) {
            let n = bank.norm(*cell);
            assert!((n - want).abs() <= 1e-12 * want);
            assert!((norm(bank.feature(*cell)) - n).abs() <= 1e-12 * n);
        }
    }

    #[test]
    fn unit_bank_in_four_dims_is_orthonormal() {
        let bank = FeatureBank::generate(4, [1.0; 4], 3).unwrap();
        for a in Cell::ALL {
            for b in Cell::ALL {
                let g = dot(bank.feature(a), bank.feature(b));
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-9, "gram[{a:?},{b:?}] = {g}");
            }
        }
    }

    #[test]
    fn bank_rejects_bad_inputs() {
        assert!(matches!(FeatureBank::generate(3, [1.0; 4], 0), Err(Error::InvalidParameter { .. })));
        assert!(FeatureBank::generate(10, [1.0, 0.0, 1.0, 1.0], 0).is_err());
    }

    #[test]
    fn spec_rejects_non_dominant_minority() {
        let bank = FeatureBank::generate(10, [1.0, 5.0, 1.0, 1.0], 1).unwrap();
        assert!(DataSpec::new(0.5, 0.6, 0.1, bank).is_err());
        assert!(DataSpec::new(0.5, 0.5, 0.1, reference_bank()).is_err());
        assert!(DataSpec::new(1.2, 0.6, 0.1, reference_bank()).is_err());
    }

    #[test]
    fn noise_patches_are_orthogonal_to_features() {
        let spec = reference_spec();
        let mut rng = rng::seeded(11);
        for _ in 0..200 {
            let xi = spec.sample_noise_patch(&mut rng);
            for cell in Cell::ALL {
                let u = spec.bank.feature(cell);
                assert!(dot(&xi, u).abs() <= 1e-8 * norm(&xi) * norm(u));
            }
        }
    }

    #[test]
    fn zero_sigma_gives_zero_noise() {
        let mut spec = reference_spec();
        spec.sigma_p = 0.0;
        let xi = spec.sample_noise_patch(&mut rng::seeded(0));
        assert!(xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_norm_mean_is_close_to_sigma_sq_d() {
        let spec = reference_spec();
        let mut rng = rng::seeded(5);
        let n = 10_000;
        let scale = spec.sigma_p * spec.sigma_p * 100.0;
        let mean = (0..n).map(|_| norm_sq(&spec.sample_noise_patch(&mut rng)) / scale).sum::<f64>() / n as f64;
        assert!((0.9..=1.02).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn samples_carry_exactly_one_feature_patch() {
        let spec = reference_spec();
        let mut rng = rng::seeded(9);
        for _ in 0..500 {
            let s = spec.draw(&mut rng);
            let feature = spec.bank.feature(s.cell());
            assert_eq!(s.patch(s.feature_patch), feature);
            assert_ne!(s.noise_patch(), feature);
            for cell in Cell::ALL {
                assert_ne!(s.noise_patch(), spec.bank.feature(cell));
            }
        }
    }

    #[test]
    fn certain_label_one() {
        let spec = DataSpec::new(1.0, 2.0 / 3.0, 0.2, reference_bank()).unwrap();
        let data = Dataset::generate(&spec, 1000, 4);
        assert!(data.samples.iter().all(|s| s.label == Class::One));
    }

    #[test]
    fn group_frequencies_match_proportions() {
        let spec = reference_spec();
        let data = Dataset::generate(&spec, 90_000, 13);
        let counts = data.cell_counts();
        for (c, g) in counts.iter().zip(spec.proportions()) {
            let f = *c as f64 / 90_000.0;
            assert!((f - g).abs() < 0.01, "freq {f} vs {g}");
        }
    }

    #[test]
    fn conditional_draws_are_forced() {
        let spec = reference_spec();
        let mut rng = rng::seeded(2);
        let s = spec.draw_conditional(Cell::new(Class::One, Group::Maj), &mut rng);
        assert_eq!((s.label, s.group), (Class::One, Group::Maj));
        let cell = Cell::new(Class::Two, Group::Min);
        for _ in 0..1000 {
            let s = spec.draw_conditional(cell, &mut rng);
            assert_eq!(s.patch(s.feature_patch), spec.bank.feature(cell));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = reference_spec();
        let a = Dataset::generate(&spec, 300, 42);
        let b = Dataset::generate(&spec, 300, 42);
        assert_eq!(a, b);
        let c = Dataset::generate(&spec, 300, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let (pre, fine) = make_simple_banks(20, 4.0, 0.0, 1).unwrap();
        for class in Class::ALL {
            assert_eq!(pre.feature(class), fine.feature(class));
        }
    }

    #[test]
    fn quarter_turn_swaps_features() {
        let (pre, fine) = make_simple_banks(20, 4.0, FRAC_PI_2, 1).unwrap();
        let u1 = pre.feature(Class::One);
        let u2 = pre.feature(Class::Two);
        for i in 0..20 {
            assert!((fine.feature(Class::One)[i] - u2[i]).abs() < 1e-12);
            assert!((fine.feature(Class::Two)[i] + u1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_inner_product() {
        let theta = 22.5f64.to_radians();
        let (pre, fine) = make_simple_banks(50, 4.0, theta, 8).unwrap();
        let ip = dot(fine.feature(Class::One), pre.feature(Class::One));
        assert!((ip - math::cos(theta) * 16.0).abs() < 1e-10);
        assert!(dot(pre.feature(Class::One), pre.feature(Class::Two)).abs() < 1e-10);
        assert!((norm(fine.feature(Class::Two)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn simple_banks_validate_angle() {
        assert!(make_simple_banks(10, 1.0, -0.1, 0).is_err());
        assert!(make_simple_banks(10, 1.0, 1.6, 0).is_err());
        assert!(make_simple_banks(1, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn zero_norm_simple_spec_has_no_signal() {
        let (pre, _) = make_simple_banks(10, 0.0, 0.0, 0).unwrap();
        let spec = SimpleSpec::new(pre, 0.1).unwrap();
        let s = spec.draw(&mut rng::seeded(1));
        assert!(s.patch(s.feature_patch).iter().all(|&v| v == 0.0));
        assert!(s.noise_patch().iter().all(|v| v.is_finite()));
    }
}
