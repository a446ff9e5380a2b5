//! TOML run configuration.
//!
//! Every section and key is optional; missing keys take the defaults below,
//! which reproduce the synthetic studies. Unknown keys are rejected with their
//! full key path.

use std::fs;
use std::path::Path;

use dpfl_core::attack::{AttackConfig, AttackNorm};
use dpfl_core::data::{make_simple_banks, Class, DataSpec, Dataset, FeatureBank, SampleSource, SimpleSpec};
use dpfl_core::network::ModelConfig;
use dpfl_core::optim::{
    self, BatchDivisor, DpConfig, FreezeGranularity, NoiseScaling, PrivacyBudget, Subsampling,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, Result};
use crate::manifest::RunManifest;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub dp: DpSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub phase_sweep: PhaseSweepSection,
    pub disparate: DisparateSection,
    pub finetune: FinetuneSection,
    pub freeze: FreezeSection,
}

/// The four-cell majority/minority distribution and the training set drawn
/// from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dim: usize,
    /// Feature norms in cell order (1,maj), (1,min), (2,maj), (2,min).
    pub norms: [f64; 4],
    pub p_class1: f64,
    pub p_majority: f64,
    pub sigma_p: f64,
    pub n_train: usize,
    pub bank_seed: u64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dim: 100,
            norms: [4.0, 2.0, 1.5, 0.5],
            p_class1: 2.0 / 3.0,
            p_majority: 2.0 / 3.0,
            sigma_p: 0.2,
            n_train: 450,
            bank_seed: 1,
            seed: 2,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> Result<DataSpec> {
        self.spec_with_bank_seed(self.bank_seed)
    }

    pub fn spec_with_bank_seed(&self, bank_seed: u64) -> Result<DataSpec> {
        let bank = FeatureBank::generate(self.dim, self.norms, bank_seed).map_err(|e| LabError::config("data", e))?;
        DataSpec::new(self.p_class1, self.p_majority, self.sigma_p, bank).map_err(|e| LabError::config("data", e))
    }

    pub fn train_set(&self, spec: &DataSpec) -> Dataset {
        Dataset::generate(spec, self.n_train, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    /// Initialization scale. The default matches the variance of the usual
    /// uniform fan-in initialization, `1 / sqrt(3 d)` at `d = 100`.
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { width: 32, sigma0: (1.0f64 / 300.0).sqrt(), seed: 3 }
    }
}

impl ModelSection {
    pub fn model_config(&self, dim: usize, seed: u64) -> ModelConfig {
        ModelConfig { width: self.width, dim, sigma0: self.sigma0, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub eta: f64,
    pub batch: usize,
    /// `<= 0` disables clipping.
    pub clip: f64,
    /// Ignored when both `epsilon` and `alpha` are set.
    pub sigma_n: f64,
    pub iters: usize,
    pub subsampling: Subsampling,
    pub divisor: BatchDivisor,
    pub noise_scaling: NoiseScaling,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection {
            eta: 16.0,
            batch: 128,
            clip: 0.1,
            sigma_n: 0.05,
            // 20 epochs of ceil(450 / 128) = 4 batches.
            iters: 80,
            subsampling: Subsampling::FixedUniform,
            divisor: BatchDivisor::Expected,
            noise_scaling: NoiseScaling::Raw,
            seed: 4,
            epsilon: None,
            alpha: None,
        }
    }
}

impl DpSection {
    pub fn budget(&self) -> Option<PrivacyBudget> {
        budget(self.epsilon, self.alpha)
    }

    /// `sigma_n`, or the calibrated value when a privacy budget is given.
    pub fn resolved_sigma_n(&self) -> Result<f64> {
        match self.budget() {
            Some(b) => optim::calibrate_sigma(b, self.iters, self.batch, self.clip).map_err(|e| LabError::config("dp", e)),
            None => Ok(self.sigma_n),
        }
    }

    pub fn dp_config(&self, sigma_n: f64, iters: usize, seed: u64) -> DpConfig {
        DpConfig {
            eta: self.eta,
            batch: self.batch,
            clip: self.clip,
            sigma_n,
            iters,
            subsampling: self.subsampling,
            seed,
            divisor: self.divisor,
            noise_scaling: self.noise_scaling,
            budget: self.budget(),
        }
    }
}

fn budget(epsilon: Option<f64>, alpha: Option<f64>) -> Option<PrivacyBudget> {
    match (epsilon, alpha) {
        (Some(epsilon), Some(alpha)) => Some(PrivacyBudget { epsilon, alpha }),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub norm: AttackNorm,
    pub radius: f64,
    pub steps: usize,
    /// Defaults to `2.5 * radius / steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection { norm: AttackNorm::Linf, radius: 0.02, steps: AttackConfig::DEFAULT_STEPS, step_size: None, seed: 5 }
    }
}

impl AttackSection {
    pub fn attack_config(&self) -> AttackConfig {
        let step_size = self.step_size.unwrap_or(2.5 * self.radius / self.steps.max(1) as f64);
        AttackConfig { norm: self.norm, radius: self.radius, steps: self.steps, step_size, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Monte Carlo samples per cell.
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_mc: 500, seed: 6 }
    }
}

/// Accuracy over a grid of feature sizes and noise levels on the two-class,
/// equal-feature distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSweepSection {
    pub feature_sizes: Vec<f64>,
    pub sigma_ns: Vec<f64>,
    pub replicates: usize,
    pub dim: usize,
    pub sigma_p: f64,
    pub width: usize,
    pub sigma0: f64,
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub eta: f64,
    pub batch: usize,
    pub clip: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for PhaseSweepSection {
    fn default() -> Self {
        PhaseSweepSection {
            feature_sizes: (0..8).map(|i| 3.0 * i as f64).collect(),
            sigma_ns: (0..9).map(|i| 0.5 * i as f64).collect(),
            replicates: 5,
            dim: 100,
            sigma_p: 0.02,
            width: 32,
            sigma0: 0.01,
            n_per_class: 100,
            n_test_per_class: 250,
            eta: 1.0,
            batch: 50,
            clip: 2.0,
            iters: 100,
            seed: 7,
        }
    }
}

impl PhaseSweepSection {
    pub fn source(&self, feature_size: f64, bank_seed: u64) -> Result<SimpleSpec> {
        let (bank, _) = make_simple_banks(self.dim, feature_size, 0.0, bank_seed)?;
        Ok(SimpleSpec::new(bank, self.sigma_p)?)
    }
}

/// Per-cell losses over a noise grid on the four-cell distribution. Data,
/// model, optimizer, attack and evaluation settings come from their own
/// sections; only `sigma_n` is swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisparateSection {
    pub sigma_ns: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for DisparateSection {
    fn default() -> Self {
        DisparateSection { sigma_ns: vec![0.0, 0.025, 0.05, 0.075, 0.1], replicates: 5, seed: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainMode {
    /// Plain SGD on the unrotated distribution.
    SgdPretrain,
    /// Weights `c1 u_k + c3 xi_r` built directly.
    Constructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub thetas_deg: Vec<f64>,
    pub replicates: usize,
    pub dim: usize,
    pub feature_norm: f64,
    pub sigma_p: f64,
    pub width: usize,
    pub pretrain: PretrainMode,
    pub c1: f64,
    pub c3: f64,
    pub sigma0: f64,
    pub pretrain_n: usize,
    pub pretrain_eta: f64,
    pub pretrain_iters: usize,
    pub pretrain_batch: usize,
    pub n_train: usize,
    pub n_test_per_class: usize,
    pub eta: f64,
    pub batch: usize,
    pub clip: f64,
    pub sigma_n: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            thetas_deg: vec![0.0, 22.5, 45.0, 67.5],
            replicates: 5,
            dim: 100,
            feature_norm: 1.0,
            sigma_p: 0.2,
            width: 32,
            pretrain: PretrainMode::SgdPretrain,
            c1: 1.0,
            c3: 1.0,
            sigma0: 0.01,
            pretrain_n: 400,
            pretrain_eta: 1.0,
            pretrain_iters: 100,
            pretrain_batch: 50,
            n_train: 200,
            n_test_per_class: 500,
            eta: 1.0,
            batch: 50,
            clip: 1.0,
            sigma_n: 0.05,
            iters: 20,
            seed: 9,
        }
    }
}

/// Paired private runs with and without stage-wise freezing on the
/// four-cell task. The optimizer settings other than `sigma_n` and the
/// iteration count come from `[dp]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreezeSection {
    /// Epoch numbers (1-based) at whose start freezing runs.
    pub stages: Vec<usize>,
    /// Cumulative percentage of weights frozen after each stage.
    pub percent: f64,
    pub epochs: usize,
    pub granularity: FreezeGranularity,
    pub replicates: usize,
    /// Ignored when both `epsilon` and `alpha` are set.
    pub sigma_n: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Default for FreezeSection {
    fn default() -> Self {
        FreezeSection {
            stages: vec![1, 2, 3],
            percent: 77.0,
            epochs: 10,
            granularity: FreezeGranularity::Coordinate,
            replicates: 5,
            sigma_n: 0.05,
            epsilon: None,
            alpha: None,
            seed: 10,
        }
    }
}

impl FreezeSection {
    pub fn iters_per_epoch(&self, n: usize, batch: usize) -> usize {
        n.div_ceil(batch.max(1))
    }

    pub fn resolved_sigma_n(&self, iters: usize, dp: &DpSection) -> Result<f64> {
        match budget(self.epsilon, self.alpha) {
            Some(b) => optim::calibrate_sigma(b, iters, dp.batch, dp.clip).map_err(|e| LabError::config("freeze", e)),
            None => Ok(self.sigma_n),
        }
    }
}

impl LabConfig {
    /// Reads a TOML config, or the config stored in a `manifest.json`.
    pub fn load(path: &Path) -> Result<LabConfig> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| LabError::config("manifest", e))?;
            return Ok(manifest.config);
        }
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<LabConfig> {
        let de = toml::Deserializer::parse(text).map_err(|e| LabError::config("<document>", e.message()))?;
        let cfg: LabConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LabError::config(path, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Replaces every seed with one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        let s = |name: &str| derive_seed(seed, name, &[], 0);
        self.data.bank_seed = s("data.bank_seed");
        self.data.seed = s("data.seed");
        self.model.seed = s("model.seed");
        self.dp.seed = s("dp.seed");
        self.attack.seed = s("attack.seed");
        self.eval.seed = s("eval.seed");
        self.phase_sweep.seed = s("phase_sweep.seed");
        self.disparate.seed = s("disparate.seed");
        self.finetune.seed = s("finetune.seed");
        self.freeze.seed = s("freeze.seed");
    }

    /// Range checks that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LabError::config(path, "must be positive and finite"))
            }
        };
        let non_negative = |path: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LabError::config(path, "must be non-negative and finite"))
            }
        };
        let at_least_one = |path: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(LabError::config(path, "must be at least 1"))
            }
        };
        let grid = |path: &str, g: &[f64]| {
            if g.is_empty() {
                return Err(LabError::config(path, "grid must not be empty"));
            }
            if g.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(LabError::config(path, "grid must be strictly increasing"));
            }
            Ok(())
        };

        self.data.spec()?;
        at_least_one("data.n_train", self.data.n_train)?;
        at_least_one("model.width", self.model.width)?;
        non_negative("model.sigma0", self.model.sigma0)?;
        non_negative("dp.eta", self.dp.eta)?;
        non_negative("dp.sigma_n", self.dp.sigma_n)?;
        at_least_one("dp.iters", self.dp.iters)?;
        at_least_one("dp.batch", self.dp.batch)?;
        if self.dp.batch > self.data.n_train {
            return Err(LabError::config("dp.batch", "batch size exceeds data.n_train"));
        }
        if self.dp.epsilon.is_some() != self.dp.alpha.is_some() {
            return Err(LabError::config("dp.epsilon", "epsilon and alpha must be given together"));
        }
        self.dp.resolved_sigma_n()?;
        non_negative("attack.radius", self.attack.radius)?;
        at_least_one("attack.steps", self.attack.steps)?;
        if let Some(s) = self.attack.step_size {
            positive("attack.step_size", s)?;
        }
        at_least_one("eval.n_mc", self.eval.n_mc)?;

        let ps = &self.phase_sweep;
        grid("phase_sweep.feature_sizes", &ps.feature_sizes)?;
        grid("phase_sweep.sigma_ns", &ps.sigma_ns)?;
        if ps.feature_sizes[0] < 0.0 {
            return Err(LabError::config("phase_sweep.feature_sizes", "feature sizes must be non-negative"));
        }
        if ps.sigma_ns[0] < 0.0 {
            return Err(LabError::config("phase_sweep.sigma_ns", "noise levels must be non-negative"));
        }
        at_least_one("phase_sweep.replicates", ps.replicates)?;
        if ps.dim < 2 {
            return Err(LabError::config("phase_sweep.dim", "need at least 2 dimensions"));
        }
        non_negative("phase_sweep.sigma_p", ps.sigma_p)?;
        at_least_one("phase_sweep.width", ps.width)?;
        at_least_one("phase_sweep.n_per_class", ps.n_per_class)?;
        at_least_one("phase_sweep.n_test_per_class", ps.n_test_per_class)?;
        at_least_one("phase_sweep.iters", ps.iters)?;
        if ps.batch == 0 || ps.batch > 2 * ps.n_per_class {
            return Err(LabError::config("phase_sweep.batch", "batch size must lie in [1, 2 * n_per_class]"));
        }

        let di = &self.disparate;
        grid("disparate.sigma_ns", &di.sigma_ns)?;
        if di.sigma_ns[0] < 0.0 {
            return Err(LabError::config("disparate.sigma_ns", "noise levels must be non-negative"));
        }
        at_least_one("disparate.replicates", di.replicates)?;

        let ft = &self.finetune;
        grid("finetune.thetas_deg", &ft.thetas_deg)?;
        if ft.thetas_deg[0] < 0.0 || ft.thetas_deg[ft.thetas_deg.len() - 1] > 90.0 {
            return Err(LabError::config("finetune.thetas_deg", "angles must lie in [0, 90] degrees"));
        }
        at_least_one("finetune.replicates", ft.replicates)?;
        if ft.dim < 2 {
            return Err(LabError::config("finetune.dim", "need at least 2 dimensions"));
        }
        non_negative("finetune.feature_norm", ft.feature_norm)?;
        at_least_one("finetune.n_train", ft.n_train)?;
        at_least_one("finetune.iters", ft.iters)?;
        if ft.batch == 0 || ft.batch > ft.n_train {
            return Err(LabError::config("finetune.batch", "batch size must lie in [1, n_train]"));
        }
        if ft.pretrain == PretrainMode::SgdPretrain
            && (ft.pretrain_batch == 0 || ft.pretrain_batch > ft.pretrain_n || ft.pretrain_iters == 0)
        {
            return Err(LabError::config("finetune.pretrain_batch", "pretraining needs 1 <= batch <= pretrain_n and iters >= 1"));
        }
        non_negative("finetune.sigma_n", ft.sigma_n)?;

        let fr = &self.freeze;
        if !(0.0..100.0).contains(&fr.percent) {
            return Err(LabError::config("freeze.percent", "must lie in [0, 100)"));
        }
        at_least_one("freeze.epochs", fr.epochs)?;
        if fr.stages.iter().any(|&s| s == 0 || s > fr.epochs) {
            return Err(LabError::config("freeze.stages", "stages must lie in [1, epochs]"));
        }
        at_least_one("freeze.replicates", fr.replicates)?;
        non_negative("freeze.sigma_n", fr.sigma_n)?;
        if fr.epsilon.is_some() != fr.alpha.is_some() {
            return Err(LabError::config("freeze.epsilon", "epsilon and alpha must be given together"));
        }
        Ok(())
    }
}

/// Exactly `n_per_class` samples of each class, interleaved.
pub fn balanced_set<S: SampleSource + ?Sized>(source: &S, n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = dpfl_core::rng::seeded(seed);
    let cells = source.cells();
    let mut samples = Vec::with_capacity(n_per_class * cells.len());
    for _ in 0..n_per_class {
        for class in Class::ALL {
            let cell = *cells.iter().find(|c| c.class == class).expect("every source covers both classes");
            samples.push(source.draw_conditional(cell, &mut rng));
        }
    }
    Dataset { dim: source.dim(), seed, samples }
}
