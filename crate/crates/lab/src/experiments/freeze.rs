//! Paired private runs on the four-cell task, one plain and one with
//! stage-wise freezing of the smallest weights, from identical seeds.

use dpfl_core::data::{Cell, Dataset};
use dpfl_core::network::{self, ModelParams};
use dpfl_core::optim::{self, FreezeSchedule};
use dpfl_core::rng;
use dpfl_core::theory;
use rayon::prelude::*;

use super::{mean_stderr, table, Table};
use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::seeds::derive_seed;

pub const NAME: &str = "freeze";

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    /// Share-weighted accuracy over the four cells.
    pub accuracy: f64,
    pub loss: f64,
    pub frozen_fraction: f64,
    /// `(iteration, frozen fraction)` after each freezing stage.
    pub trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezePair {
    pub replicate: usize,
    pub without: Arm,
    pub with: Arm,
    /// The two final weight vectors agree bit for bit.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezeResult {
    pub sigma_n: f64,
    pub iters: usize,
    pub pairs: Vec<FreezePair>,
    pub tables: Vec<Table>,
}

impl FreezeResult {
    pub fn mean_accuracy(&self) -> (f64, f64) {
        let w: Vec<f64> = self.pairs.iter().map(|p| p.without.accuracy).collect();
        let f: Vec<f64> = self.pairs.iter().map(|p| p.with.accuracy).collect();
        (mean_stderr(&w).0, mean_stderr(&f).0)
    }
}

struct Seeds {
    bank: u64,
    data: u64,
    init: u64,
    dp: u64,
    eval: u64,
}

fn seeds(base: u64, replicate: usize) -> Seeds {
    let s = |name: &str| derive_seed(base, &format!("{NAME}/{name}"), &[], replicate as u64);
    Seeds { bank: s("bank"), data: s("data"), init: s("init"), dp: s("dp"), eval: s("eval") }
}

fn evaluate(params: &ModelParams, spec: &dpfl_core::data::DataSpec, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    let gamma = spec.proportions();
    let (mut acc, mut loss) = (0.0, 0.0);
    for cell in Cell::ALL {
        let mut r = rng::stream(seed, cell.index() as u64);
        let e = theory::mc_test_loss(params, spec, cell, n_mc, &mut r)?;
        acc += gamma[cell.index()] * e.accuracy;
        loss += gamma[cell.index()] * e.loss;
    }
    Ok((acc, loss))
}

pub fn run(cfg: &LabConfig, run_id: &str) -> Result<FreezeResult> {
    let fr = &cfg.freeze;
    let per_epoch = fr.iters_per_epoch(cfg.data.n_train, cfg.dp.batch);
    let iters = per_epoch * fr.epochs;
    let sigma_n = fr.resolved_sigma_n(iters, &cfg.dp)?;
    let fraction = fr.percent / 100.0;
    if !(0.0..1.0).contains(&fraction) {
        return Err(LabError::config("freeze.percent", "must lie in [0, 100)"));
    }

    let pairs = (0..fr.replicates)
        .into_par_iter()
        .map(|r| {
            let s = seeds(fr.seed, r);
            let spec = cfg.data.spec_with_bank_seed(s.bank)?;
            let data = Dataset::generate(&spec, cfg.data.n_train, s.data);
            let init = network::init_params(&cfg.model.model_config(cfg.data.dim, s.init))?;
            let dp = cfg.dp.dp_config(sigma_n, iters, s.dp);

            let (plain, _) = optim::train(&data, init.clone(), &dp)?;
            let mut schedule = FreezeSchedule::new(fr.stages.clone(), fraction, fr.granularity, per_epoch)?;
            let (frozen, _) = optim::train_observed(&data, init, &dp, &mut schedule)?;

            let arm = |p: &ModelParams, trace: Vec<(usize, f64)>| -> Result<Arm> {
                let (accuracy, loss) = evaluate(p, &spec, cfg.eval.n_mc, s.eval)?;
                Ok(Arm { accuracy, loss, frozen_fraction: p.frozen_count() as f64 / p.len() as f64, trace })
            };
            let identical = plain.weights().iter().zip(frozen.weights()).all(|(a, b)| a.to_bits() == b.to_bits());
            Ok(FreezePair {
                replicate: r,
                without: arm(&plain, Vec::new())?,
                with: arm(&frozen, schedule.trace)?,
                identical,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_run = table(
        "freeze_runs.csv",
        &["run_id", "replicate", "freezing", "sigma_n", "iters", "accuracy", "test_loss", "frozen_fraction", "identical"],
        pairs.iter().flat_map(|p| {
            [("without", &p.without), ("with", &p.with)].map(|(name, a)| {
                vec![
                    run_id.to_string(),
                    p.replicate.to_string(),
                    name.to_string(),
                    sigma_n.to_string(),
                    iters.to_string(),
                    a.accuracy.to_string(),
                    a.loss.to_string(),
                    a.frozen_fraction.to_string(),
                    p.identical.to_string(),
                ]
            })
        }),
    )?;
    let trace = table(
        "freeze_trace.csv",
        &["run_id", "replicate", "iter", "frozen_fraction"],
        pairs.iter().flat_map(|p| {
            p.with.trace.iter().map(move |(t, f)| vec![run_id.to_string(), p.replicate.to_string(), t.to_string(), f.to_string()])
        }),
    )?;
    let summary = table(
        "freeze.csv",
        &["run_id", "freezing", "accuracy_mean", "accuracy_stderr", "loss_mean", "loss_stderr"],
        [("without", false), ("with", true)].map(|(name, with)| {
            let pick = |f: fn(&Arm) -> f64| -> Vec<f64> {
                pairs.iter().map(|p| f(if with { &p.with } else { &p.without })).collect()
            };
            let (am, as_) = mean_stderr(&pick(|a| a.accuracy));
            let (lm, ls) = mean_stderr(&pick(|a| a.loss));
            vec![run_id.to_string(), name.to_string(), am.to_string(), as_.to_string(), lm.to_string(), ls.to_string()]
        }),
    )?;

    Ok(FreezeResult { sigma_n, iters, pairs, tables: vec![summary, per_run, trace] })
}
