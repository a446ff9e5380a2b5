//! Private fine-tuning of a pretrained model on a distribution whose features
//! are rotated by an angle, compared with the closed-form loss of the
//! pretrained model on the rotated data.

use dpfl_core::data::{make_simple_banks, Dataset, SampleSource, SimpleSpec};
use dpfl_core::network::{self, ModelConfig, ModelParams};
use dpfl_core::optim::{self, DpConfig};
use dpfl_core::rng;
use dpfl_core::theory::{self, FinetuneBound, FinetuneBoundInputs};
use rayon::prelude::*;

use super::{mean_stderr, table, Table};
use crate::config::{balanced_set, FinetuneSection, LabConfig, PretrainMode};
use crate::error::Result;
use crate::seeds::derive_seed;

pub const NAME: &str = "finetune";

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRun {
    pub theta_idx: usize,
    pub replicate: usize,
    /// Test loss of the pretrained model on the rotated distribution.
    pub pretrained_loss: f64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub thetas_deg: Vec<f64>,
    /// Closed-form loss of the pretrained model, per angle.
    pub l_tilde: Vec<f64>,
    pub bounds: Vec<FinetuneBound>,
    pub runs: Vec<FinetuneRun>,
    pub tables: Vec<Table>,
}

impl FinetuneResult {
    pub fn mean_accuracy(&self, theta_idx: usize) -> f64 {
        let xs: Vec<f64> = self.runs.iter().filter(|r| r.theta_idx == theta_idx).map(|r| r.accuracy).collect();
        mean_stderr(&xs).0
    }
}

struct Seeds {
    bank: u64,
    pretrain_data: u64,
    pretrain_init: u64,
    pretrain_sgd: u64,
    data: u64,
    dp: u64,
    test: u64,
}

/// Seeds for one replicate; shared by every angle, so all angles rotate the
/// same base features.
fn seeds(base: u64, replicate: usize) -> Seeds {
    let s = |name: &str| derive_seed(base, &format!("{NAME}/{name}"), &[], replicate as u64);
    Seeds {
        bank: s("bank"),
        pretrain_data: s("pretrain-data"),
        pretrain_init: s("pretrain-init"),
        pretrain_sgd: s("pretrain-sgd"),
        data: s("data"),
        dp: s("dp"),
        test: s("test"),
    }
}

fn pretrained(ft: &FinetuneSection, pre: &SimpleSpec, s: &Seeds) -> Result<ModelParams> {
    match ft.pretrain {
        PretrainMode::Constructed => {
            let mut r = rng::seeded(s.pretrain_init);
            Ok(network::init_pretrained(&pre.bank, ft.c1, ft.c3, ft.sigma_p, ft.width, &mut r)?)
        }
        PretrainMode::SgdPretrain => {
            let data = Dataset::generate(pre, ft.pretrain_n, s.pretrain_data);
            let init =
                network::init_params(&ModelConfig { width: ft.width, dim: ft.dim, sigma0: ft.sigma0, seed: s.pretrain_init })?;
            Ok(optim::sgd_pretrain(&data, init, ft.pretrain_eta, ft.pretrain_iters, ft.pretrain_batch, s.pretrain_sgd)?)
        }
    }
}

pub fn bound_at(ft: &FinetuneSection, theta_deg: f64) -> FinetuneBound {
    theory::finetune_bound(&FinetuneBoundInputs {
        theta: theta_deg.to_radians(),
        feature_norm: ft.feature_norm,
        c1: ft.c1,
        c3: ft.c3,
        sigma_p: ft.sigma_p,
        clip: ft.clip,
        sigma_n: ft.sigma_n,
        iters: ft.iters,
        width: ft.width,
        dim: ft.dim,
        n: ft.n_train,
    })
}

pub fn run(cfg: &LabConfig, run_id: &str) -> Result<FinetuneResult> {
    let ft = &cfg.finetune;
    let tasks: Vec<(usize, usize)> =
        (0..ft.thetas_deg.len()).flat_map(|i| (0..ft.replicates).map(move |r| (i, r))).collect();
    let runs = tasks
        .par_iter()
        .map(|&(i, r)| {
            let s = seeds(ft.seed, r);
            let (pre_bank, ft_bank) = make_simple_banks(ft.dim, ft.feature_norm, ft.thetas_deg[i].to_radians(), s.bank)?;
            let pre = SimpleSpec::new(pre_bank, ft.sigma_p)?;
            let target = SimpleSpec::new(ft_bank, ft.sigma_p)?;
            let init = pretrained(ft, &pre, &s)?;
            let test = balanced_set(&target, ft.n_test_per_class, s.test);
            let pretrained_loss = theory::evaluate(&init, &test.samples)?.loss;
            let data = Dataset::generate(&target, ft.n_train, s.data);
            let dp = DpConfig {
                eta: ft.eta,
                batch: ft.batch,
                clip: ft.clip,
                sigma_n: ft.sigma_n,
                iters: ft.iters,
                subsampling: cfg.dp.subsampling,
                seed: s.dp,
                divisor: cfg.dp.divisor,
                noise_scaling: cfg.dp.noise_scaling,
                budget: None,
            };
            debug_assert_eq!(target.dim(), init.dim());
            let (params, _) = optim::train(&data, init, &dp)?;
            let est = theory::evaluate(&params, &test.samples)?;
            Ok(FinetuneRun { theta_idx: i, replicate: r, pretrained_loss, loss: est.loss, accuracy: est.accuracy })
        })
        .collect::<Result<Vec<_>>>()?;

    let bounds: Vec<FinetuneBound> = ft.thetas_deg.iter().map(|&t| bound_at(ft, t)).collect();
    let l_tilde: Vec<f64> = bounds.iter().map(|b| b.l_tilde).collect();

    let summary = table(
        "finetune.csv",
        &[
            "run_id",
            "theta_deg",
            "l_tilde",
            "bound_total",
            "pretrained_loss_mean",
            "loss_mean",
            "loss_stderr",
            "accuracy_mean",
            "accuracy_stderr",
        ],
        ft.thetas_deg.iter().enumerate().map(|(i, theta)| {
            let pick = |f: fn(&FinetuneRun) -> f64| -> Vec<f64> { runs.iter().filter(|x| x.theta_idx == i).map(f).collect() };
            let (pl, _) = mean_stderr(&pick(|x| x.pretrained_loss));
            let (lm, ls) = mean_stderr(&pick(|x| x.loss));
            let (am, as_) = mean_stderr(&pick(|x| x.accuracy));
            vec![
                run_id.to_string(),
                theta.to_string(),
                l_tilde[i].to_string(),
                bounds[i].total.to_string(),
                pl.to_string(),
                lm.to_string(),
                ls.to_string(),
                am.to_string(),
                as_.to_string(),
            ]
        }),
    )?;
    let per_run = table(
        "finetune_runs.csv",
        &["run_id", "theta_deg", "replicate", "pretrained_loss", "test_loss", "test_accuracy"],
        runs.iter().map(|x| {
            vec![
                run_id.to_string(),
                ft.thetas_deg[x.theta_idx].to_string(),
                x.replicate.to_string(),
                x.pretrained_loss.to_string(),
                x.loss.to_string(),
                x.accuracy.to_string(),
            ]
        }),
    )?;

    Ok(FinetuneResult { thetas_deg: ft.thetas_deg.clone(), l_tilde, bounds, runs, tables: vec![summary, per_run] })
}
