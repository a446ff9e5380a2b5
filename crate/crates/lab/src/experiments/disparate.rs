//! Clean and adversarial loss of every cell of the four-cell task across a
//! noise grid, with the matching bound shapes.

use dpfl_core::attack::{self, AdvEstimate};
use dpfl_core::data::{Cell, Dataset};
use dpfl_core::network;
use dpfl_core::optim;
use dpfl_core::rng;
use dpfl_core::theory::GroupReport;
use rayon::prelude::*;

use super::{class_name, mean_stderr, table, Table};
use crate::bounds;
use crate::config::LabConfig;
use crate::error::Result;
use crate::seeds::derive_seed;

pub const NAME: &str = "disparate";

#[derive(Debug, Clone, PartialEq)]
pub struct DisparateRun {
    pub sigma_idx: usize,
    pub replicate: usize,
    /// Clean and attacked estimates on the same samples, in cell order.
    pub cells: [AdvEstimate; 4],
    pub report: GroupReport,
    /// Largest per-sample gradient norm after clipping over all iterations.
    pub max_clipped_norm: f64,
    /// Smallest per-sample training loss seen in any batch.
    pub min_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisparateResult {
    pub sigma_ns: Vec<f64>,
    pub runs: Vec<DisparateRun>,
    pub tables: Vec<Table>,
}

impl DisparateResult {
    /// Replicate mean of `metric` for one noise level and cell.
    pub fn mean(&self, sigma_idx: usize, cell: Cell, metric: impl Fn(&AdvEstimate) -> f64) -> f64 {
        let xs: Vec<f64> = self.runs.iter().filter(|r| r.sigma_idx == sigma_idx).map(|r| metric(&r.cells[cell.index()])).collect();
        mean_stderr(&xs).0
    }
}

struct Seeds {
    bank: u64,
    data: u64,
    init: u64,
    dp: u64,
    eval: u64,
}

/// Seeds for one replicate; shared by every noise level.
fn seeds(base: u64, replicate: usize) -> Seeds {
    let s = |name: &str| derive_seed(base, &format!("{NAME}/{name}"), &[], replicate as u64);
    Seeds { bank: s("bank"), data: s("data"), init: s("init"), dp: s("dp"), eval: s("eval") }
}

const METRICS: [&str; 9] = [
    "clean_loss",
    "adv_loss",
    "adv_gap",
    "clean_accuracy",
    "adv_accuracy",
    "upper_bound",
    "lower_bound",
    "adv_bound",
    "max_clipped_norm",
];

pub fn run(cfg: &LabConfig, run_id: &str) -> Result<DisparateResult> {
    let di = &cfg.disparate;
    let tasks: Vec<(usize, usize)> =
        (0..di.sigma_ns.len()).flat_map(|j| (0..di.replicates).map(move |r| (j, r))).collect();
    let attack_cfg = cfg.attack.attack_config();
    let runs = tasks
        .par_iter()
        .map(|&(j, r)| {
            let sigma_n = di.sigma_ns[j];
            let s = seeds(di.seed, r);
            let spec = cfg.data.spec_with_bank_seed(s.bank)?;
            let data = Dataset::generate(&spec, cfg.data.n_train, s.data);
            let init = network::init_params(&cfg.model.model_config(cfg.data.dim, s.init))?;
            let init_loss = bounds::cell_losses(&init, &spec, cfg.eval.n_mc, derive_seed(s.eval, "init", &[], 0))?;
            let dp = cfg.dp.dp_config(sigma_n, cfg.dp.iters, s.dp);
            let (params, trace) = optim::train(&data, init, &dp)?;
            let mut cells = Vec::with_capacity(4);
            for cell in Cell::ALL {
                let mut rng = rng::stream(s.eval, cell.index() as u64);
                cells.push(attack::adv_loss(&params, &spec, cell, &attack_cfg, cfg.eval.n_mc, &mut rng)?);
            }
            let cells: [AdvEstimate; 4] = cells.try_into().expect("four cells");
            let report = bounds::group_report(cfg, &spec, sigma_n, init_loss, Some(&cells));
            let max_clipped_norm = trace.records.iter().map(|x| x.clipped_norm_max).fold(0.0, f64::max);
            let min_train_loss = trace
                .records
                .iter()
                .filter(|x| x.batch_size > 0)
                .map(|x| x.min_loss)
                .fold(f64::INFINITY, f64::min);
            Ok(DisparateRun { sigma_idx: j, replicate: r, cells, report, max_clipped_norm, min_train_loss })
        })
        .collect::<Result<Vec<_>>>()?;

    let metric = |run: &DisparateRun, k: usize, name: &str| -> f64 {
        let c = &run.cells[k];
        let rep = &run.report.cells[k];
        match name {
            "clean_loss" => c.clean.loss,
            "adv_loss" => c.adversarial.loss,
            "adv_gap" => c.adversarial.loss - c.clean.loss,
            "clean_accuracy" => c.clean.accuracy,
            "adv_accuracy" => c.adversarial.accuracy,
            "upper_bound" => rep.upper.total,
            "lower_bound" => rep.lower.total,
            "adv_bound" => rep.adv_bound.unwrap_or(f64::NAN),
            "max_clipped_norm" => run.max_clipped_norm,
            _ => unreachable!(),
        }
    };

    let mut summary = Vec::new();
    for (j, sigma_n) in di.sigma_ns.iter().enumerate() {
        for cell in Cell::ALL {
            for name in METRICS {
                let xs: Vec<f64> =
                    runs.iter().filter(|x| x.sigma_idx == j).map(|x| metric(x, cell.index(), name)).collect();
                let (m, s) = mean_stderr(&xs);
                summary.push(vec![
                    run_id.to_string(),
                    sigma_n.to_string(),
                    class_name(cell.class).to_string(),
                    cell.group.name().to_string(),
                    name.to_string(),
                    m.to_string(),
                    s.to_string(),
                ]);
            }
        }
    }
    let curves = table("disparate.csv", &["run_id", "sigma_n", "class", "group", "metric", "mean", "stderr"], summary)?;

    let per_run = table(
        "disparate_runs.csv",
        &[
            "run_id",
            "sigma_n",
            "replicate",
            "class",
            "group",
            "clean_loss",
            "clean_loss_stderr",
            "adv_loss",
            "adv_loss_stderr",
            "clean_accuracy",
            "adv_accuracy",
            "max_clipped_norm",
            "min_train_loss",
        ],
        runs.iter().flat_map(|x| {
            Cell::ALL.iter().map(move |cell| {
                let c = &x.cells[cell.index()];
                vec![
                    run_id.to_string(),
                    di.sigma_ns[x.sigma_idx].to_string(),
                    x.replicate.to_string(),
                    class_name(cell.class).to_string(),
                    cell.group.name().to_string(),
                    c.clean.loss.to_string(),
                    c.clean.loss_stderr.to_string(),
                    c.adversarial.loss.to_string(),
                    c.adversarial.loss_stderr.to_string(),
                    c.clean.accuracy.to_string(),
                    c.adversarial.accuracy.to_string(),
                    x.max_clipped_norm.to_string(),
                    x.min_train_loss.to_string(),
                ]
            })
        }),
    )?;

    Ok(DisparateResult { sigma_ns: di.sigma_ns.clone(), runs, tables: vec![curves, per_run] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_shapes() {
        let mut cfg = LabConfig::default();
        cfg.data.dim = 10;
        cfg.data.n_train = 40;
        cfg.model.width = 4;
        cfg.dp.batch = 20;
        cfg.dp.iters = 5;
        cfg.eval.n_mc = 20;
        cfg.attack.steps = 3;
        cfg.disparate.sigma_ns = vec![0.0, 0.1];
        cfg.disparate.replicates = 2;
        let res = run(&cfg, "id").unwrap();
        assert_eq!(res.runs.len(), 4);
        assert_eq!(res.tables[0].contents.lines().count(), 1 + 2 * 4 * METRICS.len());
        for r in &res.runs {
            assert!(r.max_clipped_norm <= cfg.dp.clip + 1e-12);
            for c in &r.cells {
                assert!(c.adversarial.loss >= c.clean.loss);
            }
        }
    }
}
