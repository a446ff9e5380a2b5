//! Test accuracy over a (feature size, noise level) grid on the two-class
//! distribution with equal-norm features.

use dpfl_core::network::{self, ModelConfig};
use dpfl_core::optim::{self, DpConfig, Subsampling};
use dpfl_core::theory;
use rayon::prelude::*;

use super::{mean_stderr, table, Table};
use crate::config::{balanced_set, LabConfig};
use crate::error::Result;
use crate::seeds::{coord, derive_seed};

pub const NAME: &str = "phase-sweep";

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRun {
    pub size_idx: usize,
    pub sigma_idx: usize,
    pub replicate: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSweepResult {
    pub feature_sizes: Vec<f64>,
    pub sigma_ns: Vec<f64>,
    /// `accuracy[i][j]`: mean over replicates at feature size `i`, noise `j`.
    pub accuracy: Vec<Vec<f64>>,
    pub runs: Vec<PhaseRun>,
    pub tables: Vec<Table>,
}

struct Seeds {
    bank: u64,
    data: u64,
    init: u64,
    dp: u64,
    test: u64,
}

/// Seeds for one (feature size, replicate); shared by every noise level.
fn seeds(base: u64, feature_size: f64, replicate: usize) -> Seeds {
    let s = |name: &str| derive_seed(base, &format!("{NAME}/{name}"), &[coord(feature_size)], replicate as u64);
    Seeds { bank: s("bank"), data: s("data"), init: s("init"), dp: s("dp"), test: s("test") }
}

pub fn run(cfg: &LabConfig, run_id: &str) -> Result<PhaseSweepResult> {
    let ps = &cfg.phase_sweep;
    let tasks: Vec<(usize, usize, usize)> = (0..ps.feature_sizes.len())
        .flat_map(|i| (0..ps.sigma_ns.len()).flat_map(move |j| (0..ps.replicates).map(move |r| (i, j, r))))
        .collect();
    let runs = tasks
        .par_iter()
        .map(|&(i, j, r)| {
            let fs = ps.feature_sizes[i];
            let s = seeds(ps.seed, fs, r);
            let source = ps.source(fs, s.bank)?;
            let data = balanced_set(&source, ps.n_per_class, s.data);
            let test = balanced_set(&source, ps.n_test_per_class, s.test);
            let init = network::init_params(&ModelConfig { width: ps.width, dim: ps.dim, sigma0: ps.sigma0, seed: s.init })?;
            let dp = DpConfig {
                eta: ps.eta,
                batch: ps.batch,
                clip: ps.clip,
                sigma_n: ps.sigma_ns[j],
                iters: ps.iters,
                subsampling: Subsampling::FixedUniform,
                seed: s.dp,
                divisor: cfg.dp.divisor,
                noise_scaling: cfg.dp.noise_scaling,
                budget: None,
            };
            let (params, _) = optim::train(&data, init, &dp)?;
            let est = theory::evaluate(&params, &test.samples)?;
            Ok(PhaseRun { size_idx: i, sigma_idx: j, replicate: r, accuracy: est.accuracy, loss: est.loss })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut accuracy = vec![vec![0.0; ps.sigma_ns.len()]; ps.feature_sizes.len()];
    let mut stderr = accuracy.clone();
    for (i, row) in accuracy.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let accs: Vec<f64> =
                runs.iter().filter(|x| x.size_idx == i && x.sigma_idx == j).map(|x| x.accuracy).collect();
            let (m, s) = mean_stderr(&accs);
            *cell = m;
            stderr[i][j] = s;
        }
    }

    let mut header = vec!["run_id".to_string(), "feature_size".to_string()];
    header.extend(ps.sigma_ns.iter().map(|s| format!("sigma_n={s}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let matrix = table(
        "phase_matrix.csv",
        &header_ref,
        accuracy.iter().zip(&ps.feature_sizes).map(|(row, fs)| {
            let mut out = vec![run_id.to_string(), fs.to_string()];
            out.extend(row.iter().map(f64::to_string));
            out
        }),
    )?;
    let long = table(
        "phase_cells.csv",
        &["run_id", "feature_size", "sigma_n", "replicates", "accuracy_mean", "accuracy_stderr"],
        tasks.iter().filter(|t| t.2 == 0).map(|&(i, j, _)| {
            vec![
                run_id.to_string(),
                ps.feature_sizes[i].to_string(),
                ps.sigma_ns[j].to_string(),
                ps.replicates.to_string(),
                accuracy[i][j].to_string(),
                stderr[i][j].to_string(),
            ]
        }),
    )?;
    let per_run = table(
        "phase_runs.csv",
        &["run_id", "feature_size", "sigma_n", "replicate", "accuracy", "test_loss"],
        runs.iter().map(|x| {
            vec![
                run_id.to_string(),
                ps.feature_sizes[x.size_idx].to_string(),
                ps.sigma_ns[x.sigma_idx].to_string(),
                x.replicate.to_string(),
                x.accuracy.to_string(),
                x.loss.to_string(),
            ]
        }),
    )?;

    Ok(PhaseSweepResult {
        feature_sizes: ps.feature_sizes.clone(),
        sigma_ns: ps.sigma_ns.clone(),
        accuracy,
        runs,
        tables: vec![matrix, long, per_run],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_shape() {
        let mut cfg = LabConfig::default();
        let ps = &mut cfg.phase_sweep;
        ps.feature_sizes = vec![0.0, 10.0];
        ps.sigma_ns = vec![0.0, 4.0];
        ps.replicates = 2;
        ps.dim = 10;
        ps.width = 4;
        ps.n_per_class = 10;
        ps.n_test_per_class = 20;
        ps.batch = 10;
        ps.iters = 10;
        let res = run(&cfg, "abc").unwrap();
        assert_eq!(res.accuracy.len(), 2);
        assert_eq!(res.runs.len(), 8);
        assert!(res.tables[0].contents.starts_with("run_id,feature_size,sigma_n=0,sigma_n=4\nabc,0,"));
        assert_eq!(res.tables[1].contents.lines().count(), 5);
        assert!(res.accuracy[1][0] > 0.9);
    }
}
