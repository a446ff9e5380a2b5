//! Bound shapes for every cell of the four-cell task, exported as nested
//! JSON and as a flat CSV.

use dpfl_core::attack::{AdvEstimate, AttackNorm};
use dpfl_core::data::{Cell, DataSpec, SampleSource};
use dpfl_core::math;
use dpfl_core::network::ModelParams;
use dpfl_core::optim::{self, ConditionInputs, ConditionWarning};
use dpfl_core::rng;
use dpfl_core::theory::{self, AdvBoundInputs, BoundInputs, CellReport, GroupReport};
use serde_json::{json, Value};

use crate::config::LabConfig;
use crate::error::Result;
use crate::experiments::{class_name, table, Table};

/// Loss of `params` on each cell, from `n_mc` samples per cell.
pub fn cell_losses(params: &ModelParams, spec: &DataSpec, n_mc: usize, seed: u64) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for cell in Cell::ALL {
        let mut r = rng::stream(seed, cell.index() as u64);
        out[cell.index()] = theory::mc_test_loss(params, spec, cell, n_mc, &mut r)?.loss;
    }
    Ok(out)
}

/// Per-sample gradient scale used in place of `C` when clipping is off.
fn effective_clip(clip: f64, spec: &DataSpec) -> f64 {
    if clip > 0.0 {
        clip
    } else {
        spec.max_feature_norm() + spec.sigma_p * math::sqrt(spec.bank.dim() as f64)
    }
}

/// Bounds at noise level `sigma_n` for a model that started from the given
/// per-cell losses. Empirical estimates, when present, are attached to each
/// cell.
pub fn group_report(
    cfg: &LabConfig,
    spec: &DataSpec,
    sigma_n: f64,
    init_loss: [f64; 4],
    measured: Option<&[AdvEstimate; 4]>,
) -> GroupReport {
    let clip = cfg.dp.clip;
    let dim = spec.bank.dim();
    let cells: Vec<CellReport> = theory::cell_quantities(spec, clip, sigma_n)
        .iter()
        .map(|q| {
            let k = q.cell.index();
            let b = BoundInputs::from_quantities(q, cfg.dp.iters, init_loss[k], cfg.model.width, cfg.data.n_train);
            let upper = theory::upper_bound(&b);
            let adv = AdvBoundInputs {
                iters: cfg.dp.iters,
                clip: effective_clip(clip, spec),
                width: cfg.model.width,
                dim,
                sigma_n,
                sigma0: cfg.model.sigma0,
                radius: cfg.attack.radius,
                norm: cfg.attack.norm,
            };
            CellReport {
                quantities: *q,
                clean: measured.map(|m| m[k].clean),
                adversarial: measured.map(|m| m[k].adversarial),
                upper,
                lower: theory::lower_bound(&b, dim, spec.sigma_p),
                adv_bound: Some(theory::adv_bound(upper.total, &adv)),
            }
        })
        .collect();
    let totals: [f64; 4] = core::array::from_fn(|k| cells[k].upper.total);
    let mix = theory::mixture_bounds(totals, spec.proportions());
    GroupReport { sigma_n, cells, class_mixture: mix.class, group_mixture: mix.group }
}

/// Smallest iteration count for which the lower bound applies, and whether
/// the configured count reaches it.
pub fn lower_bound_check(cfg: &LabConfig, spec: &DataSpec) -> (f64, bool) {
    let gamma = spec.proportions();
    let min = Cell::ALL
        .iter()
        .map(|c| gamma[c.index()] * spec.bank.norm(*c).powi(2))
        .fold(f64::INFINITY, f64::min);
    let t_min = theory::lower_bound_min_iters(cfg.dp.eta, min, cfg.model.width);
    (t_min, cfg.dp.iters as f64 >= t_min)
}

pub fn conditions(cfg: &LabConfig, spec: &DataSpec, sigma_n: f64) -> Vec<ConditionWarning> {
    let norms = spec.bank.norms();
    optim::check_conditions(&ConditionInputs {
        dim: spec.bank.dim(),
        n: cfg.data.n_train,
        batch: cfg.dp.batch,
        min_feature_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
        max_feature_norm: spec.max_feature_norm(),
        sigma_p: spec.sigma_p,
        sigma_n,
        eta: cfg.dp.eta,
        clip: cfg.dp.clip,
        delta: 0.05,
    })
}

pub fn describe(w: &ConditionWarning) -> String {
    match *w {
        ConditionWarning::Dimension { required, actual } => {
            format!("dimension {actual} is below ln(n / delta) = {required:.3}")
        }
        ConditionWarning::BatchFraction { required, actual } => {
            format!("batch size {actual} is below n = {required}")
        }
        ConditionWarning::FeatureBelowPatchNoise { feature, sigma_p } => {
            format!("smallest feature norm {feature} is below sigma_p = {sigma_p}")
        }
        ConditionWarning::PatchNoiseBelowDpNoise { sigma_p, sigma_n } => {
            format!("sigma_p = {sigma_p} is below sigma_n = {sigma_n}")
        }
        ConditionWarning::LearningRate { max, actual } => {
            format!("learning rate {actual} exceeds {max:.4e}")
        }
    }
}

fn f(v: f64) -> Value {
    // JSON has no infinity; an infinite FNR (no noise) becomes null.
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cell_json(c: &CellReport) -> Value {
    let q = &c.quantities;
    let est = |e: &Option<theory::McEstimate>| {
        e.map(|e| json!({"loss": f(e.loss), "loss_stderr": f(e.loss_stderr), "accuracy": f(e.accuracy), "n": e.n}))
    };
    json!({
        "feature_norm": f(q.feature_norm),
        "fnr": f(q.fnr),
        "clip_factor": f(q.clip_factor),
        "proportion": f(q.proportion),
        "upper": {
            "vanishing": f(c.upper.vanishing),
            "generalization": f(c.upper.generalization),
            "privacy": f(c.upper.privacy),
            "total": f(c.upper.total),
        },
        "lower": {
            "vanishing": f(c.lower.vanishing),
            "privacy": f(c.lower.privacy),
            "generalization": f(c.lower.generalization),
            "total": f(c.lower.total),
        },
        "adv_bound": c.adv_bound.map(f),
        "clean": est(&c.clean),
        "adversarial": est(&c.adversarial),
    })
}

/// `{"run_id", "attack_norm", "lower_bound_min_iters", "grid": [{"sigma_n",
/// "class_mixture", "group_mixture", "classes": {"1": {"maj", "min"}, "2":
/// ...}}]}`.
pub fn reports_json(run_id: &str, norm: AttackNorm, t_min: f64, reports: &[GroupReport]) -> Value {
    let grid: Vec<Value> = reports
        .iter()
        .map(|g| {
            let mut classes = serde_json::Map::new();
            for c in &g.cells {
                let cell = c.quantities.cell;
                let entry = classes.entry(class_name(cell.class)).or_insert_with(|| json!({}));
                entry[cell.group.name()] = cell_json(c);
            }
            json!({
                "sigma_n": g.sigma_n,
                "class_mixture": {"1": f(g.class_mixture[0]), "2": f(g.class_mixture[1])},
                "group_mixture": {"maj": f(g.group_mixture[0]), "min": f(g.group_mixture[1])},
                "classes": classes,
            })
        })
        .collect();
    let norm = match norm {
        AttackNorm::L2 => "l2",
        AttackNorm::Linf => "linf",
    };
    json!({"run_id": run_id, "attack_norm": norm, "lower_bound_min_iters": f(t_min), "grid": grid})
}

pub const CSV_HEADER: [&str; 18] = [
    "run_id",
    "sigma_n",
    "class",
    "group",
    "feature_norm",
    "fnr",
    "clip_factor",
    "proportion",
    "upper_vanishing",
    "upper_generalization",
    "upper_privacy",
    "upper_total",
    "lower_vanishing",
    "lower_privacy",
    "lower_generalization",
    "lower_total",
    "adv_bound",
    "class_mixture",
];

/// One row per cell per noise level. The class mixture column repeats the
/// mixture of the row's class.
pub fn reports_csv(run_id: &str, reports: &[GroupReport]) -> Result<Table> {
    let rows = reports.iter().flat_map(|g| {
        g.cells.iter().map(move |c| {
            let q = &c.quantities;
            vec![
                run_id.to_string(),
                g.sigma_n.to_string(),
                class_name(q.cell.class).to_string(),
                q.cell.group.name().to_string(),
                q.feature_norm.to_string(),
                q.fnr.to_string(),
                q.clip_factor.to_string(),
                q.proportion.to_string(),
                c.upper.vanishing.to_string(),
                c.upper.generalization.to_string(),
                c.upper.privacy.to_string(),
                c.upper.total.to_string(),
                c.lower.vanishing.to_string(),
                c.lower.privacy.to_string(),
                c.lower.generalization.to_string(),
                c.lower.total.to_string(),
                c.adv_bound.map_or(String::new(), |v| v.to_string()),
                g.class_mixture[q.cell.class.index()].to_string(),
            ]
        })
    });
    table("bounds.csv", &CSV_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_nested_by_class_and_group() {
        let cfg = LabConfig::default();
        let spec = cfg.data.spec().unwrap();
        let reports: Vec<GroupReport> =
            [0.0, 0.1].iter().map(|&s| group_report(&cfg, &spec, s, [0.69; 4], None)).collect();
        let v = reports_json("r", cfg.attack.norm, 1.0, &reports);
        assert!(v["grid"][0]["classes"]["1"]["maj"]["fnr"].is_null());
        assert!(v["grid"][1]["classes"]["2"]["min"]["upper"]["total"].as_f64().unwrap() > 0.0);
        let csv = reports_csv("r", &reports).unwrap();
        assert_eq!(csv.contents.lines().count(), 9);
    }

    #[test]
    fn noise_raises_every_upper_bound() {
        let cfg = LabConfig::default();
        let spec = cfg.data.spec().unwrap();
        let a = group_report(&cfg, &spec, 0.025, [0.69; 4], None);
        let b = group_report(&cfg, &spec, 0.1, [0.69; 4], None);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert!(y.upper.total > x.upper.total);
            assert!(y.adv_bound.unwrap() > x.adv_bound.unwrap());
        }
    }
}
