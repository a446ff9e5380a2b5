//! The `dpfl` command line.
//!
//! Every subcommand writes into `<out>/<subcommand>/<UTC timestamp>/`: its
//! outputs, the resolved `config.toml` and a `manifest.json`. Either file can
//! be passed back through `--config` to repeat the run.
//!
//! Exit codes: 0 on success, 1 for bad arguments or configuration, 2 for
//! failures at run time.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use dpfl_core::attack;
use dpfl_core::data::Cell;
use dpfl_core::network;
use dpfl_core::optim;
use dpfl_core::rng;
use dpfl_core::theory::{self, IncrementProbe};

use crate::bounds;
use crate::config::LabConfig;
use crate::error::{io_err, LabError, Result};
use crate::experiments::{self, class_name, table, Table};
use crate::formats;
use crate::manifest::{create_run_dir, RunManifest};
use crate::report;
use crate::seeds::derive_seed;

pub const SEED_ENV: &str = "DPFL_SEED";

#[derive(Debug, Parser)]
#[command(name = "dpfl", version, about = "Private training experiments on a two-patch synthetic distribution")]
pub struct Cli {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of all outputs.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Replaces every seed in the config (takes precedence over DPFL_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Suppress progress and warnings on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the training set described by `[data]` as a binary dump.
    GenData,
    /// One private training run with its trace and checkpoints.
    Train,
    /// Clean and adversarial loss of a checkpoint on every cell.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Bound shapes over the `[disparate]` noise grid.
    Bounds,
    /// Accuracy over the feature size / noise grid.
    PhaseSweep,
    /// Per-cell clean and adversarial losses over the noise grid.
    Disparate,
    /// Private fine-tuning on rotated features.
    Finetune,
    /// Paired runs with and without stage-wise freezing.
    Freeze,
    /// Summary statistics of every CSV below a directory.
    Report {
        /// Directory to scan.
        dir: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Attack { .. } => "attack",
            Command::Bounds => "bounds",
            Command::PhaseSweep => experiments::phase_sweep::NAME,
            Command::Disparate => experiments::disparate::NAME,
            Command::Finetune => experiments::finetune::NAME,
            Command::Freeze => experiments::freeze::NAME,
            Command::Report { .. } => "report",
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let quiet = cli.quiet;
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            if !quiet || e.exit_code() == 1 {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

/// File config, then `DPFL_SEED`, then `--seed`.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, env_seed: Option<&str>) -> Result<LabConfig> {
    let mut cfg = match path {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    let env_seed = match env_seed {
        Some(s) => Some(s.trim().parse::<u64>().map_err(|e| LabError::config(SEED_ENV, e))?),
        None => None,
    };
    if let Some(s) = seed.or(env_seed) {
        cfg.override_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: LabConfig,
    dir: PathBuf,
    manifest: RunManifest,
    quiet: bool,
}

impl Ctx {
    fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn write_tables(&mut self, tables: &[Table]) -> Result<()> {
        for t in tables {
            self.write(&t.name, t.contents.as_bytes())?;
        }
        Ok(())
    }

    fn warn(&self, msg: &str) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }

    fn check_conditions(&self, sigma_n: f64) -> Result<()> {
        let spec = self.cfg.data.spec()?;
        for w in bounds::conditions(&self.cfg, &spec, sigma_n) {
            self.warn(&format!("sigma_n = {sigma_n}: condition not met: {}", bounds::describe(&w)));
        }
        Ok(())
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve_config(cli.config.as_deref(), cli.seed, env_seed.as_deref())?;
    let jobs = match cli.jobs {
        Some(j) => j as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| LabError::config("--jobs", e))?;

    if let Command::Report { dir } = &cli.command {
        // Fail before creating anything when there is nothing to report on.
        report::summarize(dir)?;
    }

    let name = cli.command.name();
    let dir = create_run_dir(&cli.out, name)?;
    let manifest = RunManifest::new(name, &cfg, jobs);
    let mut ctx = Ctx { cfg, dir, manifest, quiet: cli.quiet };
    let toml = ctx.cfg.to_toml();
    ctx.write("config.toml", toml.as_bytes())?;

    let start = Instant::now();
    pool.install(|| dispatch(&cli.command, &mut ctx))?;
    ctx.manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    ctx.manifest.write(&ctx.dir)?;
    Ok(ctx.dir)
}

fn dispatch(cmd: &Command, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        Command::GenData => gen_data(ctx),
        Command::Train => train(ctx),
        Command::Attack { checkpoint } => attack_checkpoint(ctx, checkpoint),
        Command::Bounds => bounds_cmd(ctx),
        Command::PhaseSweep => {
            let res = experiments::phase_sweep::run(&ctx.cfg, ctx.run_id())?;
            ctx.write_tables(&res.tables)
        }
        Command::Disparate => {
            for &s in &ctx.cfg.disparate.sigma_ns {
                ctx.check_conditions(s)?;
            }
            let res = experiments::disparate::run(&ctx.cfg, ctx.run_id())?;
            ctx.write_tables(&res.tables)
        }
        Command::Finetune => {
            let res = experiments::finetune::run(&ctx.cfg, ctx.run_id())?;
            ctx.write_tables(&res.tables)
        }
        Command::Freeze => {
            let res = experiments::freeze::run(&ctx.cfg, ctx.run_id())?;
            ctx.write_tables(&res.tables)
        }
        Command::Report { dir } => {
            let rows = report::summarize(dir)?;
            if !ctx.quiet {
                eprint!("{}", report::render(&rows));
            }
            ctx.write_tables(&[report::summary_table(&rows)?])
        }
    }
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.cfg.data.spec()?;
    let data = ctx.cfg.data.train_set(&spec);
    let mut buf = Vec::new();
    formats::write_dataset(&mut buf, &data)?;
    ctx.write("dataset.bin", &buf)?;
    let counts = data.cell_counts();
    let gamma = spec.proportions();
    let t = table(
        "cells.csv",
        &["run_id", "class", "group", "feature_norm", "proportion", "count"],
        Cell::ALL.iter().map(|c| {
            vec![
                ctx.run_id().to_string(),
                class_name(c.class).to_string(),
                c.group.name().to_string(),
                spec.bank.norm(*c).to_string(),
                gamma[c.index()].to_string(),
                counts[c.index()].to_string(),
            ]
        }),
    )?;
    ctx.write_tables(&[t])
}

fn train(ctx: &mut Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg.data.spec()?;
    let data = cfg.data.train_set(&spec);
    let sigma_n = cfg.dp.resolved_sigma_n()?;
    ctx.check_conditions(sigma_n)?;
    let init = network::init_params(&cfg.model.model_config(cfg.data.dim, cfg.model.seed))?;
    let dp = cfg.dp.dp_config(sigma_n, cfg.dp.iters, cfg.dp.seed);
    let scale = theory::increment_scale(dp.eta, dp.clip, cfg.data.dim, sigma_n, spec.bank.max_norm(), spec.sigma_p);
    let probe_seed = derive_seed(cfg.eval.seed, "train/increments", &[], 0);
    let mut probe = IncrementProbe::new(&spec, IncrementProbe::DEFAULT_PER_CELL, probe_seed, scale);
    let (params, trace) = optim::train_observed(&data, init.clone(), &dp, &mut probe)?;

    let min_loss = trace.records.iter().filter(|r| r.batch_size > 0).map(|r| r.min_loss).fold(f64::INFINITY, f64::min);
    if !ctx.quiet {
        eprintln!("sigma_n = {sigma_n}; smallest per-sample training loss = {min_loss}");
    }
    if probe.violations > 0 {
        ctx.warn(&format!(
            "{} probe increments exceeded the per-step scale {scale:.4e}",
            probe.violations
        ));
    }

    let mut buf = Vec::new();
    formats::write_checkpoint(&mut buf, &init)?;
    ctx.write("init.ckpt", &buf)?;
    buf.clear();
    formats::write_checkpoint(&mut buf, &params)?;
    ctx.write("final.ckpt", &buf)?;
    let trace_csv = formats::trace_csv(&trace, &[], ctx.run_id())?;
    ctx.write("trace.csv", trace_csv.as_bytes())?;

    let run_id = ctx.run_id().to_string();
    let mut rows = Vec::new();
    for cell in Cell::ALL {
        for (t, (target, other)) in probe.mean_by_cell(cell).into_iter().enumerate() {
            rows.push(vec![
                run_id.clone(),
                (t + 1).to_string(),
                class_name(cell.class).to_string(),
                cell.group.name().to_string(),
                target.to_string(),
                other.to_string(),
            ]);
        }
    }
    let inc = table("increments.csv", &["run_id", "iter", "class", "group", "delta_target", "delta_other"], rows)?;
    ctx.write_tables(&[inc])
}

fn attack_checkpoint(ctx: &mut Ctx, checkpoint: &Path) -> Result<()> {
    let bytes = fs::read(checkpoint).map_err(io_err(checkpoint))?;
    let params = formats::read_checkpoint(&mut bytes.as_slice())?;
    let cfg = &ctx.cfg;
    if params.dim() != cfg.data.dim {
        return Err(LabError::config(
            "data.dim",
            format!("checkpoint has patch dimension {}, config has {}", params.dim(), cfg.data.dim),
        ));
    }
    let spec = cfg.data.spec()?;
    let acfg = cfg.attack.attack_config();
    let run_id = ctx.run_id().to_string();
    let mut rows = Vec::new();
    for cell in Cell::ALL {
        let mut r = rng::stream(cfg.eval.seed, cell.index() as u64);
        let e = attack::adv_loss(&params, &spec, cell, &acfg, cfg.eval.n_mc, &mut r)?;
        rows.push(vec![
            run_id.clone(),
            class_name(cell.class).to_string(),
            cell.group.name().to_string(),
            e.clean.loss.to_string(),
            e.clean.loss_stderr.to_string(),
            e.adversarial.loss.to_string(),
            e.adversarial.loss_stderr.to_string(),
            e.clean.accuracy.to_string(),
            e.adversarial.accuracy.to_string(),
            e.clean.n.to_string(),
        ]);
    }
    let t = table(
        "attack.csv",
        &[
            "run_id",
            "class",
            "group",
            "clean_loss",
            "clean_loss_stderr",
            "adv_loss",
            "adv_loss_stderr",
            "clean_accuracy",
            "adv_accuracy",
            "n",
        ],
        rows,
    )?;
    ctx.write_tables(&[t])
}

fn bounds_cmd(ctx: &mut Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg.data.spec()?;
    let init = network::init_params(&cfg.model.model_config(cfg.data.dim, cfg.model.seed))?;
    let init_loss = bounds::cell_losses(&init, &spec, cfg.eval.n_mc, cfg.eval.seed)?;
    let reports: Vec<_> = cfg
        .disparate
        .sigma_ns
        .iter()
        .map(|&s| bounds::group_report(cfg, &spec, s, init_loss, None))
        .collect();
    let (t_min, applies) = bounds::lower_bound_check(cfg, &spec);
    if !applies {
        ctx.warn(&format!("the lower bound needs at least {t_min:.1} iterations, dp.iters = {}", cfg.dp.iters));
    }
    for &s in &cfg.disparate.sigma_ns {
        ctx.check_conditions(s)?;
    }
    let json = bounds::reports_json(ctx.run_id(), cfg.attack.norm, t_min, &reports);
    let csv = bounds::reports_csv(ctx.run_id(), &reports)?;
    let text = serde_json::to_string_pretty(&json)? + "\n";
    ctx.write("bounds.json", text.as_bytes())?;
    ctx.write_tables(&[csv])
}
