//! Projected gradient ascent on the input, inside an l2 or l-infinity ball.

use alloc::vec::Vec;

use crate::data::{Cell, Class, SampleSource};
use crate::math;
use crate::network::{self, ModelParams};
use crate::rng::LabRng;
use crate::theory::{McAccumulator, McEstimate};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AttackNorm {
    L2,
    Linf,
}

impl AttackNorm {
    /// `1 - 1/p`, the exponent of `d` in the adversarial bound term.
    pub fn dual_exponent(self) -> f64 {
        match self {
            AttackNorm::L2 => 0.5,
            AttackNorm::Linf => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackConfig {
    pub norm: AttackNorm,
    /// Perturbation radius.
    pub radius: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub const DEFAULT_STEPS: usize = 20;

    /// 20 steps of size `2.5 * radius / 20`.
    pub fn new(norm: AttackNorm, radius: f64, seed: u64) -> Self {
        let steps = Self::DEFAULT_STEPS;
        AttackConfig { norm, radius, steps, step_size: 2.5 * radius / steps as f64, seed }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::invalid("radius", "must be finite and non-negative"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "need at least one step"));
        }
        if !(self.step_size > 0.0) && self.radius > 0.0 {
            return Err(Error::invalid("step_size", "must be positive"));
        }
        Ok(())
    }
}

/// `|z|_p` for the attack norm.
pub fn perturbation_norm(z: &[f64], norm: AttackNorm) -> f64 {
    match norm {
        AttackNorm::L2 => math::norm(z),
        AttackNorm::Linf => z.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
    }
}

/// Exact projection onto `{ z : |z|_p <= radius }`.
pub fn project(z: &mut [f64], norm: AttackNorm, radius: f64) {
    match norm {
        AttackNorm::Linf => {
            for v in z.iter_mut() {
                *v = v.clamp(-radius, radius);
            }
        }
        AttackNorm::L2 => {
            let n = math::norm(z);
            if n > radius {
                let s = radius / n;
                for v in z.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// Searches for a loss-maximizing perturbation of `x` (both patches jointly)
/// and returns the perturbed input with the highest loss seen, the clean
/// input included.
pub fn pgd(params: &ModelParams, x: &[f64], y: Class, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let clean_loss = network::loss(params, x, y)?;
    if cfg.radius == 0.0 {
        return Ok(x.to_vec());
    }
    let mut zeta = alloc::vec![0.0; x.len()];
    let mut cur = x.to_vec();
    let mut best = x.to_vec();
    let mut best_loss = clean_loss;
    for _ in 0..cfg.steps {
        let (_, g) = network::input_grad(params, &cur, y)?;
        match cfg.norm {
            AttackNorm::Linf => {
                for (z, gi) in zeta.iter_mut().zip(&g) {
                    *z += cfg.step_size * sign(*gi);
                }
            }
            AttackNorm::L2 => {
                let gn = math::norm(&g);
                if gn > 0.0 {
                    math::axpy(cfg.step_size / gn, &g, &mut zeta);
                }
            }
        }
        project(&mut zeta, cfg.norm, cfg.radius);
        for ((c, xi), z) in cur.iter_mut().zip(x).zip(&zeta) {
            *c = xi + z;
        }
        let l = network::loss(params, &cur, y)?;
        if l > best_loss {
            best_loss = l;
            best.copy_from_slice(&cur);
        }
    }
    Ok(best)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clean and attacked Monte Carlo estimates on the same samples.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdvEstimate {
    pub clean: McEstimate,
    pub adversarial: McEstimate,
}

/// Estimates the adversarial test loss on one cell from `n_mc` fresh samples.
pub fn adv_loss<S: SampleSource + ?Sized>(
    params: &ModelParams,
    source: &S,
    cell: Cell,
    cfg: &AttackConfig,
    n_mc: usize,
    rng: &mut LabRng,
) -> Result<AdvEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "need at least one sample"));
    }
    let mut clean = McAccumulator::default();
    let mut adv = McAccumulator::default();
    for _ in 0..n_mc {
        let s = source.draw_conditional(cell, rng);
        clean.push(network::forward(params, &s.x)?, s.label);
        let attacked = pgd(params, &s.x, s.label, cfg)?;
        adv.push(network::forward(params, &attacked)?, s.label);
    }
    Ok(AdvEstimate { clean: clean.finish(), adversarial: adv.finish() })
}
