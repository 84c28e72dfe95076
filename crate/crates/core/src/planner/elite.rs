use std::cmp::Ordering;

use super::{Candidate, PlanDistribution, PlannerConfig};
use crate::error::{Error, Result};

/// Total preference order, `Less` meaning `a` is better: feasible first;
/// among feasible, higher return; among infeasible, lower violation, then
/// higher return.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    match (a.feasible, b.feasible) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (true, true) => b.ret.total_cmp(&a.ret),
        (false, false) => a.violation.total_cmp(&b.violation).then(b.ret.total_cmp(&a.ret)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EliteUpdate {
    /// Momentum-blended, floored distribution.
    pub distribution: PlanDistribution,
    /// Indices into the candidate slice, best first.
    pub elites: Vec<usize>,
    /// Normalized weights aligned with `elites`.
    pub weights: Vec<f64>,
    /// Weighted elite fit before blending (std floored).
    pub elite_fit: PlanDistribution,
}

/// Selects the elite set (top `M_elite` feasible by return, or the top of
/// the full preference order when fewer are feasible), fits a Gaussian
/// with weights `exp((R − max R)/T)`, blends it into `prev` with momentum
/// `β` and floors the spread. Ties break by candidate index.
pub fn elite_update(candidates: &[Candidate], cfg: &PlannerConfig, prev: &PlanDistribution) -> Result<EliteUpdate> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let dim = prev.mean.len();
    if prev.std.len() != dim {
        return Err(Error::shape("previous distribution std", dim, prev.std.len()));
    }
    if let Some(c) = candidates.iter().find(|c| c.decision.len() != dim) {
        return Err(Error::shape("candidate decision", dim, c.decision.len()));
    }

    let mut feasible: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].feasible).collect();
    let mut elites = if feasible.len() >= cfg.elites {
        feasible.sort_by(|&a, &b| candidates[b].ret.total_cmp(&candidates[a].ret).then(a.cmp(&b)));
        feasible
    } else {
        let mut all: Vec<usize> = (0..candidates.len()).collect();
        all.sort_by(|&a, &b| rank(&candidates[a], &candidates[b]).then(a.cmp(&b)));
        all
    };
    elites.truncate(cfg.elites);

    let top = elites
        .iter()
        .map(|&i| candidates[i].ret)
        .filter(|r| r.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = elites
        .iter()
        .map(|&i| {
            let r = candidates[i].ret;
            if r.is_finite() {
                ((r - top) / cfg.temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        weights.fill(1.0 / elites.len() as f64);
    }

    // Deviations from the first elite keep an all-equal set exact.
    let x0 = &candidates[elites[0]].decision;
    let mut mean = x0.clone();
    for (&i, &w) in elites.iter().zip(&weights) {
        for (m, (x, o)) in mean.iter_mut().zip(candidates[i].decision.iter().zip(x0)) {
            *m += w * (x - o);
        }
    }
    let mut var = vec![0.0; dim];
    for (&i, &w) in elites.iter().zip(&weights) {
        for (v, (x, m)) in var.iter_mut().zip(candidates[i].decision.iter().zip(&mean)) {
            *v += w * (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(cfg.std_min)).collect();

    let beta = cfg.momentum;
    let blend =
        |new: &[f64], old: &[f64]| -> Vec<f64> { new.iter().zip(old).map(|(n, o)| o + beta * (n - o)).collect() };
    let blended_mean = blend(&mean, &prev.mean);
    let blended_std: Vec<f64> = blend(&std, &prev.std).into_iter().map(|s| s.max(cfg.std_min)).collect();
    Ok(EliteUpdate {
        distribution: PlanDistribution {
            mean: blended_mean,
            std: blended_std,
        },
        elites,
        weights,
        elite_fit: PlanDistribution { mean, std },
    })
}
