//! Distribution-shift penalty for evaluating a trained model on an unseen
//! task.
//!
//! The penalty combines the averaged pairwise total-variation distance
//! between the unseen law and each training law with the distance to their
//! mixture:
//! `(4 alpha G^2 / m) sum_i TV(p_new, p_i) + (M + 2 alpha G^2) TV(p_new, mixture)`.
//! The weighted variant replaces the mixture with the weighted mixture and
//! carries a `12 alpha G^2` pairwise coefficient; both are computed as
//! stated, and the differing pairwise coefficients are left side by side.

use super::stability::largek_gamma;
use super::tv::{tv_distance, tv_to_mixture, TvMethod};
use crate::error::{Error, Result};
use crate::losses::{LossConstants, LossModel};
use crate::meta_objective::{collection_population_loss, population_meta_loss, Estimate, MetaConfig};
use crate::rng::derive;
use crate::task_model::{TaskCollection, TaskSpec};
use ndarray::ArrayView1;

/// Shift penalty `(4 alpha G^2 / m) sum TV_i + (M + 2 alpha G^2) TV_mix`.
pub fn d_bound_from_tvs(tv_pairwise: &[f64], tv_mix: f64, c: &LossConstants, alpha: f64) -> f64 {
    let m = tv_pairwise.len() as f64;
    let g2 = c.grad_bound * c.grad_bound;
    4.0 * alpha * g2 / m * tv_pairwise.iter().sum::<f64>()
        + (c.value_bound + 2.0 * alpha * g2) * tv_mix
}

/// Weighted shift penalty
/// `(M + 2 alpha G^2) TV(p_new, sum q_i p_i) + 12 alpha G^2 sum q_i TV_i`.
pub fn weighted_d_bound_from_tvs(
    tv_pairwise: &[f64],
    weights: &[f64],
    tv_weighted_mix: f64,
    c: &LossConstants,
    alpha: f64,
) -> f64 {
    let g2 = c.grad_bound * c.grad_bound;
    (c.value_bound + 2.0 * alpha * g2) * tv_weighted_mix
        + 12.0
            * alpha
            * g2
            * tv_pairwise
                .iter()
                .zip(weights)
                .map(|(tv, q)| tv * q)
                .sum::<f64>()
}

/// Everything the shift analysis produces for one unseen task.
#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub tv_pairwise: Vec<Estimate>,
    pub tv_to_mixture: Estimate,
    pub d_bound: f64,
    pub weighted_d_bound: Option<f64>,
    pub largek_gamma: f64,
    pub mixture_bound: Option<f64>,
}

impl ShiftReport {
    pub fn pairwise_values(&self) -> Vec<f64> {
        self.tv_pairwise.iter().map(|e| e.value).collect()
    }

    /// CSV: one row per pairwise distance, then a summary row.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "task,tv,std_err")?;
        for (i, tv) in self.tv_pairwise.iter().enumerate() {
            writeln!(out, "{},{},{}", i, tv.value, tv.std_err)?;
        }
        writeln!(
            out,
            "summary,tv_mix={},d_bound={},weighted_d_bound={},largek_gamma={}",
            self.tv_to_mixture.value,
            self.d_bound,
            self.weighted_d_bound.map(|v| v.to_string()).unwrap_or_default(),
            self.largek_gamma
        )?;
        Ok(())
    }
}

/// Compute the shift penalty of an unseen task against the training tasks.
///
/// `n` only feeds the large-batch stability value reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn shift_bound(
    unseen: &TaskSpec,
    seen: &[TaskSpec],
    c: &LossConstants,
    alpha: f64,
    k: usize,
    n: usize,
    weights: Option<&[f64]>,
    samples: usize,
    seed: u64,
) -> Result<ShiftReport> {
    if seen.is_empty() {
        return Err(Error::InvalidSize { n: 0 });
    }
    let mut tv_pairwise = Vec::with_capacity(seen.len());
    for (i, task) in seen.iter().enumerate() {
        tv_pairwise.push(tv_distance(
            unseen,
            task,
            TvMethod::MonteCarlo { samples },
            derive(seed, &[1, i as u64]),
        )?);
    }
    let tv_mix = tv_to_mixture(unseen, seen, None, samples, derive(seed, &[2]))?;
    let pairwise_values: Vec<f64> = tv_pairwise.iter().map(|e| e.value).collect();
    let d_bound = d_bound_from_tvs(&pairwise_values, tv_mix.value, c, alpha);
    let weighted_d_bound = match weights {
        None => None,
        Some(q) => {
            let tv_wmix = tv_to_mixture(unseen, seen, Some(q), samples, derive(seed, &[3]))?;
            Some(weighted_d_bound_from_tvs(
                &pairwise_values,
                q,
                tv_wmix.value,
                c,
                alpha,
            ))
        }
    };
    Ok(ShiftReport {
        tv_pairwise,
        tv_to_mixture: tv_mix,
        d_bound,
        weighted_d_bound,
        largek_gamma: largek_gamma(c, seen.len(), n, k, alpha, 1.0),
        mixture_bound: None,
    })
}

/// Shift penalty when the test-time task is drawn from a distribution over
/// the training tasks plus the unseen one:
/// `pi_new * D_new + (1 - pi_new) * sum_i |pi_i - 1/m| * D_i`.
pub fn mixture_generalization_bound(
    d_unseen: f64,
    per_seen_d: &[f64],
    pi_unseen: f64,
    pi_seen: &[f64],
) -> Result<f64> {
    if pi_seen.len() != per_seen_d.len() {
        return Err(Error::InvalidWeights(format!(
            "{} probabilities for {} penalties",
            pi_seen.len(),
            per_seen_d.len()
        )));
    }
    let total: f64 = pi_unseen + pi_seen.iter().sum::<f64>();
    if pi_unseen < 0.0 || pi_seen.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "probabilities sum to {total}"
        )));
    }
    let m = per_seen_d.len() as f64;
    let seen_term: f64 = pi_seen
        .iter()
        .zip(per_seen_d)
        .map(|(pi, d)| (pi - 1.0 / m).abs() * d)
        .sum();
    Ok(pi_unseen * d_unseen + (1.0 - pi_unseen) * seen_term)
}

/// A measured unseen-task objective gap next to its bound.
#[derive(Debug, Clone, Copy)]
pub struct ExcessReport {
    /// `|F_new(w) - F(w)|` by Monte Carlo.
    pub excess: Estimate,
    /// The shift penalty it is bounded by.
    pub bound: f64,
    /// `epsilon + 2 * bound` when a training excess `epsilon` is supplied.
    pub composite: Option<f64>,
}

/// Measure `|F_new(w) - F(w)|` and set it against the shift penalty.
pub fn excess_loss_new_task(
    w: &ArrayView1<f64>,
    unseen: &TaskSpec,
    collection: &TaskCollection,
    cfg: &MetaConfig,
    loss: &dyn LossModel,
    d_bound: f64,
    training_excess: Option<f64>,
    seed: u64,
) -> Result<ExcessReport> {
    let new_task = population_meta_loss(w, unseen, cfg, loss, derive(seed, &[1]))?;
    let seen = collection_population_loss(w, &collection.specs(), cfg, loss, derive(seed, &[2]))?;
    let excess = Estimate {
        value: (new_task.value - seen.value).abs(),
        std_err: (new_task.std_err * new_task.std_err + seen.std_err * seen.std_err).sqrt(),
        exact: false,
    };
    Ok(ExcessReport {
        excess,
        bound: d_bound,
        composite: training_excess.map(|eps| eps + 2.0 * d_bound),
    })
}
