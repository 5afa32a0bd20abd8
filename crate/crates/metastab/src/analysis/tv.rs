//! Total-variation distance between task laws.
//!
//! Both estimators work on the closed-form joint density of `z = (x, y)`,
//! which is Gaussian because labels are linear-Gaussian in the features.
//! The Monte Carlo route uses `TV(P, Q) = E_{z~P}[max(0, 1 - q(z)/p(z))]`;
//! the one-dimensional route integrates `1 - integral of min(p, q)` by
//! nested adaptive quadrature and serves as the independent oracle.

use crate::error::{Error, Result};
use crate::meta_objective::Estimate;
use crate::numeric::{adaptive_simpson, ordered_chunk_sum, MeanAcc};
use crate::rng::{purpose, stream};
use crate::task_model::{sample_point, Sample, TaskSpec};
use ndarray::arr1;

#[derive(Debug, Clone, Copy)]
pub enum TvMethod {
    /// Likelihood-ratio Monte Carlo under the first law.
    MonteCarlo { samples: usize },
    /// Quadrature of the density overlap; only for one-dimensional tasks.
    Numeric1D,
}

fn check_pair(p: &TaskSpec, q: &TaskSpec) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Total variation distance between two task laws.
pub fn tv_distance(p: &TaskSpec, q: &TaskSpec, method: TvMethod, seed: u64) -> Result<Estimate> {
    check_pair(p, q)?;
    match method {
        TvMethod::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::InvalidSize { n: 0 });
            }
            // Validate densities once up front.
            let probe = sample_point(p, &mut stream(seed, &[purpose::TV]));
            p.log_density(&probe)?;
            q.log_density(&probe)?;
            let acc = ordered_chunk_sum(samples, |range| {
                let mut acc = MeanAcc::default();
                for j in range {
                    let mut rng = stream(seed, &[purpose::TV, j as u64]);
                    let z = sample_point(p, &mut rng);
                    let log_p = p.log_density(&z).expect("validated");
                    let log_q = q.log_density(&z).expect("validated");
                    acc.push((1.0 - (log_q - log_p).exp()).max(0.0));
                }
                acc
            })
            .expect("at least one draw");
            Ok(Estimate {
                value: acc.mean(),
                std_err: acc.std_err(),
                exact: false,
            })
        }
        TvMethod::Numeric1D => {
            if p.dim() != 1 {
                return Err(Error::InvalidConfig(
                    "quadrature route only supports one-dimensional tasks".into(),
                ));
            }
            Ok(Estimate {
                value: tv_quadrature_1d(p, q)?,
                std_err: 0.0,
                exact: true,
            })
        }
    }
}

/// `TV = 1 - integral of min(p, q)` over the joint `(x, y)` plane.
fn tv_quadrature_1d(p: &TaskSpec, q: &TaskSpec) -> Result<f64> {
    if p.feature_cov_scale <= 0.0
        || q.feature_cov_scale <= 0.0
        || p.noise_var <= 0.0
        || q.noise_var <= 0.0
    {
        return Err(Error::DegenerateDensity(
            "quadrature needs nondegenerate feature and noise laws".into(),
        ));
    }
    let (mp, mq) = (p.mean[0], q.mean[0]);
    let (sp, sq) = (p.feature_cov_scale.sqrt(), q.feature_cov_scale.sqrt());
    let lo = (mp - 12.0 * sp).min(mq - 12.0 * sq);
    let hi = (mp + 12.0 * sp).max(mq + 12.0 * sq);
    let (np, nq) = (p.noise_var.sqrt(), q.noise_var.sqrt());

    let inner_tol = 1e-11;
    let outer = |x: f64| {
        let z = |y: f64| Sample {
            x: arr1(&[x]),
            y,
        };
        let cp = p.coeff[0] * x;
        let cq = q.coeff[0] * x;
        let ylo = (cp - 12.0 * np).min(cq - 12.0 * nq);
        let yhi = (cp + 12.0 * np).max(cq + 12.0 * nq);
        let f = |y: f64| {
            let lp = p.log_density(&z(y)).expect("nondegenerate");
            let lq = q.log_density(&z(y)).expect("nondegenerate");
            lp.min(lq).exp()
        };
        adaptive_simpson(&f, ylo, yhi, &[cp, cq], inner_tol)
    };
    let overlap = adaptive_simpson(&outer, lo, hi, &[mp, mq], 1e-9);
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Total variation distance between one task law and a mixture of task
/// laws, with the mixture density evaluated explicitly inside the
/// likelihood-ratio estimator.
pub fn tv_to_mixture(
    p: &TaskSpec,
    components: &[TaskSpec],
    weights: Option<&[f64]>,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if components.is_empty() || samples == 0 {
        return Err(Error::InvalidSize { n: 0 });
    }
    for c in components {
        check_pair(p, c)?;
    }
    let m = components.len();
    let weights: Vec<f64> = match weights {
        None => vec![1.0 / m as f64; m],
        Some(q) => {
            if q.len() != m {
                return Err(Error::InvalidWeights(format!(
                    "{} weights for {} components",
                    q.len(),
                    m
                )));
            }
            let sum: f64 = q.iter().sum();
            if q.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
            }
            q.to_vec()
        }
    };
    let probe = sample_point(p, &mut stream(seed, &[purpose::TV]));
    p.log_density(&probe)?;
    for c in components {
        c.log_density(&probe)?;
    }

    // log sum_i w_i exp(l_i), factoring the max raw log-density so that a
    // mixture of identical components reproduces the component exactly.
    let log_mixture = |z: &Sample| -> f64 {
        let logs: Vec<(f64, f64)> = components
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| (w, c.log_density(z).expect("validated")))
            .collect();
        let max = logs
            .iter()
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        max + logs
            .iter()
            .map(|(w, l)| w * (l - max).exp())
            .sum::<f64>()
            .ln()
    };

    let acc = ordered_chunk_sum(samples, |range| {
        let mut acc = MeanAcc::default();
        for j in range {
            let mut rng = stream(seed, &[purpose::TV, j as u64]);
            let z = sample_point(p, &mut rng);
            let log_p = p.log_density(&z).expect("validated");
            acc.push((1.0 - (log_mixture(&z) - log_p).exp()).max(0.0));
        }
        acc
    })
    .expect("at least one draw");
    Ok(Estimate {
        value: acc.mean(),
        std_err: acc.std_err(),
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn spec_1d(mean: f64, scale: f64, noise: f64, coeff: f64) -> TaskSpec {
        TaskSpec::new(arr1(&[mean]), arr1(&[coeff]), scale, noise).unwrap()
    }

    #[test]
    fn identical_laws_have_zero_distance() {
        let p = spec_1d(0.3, 0.5, 0.1, 1.0);
        let mc = tv_distance(&p, &p, TvMethod::MonteCarlo { samples: 2_000 }, 1).unwrap();
        assert_eq!(mc.value, 0.0);
        let quad = tv_distance(&p, &p, TvMethod::Numeric1D, 0).unwrap();
        assert!(quad.value.abs() < 1e-8);
    }

    #[test]
    fn mean_shift_matches_gaussian_closed_form() {
        // Same coefficient and noise: joint TV reduces to the TV of the
        // feature marginals, 2 Phi(|shift| / (2 sd)) - 1.
        let p = spec_1d(0.0, 1.0, 0.1, 1.0);
        let q = spec_1d(1.0, 1.0, 0.1, 1.0);
        let oracle = {
            let normal = Normal::new(0.0, 1.0).unwrap();
            2.0 * normal.cdf(0.5) - 1.0
        };
        let quad = tv_distance(&p, &q, TvMethod::Numeric1D, 0).unwrap();
        assert!(
            (quad.value - oracle).abs() < 1e-6,
            "quadrature {} vs closed form {}",
            quad.value,
            oracle
        );
        let mc = tv_distance(&p, &q, TvMethod::MonteCarlo { samples: 100_000 }, 7).unwrap();
        assert!(
            (mc.value - oracle).abs() < 0.005,
            "mc {} vs closed form {}",
            mc.value,
            oracle
        );
    }

    #[test]
    fn distant_laws_saturate() {
        let p = spec_1d(0.0, 1.0, 0.1, 1.0);
        let q = spec_1d(1.0e6, 1.0, 0.1, 1.0);
        let quad = tv_distance(&p, &q, TvMethod::Numeric1D, 0).unwrap();
        assert!(quad.value >= 0.999);
        let mc = tv_distance(&p, &q, TvMethod::MonteCarlo { samples: 10_000 }, 3).unwrap();
        assert!(mc.value >= 0.999);
    }

    #[test]
    fn coefficient_difference_is_detected() {
        // Identical feature laws, opposite regression vectors.
        let p = spec_1d(0.0, 1.0, 0.1, 1.0);
        let q = spec_1d(0.0, 1.0, 0.1, -1.0);
        let quad = tv_distance(&p, &q, TvMethod::Numeric1D, 0).unwrap();
        let mc = tv_distance(&p, &q, TvMethod::MonteCarlo { samples: 100_000 }, 11).unwrap();
        assert!(quad.value > 0.5);
        assert!((mc.value - quad.value).abs() < 0.005);
    }

    #[test]
    fn symmetry_and_triangle_inequality() {
        let a = spec_1d(0.0, 0.8, 0.2, 1.0);
        let b = spec_1d(0.7, 1.1, 0.15, 1.0);
        let c = spec_1d(-0.4, 0.9, 0.3, -1.0);
        let samples = 60_000;
        let dist = |p: &TaskSpec, q: &TaskSpec, s: u64| {
            tv_distance(p, q, TvMethod::MonteCarlo { samples }, s).unwrap()
        };
        let ab = dist(&a, &b, 1);
        let ba = dist(&b, &a, 2);
        let band = 3.0 * (ab.std_err + ba.std_err);
        assert!((ab.value - ba.value).abs() <= band);
        let ac = dist(&a, &c, 3);
        let bc = dist(&b, &c, 4);
        let slack = 3.0 * (ab.std_err + ac.std_err + bc.std_err);
        assert!(ac.value <= ab.value + bc.value + slack);
    }

    #[test]
    fn mixture_of_single_component_is_pairwise() {
        let p = spec_1d(0.0, 1.0, 0.1, 1.0);
        let q = spec_1d(0.9, 1.0, 0.1, 1.0);
        let pairwise = tv_distance(&p, &q, TvMethod::MonteCarlo { samples: 40_000 }, 5).unwrap();
        let mixture = tv_to_mixture(&p, &[q.clone()], None, 40_000, 5).unwrap();
        assert_eq!(pairwise.value, mixture.value);
    }

    #[test]
    fn mixture_weight_validation() {
        let p = spec_1d(0.0, 1.0, 0.1, 1.0);
        let q = spec_1d(0.9, 1.0, 0.1, 1.0);
        assert!(tv_to_mixture(&p, &[q.clone()], Some(&[0.5, 0.5]), 100, 0).is_err());
        assert!(tv_to_mixture(&p, &[q], Some(&[0.7]), 100, 0).is_err());
    }

    #[test]
    fn degenerate_laws_are_rejected() {
        let p = spec_1d(0.0, 0.0, 0.1, 1.0);
        let q = spec_1d(1.0, 1.0, 0.1, 1.0);
        assert!(tv_distance(&p, &q, TvMethod::MonteCarlo { samples: 10 }, 0).is_err());
        assert!(tv_distance(&p, &q, TvMethod::Numeric1D, 0).is_err());
    }
}
